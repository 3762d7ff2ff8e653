//! Sum-over-samples losses `L(W) = Σₙ ℓ(yₙ, f(W;xₙ))` and their gradients.
//!
//! Gradients accept a log-scale `shift`: the returned gradient is that of
//! `e^{shift}·L`, with the shift folded into each exponent. This keeps
//! exponential-tail flows representable long after `L` itself underflows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{axpy, Matrix};
use crate::network::{DeepNet, NetworkError};

/// Largest exponent accepted before reporting overflow.
pub const MAX_EXPONENT: f64 = 709.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{kind:?} loss cannot be used with {task} labels")]
    LabelMismatch { kind: LossKind, task: &'static str },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("exponent {exponent} at sample {sample} exceeds the overflow guard")]
    Overflow { sample: usize, exponent: f64 },
    #[error("separator does not separate the data (margin {margin})")]
    NotSeparating { margin: f64 },
    #[error("separator architecture differs from the network")]
    ShapeMismatch,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Square,
    Exponential,
    Logistic,
    SoftmaxCrossEntropy,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Square => "square",
            LossKind::Exponential => "exponential",
            LossKind::Logistic => "logistic",
            LossKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// `yₙ ∈ {−1, +1}`.
    Binary(Vec<f64>),
    /// Real-valued regression targets (square loss only).
    Regression(Vec<f64>),
    /// Zero-based class indices.
    Multiclass { classes: Vec<usize>, num_classes: usize },
}

impl Labels {
    pub fn task(&self) -> &'static str {
        match self {
            Labels::Binary(_) => "binary",
            Labels::Regression(_) => "regression",
            Labels::Multiclass { .. } => "multiclass",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Labels::Binary(v) | Labels::Regression(v) => v.len(),
            Labels::Multiclass { classes, .. } => classes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    labels: Labels,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Labels) -> Result<Self> {
        if inputs.is_empty() {
            return Err(LossError::InvalidDataset("dataset has no samples".into()));
        }
        if inputs.len() != labels.len() {
            return Err(LossError::InvalidDataset(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let d = inputs[0].len();
        if d == 0 {
            return Err(LossError::InvalidDataset("inputs have dimension 0".into()));
        }
        for (n, x) in inputs.iter().enumerate() {
            if x.len() != d {
                return Err(LossError::InvalidDataset(format!(
                    "input {n} has dimension {} (expected {d})",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(LossError::InvalidDataset(format!("input {n} is not finite")));
            }
        }
        match &labels {
            Labels::Binary(y) => {
                if let Some(n) = y.iter().position(|&v| v != 1.0 && v != -1.0) {
                    return Err(LossError::InvalidDataset(format!(
                        "binary label {n} is {} (expected ±1)",
                        y[n]
                    )));
                }
            }
            Labels::Regression(y) => {
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(LossError::InvalidDataset("regression target not finite".into()));
                }
            }
            Labels::Multiclass {
                classes,
                num_classes,
            } => {
                if *num_classes < 2 {
                    return Err(LossError::InvalidDataset("multiclass needs at least 2 classes".into()));
                }
                if let Some(n) = classes.iter().position(|&c| c >= *num_classes) {
                    return Err(LossError::InvalidDataset(format!(
                        "class label {n} is {} (only {num_classes} classes)",
                        classes[n]
                    )));
                }
            }
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn binary(inputs: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        Dataset::new(inputs, Labels::Binary(labels))
    }

    pub fn regression(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        Dataset::new(inputs, Labels::Regression(targets))
    }

    pub fn multiclass(inputs: Vec<Vec<f64>>, classes: Vec<usize>, num_classes: usize) -> Result<Self> {
        Dataset::new(
            inputs,
            Labels::Multiclass {
                classes,
                num_classes,
            },
        )
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    /// Real targets for binary or regression data.
    pub fn targets(&self) -> Option<&[f64]> {
        match &self.labels {
            Labels::Binary(y) | Labels::Regression(y) => Some(y),
            Labels::Multiclass { .. } => None,
        }
    }

    /// `N × d` data matrix with the inputs as rows.
    pub fn matrix(&self) -> Matrix {
        Matrix::from_fn(self.len(), self.dim(), |i, j| self.inputs[i][j])
    }

    /// Same labels, new inputs (e.g. virtual data).
    pub fn with_inputs(&self, inputs: Vec<Vec<f64>>) -> Result<Self> {
        Dataset::new(inputs, self.labels.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| LossError::InvalidDataset(e.to_string()))
    }
}

/// `{"inputs": [[...]], "labels": [...], "task": "binary"|"multiclass"|"regression", "num_classes"?}`.
#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    inputs: Vec<Vec<f64>>,
    labels: Vec<f64>,
    task: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    num_classes: Option<usize>,
}

impl Serialize for Dataset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (labels, num_classes) = match &self.labels {
            Labels::Binary(y) | Labels::Regression(y) => (y.clone(), None),
            Labels::Multiclass {
                classes,
                num_classes,
            } => (classes.iter().map(|&c| c as f64).collect(), Some(*num_classes)),
        };
        DatasetRepr {
            inputs: self.inputs.clone(),
            labels,
            task: self.labels.task().to_string(),
            num_classes,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dataset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let r = DatasetRepr::deserialize(d)?;
        let labels = match r.task.as_str() {
            "binary" => Labels::Binary(r.labels),
            "regression" => Labels::Regression(r.labels),
            "multiclass" => {
                let mut classes = Vec::with_capacity(r.labels.len());
                for &v in &r.labels {
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(D::Error::custom(format!("class label {v} is not a non-negative integer")));
                    }
                    classes.push(v as usize);
                }
                let num_classes = r
                    .num_classes
                    .unwrap_or_else(|| classes.iter().max().map_or(0, |m| m + 1));
                Labels::Multiclass {
                    classes,
                    num_classes,
                }
            }
            other => return Err(D::Error::custom(format!("unknown task {other:?}"))),
        };
        Dataset::new(r.inputs, labels).map_err(D::Error::custom)
    }
}

fn check_compat(kind: LossKind, net: &DeepNet, data: &Dataset) -> Result<()> {
    let ok = match (kind, &data.labels) {
        (LossKind::Square, Labels::Binary(_) | Labels::Regression(_)) => true,
        (LossKind::Exponential | LossKind::Logistic, Labels::Binary(_)) => true,
        (LossKind::SoftmaxCrossEntropy, Labels::Multiclass { .. }) => true,
        _ => false,
    };
    if !ok {
        return Err(LossError::LabelMismatch {
            kind,
            task: data.labels.task(),
        });
    }
    if net.input_dim() != data.dim() {
        return Err(NetworkError::DimensionMismatch {
            layer: 0,
            expected: net.input_dim(),
            found: data.dim(),
        }
        .into());
    }
    let want = match &data.labels {
        Labels::Multiclass { num_classes, .. } => *num_classes,
        _ => 1,
    };
    if net.output_dim() != want {
        return Err(NetworkError::DimensionMismatch {
            layer: net.depth(),
            expected: want,
            found: net.output_dim(),
        }
        .into());
    }
    Ok(())
}

#[inline]
fn guarded_exp(exponent: f64, sample: usize) -> Result<f64> {
    if exponent > MAX_EXPONENT {
        return Err(LossError::Overflow { sample, exponent });
    }
    Ok(exponent.exp())
}

/// `log(1 + e^{z})` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-sample loss and `e^{shift}·∂ℓ/∂f`.
fn sample_term(kind: LossKind, labels: &Labels, n: usize, out: &[f64], shift: f64, upstream: &mut [f64]) -> Result<f64> {
    match (kind, labels) {
        (LossKind::Square, Labels::Binary(y) | Labels::Regression(y)) => {
            let r = out[0] - y[n];
            upstream[0] = 2.0 * r * guarded_exp(shift, n)?;
            Ok(r * r)
        }
        (LossKind::Exponential, Labels::Binary(y)) => {
            let m = -y[n] * out[0];
            let loss = if m > MAX_EXPONENT { f64::INFINITY } else { m.exp() };
            upstream[0] = -y[n] * guarded_exp(shift + m, n)?;
            Ok(loss)
        }
        (LossKind::Logistic, Labels::Binary(y)) => {
            let yf = y[n] * out[0];
            // d/df log(1+e^{-yf}) = -y / (1 + e^{yf})
            upstream[0] = -y[n] * guarded_exp(shift - softplus(yf), n)?;
            Ok(softplus(-yf))
        }
        (LossKind::SoftmaxCrossEntropy, Labels::Multiclass { classes, .. }) => {
            let c = classes[n];
            let lse = log_sum_exp(out.iter().copied());
            let others = log_sum_exp(out.iter().enumerate().filter(|(j, _)| *j != c).map(|(_, &v)| v));
            for (j, u) in upstream.iter_mut().enumerate() {
                *u = if j == c {
                    -guarded_exp(shift + others - lse, n)?
                } else {
                    guarded_exp(shift + out[j] - lse, n)?
                };
            }
            // -log p_c = log(1 + Σ_{j≠c} e^{f_j − f_c})
            Ok(softplus(others - out[c]))
        }
        _ => Err(LossError::LabelMismatch {
            kind,
            task: labels.task(),
        }),
    }
}

/// Loss value with per-layer gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub layers: Vec<Matrix>,
    /// Some relu pre-activation sat exactly on its kink.
    pub kink: bool,
}

impl LossGradient {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|m| m.frobenius_dot(m))
            .sum::<f64>()
            .sqrt()
    }
}

/// `L(W) = Σₙ ℓ(yₙ, f(W;xₙ))`.
pub fn loss(kind: LossKind, net: &DeepNet, data: &Dataset) -> Result<f64> {
    check_compat(kind, net, data)?;
    let mut total = 0.0;
    let mut up = vec![0.0; net.output_dim()];
    for (n, x) in data.inputs.iter().enumerate() {
        let out = net.forward_vec(x)?;
        let l = sample_term(kind, &data.labels, n, &out, f64::NEG_INFINITY, &mut up)?;
        if !l.is_finite() {
            return Err(LossError::Overflow {
                sample: n,
                exponent: f64::INFINITY,
            });
        }
        total += l;
    }
    Ok(total)
}

/// Per-layer `∇_{W_k} L`.
pub fn loss_gradient(kind: LossKind, net: &DeepNet, data: &Dataset) -> Result<Vec<Matrix>> {
    Ok(loss_and_gradient(kind, net, data, 0.0)?.layers)
}

/// Loss and gradient of `e^{shift}·L`. The reported `loss` is unscaled `L`
/// (it may underflow to 0 for large margins).
pub fn loss_and_gradient(kind: LossKind, net: &DeepNet, data: &Dataset, shift: f64) -> Result<LossGradient> {
    check_compat(kind, net, data)?;
    let mut total = 0.0;
    let mut up = vec![0.0; net.output_dim()];
    if net.is_single_linear() && net.output_dim() == 1 {
        let w = net.layer(0);
        let mut g = vec![0.0; w.cols()];
        for (n, x) in data.inputs.iter().enumerate() {
            let f = crate::linalg::dot(w.as_slice(), x);
            total += sample_term(kind, &data.labels, n, &[f], shift, &mut up)?;
            axpy(&mut g, up[0], x);
        }
        return Ok(LossGradient {
            loss: total,
            layers: vec![Matrix::row_vector(&g)],
            kink: false,
        });
    }
    let mut layers: Vec<Matrix> = net
        .layers()
        .iter()
        .map(|m| Matrix::zeros(m.rows(), m.cols()))
        .collect();
    let mut kink = false;
    for (n, x) in data.inputs.iter().enumerate() {
        let out = net.forward_vec(x)?;
        total += sample_term(kind, &data.labels, n, &out, shift, &mut up)?;
        if up.iter().all(|&u| u == 0.0) {
            continue;
        }
        let g = net.vjp(x, &up)?;
        kink |= g.kink;
        for (acc, gk) in layers.iter_mut().zip(&g.layers) {
            axpy(acc.as_mut_slice(), 1.0, gk.as_slice());
        }
    }
    Ok(LossGradient {
        loss: total,
        layers,
        kink,
    })
}

/// Binary: `minₙ yₙ f(xₙ)`; multiclass: `minₙ min_{c≠yₙ} (f_{yₙ} − f_c)`.
/// Regression data has no margin and yields `NaN`.
pub fn separability_margin(net: &DeepNet, data: &Dataset) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for (n, x) in data.inputs.iter().enumerate() {
        let out = net.forward_vec(x)?;
        let m = match &data.labels {
            Labels::Binary(y) => y[n] * out[0],
            Labels::Regression(_) => return Ok(f64::NAN),
            Labels::Multiclass { classes, .. } => {
                let c = classes[n];
                out.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != c)
                    .map(|(_, &v)| out[c] - v)
                    .fold(f64::INFINITY, f64::min)
            }
        };
        margin = margin.min(m);
    }
    Ok(margin)
}

/// `Σ_k ⟨W*_k, ∇_{W_k} L(W)⟩`; negative when `W*` is a descent direction.
pub fn descent_direction_check(kind: LossKind, net: &DeepNet, separator: &DeepNet, data: &Dataset) -> Result<f64> {
    if separator.dims() != net.dims() {
        return Err(LossError::ShapeMismatch);
    }
    let margin = separability_margin(separator, data)?;
    if !(margin > 0.0) {
        return Err(LossError::NotSeparating { margin });
    }
    let grad = loss_gradient(kind, net, data)?;
    Ok(crate::network::layers_dot(separator.layers(), &grad))
}

/// Fraction of misclassified samples; `yf ≤ 0` counts as an error.
/// For regression data this is the mean squared error.
pub fn classification_error(net: &DeepNet, data: &Dataset) -> Result<f64> {
    let mut errors = 0.0;
    for (n, x) in data.inputs.iter().enumerate() {
        let out = net.forward_vec(x)?;
        errors += match &data.labels {
            Labels::Binary(y) => f64::from(y[n] * out[0] <= 0.0),
            Labels::Regression(y) => (out[0] - y[n]).powi(2),
            Labels::Multiclass { classes, .. } => {
                let c = classes[n];
                let wrong = out.iter().enumerate().any(|(j, &v)| j != c && v >= out[c]);
                f64::from(wrong)
            }
        };
    }
    Ok(errors / data.len() as f64)
}
