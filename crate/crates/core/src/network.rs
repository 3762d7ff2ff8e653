//! Dense feed-forward networks `f(W;x) = σ(W_K σ(W_{K-1} ⋯ σ(W_1 x)))` with
//! per-layer analytic gradients.
//!
//! No biases: every layer is a plain matrix, so relu and linear networks are
//! positively homogeneous of degree one in each layer's weights.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{axpy, dot, frobenius_norm, LinalgError, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network has no layers")]
    Empty,
    #[error("dimension mismatch at layer {layer}: expected input of size {expected}, got {found}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("network output has dimension {dim}; a scalar output was required")]
    OutputNotScalar { dim: usize },
    #[error("activation {0} is not positively homogeneous")]
    NotHomogeneous(String),
    #[error("layer {layer} has zero Frobenius norm")]
    ZeroLayer { layer: usize },
    #[error("layer index {layer} out of range for a {depth}-layer network")]
    NoSuchLayer { layer: usize, depth: usize },
    #[error("invalid network description: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

/// Default smoothing width of `smoothed_relu`.
pub const DEFAULT_SMOOTHING: f64 = 0.05;

/// Pointwise nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `z · sigmoid(z / ε²)`, a smooth relu.
    SmoothedRelu { epsilon: f64 },
    /// `Σᵢ cᵢ zⁱ`.
    Polynomial { coefficients: Vec<f64> },
    Linear,
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::SmoothedRelu { .. } => "smoothed_relu",
            Activation::Polynomial { .. } => "polynomial",
            Activation::Linear => "linear",
        }
    }

    pub fn smoothed_relu() -> Self {
        Activation::SmoothedRelu {
            epsilon: DEFAULT_SMOOTHING,
        }
    }

    /// relu and linear are degree-1 positively homogeneous.
    pub fn is_homogeneous(&self) -> bool {
        matches!(self, Activation::Relu | Activation::Linear)
    }

    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::SmoothedRelu { epsilon } => z * sigmoid(z / (epsilon * epsilon)),
            Activation::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, &c| acc * z + c)
            }
            Activation::Linear => z,
        }
    }

    /// Derivative, plus a flag set when relu is evaluated exactly at its kink
    /// (the subgradient 0 is used there).
    #[inline]
    pub fn derivative(&self, z: f64) -> (f64, bool) {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    (1.0, false)
                } else {
                    (0.0, z == 0.0)
                }
            }
            Activation::SmoothedRelu { epsilon } => {
                let e2 = epsilon * epsilon;
                let s = sigmoid(z / e2);
                (s + z * s * (1.0 - s) / e2, false)
            }
            Activation::Polynomial { coefficients } => {
                // Horner over i·cᵢ z^{i-1}
                let d = coefficients
                    .iter()
                    .enumerate()
                    .skip(1)
                    .rev()
                    .fold(0.0, |a, (i, &c)| a * z + c * i as f64);
                (d, false)
            }
            Activation::Linear => (1.0, false),
        }
    }
}

/// Whether the last layer passes through the activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// `f = σ(W_K ⋯)`.
    #[default]
    Activated,
    /// `f = W_K σ(⋯)`; needed for signed classifier outputs with relu.
    Linear,
}

/// Feed-forward network without biases.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepNet {
    layers: Vec<Matrix>,
    activation: Activation,
    output: OutputMode,
}

/// Per-layer `∂f/∂W_k` at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub layers: Vec<Matrix>,
    /// A relu pre-activation was exactly zero; the subgradient 0 was used.
    pub kink: bool,
}

impl LayerGradient {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }
}

/// Pre- and post-activation values of one forward pass.
struct Tape {
    /// `post[0] = x`, `post[k+1] = σ(pre[k])`.
    post: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl DeepNet {
    pub fn new(layers: Vec<Matrix>, activation: Activation) -> Result<Self> {
        Self::with_output(layers, activation, OutputMode::Activated)
    }

    pub fn with_output(layers: Vec<Matrix>, activation: Activation, output: OutputMode) -> Result<Self> {
        if layers.is_empty() {
            return Err(NetworkError::Empty);
        }
        for k in 1..layers.len() {
            if layers[k].cols() != layers[k - 1].rows() {
                return Err(NetworkError::DimensionMismatch {
                    layer: k,
                    expected: layers[k].cols(),
                    found: layers[k - 1].rows(),
                });
            }
        }
        if let Activation::SmoothedRelu { epsilon } = activation {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(NetworkError::Invalid(format!(
                    "smoothed_relu epsilon must be positive, got {epsilon}"
                )));
            }
        }
        Ok(DeepNet {
            layers,
            activation,
            output,
        })
    }

    /// Gaussian weights with the given per-entry standard deviation.
    /// `dims = [d, N_1, …, N_K]`.
    pub fn gaussian<R: Rng + ?Sized>(
        dims: &[usize],
        activation: Activation,
        output: OutputMode,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(NetworkError::Empty);
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                Matrix::from_fn(w[1], w[0], |_, _| {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                })
            })
            .collect();
        DeepNet::with_output(layers, activation, output)
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> &Matrix {
        &self.layers[k]
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn output_mode(&self) -> OutputMode {
        self.output
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    /// `[d, N_1, …, N_K]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|m| m.rows()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|m| m.len()).sum()
    }

    /// All weights, layer by layer, each row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    /// Same architecture with weights taken from `flat`. Panics on length mismatch.
    pub fn with_flat(&self, flat: &[f64]) -> DeepNet {
        assert_eq!(flat.len(), self.num_params(), "flat weight length mismatch");
        let mut out = self.clone();
        let mut off = 0;
        for m in &mut out.layers {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        out
    }

    /// Offsets of each layer inside the flattened weight vector.
    pub fn layer_offsets(&self) -> Vec<std::ops::Range<usize>> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|m| {
                let r = off..off + m.len();
                off += m.len();
                r
            })
            .collect()
    }

    pub fn layer_norms(&self) -> Vec<f64> {
        self.layers.iter().map(frobenius_norm).collect()
    }

    /// True when `f(W;x) = W_1 x` exactly (one layer with identity output).
    pub fn is_single_linear(&self) -> bool {
        self.layers.len() == 1
            && (self.output == OutputMode::Linear || self.activation == Activation::Linear)
    }

    #[inline]
    fn activated(&self, k: usize) -> bool {
        k + 1 < self.layers.len() || self.output == OutputMode::Activated
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(NetworkError::DimensionMismatch {
                layer: 0,
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn tape(&self, x: &[f64]) -> Tape {
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        post.push(x.to_vec());
        for (k, w) in self.layers.iter().enumerate() {
            let z = w.matvec(&post[k]);
            let a = if self.activated(k) {
                z.iter().map(|&v| self.activation.value(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a);
        }
        Tape { post, pre }
    }

    /// Full output vector.
    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for (k, w) in self.layers.iter().enumerate() {
            let mut z = w.matvec(&a);
            if self.activated(k) {
                z.iter_mut().for_each(|v| *v = self.activation.value(*v));
            }
            a = z;
        }
        Ok(a)
    }

    /// Scalar output `f(W;x)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(NetworkError::OutputNotScalar {
                dim: self.output_dim(),
            });
        }
        Ok(self.forward_vec(x)?[0])
    }

    /// Vector-Jacobian product: per-layer gradient of `upstream · f(W;x)`.
    pub fn vjp(&self, x: &[f64], upstream: &[f64]) -> Result<LayerGradient> {
        self.check_input(x)?;
        if upstream.len() != self.output_dim() {
            return Err(NetworkError::DimensionMismatch {
                layer: self.layers.len(),
                expected: self.output_dim(),
                found: upstream.len(),
            });
        }
        let tape = self.tape(x);
        let mut kink = false;
        let depth = self.layers.len();
        let mut grads: Vec<Matrix> = Vec::with_capacity(depth);
        let mut delta = upstream.to_vec();
        for k in (0..depth).rev() {
            if self.activated(k) {
                for (d, &z) in delta.iter_mut().zip(&tape.pre[k]) {
                    let (ds, at_kink) = self.activation.derivative(z);
                    kink |= at_kink;
                    *d *= ds;
                }
            }
            let w = &self.layers[k];
            let input = &tape.post[k];
            let mut g = Matrix::zeros(w.rows(), w.cols());
            for (i, &di) in delta.iter().enumerate() {
                if di != 0.0 {
                    let row = &mut g.as_mut_slice()[i * w.cols()..(i + 1) * w.cols()];
                    axpy(row, di, input);
                }
            }
            grads.push(g);
            if k > 0 {
                delta = w.tr_matvec(&delta);
            }
        }
        grads.reverse();
        Ok(LayerGradient {
            layers: grads,
            kink,
        })
    }

    /// `∂f/∂W_k` for every layer at `x`; scalar-output networks only.
    pub fn layer_gradients(&self, x: &[f64]) -> Result<LayerGradient> {
        if self.output_dim() != 1 {
            return Err(NetworkError::OutputNotScalar {
                dim: self.output_dim(),
            });
        }
        self.vjp(x, &[1.0])
    }

    /// ReLU activation pattern (1 iff pre-activation > 0) of every hidden and
    /// activated layer at `x`.
    pub fn activation_profile(&self, x: &[f64]) -> Result<ActivationProfile> {
        self.check_input(x)?;
        let tape = self.tape(x);
        let masks = tape
            .pre
            .iter()
            .enumerate()
            .filter(|(k, _)| self.activated(*k))
            .map(|(_, z)| z.iter().map(|&v| u8::from(v > 0.0)).collect())
            .collect();
        Ok(ActivationProfile { masks })
    }
}

/// Diagonal 0/1 activation indicators per activated layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationProfile {
    pub masks: Vec<Vec<u8>>,
}

/// Scalar output `f(W;x)`.
pub fn forward(net: &DeepNet, x: &[f64]) -> Result<f64> {
    net.forward(x)
}

pub fn layer_gradients(net: &DeepNet, x: &[f64]) -> Result<LayerGradient> {
    net.layer_gradients(x)
}

/// `|Σᵢⱼ ∂f/∂(W_k)ᵢⱼ · (W_k)ᵢⱼ − f(x)|`: the per-layer Euler identity residual.
pub fn homogeneity_residual(net: &DeepNet, x: &[f64], k: usize) -> Result<f64> {
    if !net.activation().is_homogeneous() {
        return Err(NetworkError::NotHomogeneous(net.activation().name().into()));
    }
    if k >= net.depth() {
        return Err(NetworkError::NoSuchLayer {
            layer: k,
            depth: net.depth(),
        });
    }
    let f = net.forward(x)?;
    let g = net.layer_gradients(x)?;
    Ok((g.layers[k].frobenius_dot(net.layer(k)) - f).abs())
}

/// Split `W_k = ρ_k V_k` with `ρ_k = ‖W_k‖_F` and `‖V_k‖_F = 1`.
pub fn normalize_layers(net: &DeepNet) -> Result<(Vec<f64>, DeepNet)> {
    let mut rhos = Vec::with_capacity(net.depth());
    let mut out = net.clone();
    for (k, m) in out.layers.iter_mut().enumerate() {
        let rho = frobenius_norm(m);
        if rho == 0.0 {
            return Err(NetworkError::ZeroLayer { layer: k });
        }
        *m = m.scaled(1.0 / rho);
        rhos.push(rho);
    }
    Ok((rhos, out))
}

/// JSON form: `{"activation": "relu", "epsilon"?, "coefficients"?, "output"?, "layers": [{"shape": [r, c], "data": [...]}]}`.
#[derive(Serialize, Deserialize)]
struct NetRepr {
    activation: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    coefficients: Option<Vec<f64>>,
    #[serde(default)]
    output: OutputMode,
    layers: Vec<Matrix>,
}

impl Serialize for DeepNet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (epsilon, coefficients) = match &self.activation {
            Activation::SmoothedRelu { epsilon } => (Some(*epsilon), None),
            Activation::Polynomial { coefficients } => (None, Some(coefficients.clone())),
            _ => (None, None),
        };
        NetRepr {
            activation: self.activation.name().to_string(),
            epsilon,
            coefficients,
            output: self.output,
            layers: self.layers.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DeepNet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let r = NetRepr::deserialize(d)?;
        let activation = match r.activation.as_str() {
            "relu" => Activation::Relu,
            "linear" => Activation::Linear,
            "smoothed_relu" => Activation::SmoothedRelu {
                epsilon: r.epsilon.unwrap_or(DEFAULT_SMOOTHING),
            },
            "polynomial" => Activation::Polynomial {
                coefficients: r
                    .coefficients
                    .ok_or_else(|| D::Error::custom("polynomial activation needs coefficients"))?,
            },
            other => return Err(D::Error::custom(format!("unknown activation {other:?}"))),
        };
        DeepNet::with_output(r.layers, activation, r.output).map_err(D::Error::custom)
    }
}

impl DeepNet {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| NetworkError::Invalid(e.to_string()))
    }
}

/// `Σ_k ⟨A_k, B_k⟩` over matching layer lists.
pub fn layers_dot(a: &[Matrix], b: &[Matrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| dot(x.as_slice(), y.as_slice())).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn single_linear_layer_is_a_dot_product() {
        let net = DeepNet::new(vec![m(&[&[2.0, 0.0]])], Activation::Linear).unwrap();
        assert_eq!(net.forward(&[3.0, 1.0]).unwrap(), 6.0);
        let g = net.layer_gradients(&[3.0, 1.0]).unwrap();
        assert_eq!(g.layers[0].as_slice(), &[3.0, 1.0]);
        assert!(!g.kink);
    }

    #[test]
    fn zero_relu_net_outputs_zero() {
        let net = DeepNet::new(vec![Matrix::zeros(3, 2), Matrix::zeros(1, 3)], Activation::Relu).unwrap();
        assert_eq!(net.forward(&[0.3, -7.0]).unwrap(), 0.0);
    }

    #[test]
    fn two_layer_relu_hand_evaluation() {
        let net = DeepNet::new(
            vec![m(&[&[1.0, 0.0], &[0.0, -1.0]]), m(&[&[1.0, 1.0]])],
            Activation::Relu,
        )
        .unwrap();
        assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), 1.0);
        let profile = net.activation_profile(&[1.0, 1.0]).unwrap();
        assert_eq!(profile.masks[0], vec![1, 0]);
    }

    #[test]
    fn polynomial_chain_rule() {
        let net = DeepNet::new(
            vec![m(&[&[1.0]])],
            Activation::Polynomial {
                coefficients: vec![0.0, 0.0, 1.0],
            },
        )
        .unwrap();
        assert_eq!(net.forward(&[2.0]).unwrap(), 4.0);
        let g = net.layer_gradients(&[2.0]).unwrap();
        assert_eq!(g.layers[0][(0, 0)], 8.0);
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let err = DeepNet::new(vec![Matrix::zeros(3, 2), Matrix::zeros(1, 4)], Activation::Relu).unwrap_err();
        assert_eq!(
            err,
            NetworkError::DimensionMismatch {
                layer: 1,
                expected: 4,
                found: 3
            }
        );
        let net = DeepNet::new(vec![Matrix::zeros(3, 2)], Activation::Relu).unwrap();
        assert!(matches!(
            net.forward_vec(&[1.0]),
            Err(NetworkError::DimensionMismatch { layer: 0, .. })
        ));
    }

    #[test]
    fn relu_kink_is_flagged() {
        let net = DeepNet::new(vec![m(&[&[1.0, -1.0]]), m(&[&[2.0]])], Activation::Relu).unwrap();
        let g = net.layer_gradients(&[1.0, 1.0]).unwrap();
        assert!(g.kink);
        assert_eq!(g.flatten(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn homogeneity_linear_exact_and_rejects_smooth() {
        let net = DeepNet::new(vec![m(&[&[0.3, -1.7, 2.0]])], Activation::Linear).unwrap();
        assert_eq!(homogeneity_residual(&net, &[1.0, 2.0, -0.5], 0).unwrap(), 0.0);
        let smooth = DeepNet::new(vec![m(&[&[1.0]])], Activation::smoothed_relu()).unwrap();
        assert!(matches!(
            homogeneity_residual(&smooth, &[1.0], 0),
            Err(NetworkError::NotHomogeneous(_))
        ));
    }

    #[test]
    fn scaling_one_layer_scales_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DeepNet::gaussian(&[3, 5, 4, 1], Activation::Relu, OutputMode::Linear, 1.0, &mut rng).unwrap();
        let x = [0.4, -0.2, 1.1];
        let f = net.forward(&x).unwrap();
        for k in 0..3 {
            let mut scaled = net.clone();
            scaled.layers_mut()[k] = net.layer(k).scaled(2.0);
            assert_relative_eq!(scaled.forward(&x).unwrap(), 2.0 * f, max_relative = 1e-14);
        }
    }

    #[test]
    fn normalize_examples() {
        let net = DeepNet::new(vec![m(&[&[3.0, 4.0]])], Activation::Linear).unwrap();
        let (rho, v) = normalize_layers(&net).unwrap();
        assert_eq!(rho, vec![5.0]);
        assert_relative_eq!(v.layer(0)[(0, 0)], 0.6, epsilon = 1e-15);
        assert_relative_eq!(v.layer(0)[(0, 1)], 0.8, epsilon = 1e-15);
        let (rho2, v2) = normalize_layers(&v).unwrap();
        assert_relative_eq!(rho2[0], 1.0, epsilon = 1e-15);
        assert!(frobenius_norm(&v2.layer(0).sub(v.layer(0))) < 1e-15);
        let zero = DeepNet::new(vec![Matrix::zeros(1, 2)], Activation::Linear).unwrap();
        assert_eq!(normalize_layers(&zero).unwrap_err(), NetworkError::ZeroLayer { layer: 0 });
    }

    #[test]
    fn normalized_relu_net_factorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DeepNet::gaussian(&[2, 6, 1], Activation::Relu, OutputMode::Linear, 0.7, &mut rng).unwrap();
        let (rho, v) = normalize_layers(&net).unwrap();
        for x in [[1.0, 0.5], [-0.3, 2.0], [0.9, -1.2]] {
            let direct = net.forward(&x).unwrap();
            let factored = rho[0] * rho[1] * v.forward(&x).unwrap();
            assert_relative_eq!(direct, factored, max_relative = 1e-10, epsilon = 1e-14);
        }
    }

    #[test]
    fn smoothed_relu_is_close_to_relu() {
        let act = Activation::smoothed_relu();
        let eps = DEFAULT_SMOOTHING;
        for i in -2000..=2000 {
            let z = i as f64 * 1e-3;
            assert!((act.value(z) - z.max(0.0)).abs() <= eps);
        }
    }

    #[test]
    fn json_shape_and_defaults() {
        let net = DeepNet::with_output(
            vec![m(&[&[1.0, 0.5]]), m(&[&[-2.0]])],
            Activation::SmoothedRelu { epsilon: 0.1 },
            OutputMode::Linear,
        )
        .unwrap();
        let s = net.to_json();
        assert_eq!(
            s,
            r#"{"activation":"smoothed_relu","epsilon":0.1,"output":"linear","layers":[{"shape":[1,2],"data":[1.0,0.5]},{"shape":[1,1],"data":[-2.0]}]}"#
        );
        assert_eq!(DeepNet::from_json(&s).unwrap(), net);
        let plain = DeepNet::from_json(r#"{"activation":"relu","layers":[{"shape":[1,1],"data":[1]}]}"#).unwrap();
        assert_eq!(plain.output_mode(), OutputMode::Activated);
        assert!(DeepNet::from_json(r#"{"activation":"tanh","layers":[]}"#).is_err());
    }
}
