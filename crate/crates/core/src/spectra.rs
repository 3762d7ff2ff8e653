//! Linearization around flow equilibria: finite-difference Hessians of the
//! loss, sign classification of their spectra, λ sweeps, the virtual-data
//! linear system and conjugacy comparison.
//!
//! Every report describes the Hessian `H` of the loss. The flow's Jacobian
//! is `−H`, so a positive loss-Hessian eigenvalue is a stable direction of
//! the flow and a negative one is unstable.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{csv_float, run_flow, FlowError, FlowState, RunOptions, StopRule};
use crate::linalg::{symmetric_eig, LinalgError, Matrix, DEFAULT_EIG_TOL};
use crate::losses::{self, Dataset, LossError, LossKind};
use crate::network::{DeepNet, NetworkError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectraError {
    #[error("{params} parameters exceed the dense Hessian budget of {max}")]
    TooLarge { params: usize, max: usize },
    #[error("finite-difference Hessian is asymmetric (relative {relative:e}); the gradient is suspect")]
    Asymmetric { relative: f64 },
    #[error("{lambdas} lambdas for a {depth}-layer network")]
    LambdaCount { lambdas: usize, depth: usize },
    #[error("residual {residual:e} at sample {sample}: not an interpolating minimum")]
    NotAtMinimum { sample: usize, residual: f64 },
    #[error("virtual data needs real-valued targets")]
    NeedsTargets,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

pub type Result<T> = std::result::Result<T, SpectraError>;

/// Largest flattened parameter count for dense Hessians.
pub const MAX_HESSIAN_PARAMS: usize = 500;
/// Relative asymmetry tolerated before symmetrization.
pub const ASYMMETRY_TOL: f64 = 1e-4;
/// Default zero-eigenvalue tolerance, relative to the spectral radius.
pub const DEFAULT_ZERO_TOL: f64 = 1e-8;
/// Relative gap below which eigenvalues count as one distinct value.
pub const DISTINCT_TOL: f64 = 1e-6;
/// Orientation stated in every report.
pub const CONVENTION: &str = "eigenvalues of the loss Hessian H; flow Jacobian is -H; stable = positive";

fn flat_gradient(kind: LossKind, net: &DeepNet, data: &Dataset) -> Result<Vec<f64>> {
    Ok(losses::loss_and_gradient(kind, net, data, 0.0)?.flatten())
}

fn check_lambdas(net: &DeepNet, lambdas: &[f64]) -> Result<()> {
    if lambdas.len() != net.depth() {
        return Err(SpectraError::LambdaCount {
            lambdas: lambdas.len(),
            depth: net.depth(),
        });
    }
    Ok(())
}

fn fd_step(w: f64) -> f64 {
    1e-5 * w.abs().max(1.0)
}

fn hessian_column(kind: LossKind, net: &DeepNet, data: &Dataset, w: &[f64], i: usize) -> Result<Vec<f64>> {
    let h = fd_step(w[i]);
    let mut wp = w.to_vec();
    wp[i] += h;
    let mut wm = w.to_vec();
    wm[i] -= h;
    let gp = flat_gradient(kind, &net.with_flat(&wp), data)?;
    let gm = flat_gradient(kind, &net.with_flat(&wm), data)?;
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

/// Hessian of `L + Σ λ_k‖W_k‖²` over all flattened weights, by central
/// differences of the analytic gradient (step `10⁻⁵·max(1, |wᵢ|)`), then
/// symmetrized.
pub fn hessian(kind: LossKind, net: &DeepNet, data: &Dataset, lambdas: &[f64]) -> Result<Matrix> {
    check_lambdas(net, lambdas)?;
    let d = net.num_params();
    if d > MAX_HESSIAN_PARAMS {
        return Err(SpectraError::TooLarge {
            params: d,
            max: MAX_HESSIAN_PARAMS,
        });
    }
    let w = net.flatten();
    #[cfg(feature = "parallel")]
    let cols: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..d)
            .into_par_iter()
            .map(|i| hessian_column(kind, net, data, &w, i))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|i| hessian_column(kind, net, data, &w, i))
        .collect::<Result<_>>()?;
    let mut h = Matrix::from_fn(d, d, |r, c| cols[c][r]);
    let scale = h.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale > 0.0 {
        let asym = h.max_asymmetry().unwrap_or(0.0);
        if asym / scale > ASYMMETRY_TOL {
            return Err(SpectraError::Asymmetric {
                relative: asym / scale,
            });
        }
    }
    h = h.symmetrized();
    for (range, &lam) in net.layer_offsets().into_iter().zip(lambdas) {
        for i in range {
            h[(i, i)] += 2.0 * lam;
        }
    }
    Ok(h)
}

/// Independent Hessian from second differences of the loss value.
pub fn hessian_second_differences(kind: LossKind, net: &DeepNet, data: &Dataset) -> Result<Matrix> {
    let d = net.num_params();
    if d > MAX_HESSIAN_PARAMS {
        return Err(SpectraError::TooLarge {
            params: d,
            max: MAX_HESSIAN_PARAMS,
        });
    }
    let w = net.flatten();
    let f = |v: &[f64]| losses::loss(kind, &net.with_flat(v), data);
    let steps: Vec<f64> = w.iter().map(|x| 1e-4 * x.abs().max(1.0)).collect();
    let f0 = f(&w)?;
    let mut h = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let (hi, hj) = (steps[i], steps[j]);
            let value = if i == j {
                let mut p = w.clone();
                p[i] += hi;
                let mut m = w.clone();
                m[i] -= hi;
                (f(&p)? - 2.0 * f0 + f(&m)?) / (hi * hi)
            } else {
                let eval = |si: f64, sj: f64| {
                    let mut v = w.clone();
                    v[i] += si * hi;
                    v[j] += sj * hj;
                    f(&v)
                };
                (eval(1.0, 1.0)? - eval(1.0, -1.0)? - eval(-1.0, 1.0)? + eval(-1.0, -1.0)?) / (4.0 * hi * hj)
            };
            h[(i, j)] = value;
            h[(j, i)] = value;
        }
    }
    Ok(h)
}

/// Sign classification of a symmetric matrix's spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Positive loss-Hessian eigenvalues (decaying modes of the flow).
    pub n_stable: usize,
    /// Negative loss-Hessian eigenvalues (growing modes).
    pub n_unstable: usize,
    pub n_zero: usize,
    /// Relative tolerance; `|λ| ≤ tol·max|λ|` counts as zero.
    pub tol: f64,
    pub convention: String,
}

impl SpectrumReport {
    pub fn is_hyperbolic(&self) -> bool {
        self.n_zero == 0
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.n_stable, self.n_unstable, self.n_zero]
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(f64::NAN)
    }

    /// Eigenvalues of the flow Jacobian `−H`.
    pub fn jacobian_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().rev().map(|v| -v).collect()
    }

    fn class_of(&self, v: f64) -> &'static str {
        let thr = self.tol * self.spectral_radius();
        if v.abs() <= thr {
            "zero"
        } else if v > 0.0 {
            "stable"
        } else {
            "unstable"
        }
    }

    /// `index,eigenvalue,class` rows with an optional leading comment line.
    pub fn to_csv(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("index,eigenvalue,class\n");
        for (i, &v) in self.eigenvalues.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{}", csv_float(v), self.class_of(v));
        }
        out
    }

    /// Number of distinct nonzero eigenvalues, clustering values closer than
    /// `DISTINCT_TOL` relative to the spectral radius.
    pub fn distinct_nonzero(&self) -> usize {
        distinct_eigenvalue_count(&self.eigenvalues, self.tol, DISTINCT_TOL)
    }
}

/// Classifies the eigenvalues of the symmetric `h` at relative tolerance `tol`.
pub fn classify(h: &Matrix, tol: f64) -> Result<SpectrumReport> {
    let eig = symmetric_eig(h, DEFAULT_EIG_TOL)?;
    Ok(classify_eigenvalues(eig.eigenvalues, tol))
}

pub fn classify_eigenvalues(mut eigenvalues: Vec<f64>, tol: f64) -> SpectrumReport {
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let radius = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let thr = tol * radius;
    let n_zero = eigenvalues.iter().filter(|v| v.abs() <= thr).count();
    let n_stable = eigenvalues.iter().filter(|v| **v > thr).count();
    let n_unstable = eigenvalues.len() - n_zero - n_stable;
    SpectrumReport {
        eigenvalues,
        n_stable,
        n_unstable,
        n_zero,
        tol,
        convention: CONVENTION.into(),
    }
}

/// Distinct nonzero values in `eigenvalues`: values within `zero_tol·radius`
/// of zero are dropped, the rest clustered at gaps below `gap·radius`.
pub fn distinct_eigenvalue_count(eigenvalues: &[f64], zero_tol: f64, gap: f64) -> usize {
    let radius = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut vals: Vec<f64> = eigenvalues
        .iter()
        .copied()
        .filter(|v| v.abs() > zero_tol * radius)
        .collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    let mut count = 0;
    let mut last = f64::NEG_INFINITY;
    for v in vals {
        if v - last > gap * radius {
            count += 1;
        }
        last = v;
    }
    count
}

/// Settings for locating each regularized equilibrium in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub step: f64,
    pub max_steps: u64,
    /// Field norm at which the flow counts as at equilibrium.
    pub gradient_tol: f64,
    /// Relative zero-eigenvalue tolerance.
    pub zero_tol: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            step: 1e-2,
            max_steps: 2_000_000,
            gradient_tol: 1e-9,
            zero_tol: DEFAULT_ZERO_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub lambda: f64,
    pub report: SpectrumReport,
    /// `‖−∇L − 2λW‖` at the located point.
    pub field_norm: f64,
    /// Set when the flow did not reach `gradient_tol`.
    pub warning: Option<String>,
    pub equilibrium: DeepNet,
}

impl SweepEntry {
    /// `λ > 0`: hyperbolic and `min eig ≥ 2λ(1 − 10⁻³)`; `λ = 0`: degenerate.
    pub fn meets_prediction(&self) -> bool {
        if self.lambda > 0.0 {
            self.report.is_hyperbolic() && self.report.min_eigenvalue() >= 2.0 * self.lambda * (1.0 - 1e-3)
        } else {
            self.report.n_zero >= 1
        }
    }
}

/// For each `λ`, flows from `net` under `L + λΣ‖W_k‖²` to equilibrium and
/// classifies the Hessian there.
pub fn hyperbolicity_sweep(
    kind: LossKind,
    net: &DeepNet,
    data: &Dataset,
    lambdas: &[f64],
    settings: &SweepSettings,
) -> Result<Vec<SweepEntry>> {
    let depth = net.depth();
    lambdas
        .iter()
        .map(|&lambda| {
            let state = FlowState::new(net.clone(), settings.step)?.with_lambdas(vec![lambda; depth])?;
            let run = run_flow(
                state,
                kind,
                data,
                StopRule::gradient(settings.gradient_tol, settings.max_steps),
                &RunOptions::default(),
            )?;
            let field_norm = crate::flow::field_norm(&run.state, kind, data)?;
            let eq = run.state.net;
            let h = hessian(kind, &eq, data, &vec![lambda; depth])?;
            let report = classify(&h, settings.zero_tol)?;
            let warning = (field_norm > settings.gradient_tol).then(|| {
                format!("λ = {lambda}: field norm {field_norm:e} above {:e}", settings.gradient_tol)
            });
            Ok(SweepEntry {
                lambda,
                report,
                field_norm,
                warning,
                equilibrium: eq,
            })
        })
        .collect()
}

/// Tolerated residual `|f(xₙ) − yₙ|` for the virtual-data identity.
pub const VIRTUAL_RESIDUAL_TOL: f64 = 1e-6;

/// Virtual inputs `x′ₙ = ∇_W f(W; xₙ)`, labelled like `data`.
pub fn virtual_linear_system(net: &DeepNet, data: &Dataset) -> Result<Dataset> {
    let y = data.targets().ok_or(SpectraError::NeedsTargets)?;
    let mut inputs = Vec::with_capacity(data.len());
    for (n, x) in data.inputs().iter().enumerate() {
        let residual = (net.forward(x)? - y[n]).abs();
        if residual > VIRTUAL_RESIDUAL_TOL {
            return Err(SpectraError::NotAtMinimum { sample: n, residual });
        }
        inputs.push(net.layer_gradients(x)?.flatten());
    }
    Ok(data.with_inputs(inputs)?)
}

/// `2 Σₙ x′ₙ x′ₙᵀ`, the square-loss Hessian of the linear model on `virtual_data`.
pub fn gram_hessian(virtual_data: &Dataset) -> Matrix {
    let d = virtual_data.dim();
    let mut h = Matrix::zeros(d, d);
    for x in virtual_data.inputs() {
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] += 2.0 * x[i] * x[j];
            }
        }
    }
    h
}

/// Comparison of two linearizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyVerdict {
    #[serde(rename = "topological")]
    pub topologically_conjugate: bool,
    #[serde(rename = "differentiable_candidate")]
    pub differentiably_conjugate_candidate: bool,
    /// `[stable, unstable, zero]`.
    pub counts_a: [usize; 3],
    pub counts_b: [usize; 3],
    /// `νᵢ/μᵢ` of matched sorted same-sign eigenvalues; absent when the
    /// dimensions differ.
    pub exponent_map: Option<Vec<f64>>,
}

impl ConjugacyVerdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("verdict serialization cannot fail")
    }
}

/// Topological conjugacy iff the sign counts agree; differentiable candidate
/// iff additionally the sorted eigenvalues agree within `tol` relative to the
/// larger spectral radius.
pub fn conjugacy_compare(ha: &Matrix, hb: &Matrix, tol: f64) -> Result<ConjugacyVerdict> {
    let a = classify(ha, tol)?;
    let b = classify(hb, tol)?;
    Ok(conjugacy_from_reports(&a, &b, tol))
}

pub fn conjugacy_from_reports(a: &SpectrumReport, b: &SpectrumReport, tol: f64) -> ConjugacyVerdict {
    let same_dim = a.eigenvalues.len() == b.eigenvalues.len();
    let topological = if same_dim {
        a.counts() == b.counts()
    } else {
        a.n_stable == b.n_stable && a.n_unstable == b.n_unstable
    };
    let radius = a.spectral_radius().max(b.spectral_radius());
    let differentiable = same_dim
        && topological
        && a
            .eigenvalues
            .iter()
            .zip(&b.eigenvalues)
            .all(|(x, y)| (x - y).abs() <= tol * radius);
    let exponent_map = same_dim.then(|| {
        let thr_a = a.tol * a.spectral_radius();
        let thr_b = b.tol * b.spectral_radius();
        a.eigenvalues
            .iter()
            .zip(&b.eigenvalues)
            .filter(|(x, y)| x.abs() > thr_a && y.abs() > thr_b && x.signum() == y.signum())
            .map(|(x, y)| y / x)
            .collect()
    });
    ConjugacyVerdict {
        topologically_conjugate: topological,
        differentiably_conjugate_candidate: differentiable,
        counts_a: a.counts(),
        counts_b: b.counts(),
        exponent_map,
    }
}

/// `∃k: N_k·N_{k−1} > n·min(N_k, …, N_{H+1})` for `dims = [N_0, …, N_{H+1}]`.
pub fn takeuchi_condition(dims: &[usize], n: usize) -> bool {
    (1..dims.len()).any(|k| {
        let tail_min = dims[k..].iter().copied().min().unwrap_or(0);
        dims[k] * dims[k - 1] > n * tail_min
    })
}
