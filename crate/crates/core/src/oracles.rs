//! Brute-force ground truths: hard-margin SVM by support-subset enumeration,
//! the logarithmic integral, closed-form weight growth, the 1D non-separable
//! equilibrium, and a central-difference gradient checker.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm2, solve, Matrix};
use crate::losses::{Dataset, Labels};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("hard-margin SVM needs binary labels")]
    NotBinary,
    #[error("brute-force SVM limited to {max} samples, got {n}")]
    TooManySamples { n: usize, max: usize },
    #[error("data is not linearly separable through the origin (labels {sign_pattern:?})")]
    Infeasible {
        /// Labels of the samples, as ±1.
        sign_pattern: Vec<i8>,
        /// Samples violated by the least-violating candidate.
        violated: Vec<usize>,
    },
    #[error("logarithmic integral requires z > 1, got {0}")]
    LiDomain(f64),
    #[error("no closed form for K = {0}; integrate numerically")]
    NoClosedForm(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite function value at coordinate {0}")]
    NonFinite(usize),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Sample budget of the subset enumeration.
pub const SVM_MAX_SAMPLES: usize = 20;
const SVM_FEAS_TOL: f64 = 1e-9;

/// Hard-margin SVM through the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSolution {
    /// Unit max-margin direction.
    pub w_tilde: Vec<f64>,
    /// Minimum-norm `w` with `yₙ wᵀxₙ ≥ 1`.
    pub w_raw: Vec<f64>,
    /// Geometric margin `1 / ‖w_raw‖`.
    pub margin: f64,
    pub support_indices: Vec<usize>,
}

/// Min-norm solution of `zᵢᵀw = 1` for `i ∈ subset`, if the system is consistent.
fn subset_candidate(z: &[Vec<f64>], subset: &[usize]) -> Option<Vec<f64>> {
    let m = subset.len();
    let gram = Matrix::from_fn(m, m, |a, b| dot(&z[subset[a]], &z[subset[b]]));
    let alpha = solve(&gram, &vec![1.0; m])?;
    let d = z[0].len();
    let mut w = vec![0.0; d];
    for (a, &i) in subset.iter().enumerate() {
        crate::linalg::axpy(&mut w, alpha[a], &z[i]);
    }
    subset
        .iter()
        .all(|&i| (dot(&z[i], &w) - 1.0).abs() <= 1e-9)
        .then_some(w)
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exact hard-margin SVM (no bias) by enumerating candidate support sets.
///
/// Every subset `S` with `|S| ≤ d` is tried: the min-norm `w` with equality on
/// `S` is kept if it satisfies all constraints, and the smallest-norm such
/// candidate wins (ties go to the first subset in size-then-lexicographic
/// order). An optimal support of size at most `d` always exists.
pub fn hard_margin_svm(data: &Dataset) -> Result<MarginSolution> {
    let y = match data.labels() {
        Labels::Binary(y) => y,
        _ => return Err(OracleError::NotBinary),
    };
    let n = data.len();
    if n > SVM_MAX_SAMPLES {
        return Err(OracleError::TooManySamples {
            n,
            max: SVM_MAX_SAMPLES,
        });
    }
    let z: Vec<Vec<f64>> = data
        .inputs()
        .iter()
        .zip(y)
        .map(|(x, &yn)| x.iter().map(|v| yn * v).collect())
        .collect();
    let d = data.dim();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut least_violating: Option<(f64, Vec<usize>)> = None;
    for size in 1..=d.min(n) {
        let mut comb: Vec<usize> = (0..size).collect();
        loop {
            if let Some(w) = subset_candidate(&z, &comb) {
                let worst = z.iter().map(|zi| dot(zi, &w)).fold(f64::INFINITY, f64::min);
                let norm = norm2(&w);
                if worst >= 1.0 - SVM_FEAS_TOL {
                    if best.as_ref().map_or(true, |(b, _)| norm < *b) {
                        best = Some((norm, w));
                    }
                } else if least_violating.as_ref().map_or(true, |(v, _)| worst > *v) {
                    let violated = (0..n).filter(|&i| dot(&z[i], &w) < 1.0 - SVM_FEAS_TOL).collect();
                    least_violating = Some((worst, violated));
                }
            }
            if !next_combination(&mut comb, n) {
                break;
            }
        }
    }
    match best {
        Some((norm, w_raw)) => {
            let support_indices = (0..n)
                .filter(|&i| (dot(&z[i], &w_raw) - 1.0).abs() <= SVM_FEAS_TOL)
                .collect();
            Ok(MarginSolution {
                w_tilde: w_raw.iter().map(|v| v / norm).collect(),
                margin: 1.0 / norm,
                w_raw,
                support_indices,
            })
        }
        None => Err(OracleError::Infeasible {
            sign_pattern: y.iter().map(|&v| if v > 0.0 { 1 } else { -1 }).collect(),
            violated: least_violating.map(|(_, v)| v).unwrap_or_else(|| (0..n).collect()),
        }),
    }
}

/// Smooth part of `e^u/u` after removing the pole: `e^u/u − e^u/(e^u − 1)`.
fn li_regular(u: f64) -> f64 {
    if u.abs() < 0.02 {
        const C: [f64; 7] = [
            0.5,
            5.0 / 12.0,
            1.0 / 6.0,
            31.0 / 720.0,
            1.0 / 120.0,
            41.0 / 30240.0,
            1.0 / 5040.0,
        ];
        C.iter().rev().fold(0.0, |acc, &c| acc * u + c)
    } else {
        u.exp() / u - 1.0 / (-(-u).exp_m1())
    }
}

fn simpson_step(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol.max(64.0 * f64::EPSILON * (left + right).abs()) {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, fa, b, fb, m, fm, whole, tol, 40)
}

const LI_LOWER: f64 = -40.0;

/// Principal-value logarithmic integral `li(z) = ∫₀ᶻ dt / ln t`, `z > 1`.
///
/// With `t = eᵘ` the integrand is `eᵘ/u`; the pole at `u = 0` is split off as
/// `eᵘ/(eᵘ − 1)`, whose principal value integrates to `ln(z − 1)`, and the
/// smooth remainder is integrated on each side of zero.
pub fn logarithmic_integral(z: f64) -> Result<f64> {
    if !(z > 1.0) || !z.is_finite() {
        return Err(OracleError::LiDomain(z));
    }
    let upper = z.ln();
    let left = adaptive_simpson(li_regular, LI_LOWER, 0.0, 1e-13);
    let right_scale = (upper.exp() / upper.max(1.0)).max(1.0);
    let right = adaptive_simpson(li_regular, 0.0, upper, 1e-13 * right_scale);
    Ok(left + right + (z - 1.0).ln())
}

/// Inverse of `li` on `(1, ∞)`: safeguarded Newton (`li′(z) = 1/ln z`) inside
/// a bisection bracket.
pub fn logarithmic_integral_inverse(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(OracleError::InvalidArgument(format!("li inverse of {y}")));
    }
    let mut lo = 1.0 + 1e-15;
    let mut hi = 2.0;
    while logarithmic_integral(hi)? < y {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(OracleError::InvalidArgument(format!("li inverse of {y} out of range")));
        }
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..200 {
        let g = logarithmic_integral(z)? - y;
        if g == 0.0 {
            return Ok(z);
        }
        if g > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let newton = z - g * z.ln();
        if (newton - z).abs() <= 4.0 * f64::EPSILON * z {
            return Ok(newton);
        }
        z = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * z {
            break;
        }
    }
    Ok(z)
}

/// `ρ(t)` for the single-sample growth ODE `ρ̇ = f̃Kρ^{K−1}e^{−ρᴷf̃}`.
///
/// K=1: `e^{f̃ρ} = f̃²t + e^{f̃ρ₀}`. K=2: with `R = e^{f̃ρ²}`,
/// `li(R) = 4f̃t + li(R₀)`.
pub fn growth_closed_form(k: usize, f_tilde: f64, t: f64, rho0: f64) -> Result<f64> {
    if !(f_tilde > 0.0) || !(t >= 0.0) {
        return Err(OracleError::InvalidArgument(format!("f̃ = {f_tilde}, t = {t}")));
    }
    match k {
        1 => Ok((f_tilde * f_tilde * t + (f_tilde * rho0).exp()).ln() / f_tilde),
        2 => {
            if !(rho0 > 0.0) {
                return Err(OracleError::InvalidArgument("K = 2 closed form needs ρ₀ > 0".into()));
            }
            let c = logarithmic_integral((f_tilde * rho0 * rho0).exp())?;
            let r = logarithmic_integral_inverse(4.0 * f_tilde * t + c)?;
            Ok((r.ln() / f_tilde).sqrt())
        }
        other => Err(OracleError::NoClosedForm(other)),
    }
}

/// RK4 solution of the growth ODE at each of `times` (ascending), integrated in
/// `s = ln(1 + t)` with step `ds`.
pub fn growth_numeric(k: usize, f_tilde: f64, rho0: f64, times: &[f64], ds: f64) -> Result<Vec<f64>> {
    if k == 0 || !(f_tilde > 0.0) || !(ds > 0.0) {
        return Err(OracleError::InvalidArgument(format!("K = {k}, f̃ = {f_tilde}, ds = {ds}")));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(OracleError::InvalidArgument("times must be ascending and non-negative".into()));
    }
    let kf = k as f64;
    // dρ/ds = (1 + t) ρ̇ = eˢ ρ̇
    let rhs = |s: f64, rho: f64| -> f64 {
        let rk = rho.powi(k as i32);
        f_tilde * kf * rho.powi(k as i32 - 1) * (s - rk * f_tilde).exp()
    };
    let mut out = Vec::with_capacity(times.len());
    let mut s = 0.0;
    let mut rho = rho0;
    for &t in times {
        let target = t.ln_1p();
        while s < target {
            let h = ds.min(target - s);
            let k1 = rhs(s, rho);
            let k2 = rhs(s + 0.5 * h, rho + 0.5 * h * k1);
            let k3 = rhs(s + 0.5 * h, rho + 0.5 * h * k2);
            let k4 = rhs(s + h, rho + h * k3);
            rho += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            s += h;
        }
        out.push(rho);
    }
    Ok(out)
}

/// Equilibrium of `ẇ = −x₁e^{x₁w} + x₂e^{−x₂w}` with the flow derivative there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium1d {
    pub w: f64,
    /// `F′(w*) = −x₁²e^{x₁w*} − x₂²e^{−x₂w*}`.
    pub derivative: f64,
}

pub fn nonseparable_equilibrium_1d(x1: f64, x2: f64) -> Result<Equilibrium1d> {
    if !(x1 > 0.0 && x2 > x1 && x2.is_finite()) {
        return Err(OracleError::InvalidArgument(format!(
            "need 0 < x1 < x2, got x1 = {x1}, x2 = {x2}"
        )));
    }
    let f = |w: f64| -x1 * (x1 * w).exp() + x2 * (-x2 * w).exp();
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-15 * hi.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = 0.5 * (lo + hi);
    Ok(Equilibrium1d {
        w,
        derivative: -x1 * x1 * (x1 * w).exp() - x2 * x2 * (-x2 * w).exp(),
    })
}

/// Worst per-coordinate relative discrepancy between `grad` and central
/// differences of `f` at `point`.
///
/// Each coordinate is compared relative to `max(|gᵢ|, |fdᵢ|, 10⁻³‖g‖∞)`, so
/// near-zero entries are judged on the gradient's own scale.
pub fn fd_gradient_check(f: impl Fn(&[f64]) -> f64, grad: &[f64], point: &[f64], step: f64) -> Result<f64> {
    if grad.len() != point.len() {
        return Err(OracleError::InvalidArgument(format!(
            "gradient length {} vs point length {}",
            grad.len(),
            point.len()
        )));
    }
    if !(step > 0.0) {
        return Err(OracleError::InvalidArgument(format!("step {step}")));
    }
    let mut x = point.to_vec();
    let mut fd = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(OracleError::NonFinite(i));
        }
        fd.push((fp - fm) / (2.0 * step));
    }
    let scale = grad.iter().chain(&fd).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    Ok(grad
        .iter()
        .zip(&fd)
        .map(|(g, d)| (g - d).abs() / g.abs().max(d.abs()).max(floor))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// `Ei(u)` by its power series, for moderate `u`.
    fn ei_series(u: f64) -> f64 {
        const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 1..200 {
            term *= u / k as f64;
            sum += term / k as f64;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        EULER_GAMMA + u.abs().ln() + sum
    }

    #[test]
    fn svm_antipodal_pair() {
        let data = Dataset::binary(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![1.0, -1.0]).unwrap();
        let s = hard_margin_svm(&data).unwrap();
        assert_relative_eq!(s.w_raw[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.w_raw[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.margin, 1.0, epsilon = 1e-12);
        assert_eq!(s.support_indices, vec![0, 1]);
    }

    #[test]
    fn svm_single_point() {
        let data = Dataset::binary(vec![vec![3.0, 4.0]], vec![1.0]).unwrap();
        let s = hard_margin_svm(&data).unwrap();
        assert_relative_eq!(s.w_raw[0], 3.0 / 25.0, epsilon = 1e-15);
        assert_relative_eq!(s.w_raw[1], 4.0 / 25.0, epsilon = 1e-15);
        assert_relative_eq!(norm2(&s.w_raw), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn svm_three_points() {
        let data = Dataset::binary(
            vec![vec![2.0, 0.0], vec![0.0, 2.0], vec![-1.0, -1.0]],
            vec![1.0, 1.0, -1.0],
        )
        .unwrap();
        let s = hard_margin_svm(&data).unwrap();
        // equality on all three is only consistent along (1,1)/2
        assert_relative_eq!(s.w_raw[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.w_raw[1], 0.5, epsilon = 1e-12);
        assert_eq!(s.support_indices, vec![0, 1, 2]);
    }

    #[test]
    fn svm_infeasible_reports_pattern() {
        let data = Dataset::binary(vec![vec![1.0], vec![2.0]], vec![1.0, -1.0]).unwrap();
        match hard_margin_svm(&data) {
            Err(OracleError::Infeasible { sign_pattern, violated }) => {
                assert_eq!(sign_pattern, vec![1, -1]);
                assert!(!violated.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn li_reference_values() {
        assert_relative_eq!(logarithmic_integral(2.0).unwrap(), 1.045_163_780_117_492_8, max_relative = 1e-10);
        for z in [1.01, 1.5, 2.0, 5.0, 10.0, 100.0, 1e4, 1e8] {
            let want = ei_series(f64::ln(z));
            assert_relative_eq!(logarithmic_integral(z).unwrap(), want, max_relative = 1e-9);
        }
        assert!(logarithmic_integral(std::f64::consts::E).unwrap() > logarithmic_integral(2.0).unwrap());
        assert!(logarithmic_integral(1.0).is_err());
        assert!(logarithmic_integral(0.5).is_err());
    }

    #[test]
    fn li_inverse_roundtrip() {
        for z in [1.2, 1.45, 2.0, 5.0, 37.0, 1e3, 1e6] {
            let y = logarithmic_integral(z).unwrap();
            assert_relative_eq!(logarithmic_integral_inverse(y).unwrap(), z, max_relative = 1e-8);
        }
    }

    #[test]
    fn growth_k1_example() {
        assert_relative_eq!(growth_closed_form(1, 1.0, 100.0, 0.0).unwrap(), 101f64.ln(), max_relative = 1e-15);
        assert!(matches!(growth_closed_form(3, 1.0, 1.0, 1.0), Err(OracleError::NoClosedForm(3))));
    }

    #[test]
    fn growth_numeric_matches_closed_forms() {
        let times: Vec<f64> = (0..=40).map(|i| 10f64.powf(i as f64 / 10.0)).collect();
        for (k, f, rho0) in [(1, 1.0, 0.0), (1, 0.5, 0.3), (2, 1.0, 1.0), (2, 0.7, 0.5)] {
            let num = growth_numeric(k, f, rho0, &times, 1e-3).unwrap();
            for (t, r) in times.iter().zip(num) {
                let c = growth_closed_form(k, f, *t, rho0).unwrap();
                assert_relative_eq!(r, c, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn equilibrium_examples() {
        let e = nonseparable_equilibrium_1d(1.0, 2.0).unwrap();
        assert!((e.w - 2f64.ln() / 3.0).abs() <= 1e-12);
        assert!(e.derivative < 0.0);
        let e = nonseparable_equilibrium_1d(1.0, std::f64::consts::E).unwrap();
        assert!((e.w - 1.0 / (1.0 + std::f64::consts::E)).abs() <= 1e-12);
        assert!(nonseparable_equilibrium_1d(2.0, 1.0).is_err());
    }

    #[test]
    fn fd_check_quadratic_and_fault() {
        let a = [[2.0, 0.5], [0.5, 1.0]];
        let f = |x: &[f64]| 0.5 * (a[0][0] * x[0] * x[0] + 2.0 * a[0][1] * x[0] * x[1] + a[1][1] * x[1] * x[1]);
        let p = [0.7, -1.3];
        let g = [a[0][0] * p[0] + a[0][1] * p[1], a[1][0] * p[0] + a[1][1] * p[1]];
        assert!(fd_gradient_check(f, &g, &p, 1e-3).unwrap() <= 1e-10);
        assert!(fd_gradient_check(f, &g, &p, 1e-6).unwrap() <= 1e-8);
        let bad = [g[0] * 1.01, g[1]];
        assert!(fd_gradient_check(f, &bad, &p, 1e-6).unwrap() >= 1e-3);
        assert!(matches!(
            fd_gradient_check(|_| f64::NAN, &g, &p, 1e-6),
            Err(OracleError::NonFinite(0))
        ));
    }
}
