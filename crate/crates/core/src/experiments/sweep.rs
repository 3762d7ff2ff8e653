use serde::{Deserialize, Serialize};

use crate::linalg::{axpy, dot, symmetric_eig, Matrix, DEFAULT_EIG_TOL, PINV_CUTOFF};

use super::{
    chebyshev_nodes, config_error, csv_table, feature_rows, sine_target, uniform_grid, FeatureBasis, Result,
    ScenarioReport,
};

/// Minimum-norm polynomial fits of a sine across degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub seed: u64,
    pub train_points: usize,
    pub test_points: usize,
    pub frequency: f64,
    pub min_degree: usize,
    pub max_degree: usize,
    pub basis: FeatureBasis,
    /// Gram condition number above which a degree is flagged.
    pub condition_flag: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seed: 0,
            train_points: 76,
            test_points: 600,
            frequency: 4.0,
            min_degree: 1,
            max_degree: 300,
            basis: FeatureBasis::Chebyshev,
            condition_flag: 1e10,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_points < 1 {
            return Err(config_error("train_points", "must be at least 1"));
        }
        if self.test_points < 1 {
            return Err(config_error("test_points", "must be at least 1"));
        }
        if self.max_degree < self.min_degree {
            return Err(config_error("max_degree", "must be at least min_degree"));
        }
        Ok(())
    }
}

/// One degree of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreePoint {
    pub degree: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub norm: f64,
    pub condition: f64,
    pub ill_conditioned: bool,
}

fn mse(rows: &[Vec<f64>], w: &[f64], y: &[f64]) -> f64 {
    rows.iter().zip(y).map(|(x, t)| (dot(x, w) - t).powi(2)).sum::<f64>() / y.len() as f64
}

/// Minimum-norm least squares through the smaller Gram matrix, with that
/// matrix's condition number.
fn min_norm_with_condition(x: &Matrix, y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let wide = x.cols() >= x.rows();
    let gram = if wide { x.gram_rows() } else { x.transpose().gram_rows() };
    let eig = symmetric_eig(&gram, DEFAULT_EIG_TOL)?;
    let lmax = eig.eigenvalues[0];
    let lmin = eig.eigenvalues.last().copied().unwrap_or(lmax).max(0.0);
    let rhs = if wide { y.to_vec() } else { x.tr_matvec(y) };
    let mut coef = vec![0.0; rhs.len()];
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= PINV_CUTOFF * lmax {
            continue;
        }
        let q = eig.eigenvector(k);
        axpy(&mut coef, dot(&q, &rhs) / lam, &q);
    }
    let w = if wide { x.tr_matvec(&coef) } else { coef };
    Ok((w, lmax / lmin))
}

/// Sweep points for each degree; usable without a report.
pub fn degree_curve(config: &SweepConfig) -> Result<Vec<DegreePoint>> {
    config.validate()?;
    let xs = chebyshev_nodes(config.train_points);
    let xt = uniform_grid(config.test_points);
    let y: Vec<f64> = xs.iter().map(|&x| sine_target(x, config.frequency)).collect();
    let yt: Vec<f64> = xt.iter().map(|&x| sine_target(x, config.frequency)).collect();
    let full = feature_rows(&xs, config.max_degree, config.basis);
    let full_test = feature_rows(&xt, config.max_degree, config.basis);
    let points = super::run_repetitions(config.max_degree - config.min_degree + 1, 0, |i, _| -> Result<DegreePoint> {
        let degree = config.min_degree + i;
        let rows: Vec<Vec<f64>> = full.iter().map(|r| r[..=degree].to_vec()).collect();
        let test: Vec<Vec<f64>> = full_test.iter().map(|r| r[..=degree].to_vec()).collect();
        let x = Matrix::from_rows(&rows)?;
        let (w, condition) = min_norm_with_condition(&x, &y)?;
        Ok(DegreePoint {
            degree,
            train_loss: mse(&rows, &w, &y),
            test_loss: mse(&test, &w, &yt),
            norm: crate::linalg::norm2(&w),
            condition,
            ill_conditioned: condition > config.condition_flag,
        })
    });
    points.into_iter().collect()
}

pub fn min_norm_degree_sweep(config: &SweepConfig) -> Result<ScenarioReport> {
    let points = degree_curve(config)?;
    let mut report = ScenarioReport::new("degree_sweep", config.seed, 1);
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            vec![
                p.degree as f64,
                p.train_loss,
                p.test_loss,
                p.norm,
                p.condition,
                f64::from(u8::from(p.ill_conditioned)),
            ]
        })
        .collect();
    report.add_file(
        "degree_sweep_plot.csv".into(),
        csv_table(&["degree", "train_loss", "test_loss", "norm", "condition", "ill_conditioned"], &rows),
    );
    let flagged = points.iter().filter(|p| p.ill_conditioned).count();
    if flagged > 0 {
        report.events.push(format!("{flagged} degrees flagged ill-conditioned"));
    }
    let n = config.train_points;
    let over: Vec<&DegreePoint> = points.iter().filter(|p| p.degree >= n).collect();
    let worst_over = over.iter().map(|p| p.train_loss).fold(0.0, f64::max);
    report.set("worst_train_loss_past_threshold", worst_over);
    report.check(
        "interpolates_past_threshold",
        !over.is_empty() && worst_over <= 1e-8,
        format!("largest train loss for degree ≥ {n}: {worst_over:e}"),
    );
    if let Some(first) = points.first() {
        report.set("first_degree_train_loss", first.train_loss);
        report.set("first_degree_test_loss", first.test_loss);
    }
    let last = points.last().expect("sweep has at least one degree");
    let best = points[..points.len() - 1]
        .iter()
        .min_by(|a, b| a.test_loss.total_cmp(&b.test_loss));
    if let Some(best) = best {
        report.set("best_degree", best.degree as f64);
        report.set("best_test_loss", best.test_loss);
        report.set("final_test_loss", last.test_loss);
        report.check(
            "overfits_at_max_degree",
            last.test_loss > best.test_loss,
            format!(
                "test loss {:e} at degree {} vs {:e} at degree {}",
                last.test_loss, last.degree, best.test_loss, best.degree
            ),
        );
    }
    let threshold = points.iter().find(|p| p.train_loss <= 1e-8).map(|p| p.degree);
    report.set("first_degree_train_below_tol", threshold.map_or(f64::NAN, |d| d as f64));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sweep_interpolates() {
        let c = SweepConfig {
            train_points: 12,
            test_points: 50,
            frequency: 1.0,
            max_degree: 40,
            ..SweepConfig::default()
        };
        let pts = degree_curve(&c).unwrap();
        assert!(pts[0].train_loss > 0.05);
        assert!(pts.iter().filter(|p| p.degree >= 11).all(|p| p.train_loss <= 1e-16));
        let r = min_norm_degree_sweep(&c).unwrap();
        assert!(r.predicate("interpolates_past_threshold").unwrap().passed);
        assert_eq!(r.aggregate("first_degree_train_below_tol"), Some(11.0));
    }

    #[test]
    fn both_gram_routes_match_pseudoinverse() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for (n, d) in [(6, 3), (3, 6), (4, 4)] {
            let x = super::super::gaussian_matrix(n, d, 1.0, &mut rng);
            let y: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let (w, cond) = min_norm_with_condition(&x, &y).unwrap();
            let want = crate::linalg::min_norm_least_squares(&x, &y).unwrap();
            for (a, b) in w.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-9, "{n}x{d}: {a} vs {b}");
            }
            assert!(cond >= 1.0);
        }
    }
}
