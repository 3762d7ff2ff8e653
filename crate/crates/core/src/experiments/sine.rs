use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::flow::{
    perturb_and_reconverge, FlowState, NoiseNorm, NoiseScale, Observables, PerturbationProtocol, RunOptions,
};
use crate::linalg::{norm2, null_space_projector, numerical_rank, symmetric_eig, Matrix, DEFAULT_EIG_TOL};
use crate::losses::LossKind;
use crate::network::{Activation, DeepNet};

use super::{
    chebyshev_nodes, config_error, csv_table, gaussian_matrix, mean, sine_dataset, std_dev,
    uniform_grid, FeatureBasis, Result, ScenarioReport,
};

/// Polynomial regression of a sine under repeated weight perturbations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SineConfig {
    pub seed: u64,
    pub repetitions: usize,
    /// Chebyshev nodes used for training.
    pub train_points: usize,
    /// Evenly spaced test points on `[−1, 1]`.
    pub test_points: usize,
    pub frequency: f64,
    pub degree: usize,
    pub basis: FeatureBasis,
    /// Step on the mean squared error; the flow on the summed loss uses
    /// `step / train_points`.
    pub step: f64,
    /// Std of the Gaussian initialization (0 starts from zero weights).
    pub init_std: f64,
    pub noise_std: f64,
    pub noise_norm: NoiseNorm,
    /// Steps between perturbations.
    pub interval: u64,
    /// Perturbations applied before the unperturbed second half.
    pub perturbations: u64,
    /// Defaults to `2 · perturbations · interval`.
    pub total_steps: Option<u64>,
    /// Training MSE counted as re-converged.
    pub reconverge_tol: f64,
    /// Field norm below which the rest of an interval is skipped.
    pub equilibrium_tol: f64,
    /// Draws for the random-walk prediction.
    pub monte_carlo_samples: usize,
}

impl Default for SineConfig {
    fn default() -> Self {
        SineConfig {
            seed: 0,
            repetitions: 29,
            train_points: 9,
            test_points: 100,
            frequency: 4.0,
            degree: 39,
            basis: FeatureBasis::Chebyshev,
            step: 0.2,
            init_std: 0.0,
            noise_std: 0.45,
            noise_norm: NoiseNorm::PerCoordinate,
            interval: 120_000,
            perturbations: 10,
            total_steps: None,
            reconverge_tol: 1e-6,
            equilibrium_tol: 1e-13,
            monte_carlo_samples: 20_000,
        }
    }
}

impl SineConfig {
    /// Unperturbed control: degree 30, 250000 steps, 30 repetitions from
    /// random initializations.
    pub fn control() -> Self {
        SineConfig {
            repetitions: 30,
            degree: 30,
            init_std: 0.1,
            interval: 25_000,
            perturbations: 0,
            total_steps: Some(250_000),
            ..SineConfig::default()
        }
    }

    pub fn total(&self) -> u64 {
        self.total_steps.unwrap_or(2 * self.perturbations * self.interval)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(config_error("repetitions", "must be at least 1"));
        }
        if self.train_points < 1 {
            return Err(config_error("train_points", "must be at least 1"));
        }
        if self.test_points < 1 {
            return Err(config_error("test_points", "must be at least 1"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(config_error("step", "must be positive"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(config_error("noise_std", "must be positive"));
        }
        if self.init_std < 0.0 {
            return Err(config_error("init_std", "must be non-negative"));
        }
        if self.interval < 1 {
            return Err(config_error("interval", "must be at least 1"));
        }
        if self.total() < 1 {
            return Err(config_error("total_steps", "must be at least 1"));
        }
        if self.perturbations * self.interval > self.total() {
            return Err(config_error("perturbations", "perturbation phase exceeds total_steps"));
        }
        Ok(())
    }
}

/// Expected `‖P Σⱼ δⱼ‖²` over `m` perturbations by simulation.
fn random_walk_prediction(p: &Matrix, m: u64, sigma: f64, norm: NoiseNorm, samples: usize, seed: u64) -> f64 {
    let d = p.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut total = 0.0;
    for _ in 0..samples {
        let mut sum = vec![0.0; d];
        for _ in 0..m {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let scale = match norm {
                NoiseNorm::PerCoordinate => sigma,
                NoiseNorm::TotalVector => sigma / norm2(&z),
            };
            sum.iter_mut().zip(&z).for_each(|(s, v)| *s += scale * v);
        }
        total += norm2(&p.matvec(&sum)).powi(2);
    }
    total / samples as f64
}

struct Repetition {
    trace_csv: String,
    times: Vec<f64>,
    train: Vec<f64>,
    test: Vec<f64>,
    norms: Vec<f64>,
    null_sq: Vec<f64>,
    worst_cycle_error: f64,
    cycles: usize,
    flagged: bool,
}

pub fn sine_polynomial_perturbation(config: &SineConfig) -> Result<ScenarioReport> {
    config.validate()?;
    let train = sine_dataset(&chebyshev_nodes(config.train_points), config.frequency, config.degree, config.basis)?;
    let test = sine_dataset(&uniform_grid(config.test_points), config.frequency, config.degree, config.basis)?;
    let x = train.matrix();
    let p = null_space_projector(&x)?;
    let rank = numerical_rank(&x)?;
    let d = config.degree + 1;
    let gram = symmetric_eig(&x.gram_rows(), DEFAULT_EIG_TOL)?;
    let lmax = gram.eigenvalues[0];
    let lmin = gram.eigenvalues[rank.max(1) - 1];
    let condition = lmax / lmin;

    let flow_step = config.step / config.train_points as f64;
    let protocol = PerturbationProtocol {
        noise: NoiseScale::Absolute(config.noise_std),
        norm: config.noise_norm,
        interval: config.interval,
        stop_after: config.perturbations * config.interval,
        total_steps: config.total(),
        repetitions: config.repetitions,
        reconverge_tol: config.reconverge_tol,
        equilibrium_tol: config.equilibrium_tol,
    };
    let options = RunOptions::every(0).with_observables(Observables {
        test_data: Some(test),
        null_projector: Some(p.clone()),
        ..Observables::default()
    });

    let runs = super::run_repetitions(config.repetitions, config.seed, |_, seed| -> Result<Repetition> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let w0 = gaussian_matrix(1, d, config.init_std, &mut rng);
        let net = DeepNet::new(vec![w0], Activation::Linear)?;
        let state = FlowState::new(net, flow_step)?.with_seed(seed);
        let run = perturb_and_reconverge(state, &protocol, LossKind::Square, &train, &options)?;
        let recs = &run.trace.records;
        let final_error = recs.last().map_or(f64::INFINITY, |r| r.train_error);
        let worst_cycle_error = run
            .cycles
            .iter()
            .map(|c| c.train_error_after_reflow)
            .fold(final_error, f64::max);
        Ok(Repetition {
            trace_csv: run.trace.to_csv(None),
            times: recs.iter().map(|r| r.time).collect(),
            train: recs.iter().map(|r| r.train_error).collect(),
            test: recs.iter().map(|r| r.test_error.unwrap_or(f64::NAN)).collect(),
            norms: recs.iter().map(|r| r.norms[0]).collect(),
            null_sq: recs.iter().map(|r| r.nullspace_norm.unwrap_or(0.0).powi(2)).collect(),
            worst_cycle_error,
            cycles: run.cycles.len(),
            flagged: run.flagged() > 0 || final_error > config.reconverge_tol,
        })
    });
    let runs: Vec<Repetition> = runs.into_iter().collect::<Result<_>>()?;

    let name = if config.perturbations == 0 { "sine_control" } else { "sine_perturbation" };
    let mut report = ScenarioReport::new(name, config.seed, config.repetitions);
    for (i, r) in runs.iter().enumerate() {
        report.add_trace(format!("{name}_rep{i:02}.csv"), r.trace_csv.clone());
    }
    let included: Vec<&Repetition> = runs.iter().filter(|r| !r.flagged).collect();
    report.excluded = runs.len() - included.len();
    if condition > 1e10 {
        report
            .events
            .push(format!("feature Gram matrix condition number {condition:e}"));
    }
    report.set("flow_step", flow_step);
    report.set("feature_rank", rank as f64);
    report.set("null_dimension", (d - rank) as f64);
    report.set("gram_condition", condition);
    let worst = runs.iter().map(|r| r.worst_cycle_error).fold(0.0, f64::max);
    report.set("worst_train_error_after_reflow", worst);
    report.set("cycles_per_repetition", runs[0].cycles as f64);

    report.check(
        "excluded_within_limit",
        report.excluded * 10 <= runs.len(),
        format!("{} of {} repetitions excluded", report.excluded, runs.len()),
    );
    report.check(
        "train_error_returns",
        worst <= config.reconverge_tol,
        format!("worst training MSE after re-flow {worst:e} (limit {:e})", config.reconverge_tol),
    );
    if included.is_empty() {
        return Ok(report);
    }

    let len = included.iter().map(|r| r.times.len()).min().unwrap_or(0);
    let at = |f: &dyn Fn(&Repetition) -> &Vec<f64>, i: usize| -> Vec<f64> { included.iter().map(|r| f(r)[i]).collect() };
    let mut rows = Vec::with_capacity(len);
    let mut mean_norms = Vec::with_capacity(len);
    for i in 0..len {
        let norms = at(&|r| &r.norms, i);
        let row = vec![
            included[0].times[i],
            mean(&at(&|r| &r.train, i)),
            mean(&at(&|r| &r.test, i)),
            mean(&norms),
            std_dev(&norms),
            mean(&at(&|r| &r.null_sq, i)),
        ];
        mean_norms.push(row[3]);
        rows.push(row);
    }
    report.add_file(
        format!("{name}_plot.csv"),
        csv_table(
            &["time", "mean_train_error", "mean_test_error", "mean_norm", "std_norm", "mean_nullspace_sq"],
            &rows,
        ),
    );
    if let Some(last) = rows.last() {
        report.set("mean_final_train_error", last[1]);
        report.set("mean_final_test_error", last[2]);
        report.set("mean_final_norm", last[3]);
        report.set("mean_final_nullspace_sq", last[5]);
    }

    // records sit at t = 0 and at every interval boundary
    let boundary = |i: usize| i as u64 * config.interval;
    if config.perturbations > 0 {
        let active: Vec<f64> = (0..len)
            .filter(|&i| boundary(i) <= config.perturbations * config.interval + config.interval)
            .map(|i| mean_norms[i])
            .collect();
        let nondecreasing = active.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
        report.check(
            "mean_norm_nondecreasing_while_perturbing",
            nondecreasing,
            format!("mean norms at boundaries {active:?}"),
        );
        let predicted = random_walk_prediction(
            &p,
            config.perturbations,
            config.noise_std,
            config.noise_norm,
            config.monte_carlo_samples,
            config.seed,
        );
        let analytic = match config.noise_norm {
            NoiseNorm::PerCoordinate => config.perturbations as f64 * config.noise_std.powi(2) * (d - rank) as f64,
            NoiseNorm::TotalVector => {
                config.perturbations as f64 * config.noise_std.powi(2) * (d - rank) as f64 / d as f64
            }
        };
        let observed = rows.last().map_or(f64::NAN, |r| r[5]);
        report.set("random_walk_prediction", predicted);
        report.set("random_walk_analytic", analytic);
        let rel = (observed - predicted).abs() / predicted;
        report.check(
            "nullspace_random_walk",
            rel <= 0.2,
            format!("mean ‖Pw‖² {observed} vs prediction {predicted} (relative gap {rel:.3})"),
        );
    } else {
        let mut worst_drift = 0.0f64;
        for r in &included {
            let settled = r.norms[1.min(r.norms.len() - 1)];
            let last = *r.norms.last().unwrap_or(&settled);
            worst_drift = worst_drift.max((last - settled).abs() / settled.max(f64::MIN_POSITIVE));
        }
        report.set("max_norm_drift_after_convergence", worst_drift);
        report.check(
            "norms_flat_after_convergence",
            worst_drift <= 1e-9,
            format!("largest relative norm change after the first interval {worst_drift:e}"),
        );
    }
    Ok(report)
}
