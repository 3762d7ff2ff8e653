use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::flow::{run_flow, Clock, FlowState, Integrator, Observables, RunOptions, StopRule};
use crate::linalg::{cosine, min_norm_least_squares, norm2, null_space_projector, symmetric_eig, Matrix, DEFAULT_EIG_TOL};
use crate::losses::{Dataset, LossKind};
use crate::network::{Activation, DeepNet};
use crate::oracles::{hard_margin_svm, MarginSolution, OracleError, SVM_MAX_SAMPLES};

use super::{config_error, csv_table, gaussian_blobs, gaussian_matrix, ExperimentError, Result, ScenarioReport};

/// Exponential-loss direction limits against the max-margin oracle, with a
/// square-loss contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectionConfig {
    pub seed: u64,
    pub datasets: usize,
    pub samples: usize,
    pub dim: usize,
    /// Distance of each blob center from the origin.
    pub separation: f64,
    pub blob_std: f64,
    pub inits: usize,
    pub init_std: f64,
    /// RK4 step in `s = ln(1 + t)`.
    pub step: f64,
    /// Final `ln(1 + t)`.
    pub max_log_time: f64,
    pub sample_every: u64,
    /// Attempts at drawing a separable dataset.
    pub max_regenerations: usize,
    pub contrast_samples: usize,
    pub contrast_dim: usize,
    pub contrast_gradient_tol: f64,
}

impl Default for DirectionConfig {
    fn default() -> Self {
        DirectionConfig {
            seed: 0,
            datasets: 10,
            samples: 12,
            dim: 2,
            separation: 2.0,
            blob_std: 0.8,
            inits: 5,
            init_std: 0.1,
            step: 0.05,
            max_log_time: 600.0,
            sample_every: 400,
            max_regenerations: 200,
            contrast_samples: 8,
            contrast_dim: 20,
            contrast_gradient_tol: 1e-12,
        }
    }
}

impl DirectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.datasets < 1 {
            return Err(config_error("datasets", "must be at least 1"));
        }
        if self.samples < 1 || self.samples > SVM_MAX_SAMPLES {
            return Err(config_error("samples", format!("must be in 1..={SVM_MAX_SAMPLES}")));
        }
        if self.dim < 1 {
            return Err(config_error("dim", "must be at least 1"));
        }
        if self.inits < 1 {
            return Err(config_error("inits", "must be at least 1"));
        }
        if !(self.step > 0.0) {
            return Err(config_error("step", "must be positive"));
        }
        if !(self.max_log_time > 0.0 && self.max_log_time <= crate::flow::MAX_LOG_TIME) {
            return Err(config_error("max_log_time", format!("must be in (0, {}]", crate::flow::MAX_LOG_TIME)));
        }
        if self.contrast_samples < 1 || self.contrast_dim <= self.contrast_samples {
            return Err(config_error("contrast_dim", "must exceed contrast_samples"));
        }
        Ok(())
    }
}

/// A separable blob dataset with its oracle; `regenerations` counts rejected draws.
pub fn separable_dataset(config: &DirectionConfig, seed: u64) -> Result<(Dataset, MarginSolution, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..config.max_regenerations {
        let dir: Vec<f64> = (0..config.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm2(&dir);
        let center: Vec<f64> = dir.iter().map(|v| config.separation * v / n).collect();
        let data = gaussian_blobs(config.samples, &center, config.blob_std, &mut rng)?;
        match hard_margin_svm(&data) {
            Ok(sol) => return Ok((data, sol, attempt)),
            Err(OracleError::Infeasible { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(ExperimentError::Config(format!(
        "max_regenerations: no separable dataset in {} draws",
        config.max_regenerations
    )))
}

struct DatasetRun {
    regenerations: usize,
    margin: f64,
    cosines: Vec<f64>,
    pairwise_min: f64,
    traces: Vec<String>,
    finals: Vec<Vec<f64>>,
}

fn run_dataset(config: &DirectionConfig, seed: u64) -> Result<DatasetRun> {
    let (data, sol, regenerations) = separable_dataset(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let options = RunOptions::every(config.sample_every).with_observables(Observables {
        reference_direction: Some(sol.w_tilde.clone()),
        residual_direction: Some(sol.w_raw.clone()),
        ..Observables::default()
    });
    let stop = StopRule::max_time(config.max_log_time.exp_m1(), (config.max_log_time / config.step).ceil() as u64 + 8);
    let mut cosines = Vec::new();
    let mut traces = Vec::new();
    let mut finals = Vec::new();
    for _ in 0..config.inits {
        let w0 = gaussian_matrix(1, config.dim, config.init_std, &mut rng);
        let net = DeepNet::new(vec![w0], Activation::Linear)?;
        let state = FlowState::new(net, config.step)?
            .with_integrator(Integrator::Rk4)
            .with_clock(Clock::Log)?;
        let run = run_flow(state, LossKind::Exponential, &data, stop, &options)?;
        let w = run.state.weights();
        cosines.push(cosine(&w, &sol.w_tilde));
        traces.push(run.trace.to_csv(None));
        finals.push(w);
    }
    let mut pairwise_min = 1.0f64;
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            pairwise_min = pairwise_min.min(cosine(&finals[i], &finals[j]));
        }
    }
    Ok(DatasetRun {
        regenerations,
        margin: sol.margin,
        cosines,
        pairwise_min,
        traces,
        finals,
    })
}

/// Largest `|w_final − target|` of the square-loss flow from `w0`.
fn square_contrast(x: &Matrix, y: &[f64], w0: Vec<f64>, target: &[f64], tol: f64) -> Result<f64> {
    let data = Dataset::regression((0..x.rows()).map(|i| x.row(i).to_vec()).collect(), y.to_vec())?;
    let lmax = symmetric_eig(&x.gram_rows(), DEFAULT_EIG_TOL)?.eigenvalues[0];
    let net = DeepNet::new(vec![Matrix::row_vector(&w0)], Activation::Linear)?;
    let state = FlowState::new(net, 1.0 / (2.0 * lmax))?;
    let run = run_flow(state, LossKind::Square, &data, StopRule::gradient(tol, 10_000_000), &RunOptions::every(0))?;
    Ok(run
        .state
        .weights()
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

pub fn convergence_direction_study(config: &DirectionConfig) -> Result<ScenarioReport> {
    config.validate()?;
    let runs = super::run_repetitions(config.datasets, config.seed, |_, seed| run_dataset(config, seed));
    let runs: Vec<DatasetRun> = runs.into_iter().collect::<Result<_>>()?;
    let mut report = ScenarioReport::new("direction", config.seed, config.datasets);
    let mut rows = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        for (j, t) in r.traces.iter().enumerate() {
            report.add_trace(format!("direction_d{i:02}_init{j}.csv"), t.clone());
        }
        for (j, (c, w)) in r.cosines.iter().zip(&r.finals).enumerate() {
            rows.push(vec![i as f64, j as f64, r.margin, *c, r.pairwise_min, norm2(w)]);
        }
    }
    report.add_file(
        "direction_plot.csv".into(),
        csv_table(&["dataset", "init", "svm_margin", "cosine_to_svm", "min_pairwise_cosine", "final_norm"], &rows),
    );
    let regenerations: usize = runs.iter().map(|r| r.regenerations).sum();
    if regenerations > 0 {
        report
            .events
            .push(format!("{regenerations} non-separable draws regenerated"));
    }
    report.set("regenerations", regenerations as f64);
    let min_cos = runs.iter().flat_map(|r| r.cosines.iter().copied()).fold(1.0, f64::min);
    let min_pair = runs.iter().map(|r| r.pairwise_min).fold(1.0, f64::min);
    report.set("min_cosine_to_svm", min_cos);
    report.set("min_pairwise_cosine", min_pair);
    report.check("matches_svm_direction", min_cos >= 0.999, format!("smallest cosine to the oracle {min_cos}"));
    report.check(
        "independent_of_initialization",
        min_pair >= 0.999,
        format!("smallest pairwise cosine between initializations {min_pair}"),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(7);
    let x = gaussian_matrix(config.contrast_samples, config.contrast_dim, 1.0, &mut rng);
    let y: Vec<f64> = (0..config.contrast_samples).map(|_| StandardNormal.sample(&mut rng)).collect();
    let w_min = min_norm_least_squares(&x, &y)?;
    let zero_gap = square_contrast(&x, &y, vec![0.0; config.contrast_dim], &w_min, config.contrast_gradient_tol)?;
    let w0: Vec<f64> = (0..config.contrast_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let c = null_space_projector(&x)?.matvec(&w0);
    let shifted: Vec<f64> = w_min.iter().zip(&c).map(|(a, b)| a + b).collect();
    let init_gap = square_contrast(&x, &y, w0, &shifted, config.contrast_gradient_tol)?;
    report.set("square_zero_init_gap", zero_gap);
    report.set("square_null_init_gap", init_gap);
    report.set("square_null_component_norm", norm2(&c));
    report.check(
        "square_zero_init_min_norm",
        zero_gap <= 1e-6,
        format!("largest deviation from the minimum-norm solution {zero_gap:e}"),
    );
    report.check(
        "square_init_keeps_null_component",
        init_gap <= 1e-6,
        format!("largest deviation from min-norm + null component {init_gap:e}"),
    );
    Ok(report)
}
