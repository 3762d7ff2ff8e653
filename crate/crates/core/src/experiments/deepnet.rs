use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flow::{
    perturb_and_reconverge, run_flow, FlowState, NoiseNorm, NoiseScale, Observables, PerturbationProtocol, RunOptions,
    StopRule, TraceRecord,
};
use crate::losses::{self, LossKind};
use crate::network::{Activation, DeepNet, OutputMode};

use super::{config_error, csv_table, gaussian_blobs, mean, slope, Result, ScenarioReport};

/// Small dense network on two Gaussian blobs, perturbed every `interval`
/// steps with noise relative to each layer's spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepNetConfig {
    pub seed: u64,
    pub repetitions: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
    pub train_points: usize,
    pub test_points: usize,
    /// Blob centers at `±center`.
    pub center: Vec<f64>,
    pub blob_std: f64,
    pub init_std: f64,
    /// Step on the mean loss; the summed loss uses `step / train_points`.
    pub step: f64,
    /// Steps before the perturbation phase.
    pub pretrain_steps: u64,
    pub interval: u64,
    pub perturbations: u64,
    /// Noise standard deviation as a fraction of each layer's.
    pub noise_fraction: f64,
    pub noise_norm: NoiseNorm,
    pub sample_every: u64,
}

impl Default for DeepNetConfig {
    fn default() -> Self {
        DeepNetConfig {
            seed: 0,
            repetitions: 16,
            hidden: vec![16, 16],
            activation: Activation::Relu,
            loss: LossKind::Logistic,
            train_points: 20,
            test_points: 400,
            center: vec![1.2, 0.6],
            blob_std: 0.6,
            init_std: 0.3,
            step: 0.2,
            pretrain_steps: 5000,
            interval: 500,
            perturbations: 10,
            noise_fraction: 0.25,
            noise_norm: NoiseNorm::PerCoordinate,
            sample_every: 50,
        }
    }
}

impl DeepNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(config_error("repetitions", "must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(config_error("hidden", "layer widths must be positive"));
        }
        if self.center.is_empty() {
            return Err(config_error("center", "needs at least one coordinate"));
        }
        if !matches!(self.loss, LossKind::Exponential | LossKind::Logistic) {
            return Err(config_error("loss", "must be exponential or logistic"));
        }
        if self.train_points < 2 || self.test_points < 1 {
            return Err(config_error("train_points", "need at least 2 train and 1 test point"));
        }
        if !(self.step > 0.0) {
            return Err(config_error("step", "must be positive"));
        }
        if self.interval < 1 {
            return Err(config_error("interval", "must be at least 1"));
        }
        if !(self.noise_fraction > 0.0) {
            return Err(config_error("noise_fraction", "must be positive"));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.center.len()];
        d.extend(&self.hidden);
        d.push(1);
        d
    }
}

struct Repetition {
    perturbed: Vec<TraceRecord>,
    control: Vec<TraceRecord>,
    trace_csv: String,
    control_csv: String,
    flagged: bool,
    worst_cycle_error: f64,
    /// Mean test loss before the first perturbation and after each re-flow.
    test_risk: Vec<f64>,
}

fn run_repetition(config: &DeepNetConfig, seed: u64) -> Result<Repetition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = gaussian_blobs(config.train_points, &config.center, config.blob_std, &mut rng)?;
    let test = gaussian_blobs(config.test_points, &config.center, config.blob_std, &mut rng)?;
    let net = DeepNet::gaussian(&config.dims(), config.activation.clone(), OutputMode::Linear, config.init_std, &mut rng)?;
    let step = config.step / config.train_points as f64;
    let state = FlowState::new(net, step)?.with_seed(seed);
    let pre = run_flow(
        state,
        config.loss,
        &train,
        StopRule::max_time(config.pretrain_steps as f64 * step, config.pretrain_steps),
        &RunOptions::every(0),
    )?;
    let mut test_risk = vec![losses::loss(config.loss, &pre.state.net, &test)? / test.len() as f64];
    let options = RunOptions::every(config.sample_every).with_observables(Observables {
        test_data: Some(test),
        ..Observables::default()
    });
    let protocol = PerturbationProtocol {
        noise: NoiseScale::RelativeToLayerStd(config.noise_fraction),
        norm: config.noise_norm,
        interval: config.interval,
        stop_after: config.perturbations * config.interval,
        total_steps: (config.perturbations + 1) * config.interval,
        repetitions: config.repetitions,
        reconverge_tol: 0.0,
        equilibrium_tol: 0.0,
    };
    let run = perturb_and_reconverge(pre.state.clone(), &protocol, config.loss, &train, &options)?;
    let control_protocol = PerturbationProtocol { stop_after: 0, ..protocol };
    let control = perturb_and_reconverge(pre.state, &control_protocol, config.loss, &train, &options)?;
    let worst_cycle_error = run.cycles.iter().map(|c| c.train_error_after_reflow).fold(0.0, f64::max);
    test_risk.extend(run.cycles.iter().filter_map(|c| c.test_loss_after_reflow));
    Ok(Repetition {
        test_risk,
        trace_csv: run.trace.to_csv(None),
        control_csv: control.trace.to_csv(None),
        flagged: run.flagged() > 0,
        worst_cycle_error,
        perturbed: run.trace.records,
        control: control.trace.records,
    })
}

/// Records at interval boundaries (including the start).
fn boundaries(records: &[TraceRecord], t0: f64, span: f64) -> Vec<&TraceRecord> {
    records
        .iter()
        .filter(|r| {
            let k = (r.time - t0) / span;
            (k - k.round()).abs() < 1e-6
        })
        .collect()
}

pub fn toy_deepnet_perturbation(config: &DeepNetConfig) -> Result<ScenarioReport> {
    config.validate()?;
    let runs = super::run_repetitions(config.repetitions, config.seed, |_, seed| run_repetition(config, seed));
    let runs: Vec<Repetition> = runs.into_iter().collect::<Result<_>>()?;
    let mut report = ScenarioReport::new("deepnet_perturbation", config.seed, config.repetitions);
    for (i, r) in runs.iter().enumerate() {
        report.add_trace(format!("deepnet_rep{i:02}.csv"), r.trace_csv.clone());
        report.add_trace(format!("deepnet_control_rep{i:02}.csv"), r.control_csv.clone());
    }
    let included: Vec<&Repetition> = runs.iter().filter(|r| !r.flagged).collect();
    report.excluded = runs.len() - included.len();
    let worst = runs.iter().map(|r| r.worst_cycle_error).fold(0.0, f64::max);
    report.set("worst_train_error_after_reflow", worst);
    report.check(
        "excluded_within_limit",
        report.excluded * 10 <= runs.len(),
        format!("{} of {} repetitions excluded", report.excluded, runs.len()),
    );
    report.check(
        "train_error_returns",
        worst == 0.0,
        format!("worst training error after re-flow {worst}"),
    );
    if included.is_empty() {
        return Ok(report);
    }

    let layers = config.hidden.len() + 1;
    let step = config.step / config.train_points as f64;
    let span = config.interval as f64 * step;
    let t0 = included[0].perturbed[0].time;
    let len = included.iter().map(|r| r.perturbed.len().min(r.control.len())).min().unwrap_or(0);
    let mut rows = Vec::with_capacity(len);
    for i in 0..len {
        let p: Vec<&TraceRecord> = included.iter().map(|r| &r.perturbed[i]).collect();
        let c: Vec<&TraceRecord> = included.iter().map(|r| &r.control[i]).collect();
        let mut row = vec![
            p[0].time,
            mean(&p.iter().map(|r| r.train_error).collect::<Vec<_>>()),
            mean(&p.iter().map(|r| r.test_error.unwrap_or(f64::NAN)).collect::<Vec<_>>()),
            mean(&c.iter().map(|r| r.test_error.unwrap_or(f64::NAN)).collect::<Vec<_>>()),
        ];
        for k in 0..layers {
            row.push(mean(&p.iter().map(|r| r.norms[k]).collect::<Vec<_>>()));
        }
        for k in 0..layers {
            row.push(mean(&c.iter().map(|r| r.norms[k]).collect::<Vec<_>>()));
        }
        rows.push(row);
    }
    let mut header: Vec<String> = ["time", "mean_train_error", "mean_test_error", "control_mean_test_error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=layers).map(|k| format!("mean_norm_l{k}")));
    header.extend((1..=layers).map(|k| format!("control_mean_norm_l{k}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    report.add_file("deepnet_plot.csv".into(), csv_table(&header_refs, &rows));

    // per-layer mean norms at each cycle boundary
    let bounds = |pick: &dyn Fn(&Repetition) -> &Vec<TraceRecord>| -> Vec<Vec<f64>> {
        let per_rep: Vec<Vec<&TraceRecord>> = included.iter().map(|r| boundaries(pick(r), t0, span)).collect();
        let n = per_rep.iter().map(Vec::len).min().unwrap_or(0);
        (0..n)
            .map(|b| {
                let mut v: Vec<f64> = (0..layers)
                    .map(|k| mean(&per_rep.iter().map(|r| r[b].norms[k]).collect::<Vec<_>>()))
                    .collect();
                v.push(mean(&per_rep.iter().map(|r| r[b].test_error.unwrap_or(f64::NAN)).collect::<Vec<_>>()));
                v
            })
            .collect()
    };
    let pb = bounds(&|r| &r.perturbed);
    let cb = bounds(&|r| &r.control);
    let increasing = (0..layers).all(|k| pb.windows(2).all(|w| w[1][k] > w[0][k]));
    report.check(
        "layer_norms_increase_each_cycle",
        increasing,
        format!(
            "mean per-layer norms at cycle boundaries: {:?}",
            pb.iter().map(|v| v[..layers].to_vec()).collect::<Vec<_>>()
        ),
    );
    let cycles: Vec<f64> = (0..pb.len()).map(|i| i as f64).collect();
    let test_errors: Vec<f64> = pb.iter().map(|v| v[layers]).collect();
    report.set("test_error_trend_per_cycle", slope(&cycles, &test_errors));
    let n_risk = included.iter().map(|r| r.test_risk.len()).min().unwrap_or(0);
    let risk: Vec<f64> = (0..n_risk)
        .map(|i| mean(&included.iter().map(|r| r.test_risk[i]).collect::<Vec<_>>()))
        .collect();
    let trend = slope(&(0..n_risk).map(|i| i as f64).collect::<Vec<_>>(), &risk);
    report.set("test_risk_trend_per_cycle", trend);
    report.check(
        "test_risk_nondecreasing",
        trend >= 0.0,
        format!("least-squares slope of mean test loss per cycle {trend:e}; values {risk:?}"),
    );
    let growth = |b: &Vec<Vec<f64>>| -> f64 {
        match (b.first(), b.last()) {
            (Some(f), Some(l)) => mean(&(0..layers).map(|k| l[k] / f[k]).collect::<Vec<_>>()),
            _ => f64::NAN,
        }
    };
    let (gp, gc) = (growth(&pb), growth(&cb));
    report.set("perturbed_norm_growth", gp);
    report.set("control_norm_growth", gc);
    report.check(
        "control_grows_more_slowly",
        gc >= 1.0 && gc < gp,
        format!("mean per-layer norm ratio over the phase: perturbed {gp}, control {gc}"),
    );
    Ok(report)
}
