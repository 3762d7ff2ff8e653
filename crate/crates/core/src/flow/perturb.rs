use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::losses::{self, Dataset, LossKind};

use super::trace::TrajectoryTrace;
use super::{Clock, FlowError, FlowState, Result, RunOptions};

/// Scale of the Gaussian perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NoiseScale {
    /// Standard deviation `σ`.
    Absolute(f64),
    /// `σ_k = fraction · std(W_k)` per layer.
    RelativeToLayerStd(f64),
}

/// How `σ` is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseNorm {
    /// Independent `N(0, σ²)` entries.
    #[default]
    PerCoordinate,
    /// A Gaussian direction rescaled to total norm `σ` per layer.
    TotalVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationProtocol {
    pub noise: NoiseScale,
    #[serde(default)]
    pub norm: NoiseNorm,
    /// Steps between perturbations.
    pub interval: u64,
    /// No perturbation is applied after this step index.
    pub stop_after: u64,
    /// Total steps of the run.
    pub total_steps: u64,
    pub repetitions: usize,
    /// Training error (MSE for regression) that counts as re-converged.
    pub reconverge_tol: f64,
    /// Once `‖Ẇ‖` falls below this the rest of the interval is skipped as a
    /// stationary stretch (time still advances). 0 disables skipping.
    #[serde(default)]
    pub equilibrium_tol: f64,
}

impl PerturbationProtocol {
    pub fn validate(&self) -> Result<()> {
        let sigma = match self.noise {
            NoiseScale::Absolute(s) | NoiseScale::RelativeToLayerStd(s) => s,
        };
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(FlowError::InvalidState(format!("noise must be positive, got {sigma}")));
        }
        if self.interval < 1 || self.repetitions < 1 {
            return Err(FlowError::InvalidState("interval and repetitions must be at least 1".into()));
        }
        Ok(())
    }
}

/// Bookkeeping of one perturbation and the re-flow that follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub index: usize,
    pub time: f64,
    /// Per-layer norms just before and just after the perturbation.
    pub norms_before: Vec<f64>,
    pub norms_after: Vec<f64>,
    /// Training error at the end of the following re-flow.
    pub train_error_after_reflow: f64,
    pub test_error_after_reflow: Option<f64>,
    /// Mean per-sample test loss at the same point.
    pub test_loss_after_reflow: Option<f64>,
    pub reconverged: bool,
}

#[derive(Debug, Clone)]
pub struct PerturbationRun {
    pub state: FlowState,
    pub trace: TrajectoryTrace,
    pub cycles: Vec<CycleReport>,
}

impl PerturbationRun {
    pub fn flagged(&self) -> usize {
        self.cycles.iter().filter(|c| !c.reconverged).count()
    }
}

fn layer_std(m: &Matrix) -> f64 {
    let n = m.len() as f64;
    let mean = m.as_slice().iter().sum::<f64>() / n;
    (m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn draw_perturbation(layers: &[Matrix], protocol: &PerturbationProtocol, rng: &mut ChaCha8Rng) -> Vec<Matrix> {
    layers
        .iter()
        .map(|m| {
            let sigma = match protocol.noise {
                NoiseScale::Absolute(s) => s,
                NoiseScale::RelativeToLayerStd(f) => f * layer_std(m),
            };
            let raw = Matrix::from_fn(m.rows(), m.cols(), |_, _| StandardNormal.sample(rng));
            match protocol.norm {
                NoiseNorm::PerCoordinate => raw.scaled(sigma),
                NoiseNorm::TotalVector => {
                    let n = raw.frobenius_norm();
                    raw.scaled(if n > 0.0 { sigma / n } else { 0.0 })
                }
            }
        })
        .collect()
}

const KINK_RETRIES: usize = 16;

/// Alternates gradient flow with Gaussian weight perturbations every
/// `interval` steps until `stop_after`, then keeps flowing to `total_steps`.
/// Each perturbation's re-flow is judged at the next interval boundary (or
/// the end of the run); failures are flagged and the run continues.
pub fn perturb_and_reconverge(
    state: FlowState,
    protocol: &PerturbationProtocol,
    kind: LossKind,
    data: &Dataset,
    options: &RunOptions,
) -> Result<PerturbationRun> {
    protocol.validate()?;
    let mut state = state;
    let mut rng = ChaCha8Rng::seed_from_u64(state.rng_seed);
    let obs = &options.observables;
    let mut trace = TrajectoryTrace::new(state.net.depth());
    let mut cycles: Vec<CycleReport> = Vec::new();
    let mut count = 0usize;
    trace.push(obs.record(&state, kind, data, count)?);
    let mut step_idx = 0u64;
    let close_cycle = |cycles: &mut Vec<CycleReport>, state: &FlowState| -> Result<()> {
        if let Some(c) = cycles.last_mut() {
            c.train_error_after_reflow = losses::classification_error(&state.net, data)?;
            if let Some(t) = &obs.test_data {
                c.test_error_after_reflow = Some(losses::classification_error(&state.net, t)?);
                c.test_loss_after_reflow = Some(losses::loss(kind, &state.net, t)? / t.len() as f64);
            }
            c.reconverged = c.train_error_after_reflow <= protocol.reconverge_tol;
        }
        Ok(())
    };
    while step_idx < protocol.total_steps {
        let boundary = (step_idx / protocol.interval + 1) * protocol.interval;
        let boundary = boundary.min(protocol.total_steps);
        while step_idx < boundary {
            let info = state.advance(kind, data)?;
            step_idx += 1;
            if protocol.equilibrium_tol > 0.0 && state.clock == Clock::Linear && info.field_norm <= protocol.equilibrium_tol {
                let skipped = boundary - step_idx;
                state.time += skipped as f64 * state.step;
                state.log_time = state.time.ln_1p();
                step_idx = boundary;
            } else if options.sample_every > 0 && step_idx % options.sample_every == 0 {
                trace.push(obs.record(&state, kind, data, count)?);
            }
        }
        trace.push(obs.record(&state, kind, data, count)?);
        close_cycle(&mut cycles, &state)?;
        let at_boundary = step_idx % protocol.interval == 0;
        if at_boundary && step_idx <= protocol.stop_after && step_idx < protocol.total_steps {
            let before = state.net.layer_norms();
            let base = state.net.clone();
            let mut tries = 0;
            loop {
                let delta = draw_perturbation(base.layers(), protocol, &mut rng);
                let mut net = base.clone();
                for (w, d) in net.layers_mut().iter_mut().zip(&delta) {
                    w.add_scaled(1.0, d);
                }
                tries += 1;
                let kink = losses::loss_and_gradient(kind, &net, data, 0.0)?.kink;
                if !kink || tries >= KINK_RETRIES {
                    if kink {
                        trace.events.push(format!("perturbation {count} hit a relu kink {tries} times"));
                    }
                    state.net = net;
                    break;
                }
            }
            count += 1;
            cycles.push(CycleReport {
                index: count,
                time: state.time,
                norms_before: before,
                norms_after: state.net.layer_norms(),
                train_error_after_reflow: f64::NAN,
                test_error_after_reflow: None,
                test_loss_after_reflow: None,
                reconverged: false,
            });
        }
    }
    let flagged = cycles.iter().filter(|c| !c.reconverged).count();
    if flagged > 0 {
        trace.events.push(format!("{flagged} perturbation cycles did not re-converge"));
    }
    trace.converged = flagged == 0;
    trace.stop_reason = format!("{count} perturbations over {step_idx} steps");
    Ok(PerturbationRun { state, trace, cycles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Observables;
    use crate::linalg::null_space_projector;
    use crate::network::{Activation, DeepNet};

    #[test]
    fn linear_square_loss_reconverges_and_walks_in_null_space() {
        let data = Dataset::regression(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], vec![1.0, -2.0]).unwrap();
        let net = DeepNet::new(vec![Matrix::zeros(1, 3)], Activation::Linear).unwrap();
        let state = FlowState::new(net, 0.2).unwrap().with_seed(11);
        let protocol = PerturbationProtocol {
            noise: NoiseScale::Absolute(0.3),
            norm: NoiseNorm::PerCoordinate,
            interval: 500,
            stop_after: 2500,
            total_steps: 5000,
            repetitions: 1,
            reconverge_tol: 1e-10,
            equilibrium_tol: 1e-14,
        };
        let p = null_space_projector(&data.matrix()).unwrap();
        let opts = RunOptions::every(0).with_observables(Observables {
            null_projector: Some(p),
            ..Observables::default()
        });
        let run = perturb_and_reconverge(state, &protocol, LossKind::Square, &data, &opts).unwrap();
        assert_eq!(run.cycles.len(), 5);
        assert_eq!(run.flagged(), 0);
        assert!(run.trace.is_well_formed());
        let last = run.trace.last().unwrap();
        assert_eq!(last.perturbation_count, 5);
        assert!(last.nullspace_norm.unwrap() > 0.0);
        // the third coordinate is untouched by the data
        assert!((run.state.weights()[2]).abs() > 0.0);
    }

    #[test]
    fn same_seed_same_run() {
        let data = Dataset::regression(vec![vec![1.0, 0.5]], vec![1.0]).unwrap();
        let net = DeepNet::new(vec![Matrix::zeros(1, 2)], Activation::Linear).unwrap();
        let protocol = PerturbationProtocol {
            noise: NoiseScale::Absolute(0.1),
            norm: NoiseNorm::TotalVector,
            interval: 50,
            stop_after: 200,
            total_steps: 400,
            repetitions: 1,
            reconverge_tol: 1e-8,
            equilibrium_tol: 0.0,
        };
        let run = |seed| {
            let s = FlowState::new(net.clone(), 0.1).unwrap().with_seed(seed);
            perturb_and_reconverge(s, &protocol, LossKind::Square, &data, &RunOptions::every(10))
                .unwrap()
                .trace
                .to_csv(None)
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }
}
