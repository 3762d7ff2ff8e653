//! Gradient-flow integration: plain and regularized flows `Ẇ = −∇L − 2λW`,
//! the normalized `(ρ, V)` system, the single-layer direction flow, and the
//! perturb-and-reconverge protocol.
//!
//! Flows run either on the ordinary clock `t` or on the log clock
//! `s = ln(1 + t)`. The log clock integrates `dW/ds = (1 + t)·Ẇ` with the
//! factor folded into the loss exponents, which makes the logarithmically
//! slow max-margin convergence reachable in a few thousand steps.

mod normalized;
mod perturb;
mod trace;

pub use normalized::{
    normalized_direction_flow, normalized_flow_step, run_normalized, DirectionFlowConfig, DirectionTrace, LambdaMode,
    NormalizedFlowState, NormalizedRun, RENORMALIZE_DRIFT,
};
pub use perturb::{
    perturb_and_reconverge, CycleReport, NoiseNorm, NoiseScale, PerturbationProtocol, PerturbationRun,
};
pub use trace::{csv_float, Observables, TraceRecord, TrajectoryTrace};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cosine, LinalgError, Matrix};
use crate::losses::{self, Dataset, LossError, LossKind};
use crate::network::{DeepNet, NetworkError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("loss exploded from {before} to {after} at t = {time}; use a smaller step than {step}")]
    LossExplosion {
        before: f64,
        after: f64,
        time: f64,
        step: f64,
    },
    #[error("invalid flow state: {0}")]
    InvalidState(String),
    #[error("sample {sample} is not separated (ỹf = {value}); the normalized flow needs separable data")]
    NotSeparated { sample: usize, value: f64 },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, FlowError>;

/// Ratio of successive losses treated as an explosion.
pub const EXPLOSION_FACTOR: f64 = 10.0;
/// Largest log-clock value; beyond it `t = eˢ − 1` is not representable.
pub const MAX_LOG_TIME: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// Steps of size `step` in `t`.
    #[default]
    Linear,
    /// Steps of size `step` in `s = ln(1 + t)`; unregularized flows only.
    Log,
}

/// One point on a gradient-flow trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub net: DeepNet,
    /// `t`.
    pub time: f64,
    /// `s = ln(1 + t)`, tracked exactly under the log clock.
    pub log_time: f64,
    pub step: f64,
    /// Per-layer `λ_k ≥ 0`.
    pub lambdas: Vec<f64>,
    pub rng_seed: u64,
    pub integrator: Integrator,
    pub clock: Clock,
}

/// Diagnostics of one integration step, evaluated at the starting point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub loss: f64,
    /// Norm of the vector field `−∇L − 2λW` (unscaled by the clock).
    pub field_norm: f64,
    pub kink: bool,
}

impl FlowState {
    pub fn new(net: DeepNet, step: f64) -> Result<Self> {
        let depth = net.depth();
        FlowState::with_settings(net, step, vec![0.0; depth], 0, Integrator::Euler, Clock::Linear)
    }

    pub fn with_settings(
        net: DeepNet,
        step: f64,
        lambdas: Vec<f64>,
        rng_seed: u64,
        integrator: Integrator,
        clock: Clock,
    ) -> Result<Self> {
        let state = FlowState {
            net,
            time: 0.0,
            log_time: 0.0,
            step,
            lambdas,
            rng_seed,
            integrator,
            clock,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn with_lambdas(mut self, lambdas: Vec<f64>) -> Result<Self> {
        self.lambdas = lambdas;
        self.validate()?;
        Ok(self)
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Result<Self> {
        self.clock = clock;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(FlowError::InvalidState(format!("step must be positive, got {}", self.step)));
        }
        if self.lambdas.len() != self.net.depth() {
            return Err(FlowError::InvalidState(format!(
                "{} lambdas for a {}-layer network",
                self.lambdas.len(),
                self.net.depth()
            )));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(FlowError::InvalidState(format!("lambda must be non-negative, got {l}")));
        }
        if self.clock == Clock::Log && self.lambdas.iter().any(|&l| l > 0.0) {
            return Err(FlowError::InvalidState(
                "the log clock supports unregularized flows only".into(),
            ));
        }
        Ok(())
    }

    /// Flattened weights.
    pub fn weights(&self) -> Vec<f64> {
        self.net.flatten()
    }

    /// Log-scale factor applied to the loss gradient by the clock.
    fn shift(&self) -> f64 {
        match self.clock {
            Clock::Linear => 0.0,
            Clock::Log => self.log_time,
        }
    }

    /// One integration step in place.
    pub fn advance(&mut self, kind: LossKind, data: &Dataset) -> Result<StepInfo> {
        let h = self.step;
        let shift0 = self.shift();
        let (info, k1) = field(kind, &self.net, data, &self.lambdas, shift0)?;
        let w0 = self.net.flatten();
        let w1 = match self.integrator {
            Integrator::Euler => combine(&w0, &[(h, &k1)]),
            Integrator::Rk4 => {
                let mid = shift0 + 0.5 * h * f64::from(self.clock == Clock::Log);
                let end = shift0 + h * f64::from(self.clock == Clock::Log);
                let (_, k2) = field(kind, &self.net.with_flat(&combine(&w0, &[(0.5 * h, &k1)])), data, &self.lambdas, mid)?;
                let (_, k3) = field(kind, &self.net.with_flat(&combine(&w0, &[(0.5 * h, &k2)])), data, &self.lambdas, mid)?;
                let (_, k4) = field(kind, &self.net.with_flat(&combine(&w0, &[(h, &k3)])), data, &self.lambdas, end)?;
                combine(
                    &w0,
                    &[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)],
                )
            }
        };
        let next = self.net.with_flat(&w1);
        if self.clock == Clock::Linear && info.loss > 0.0 {
            let after = losses::loss(kind, &next, data).unwrap_or(f64::INFINITY);
            if after > EXPLOSION_FACTOR * info.loss {
                return Err(FlowError::LossExplosion {
                    before: info.loss,
                    after,
                    time: self.time,
                    step: h,
                });
            }
        }
        self.net = next;
        match self.clock {
            Clock::Linear => {
                self.time += h;
                self.log_time = self.time.ln_1p();
            }
            Clock::Log => {
                self.log_time += h;
                self.time = self.log_time.exp_m1();
            }
        }
        Ok(info)
    }
}

fn combine(base: &[f64], terms: &[(f64, &Vec<f64>)]) -> Vec<f64> {
    let mut out = base.to_vec();
    for (a, v) in terms {
        crate::linalg::axpy(&mut out, *a, v);
    }
    out
}

/// Flattened `e^{shift}(−∇L) − 2λW`, with diagnostics at the evaluation point.
fn field(kind: LossKind, net: &DeepNet, data: &Dataset, lambdas: &[f64], shift: f64) -> Result<(StepInfo, Vec<f64>)> {
    let g = losses::loss_and_gradient(kind, net, data, shift)?;
    let mut out = Vec::with_capacity(net.num_params());
    for (gk, (wk, &lam)) in g.layers.iter().zip(net.layers().iter().zip(lambdas)) {
        out.extend(
            gk.as_slice()
                .iter()
                .zip(wk.as_slice())
                .map(|(gi, wi)| -gi - 2.0 * lam * wi),
        );
    }
    let field_norm = crate::linalg::norm2(&out) * (-shift).exp();
    Ok((
        StepInfo {
            loss: g.loss,
            field_norm,
            kink: g.kink,
        },
        out,
    ))
}

/// Explicit update `W_k ← W_k + h(−∇_{W_k}L − 2λ_k W_k)` (or the configured
/// integrator/clock), returning the new state.
pub fn flow_step(state: &FlowState, kind: LossKind, data: &Dataset) -> Result<FlowState> {
    let mut next = state.clone();
    next.advance(kind, data)?;
    Ok(next)
}

/// Norm of `−∇L − 2λW` at the state's weights.
pub fn field_norm(state: &FlowState, kind: LossKind, data: &Dataset) -> Result<f64> {
    let (_, f) = field(kind, &state.net, data, &state.lambdas, 0.0)?;
    Ok(crate::linalg::norm2(&f))
}

/// Per-layer `−∇L − 2λW` at the state's weights.
pub fn vector_field(state: &FlowState, kind: LossKind, data: &Dataset) -> Result<Vec<Matrix>> {
    let (_, f) = field(kind, &state.net, data, &state.lambdas, 0.0)?;
    let shaped = state.net.with_flat(&f);
    Ok(shaped.layers().to_vec())
}

/// When `run_flow` stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopCriterion {
    /// Run until `t ≥ time`.
    MaxTime { time: f64 },
    /// Stop once `L ≤ epsilon`.
    Loss { epsilon: f64 },
    /// Stop once `‖−∇L − 2λW‖ ≤ epsilon`.
    GradientNorm { epsilon: f64 },
    /// Stop once the angle between `W/‖W‖` at `t` and at `t/2` is below
    /// `angle` radians (checked at `t = 2ʲ`).
    Direction { angle: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    #[serde(flatten)]
    pub criterion: StopCriterion,
    /// Step budget.
    pub max_steps: u64,
}

impl StopRule {
    pub fn max_time(time: f64, max_steps: u64) -> Self {
        StopRule {
            criterion: StopCriterion::MaxTime { time },
            max_steps,
        }
    }

    pub fn loss(epsilon: f64, max_steps: u64) -> Self {
        StopRule {
            criterion: StopCriterion::Loss { epsilon },
            max_steps,
        }
    }

    pub fn gradient(epsilon: f64, max_steps: u64) -> Self {
        StopRule {
            criterion: StopCriterion::GradientNorm { epsilon },
            max_steps,
        }
    }

    pub fn direction(angle: f64, max_steps: u64) -> Self {
        StopRule {
            criterion: StopCriterion::Direction { angle },
            max_steps,
        }
    }
}

/// Sampling and observation settings of a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Record every this many steps (0 records only the endpoints).
    pub sample_every: u64,
    pub observables: Observables,
}

impl RunOptions {
    pub fn every(sample_every: u64) -> Self {
        RunOptions {
            sample_every,
            observables: Observables::default(),
        }
    }

    pub fn with_observables(mut self, observables: Observables) -> Self {
        self.observables = observables;
        self
    }
}

/// Final state and sampled trace of a run.
#[derive(Debug, Clone)]
pub struct FlowRun {
    pub state: FlowState,
    pub trace: TrajectoryTrace,
    pub steps: u64,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = crate::linalg::norm2(v);
    v.iter().map(|x| x / n).collect()
}

fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b).clamp(-1.0, 1.0).acos()
}

/// Integrates until the stop rule holds or the step budget runs out; in the
/// latter case the trace carries `converged = false`.
pub fn run_flow(
    state: FlowState,
    kind: LossKind,
    data: &Dataset,
    stop: StopRule,
    options: &RunOptions,
) -> Result<FlowRun> {
    let mut state = state;
    let mut trace = TrajectoryTrace::new(state.net.depth());
    let obs = &options.observables;
    trace.push(obs.record(&state, kind, data, 0)?);
    let mut steps = 0u64;
    let mut converged = false;
    let mut next_checkpoint = 1.0f64;
    while next_checkpoint <= state.time {
        next_checkpoint *= 2.0;
    }
    let mut last_direction: Option<Vec<f64>> = None;
    let mut reason = String::from("step budget exhausted");
    loop {
        match stop.criterion {
            StopCriterion::MaxTime { time } if state.time >= time - 0.5 * state.step * f64::from(state.clock == Clock::Linear) => {
                converged = true;
                reason = format!("reached t = {}", csv_float(time));
            }
            _ => {}
        }
        if converged || steps >= stop.max_steps {
            break;
        }
        if state.clock == Clock::Log && state.log_time + state.step > MAX_LOG_TIME {
            reason = "log clock exhausted".into();
            break;
        }
        let info = state.advance(kind, data)?;
        steps += 1;
        match stop.criterion {
            StopCriterion::Loss { epsilon } if info.loss <= epsilon => {
                converged = true;
                reason = format!("loss {:e} ≤ {epsilon:e}", info.loss);
            }
            StopCriterion::GradientNorm { epsilon } if info.field_norm <= epsilon => {
                converged = true;
                reason = format!("field norm {:e} ≤ {epsilon:e}", info.field_norm);
            }
            StopCriterion::Direction { angle } if state.time >= next_checkpoint => {
                let dir = unit(&state.weights());
                if let Some(prev) = &last_direction {
                    let a = angle_between(prev, &dir);
                    if a < angle {
                        converged = true;
                        reason = format!("direction angle {a:e} < {angle:e} at t = {}", state.time);
                    }
                }
                last_direction = Some(dir);
                while next_checkpoint <= state.time {
                    next_checkpoint *= 2.0;
                }
            }
            _ => {}
        }
        if options.sample_every > 0 && steps % options.sample_every == 0 && !converged {
            trace.push(obs.record(&state, kind, data, 0)?);
        }
    }
    if trace.records.last().map_or(true, |r| r.time < state.time) {
        trace.push(obs.record(&state, kind, data, 0)?);
    }
    trace.converged = converged;
    trace.stop_reason = reason;
    Ok(FlowRun { state, trace, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{min_norm_least_squares, null_space_projector};
    use crate::network::Activation;
    use approx::assert_relative_eq;

    fn linear(w: &[f64]) -> DeepNet {
        DeepNet::new(vec![Matrix::row_vector(w)], Activation::Linear).unwrap()
    }

    #[test]
    fn equilibrium_only_advances_time() {
        let data = Dataset::regression(vec![vec![1.0, 0.0]], vec![2.0]).unwrap();
        let s = FlowState::new(linear(&[2.0, 5.0]), 0.1).unwrap();
        let n = flow_step(&s, LossKind::Square, &data).unwrap();
        assert_eq!(n.net, s.net);
        assert_relative_eq!(n.time, 0.1);
    }

    #[test]
    fn exponential_1d_tracks_closed_form() {
        let data = Dataset::binary(vec![vec![1.0]], vec![1.0]).unwrap();
        let s = FlowState::new(linear(&[0.0]), 1e-3).unwrap();
        let run = run_flow(s, LossKind::Exponential, &data, StopRule::max_time(100.0, 200_000), &RunOptions::default()).unwrap();
        assert!(run.trace.converged);
        let w = run.state.weights()[0];
        assert_relative_eq!(w, (100.0f64 + 1.0).ln(), max_relative = 1e-3);
    }

    #[test]
    fn log_clock_rk4_matches_closed_form() {
        let data = Dataset::binary(vec![vec![1.0]], vec![1.0]).unwrap();
        let s = FlowState::new(linear(&[0.3]), 0.01)
            .unwrap()
            .with_integrator(Integrator::Rk4)
            .with_clock(Clock::Log)
            .unwrap();
        let run = run_flow(s, LossKind::Exponential, &data, StopRule::max_time(1e6, 10_000), &RunOptions::default()).unwrap();
        let t = run.state.time;
        assert!(t >= 1e6);
        assert_relative_eq!(run.state.weights()[0], (t + 0.3f64.exp()).ln(), max_relative = 1e-8);
    }

    #[test]
    fn square_loss_from_zero_reaches_min_norm() {
        let x = vec![vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 1.0]];
        let y = vec![1.0, -1.0];
        let data = Dataset::regression(x.clone(), y.clone()).unwrap();
        let s = FlowState::new(linear(&[0.0; 3]), 0.05).unwrap();
        let run = run_flow(s, LossKind::Square, &data, StopRule::gradient(1e-12, 1_000_000), &RunOptions::default()).unwrap();
        assert!(run.trace.converged);
        let want = min_norm_least_squares(&data.matrix(), &y).unwrap();
        for (a, b) in run.state.weights().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-6);
        }
        let p = null_space_projector(&data.matrix()).unwrap();
        assert!(crate::linalg::norm2(&p.matvec(&run.state.weights())) <= 1e-10);
    }

    #[test]
    fn explosion_is_rejected() {
        let data = Dataset::regression(vec![vec![10.0]], vec![1.0]).unwrap();
        let s = FlowState::new(linear(&[0.0]), 1.0).unwrap();
        assert!(matches!(
            flow_step(&s, LossKind::Square, &data),
            Err(FlowError::LossExplosion { .. })
        ));
    }

    #[test]
    fn invalid_settings_are_rejected() {
        assert!(FlowState::new(linear(&[0.0]), 0.0).is_err());
        assert!(FlowState::new(linear(&[0.0]), 0.1).unwrap().with_lambdas(vec![-1.0]).is_err());
        assert!(FlowState::new(linear(&[0.0]), 0.1)
            .unwrap()
            .with_lambdas(vec![0.1])
            .unwrap()
            .with_clock(Clock::Log)
            .is_err());
    }

    #[test]
    fn regularized_flow_finds_transcendental_minimum() {
        // one sample x = 1, y = 1: λ·2w = e^{−w}
        let data = Dataset::binary(vec![vec![1.0]], vec![1.0]).unwrap();
        let s = FlowState::new(linear(&[0.0]), 0.05).unwrap().with_lambdas(vec![0.1]).unwrap();
        let run = run_flow(s, LossKind::Exponential, &data, StopRule::gradient(1e-13, 1_000_000), &RunOptions::default()).unwrap();
        let w = run.state.weights()[0];
        assert!((0.2 * w - (-w).exp()).abs() <= 1e-12);
    }
}
