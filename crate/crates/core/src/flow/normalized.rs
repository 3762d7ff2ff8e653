use crate::linalg::{axpy, dot, frobenius_norm, norm2, Matrix};
use crate::losses::{self, Dataset, Labels, LossKind, MAX_EXPONENT};
use crate::network::{normalize_layers, DeepNet, NetworkError};

use super::trace::{Observables, TraceRecord, TrajectoryTrace};
use super::{angle_between, unit, Clock, FlowError, Result, StopCriterion, StopRule, MAX_LOG_TIME};

/// Unit-norm drift that triggers a logged renormalization under fixed `λ`.
pub const RENORMALIZE_DRIFT: f64 = 1e-4;

/// How the penalties `λ_k` on `‖V_k‖² − 1` are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaMode {
    /// Each step picks `λ_k` so that `‖V_k‖ = 1` holds after the update.
    Constraint,
    /// Fixed penalties; drift beyond `RENORMALIZE_DRIFT` is renormalized.
    Fixed(Vec<f64>),
}

/// `W_k = ρ_k V_k` with unit-Frobenius `V_k`, under the exponential loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFlowState {
    pub rhos: Vec<f64>,
    /// Network whose layers are the `V_k`.
    pub vs: DeepNet,
    pub lambda_mode: LambdaMode,
    pub time: f64,
    pub log_time: f64,
    pub step: f64,
    pub clock: Clock,
    pub renormalizations: u64,
    /// `λ_k` used by the last step.
    pub last_lambdas: Vec<f64>,
    /// `ρ̇_k` of the last step.
    pub last_rho_rates: Vec<f64>,
}

impl NormalizedFlowState {
    pub fn from_net(net: &DeepNet, step: f64) -> Result<Self> {
        if !net.activation().is_homogeneous() {
            return Err(NetworkError::NotHomogeneous(net.activation().name().into()).into());
        }
        if !(step > 0.0) {
            return Err(FlowError::InvalidState(format!("step must be positive, got {step}")));
        }
        let (rhos, vs) = normalize_layers(net)?;
        let k = rhos.len();
        Ok(NormalizedFlowState {
            rhos,
            vs,
            lambda_mode: LambdaMode::Constraint,
            time: 0.0,
            log_time: 0.0,
            step,
            clock: Clock::Linear,
            renormalizations: 0,
            last_lambdas: vec![0.0; k],
            last_rho_rates: vec![0.0; k],
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_lambda_mode(mut self, mode: LambdaMode) -> Result<Self> {
        if let LambdaMode::Fixed(l) = &mode {
            if l.len() != self.rhos.len() || l.iter().any(|v| !(*v >= 0.0)) {
                return Err(FlowError::InvalidState("fixed lambdas must be one non-negative value per layer".into()));
            }
        }
        self.lambda_mode = mode;
        Ok(self)
    }

    /// The network `W_k = ρ_k V_k`.
    pub fn weights_net(&self) -> DeepNet {
        let mut net = self.vs.clone();
        for (m, &r) in net.layers_mut().iter_mut().zip(&self.rhos) {
            *m = m.scaled(r);
        }
        net
    }

    pub fn unit_deviation(&self) -> f64 {
        self.vs
            .layers()
            .iter()
            .map(|m| (frobenius_norm(m) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn shift(&self) -> f64 {
        match self.clock {
            Clock::Linear => 0.0,
            Clock::Log => self.log_time,
        }
    }

    /// One explicit step of
    /// `ρ̇_k = Σₙ (Π_{i≠k} ρᵢ) e^{−Πρ f̃ₙ} f̃ₙ`, `V̇_k = B_k − 2λ_k V_k`.
    pub fn advance(&mut self, data: &Dataset) -> Result<bool> {
        let y = match data.labels() {
            Labels::Binary(y) => y,
            _ => {
                return Err(losses::LossError::LabelMismatch {
                    kind: LossKind::Exponential,
                    task: data.labels().task(),
                }
                .into())
            }
        };
        let depth = self.rhos.len();
        let shift = self.shift();
        let prod: f64 = self.rhos.iter().product();
        let others: Vec<f64> = (0..depth)
            .map(|k| (0..depth).filter(|&i| i != k).map(|i| self.rhos[i]).product())
            .collect();
        let mut rho_rate = vec![0.0; depth];
        let mut b: Vec<Matrix> = self
            .vs
            .layers()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        for (n, x) in data.inputs().iter().enumerate() {
            let ft = y[n] * self.vs.forward(x)?;
            let exponent = shift - prod * ft;
            if exponent > MAX_EXPONENT {
                return Err(losses::LossError::Overflow { sample: n, exponent }.into());
            }
            let a = exponent.exp();
            for k in 0..depth {
                rho_rate[k] += others[k] * a * ft;
            }
            let g = self.vs.vjp(x, &[prod * a * y[n]])?;
            for (bk, gk) in b.iter_mut().zip(&g.layers) {
                axpy(bk.as_mut_slice(), 1.0, gk.as_slice());
            }
        }
        let h = self.step;
        let mut renormalized = false;
        let scale = (-shift).exp();
        let layers = self.vs.layers_mut();
        for k in 0..depth {
            let v = &layers[k];
            let vv = v.frobenius_dot(v);
            let vb = v.frobenius_dot(&b[k]);
            let bb = b[k].frobenius_dot(&b[k]);
            let c = match &self.lambda_mode {
                LambdaMode::Constraint => {
                    // ‖cV + hB‖² = 1 with c = 1 − 2hλ
                    let disc = h * h * vb * vb - vv * (h * h * bb - 1.0);
                    if disc >= 0.0 {
                        Some((-h * vb + disc.sqrt()) / vv)
                    } else {
                        None
                    }
                }
                LambdaMode::Fixed(l) => Some(1.0 - 2.0 * h * l[k] / scale),
            };
            let mut next = match c {
                Some(c) => {
                    self.last_lambdas[k] = (1.0 - c) / (2.0 * h) * scale;
                    v.scaled(c)
                }
                None => {
                    renormalized = true;
                    self.last_lambdas[k] = f64::NAN;
                    v.clone()
                }
            };
            next.add_scaled(h, &b[k]);
            let norm = frobenius_norm(&next);
            if c.is_none() || (norm - 1.0).abs() > RENORMALIZE_DRIFT {
                renormalized = true;
                next = next.scaled(1.0 / norm);
            }
            layers[k] = next;
        }
        for k in 0..depth {
            self.rhos[k] += h * rho_rate[k];
            self.last_rho_rates[k] = rho_rate[k] * scale;
        }
        if renormalized {
            self.renormalizations += 1;
        }
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
        Ok(renormalized)
    }
}

/// One step of the normalized system, returning the new state.
pub fn normalized_flow_step(state: &NormalizedFlowState, data: &Dataset) -> Result<NormalizedFlowState> {
    let mut next = state.clone();
    next.advance(data)?;
    Ok(next)
}

/// Result of integrating the normalized system.
#[derive(Debug, Clone)]
pub struct NormalizedRun {
    pub state: NormalizedFlowState,
    /// `norm_lk` columns hold `ρ_k`.
    pub trace: TrajectoryTrace,
    pub max_unit_deviation: f64,
    /// Smallest `ρ̇_k` seen over all steps and layers.
    pub min_rho_rate: f64,
    /// `ρ̇_k` at each sampled record.
    pub rho_rates: Vec<Vec<f64>>,
    pub steps: u64,
}

fn record(state: &NormalizedFlowState, data: &Dataset, obs: &Observables) -> Result<TraceRecord> {
    let net = state.weights_net();
    let v = state.vs.flatten();
    Ok(TraceRecord {
        time: state.time,
        loss: losses::loss(LossKind::Exponential, &net, data)?,
        train_error: losses::classification_error(&net, data)?,
        test_error: match &obs.test_data {
            Some(t) => Some(losses::classification_error(&net, t)?),
            None => None,
        },
        norms: state.rhos.clone(),
        margin_cosine: obs
            .reference_direction
            .as_ref()
            .filter(|r| r.len() == v.len())
            .map(|r| crate::linalg::cosine(&v, r)),
        nullspace_norm: None,
        residual_norm: None,
        perturbation_count: 0,
    })
}

/// Integrates the normalized system under `stop`. Direction convergence is
/// judged on the flattened `V`.
pub fn run_normalized(
    state: NormalizedFlowState,
    data: &Dataset,
    stop: StopRule,
    sample_every: u64,
    observables: &Observables,
) -> Result<NormalizedRun> {
    let mut state = state;
    let mut trace = TrajectoryTrace::new(state.rhos.len());
    trace.push(record(&state, data, observables)?);
    let mut rho_rates = vec![state.last_rho_rates.clone()];
    let mut max_dev = state.unit_deviation();
    let mut min_rate = f64::INFINITY;
    let mut steps = 0u64;
    let mut converged = false;
    let mut reason = String::from("step budget exhausted");
    let mut next_checkpoint = 1.0f64;
    let mut last_dir: Option<Vec<f64>> = None;
    loop {
        if let StopCriterion::MaxTime { time } = stop.criterion {
            if state.time >= time - 0.5 * state.step * f64::from(state.clock == Clock::Linear) {
                converged = true;
                reason = format!("reached t = {time}");
            }
        }
        if converged || steps >= stop.max_steps {
            break;
        }
        if state.clock == Clock::Log && state.log_time + state.step > MAX_LOG_TIME {
            reason = "log clock exhausted".into();
            break;
        }
        if state.advance(data)? {
            trace.events.push(format!("renormalized V at t = {}", state.time));
        }
        steps += 1;
        max_dev = max_dev.max(state.unit_deviation());
        min_rate = state.last_rho_rates.iter().copied().fold(min_rate, f64::min);
        match stop.criterion {
            StopCriterion::Loss { epsilon } => {
                let l = losses::loss(LossKind::Exponential, &state.weights_net(), data)?;
                if l <= epsilon {
                    converged = true;
                    reason = format!("loss {l} ≤ {epsilon}");
                }
            }
            StopCriterion::GradientNorm { epsilon } => {
                if norm2(&state.last_rho_rates) <= epsilon {
                    converged = true;
                    reason = format!("ρ̇ norm ≤ {epsilon}");
                }
            }
            StopCriterion::Direction { angle } if state.time >= next_checkpoint => {
                let dir = unit(&state.vs.flatten());
                if let Some(prev) = &last_dir {
                    let a = angle_between(prev, &dir);
                    if a < angle {
                        converged = true;
                        reason = format!("direction angle {a:e} < {angle:e} at t = {}", state.time);
                    }
                }
                last_dir = Some(dir);
                while next_checkpoint <= state.time {
                    next_checkpoint *= 2.0;
                }
            }
            _ => {}
        }
        if sample_every > 0 && steps % sample_every == 0 {
            trace.push(record(&state, data, observables)?);
            rho_rates.push(state.last_rho_rates.clone());
        }
    }
    if trace.last().map_or(true, |r| r.time < state.time) {
        trace.push(record(&state, data, observables)?);
        rho_rates.push(state.last_rho_rates.clone());
    }
    trace.converged = converged;
    trace.stop_reason = reason;
    Ok(NormalizedRun {
        state,
        trace,
        max_unit_deviation: max_dev,
        min_rho_rate: min_rate,
        rho_rates,
        steps,
    })
}

/// Settings of the single-layer direction flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionFlowConfig {
    pub step: f64,
    pub clock: Clock,
    pub stop: StopRule,
    pub sample_every: u64,
}

/// `(‖w‖, w̃)` trajectory of the direction flow.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionTrace {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    /// `‖w̃̇‖` at each sample.
    pub direction_rates: Vec<f64>,
    pub final_direction: Vec<f64>,
    pub final_norm: f64,
    /// Largest `‖S w̃‖` with `S = (I − w̃w̃ᵀ)/‖w‖`.
    pub max_projector_residual: f64,
    /// Largest `|‖w̃‖ − 1|` after each step.
    pub max_unit_deviation: f64,
    /// Smallest `d‖w‖/dt` over all steps.
    pub min_norm_rate: f64,
    pub converged: bool,
    pub stop_reason: String,
}

impl DirectionTrace {
    /// Least-squares slope of `‖w‖` against `ln t` over samples with
    /// `t ∈ [t_lo, t_hi]`.
    pub fn log_slope(&self, t_lo: f64, t_hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.norms)
            .filter(|(t, _)| **t >= t_lo && **t <= t_hi)
            .map(|(t, r)| (t.ln(), *r))
            .collect();
        least_squares_slope(&pts)
    }
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Integrates `d‖w‖/dt = Σₙ e^{−‖w‖f̃ₙ} f̃ₙ` and
/// `w̃̇ = (I − w̃w̃ᵀ) B̃ / ‖w‖` for a single-layer homogeneous network, where
/// `f̃ₙ = yₙ f(w̃; xₙ)` and `B̃ = Σₙ e^{−‖w‖f̃ₙ} yₙ ∇f(w̃; xₙ)`.
pub fn normalized_direction_flow(net: &DeepNet, data: &Dataset, config: &DirectionFlowConfig) -> Result<DirectionTrace> {
    if net.depth() != 1 {
        return Err(FlowError::InvalidState("the direction flow is defined for one layer".into()));
    }
    if !net.activation().is_homogeneous() {
        return Err(NetworkError::NotHomogeneous(net.activation().name().into()).into());
    }
    if !(config.step > 0.0) {
        return Err(FlowError::InvalidState(format!("step must be positive, got {}", config.step)));
    }
    let y = match data.labels() {
        Labels::Binary(y) => y.clone(),
        _ => {
            return Err(losses::LossError::LabelMismatch {
                kind: LossKind::Exponential,
                task: data.labels().task(),
            }
            .into())
        }
    };
    let w = net.flatten();
    let mut r = norm2(&w);
    if r == 0.0 {
        return Err(NetworkError::ZeroLayer { layer: 0 }.into());
    }
    let mut u: Vec<f64> = w.iter().map(|v| v / r).collect();
    let mut probe = net.with_flat(&u);
    for (n, x) in data.inputs().iter().enumerate() {
        let ft = y[n] * probe.forward(x)?;
        if !(ft > 0.0) {
            return Err(FlowError::NotSeparated { sample: n, value: ft });
        }
    }
    let h = config.step;
    let mut time = 0.0f64;
    let mut log_time = 0.0f64;
    let mut out = DirectionTrace {
        times: vec![0.0],
        norms: vec![r],
        direction_rates: vec![0.0],
        final_direction: u.clone(),
        final_norm: r,
        max_projector_residual: 0.0,
        max_unit_deviation: 0.0,
        min_norm_rate: f64::INFINITY,
        converged: false,
        stop_reason: "step budget exhausted".into(),
    };
    let mut steps = 0u64;
    let mut next_checkpoint = 1.0f64;
    let mut last_dir: Option<Vec<f64>> = None;
    loop {
        if let StopCriterion::MaxTime { time: tmax } = config.stop.criterion {
            if time >= tmax - 0.5 * h * f64::from(config.clock == Clock::Linear) {
                out.converged = true;
                out.stop_reason = format!("reached t = {tmax}");
            }
        }
        if out.converged || steps >= config.stop.max_steps {
            break;
        }
        if config.clock == Clock::Log && log_time + h > MAX_LOG_TIME {
            out.stop_reason = "log clock exhausted".into();
            break;
        }
        let shift = if config.clock == Clock::Log { log_time } else { 0.0 };
        let mut r_rate = 0.0;
        let mut b = vec![0.0; u.len()];
        for (n, x) in data.inputs().iter().enumerate() {
            let ft = y[n] * probe.forward(x)?;
            let exponent = shift - r * ft;
            if exponent > MAX_EXPONENT {
                return Err(losses::LossError::Overflow { sample: n, exponent }.into());
            }
            let a = exponent.exp();
            r_rate += a * ft;
            let g = probe.vjp(x, &[a * y[n]])?;
            axpy(&mut b, 1.0, &g.flatten());
        }
        let ub = dot(&u, &b);
        let u_rate: Vec<f64> = b.iter().zip(&u).map(|(bi, ui)| (bi - ui * ub) / r).collect();
        let scale = (-shift).exp();
        out.min_norm_rate = out.min_norm_rate.min(r_rate * scale);
        r += h * r_rate;
        axpy(&mut u, h, &u_rate);
        let un = norm2(&u);
        u.iter_mut().for_each(|v| *v /= un);
        out.max_unit_deviation = out.max_unit_deviation.max((norm2(&u) - 1.0).abs());
        // S w̃ = (w̃ − w̃(w̃ᵀw̃)) / ‖w‖
        let uu = dot(&u, &u);
        let su = u.iter().map(|v| (v - v * uu) / r).fold(0.0f64, |m, v| m.max(v.abs()));
        out.max_projector_residual = out.max_projector_residual.max(su);
        probe = net.with_flat(&u);
        steps += 1;
        match config.clock {
            Clock::Linear => {
                time += h;
                log_time = time.ln_1p();
            }
            Clock::Log => {
                log_time += h;
                time = log_time.exp_m1();
            }
        }
        if let StopCriterion::Direction { angle } = config.stop.criterion {
            if time >= next_checkpoint {
                if let Some(prev) = &last_dir {
                    let a = angle_between(prev, &u);
                    if a < angle {
                        out.converged = true;
                        out.stop_reason = format!("direction angle {a:e} < {angle:e} at t = {time}");
                    }
                }
                last_dir = Some(u.clone());
                while next_checkpoint <= time {
                    next_checkpoint *= 2.0;
                }
            }
        }
        if (config.sample_every > 0 && steps % config.sample_every == 0) || out.converged {
            out.times.push(time);
            out.norms.push(r);
            out.direction_rates.push(norm2(&u_rate) * scale);
        }
    }
    if out.times.last().is_some_and(|&t| t < time) {
        out.times.push(time);
        out.norms.push(r);
        out.direction_rates.push(f64::NAN);
    }
    out.final_direction = u;
    out.final_norm = r;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;
    use approx::assert_relative_eq;

    fn linear(w: &[f64]) -> DeepNet {
        DeepNet::new(vec![Matrix::row_vector(w)], Activation::Linear).unwrap()
    }

    #[test]
    fn single_sample_norm_grows_like_log_t() {
        let data = Dataset::binary(vec![vec![1.0]], vec![1.0]).unwrap();
        let cfg = DirectionFlowConfig {
            step: 1e-3,
            clock: Clock::Log,
            stop: StopRule::max_time(1e5, 1_000_000),
            sample_every: 100,
        };
        let tr = normalized_direction_flow(&linear(&[0.5]), &data, &cfg).unwrap();
        let slope = tr.log_slope(1e3, 1e5).unwrap();
        assert!((0.95..=1.05).contains(&slope), "{slope}");
        assert_relative_eq!(tr.final_norm, (tr.times.last().unwrap() + 0.5f64.exp()).ln(), max_relative = 1e-4);
        assert!(tr.min_norm_rate > 0.0);
        assert!(tr.max_projector_residual <= 1e-10);
    }

    #[test]
    fn rejects_unseparated_start() {
        let data = Dataset::binary(vec![vec![1.0], vec![2.0]], vec![1.0, -1.0]).unwrap();
        let cfg = DirectionFlowConfig {
            step: 1e-2,
            clock: Clock::Linear,
            stop: StopRule::max_time(1.0, 100),
            sample_every: 0,
        };
        assert!(matches!(
            normalized_direction_flow(&linear(&[1.0]), &data, &cfg),
            Err(FlowError::NotSeparated { sample: 1, .. })
        ));
    }

    #[test]
    fn constraint_mode_keeps_unit_norm_and_grows_rho() {
        let data = Dataset::binary(vec![vec![1.0, 0.2], vec![-0.4, -1.0]], vec![1.0, -1.0]).unwrap();
        let net = DeepNet::new(
            vec![Matrix::from_rows(&[[0.6, 0.1], [0.2, 0.9]]).unwrap(), Matrix::row_vector(&[0.7, 0.5])],
            Activation::Linear,
        )
        .unwrap();
        let s = NormalizedFlowState::from_net(&net, 1e-2).unwrap();
        let run = run_normalized(s, &data, StopRule::max_time(50.0, 100_000), 100, &Observables::default()).unwrap();
        assert!(run.max_unit_deviation <= 1e-12);
        assert!(run.min_rho_rate > 0.0);
        let first = run.rho_rates[1][0];
        let last = run.rho_rates.last().unwrap()[0];
        assert!(last < first);
        assert_eq!(run.state.renormalizations, 0);
    }

    #[test]
    fn weights_net_reassembles() {
        let net = DeepNet::new(vec![Matrix::row_vector(&[3.0, 4.0])], Activation::Linear).unwrap();
        let s = NormalizedFlowState::from_net(&net, 0.1).unwrap();
        assert_eq!(s.rhos, vec![5.0]);
        let back = s.weights_net();
        assert_relative_eq!(back.layer(0)[(0, 0)], 3.0, epsilon = 1e-15);
        assert_relative_eq!(back.layer(0)[(0, 1)], 4.0, epsilon = 1e-15);
    }
}
