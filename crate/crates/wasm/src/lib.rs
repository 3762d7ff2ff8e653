//! Browser bindings for three interactive gradflow demos: the max-margin
//! trajectory of an exponential-loss flow, weight-growth curves and the
//! minimum-norm degree sweep. Each export returns a JSON string.

use gradflow::experiments::{degree_curve, FeatureBasis, SweepConfig};
use gradflow::flow::{Clock, FlowState, Integrator};
use gradflow::linalg::{cosine, Matrix};
use gradflow::losses::{Dataset, LossKind};
use gradflow::network::{Activation, DeepNet};
use gradflow::oracles::{growth_closed_form, growth_numeric, hard_margin_svm};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest log time the demo integrates to.
pub const DEMO_MAX_LOG_TIME: f64 = 200.0;
pub const DEMO_MAX_DEGREE: usize = 400;

#[derive(Debug, Serialize)]
pub struct TrajectoryPoint {
    pub log_time: f64,
    pub w: [f64; 2],
    pub cosine_to_svm: f64,
}

#[derive(Debug, Serialize)]
pub struct MarginDemo {
    pub w_tilde: Vec<f64>,
    pub margin: f64,
    pub support_indices: Vec<usize>,
    pub trajectory: Vec<TrajectoryPoint>,
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("demo output serializes")
}

/// Exponential-loss flow on 2D points from `w0`, RK4 on the log clock,
/// sampled `samples` times up to `log_time`.
pub fn max_margin_demo(xs: &[f64], ys: &[f64], labels: &[f64], w0: [f64; 2], log_time: f64, samples: usize) -> Result<MarginDemo, String> {
    if xs.len() != ys.len() || xs.len() != labels.len() {
        return Err("xs, ys and labels must have equal length".into());
    }
    if !(log_time > 0.0 && log_time <= DEMO_MAX_LOG_TIME) {
        return Err(format!("log_time must be in (0, {DEMO_MAX_LOG_TIME}]"));
    }
    let inputs: Vec<Vec<f64>> = xs.iter().zip(ys).map(|(&x, &y)| vec![x, y]).collect();
    let data = Dataset::binary(inputs, labels.to_vec()).map_err(|e| e.to_string())?;
    let sol = hard_margin_svm(&data).map_err(|e| e.to_string())?;
    let net = DeepNet::new(vec![Matrix::row_vector(&w0)], Activation::Linear).map_err(|e| e.to_string())?;
    let step = 0.05;
    let mut state = FlowState::new(net, step)
        .and_then(|s| s.with_integrator(Integrator::Rk4).with_clock(Clock::Log))
        .map_err(|e| e.to_string())?;
    let total = (log_time / step).ceil() as usize;
    let every = (total / samples.max(1)).max(1);
    let mut trajectory = Vec::new();
    let mut record = |s: &FlowState| {
        let w = s.weights();
        trajectory.push(TrajectoryPoint {
            log_time: s.log_time,
            w: [w[0], w[1]],
            cosine_to_svm: cosine(&w, &sol.w_tilde),
        });
    };
    record(&state);
    for i in 1..=total {
        state.advance(LossKind::Exponential, &data).map_err(|e| e.to_string())?;
        if i % every == 0 || i == total {
            record(&state);
        }
    }
    Ok(MarginDemo {
        w_tilde: sol.w_tilde,
        margin: sol.margin,
        support_indices: sol.support_indices,
        trajectory,
    })
}

#[derive(Debug, Serialize)]
pub struct GrowthCurve {
    pub k: usize,
    pub rho: Vec<f64>,
    pub product: Vec<f64>,
    /// Closed form where one exists (K = 1, 2).
    pub closed_form: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct GrowthDemo {
    pub times: Vec<f64>,
    pub curves: Vec<GrowthCurve>,
}

/// `ρ(t)` of the single-sample growth ODE for each depth in `ks`, on a
/// log-spaced grid from 1 to `t_max`.
pub fn growth_demo(ks: &[u32], f_tilde: f64, t_max: f64, points: usize) -> Result<GrowthDemo, String> {
    if !(t_max > 1.0 && t_max <= 1e8) || points < 2 {
        return Err("need 1 < t_max ≤ 1e8 and at least 2 points".into());
    }
    let times: Vec<f64> = (0..points)
        .map(|i| t_max.powf(i as f64 / (points - 1) as f64))
        .collect();
    let mut curves = Vec::new();
    for &k in ks {
        let k = k as usize;
        if !(1..=8).contains(&k) {
            return Err(format!("depth {k} outside 1..=8"));
        }
        let rho = growth_numeric(k, f_tilde, 1.0, &times, 1e-3).map_err(|e| e.to_string())?;
        let closed_form = if k <= 2 {
            Some(
                times
                    .iter()
                    .map(|&t| growth_closed_form(k, f_tilde, t, 1.0))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| e.to_string())?,
            )
        } else {
            None
        };
        curves.push(GrowthCurve {
            k,
            product: rho.iter().map(|r| r.powi(k as i32)).collect(),
            rho,
            closed_form,
        });
    }
    Ok(GrowthDemo { times, curves })
}

/// Minimum-norm polynomial fits of `sin(2π·frequency·x)` for every degree up
/// to `max_degree`.
pub fn degree_sweep_demo(train_points: usize, frequency: f64, max_degree: usize) -> Result<String, String> {
    if max_degree > DEMO_MAX_DEGREE {
        return Err(format!("max_degree above {DEMO_MAX_DEGREE}"));
    }
    let config = SweepConfig {
        train_points,
        test_points: 400,
        frequency,
        min_degree: 1,
        max_degree,
        basis: FeatureBasis::Chebyshev,
        ..SweepConfig::default()
    };
    let points = degree_curve(&config).map_err(|e| e.to_string())?;
    Ok(to_json(&points))
}

#[wasm_bindgen(js_name = maxMarginTrajectory)]
pub fn max_margin_trajectory(
    xs: &[f64],
    ys: &[f64],
    labels: &[f64],
    w0x: f64,
    w0y: f64,
    log_time: f64,
    samples: usize,
) -> Result<String, JsError> {
    max_margin_demo(xs, ys, labels, [w0x, w0y], log_time, samples)
        .map(|d| to_json(&d))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = growthCurves)]
pub fn growth_curves(ks: &[u32], f_tilde: f64, t_max: f64, points: usize) -> Result<String, JsError> {
    growth_demo(ks, f_tilde, t_max, points)
        .map(|d| to_json(&d))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = degreeSweep)]
pub fn degree_sweep(train_points: usize, frequency: f64, max_degree: usize) -> Result<String, JsError> {
    degree_sweep_demo(train_points, frequency, max_degree).map_err(|e| JsError::new(&e))
}
