use serde::{Deserialize, Serialize};

use crate::flow::{Clock, FlowState, Integrator};
use crate::linalg::Matrix;
use crate::losses::{Dataset, LossKind};
use crate::network::{Activation, DeepNet};
use crate::oracles::{growth_closed_form, growth_numeric};

use super::{config_error, csv_table, slope, Result, ScenarioReport};

/// Single-sample weight growth for several depths `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    pub seed: u64,
    pub ks: Vec<usize>,
    /// Margin factor `f̃` of the single sample.
    pub f_tilde: f64,
    /// Common initial layer norm.
    pub rho0: f64,
    /// RK4 step in `s = ln(1 + t)` for the growth ODE.
    pub ds: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub points_per_decade: usize,
    /// Also integrate the layered network flow (log clock, RK4).
    pub include_flow: bool,
    pub flow_step: f64,
    /// Time at which the depth orderings are checked.
    pub check_time: f64,
    /// Fit window for the `K = 1` slope of `ρ` against `log t`.
    pub fit_range: [f64; 2],
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            seed: 0,
            ks: vec![1, 2, 4],
            f_tilde: 1.0,
            rho0: 1.0,
            ds: 1e-3,
            t_min: 10.0,
            t_max: 1e5,
            points_per_decade: 10,
            include_flow: true,
            flow_step: 1e-3,
            check_time: 1e4,
            fit_range: [1e3, 1e5],
        }
    }
}

impl GrowthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(config_error("ks", "needs at least one depth, all ≥ 1"));
        }
        if !(self.f_tilde > 0.0) {
            return Err(config_error("f_tilde", "must be positive"));
        }
        if !(self.rho0 > 0.0) {
            return Err(config_error("rho0", "must be positive"));
        }
        if !(self.ds > 0.0) {
            return Err(config_error("ds", "must be positive"));
        }
        if !(self.flow_step > 0.0) {
            return Err(config_error("flow_step", "must be positive"));
        }
        if !(self.t_min > 1.0 && self.t_max > self.t_min) {
            return Err(config_error("t_max", "need 1 < t_min < t_max"));
        }
        if self.points_per_decade < 1 {
            return Err(config_error("points_per_decade", "must be at least 1"));
        }
        Ok(())
    }

    /// Log-spaced times from `t_min` to `t_max`, with `check_time` and the
    /// fit range endpoints included.
    pub fn times(&self) -> Vec<f64> {
        let lo = self.t_min.log10();
        let hi = self.t_max.log10();
        let n = ((hi - lo) * self.points_per_decade as f64).round().max(1.0) as usize;
        let mut t: Vec<f64> = (0..=n).map(|j| 10f64.powf(lo + (hi - lo) * j as f64 / n as f64)).collect();
        for extra in [self.check_time, self.fit_range[0], self.fit_range[1]] {
            if extra >= self.t_min && extra <= self.t_max {
                t.push(extra);
            }
        }
        t.sort_by(|a, b| a.total_cmp(b));
        t.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs());
        t
    }
}

/// Growth ODE at `times`, halving `ds` until two resolutions agree to 1e-9.
fn resolved_numeric(k: usize, cfg: &GrowthConfig, times: &[f64], events: &mut Vec<String>) -> Result<Vec<f64>> {
    let mut ds = cfg.ds;
    let mut coarse = growth_numeric(k, cfg.f_tilde, cfg.rho0, times, ds)?;
    for _ in 0..6 {
        let fine = growth_numeric(k, cfg.f_tilde, cfg.rho0, times, ds / 2.0)?;
        let gap = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max);
        if gap <= 1e-9 {
            return Ok(fine);
        }
        events.push(format!("K = {k}: ds = {ds} disagrees with ds/2 by {gap:e}; halving"));
        ds /= 2.0;
        coarse = fine;
    }
    Ok(coarse)
}

/// Per-layer norm of the equal-initialized `K`-layer scalar network
/// `f = f̃·Πwₖ` under the exponential-loss flow, at the first step past each
/// time. Returns `(reached times, ρ)`.
pub fn layered_flow_growth(k: usize, f_tilde: f64, rho0: f64, times: &[f64], step: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let layers = (0..k).map(|_| Matrix::from_diag(&[rho0])).collect();
    let net = DeepNet::new(layers, Activation::Linear)?;
    let data = Dataset::binary(vec![vec![f_tilde]], vec![1.0])?;
    let mut state = FlowState::new(net, step)?
        .with_integrator(Integrator::Rk4)
        .with_clock(Clock::Log)?;
    let mut reached = Vec::with_capacity(times.len());
    let mut rhos = Vec::with_capacity(times.len());
    for &t in times {
        while state.time < t * (1.0 - 1e-12) {
            state.advance(LossKind::Exponential, &data)?;
        }
        reached.push(state.time);
        let w = state.weights();
        rhos.push(w.iter().map(|v| v.abs()).product::<f64>().powf(1.0 / k as f64));
    }
    Ok((reached, rhos))
}

struct Curve {
    k: usize,
    rho: Vec<f64>,
    closed: Option<Vec<f64>>,
    flow: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn growth_asymptotics(config: &GrowthConfig) -> Result<ScenarioReport> {
    config.validate()?;
    let times = config.times();
    let mut report = ScenarioReport::new("growth", config.seed, 1);
    let mut curves = Vec::new();
    for &k in &config.ks {
        let rho = resolved_numeric(k, config, &times, &mut report.events)?;
        let closed = if k <= 2 {
            Some(
                times
                    .iter()
                    .map(|&t| growth_closed_form(k, config.f_tilde, t, config.rho0))
                    .collect::<std::result::Result<Vec<_>, _>>()?,
            )
        } else {
            None
        };
        let flow = if config.include_flow {
            Some(layered_flow_growth(k, config.f_tilde, config.rho0, &times, config.flow_step)?)
        } else {
            None
        };
        curves.push(Curve { k, rho, closed, flow });
    }

    let log_t: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let mut header = vec!["t".to_string(), "log_t".to_string()];
    for c in &curves {
        header.push(format!("rho_k{}", c.k));
        header.push(format!("product_k{}", c.k));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = (0..times.len())
        .map(|i| {
            let mut r = vec![times[i], log_t[i]];
            for c in &curves {
                r.push(c.rho[i]);
                r.push(c.rho[i].powi(c.k as i32) * config.f_tilde);
            }
            r
        })
        .collect();
    report.add_file("growth_plot.csv".into(), csv_table(&header_refs, &rows));

    for c in &curves {
        let kf = c.k as f64;
        let rows: Vec<Vec<f64>> = (0..times.len())
            .map(|i| {
                let product = c.rho[i].powi(c.k as i32) * config.f_tilde;
                let (ft, fr) = c.flow.as_ref().map_or((f64::NAN, f64::NAN), |(t, r)| (t[i], r[i]));
                vec![
                    times[i],
                    log_t[i],
                    c.rho[i],
                    product,
                    c.closed.as_ref().map_or(f64::NAN, |v| v[i]),
                    ft,
                    fr,
                    product / log_t[i],
                    c.rho[i] / log_t[i],
                ]
            })
            .collect();
        report.add_trace(
            format!("growth_k{}.csv", c.k),
            csv_table(
                &[
                    "t",
                    "log_t",
                    "rho",
                    "product",
                    "rho_closed_form",
                    "flow_t",
                    "flow_rho",
                    "product_over_log_t",
                    "rho_over_log_t",
                ],
                &rows,
            ),
        );

        let in_fit: Vec<usize> = (0..times.len())
            .filter(|&i| times[i] >= config.fit_range[0] * (1.0 - 1e-12) && times[i] <= config.fit_range[1] * (1.0 + 1e-12))
            .collect();
        let fit = |ys: &[f64]| slope(&in_fit.iter().map(|&i| log_t[i]).collect::<Vec<_>>(), &in_fit.iter().map(|&i| ys[i]).collect::<Vec<_>>());
        report.set(&format!("slope_k{}", c.k), fit(&c.rho));

        if c.k == 1 {
            let s = fit(&c.rho);
            report.check("k1_slope", (0.95..=1.05).contains(&s), format!("slope of ρ against log t: {s}"));
            if let Some((_, fr)) = &c.flow {
                let s = fit(fr);
                report.set("flow_slope_k1", s);
                report.check("k1_flow_slope", (0.95..=1.05).contains(&s), format!("network flow slope: {s}"));
            }
        }
        if let Some(closed) = &c.closed {
            let err = c.rho.iter().zip(closed).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
            report.set(&format!("closed_form_error_k{}", c.k), err);
            report.check(
                &format!("k{}_closed_form", c.k),
                err <= 1e-3,
                format!("largest relative gap to the closed form {err:e}"),
            );
        }
        if let Some((ft, fr)) = &c.flow {
            // network time t corresponds to ODE time t/K
            let scaled: Vec<f64> = ft.iter().map(|t| t / kf).collect();
            let oracle = growth_numeric(c.k, config.f_tilde, config.rho0, &scaled, config.ds)?;
            let err = fr.iter().zip(&oracle).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
            report.set(&format!("flow_oracle_error_k{}", c.k), err);
            report.check(
                &format!("k{}_flow_matches_ode", c.k),
                err <= 1e-3,
                format!("largest relative gap between network flow at t and ODE at t/K: {err:e}"),
            );
        }
        if c.k >= 2 {
            let i = times
                .iter()
                .position(|&t| (t - config.check_time).abs() <= 1e-9 * config.check_time)
                .unwrap_or(times.len() - 1);
            let product = c.rho[i].powi(c.k as i32) * config.f_tilde;
            report.set(&format!("product_at_check_k{}", c.k), product);
            report.set(&format!("rho_at_check_k{}", c.k), c.rho[i]);
            let gap: Vec<f64> = (0..times.len())
                .map(|j| c.rho[j].powi(c.k as i32) * config.f_tilde - log_t[j])
                .collect();
            let gap_increasing = gap.windows(2).all(|w| w[1] > w[0]);
            report.check(
                &format!("k{}_product_outgrows_log", c.k),
                product > log_t[i] && gap_increasing,
                format!("product {product} vs log t {} at t = {}; product − log t increasing: {gap_increasing}", log_t[i], times[i]),
            );
            let late: Vec<f64> = (0..times.len())
                .filter(|&j| times[j] >= config.fit_range[0] * (1.0 - 1e-12))
                .map(|j| c.rho[j] / log_t[j])
                .collect();
            let ratio_decreasing = late.windows(2).all(|w| w[1] < w[0]);
            report.check(
                &format!("k{}_layer_slower_than_log", c.k),
                c.rho[i] < log_t[i] && ratio_decreasing,
                format!("ρ {} vs log t {} at t = {}; ρ/log t decreasing late: {ratio_decreasing}", c.rho[i], log_t[i], times[i]),
            );
        }
    }
    let mut deep: Vec<&Curve> = curves.iter().filter(|c| c.k >= 2).collect();
    deep.sort_by_key(|c| c.k);
    deep.dedup_by_key(|c| c.k);
    for pair in deep.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let faster = (0..times.len()).all(|i| b.rho[i].powi(b.k as i32) > a.rho[i].powi(a.k as i32));
        report.check(
            &format!("k{}_product_faster_than_k{}", b.k, a.k),
            faster,
            "deeper product larger at every sampled time",
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_growth_passes() {
        let r = growth_asymptotics(&GrowthConfig::default()).unwrap();
        for p in &r.predicates {
            assert!(p.passed, "{p:?}");
        }
        assert!(r.aggregate("product_at_check_k2").unwrap() > 1e4f64.ln());
    }

    #[test]
    fn grid_contains_check_points() {
        let t = GrowthConfig::default().times();
        assert!(t.contains(&1e4) && t.contains(&1e3) && t.contains(&1e5));
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }
}
