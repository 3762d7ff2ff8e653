use std::fmt::Write as _;

use crate::linalg::{cosine, norm2, Matrix};
use crate::losses::{self, Dataset, LossKind};

use super::{FlowState, Result};

/// One sampled point of a trajectory. Quantities that do not apply to a run
/// are `None` and serialize as empty CSV fields.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub loss: f64,
    pub train_error: f64,
    pub test_error: Option<f64>,
    /// Per-layer Frobenius norms (or `ρ_k` for normalized flows).
    pub norms: Vec<f64>,
    pub margin_cosine: Option<f64>,
    pub nullspace_norm: Option<f64>,
    /// `‖w(t) − w̃ log t‖`.
    pub residual_norm: Option<f64>,
    pub perturbation_count: usize,
}

/// Sampled time series of a flow.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTrace {
    pub num_layers: usize,
    pub records: Vec<TraceRecord>,
    pub converged: bool,
    pub stop_reason: String,
    /// Notable events (renormalizations, skipped intervals, flagged cycles).
    pub events: Vec<String>,
}

impl TrajectoryTrace {
    pub fn new(num_layers: usize) -> Self {
        TrajectoryTrace {
            num_layers,
            records: Vec::new(),
            converged: false,
            stop_reason: String::new(),
            events: Vec::new(),
        }
    }

    /// Appends a record; records at a non-increasing time are dropped.
    pub fn push(&mut self, record: TraceRecord) {
        if self.records.last().map_or(true, |r| record.time > r.time) {
            self.records.push(record);
        }
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn header(&self) -> String {
        let mut h = String::from("time,loss,train_error,test_error");
        for k in 1..=self.num_layers {
            let _ = write!(h, ",norm_l{k}");
        }
        h.push_str(",margin_cosine,nullspace_norm,residual_norm,perturbation_count");
        h
    }

    /// CSV text with an optional leading `# comment` line.
    pub fn to_csv(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str(&self.header());
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{},{},{}",
                csv_float(r.time),
                csv_float(r.loss),
                csv_float(r.train_error),
                opt(r.test_error)
            );
            for &n in &r.norms {
                let _ = write!(out, ",{}", csv_float(n));
            }
            let _ = writeln!(
                out,
                ",{},{},{},{}",
                opt(r.margin_cosine),
                opt(r.nullspace_norm),
                opt(r.residual_norm),
                r.perturbation_count
            );
        }
        out
    }

    /// Times strictly increasing and every present value finite.
    pub fn is_well_formed(&self) -> bool {
        self.records.windows(2).all(|w| w[1].time > w[0].time)
            && self.records.iter().all(|r| {
                let opts = [r.test_error, r.margin_cosine, r.nullspace_norm, r.residual_norm];
                r.time.is_finite()
                    && r.loss.is_finite()
                    && r.train_error.is_finite()
                    && r.norms.iter().all(|v| v.is_finite())
                    && opts.iter().flatten().all(|v| v.is_finite())
            })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(csv_float).unwrap_or_default()
}

/// Shortest round-trip text of `v`; integral values print without a
/// fraction, very large or small magnitudes in exponent form.
pub fn csv_float(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e16 {
        format!("{v}")
    } else {
        format!("{v:?}")
    }
}

/// Optional quantities recorded alongside the loss and norms.
#[derive(Debug, Clone, Default)]
pub struct Observables {
    pub test_data: Option<Dataset>,
    /// Direction for `margin_cosine` (flattened weights).
    pub reference_direction: Option<Vec<f64>>,
    /// Projector onto the data null space (flattened weights).
    pub null_projector: Option<Matrix>,
    /// `w̃` in the residual `‖w(t) − w̃ log t‖`.
    pub residual_direction: Option<Vec<f64>>,
}

impl Observables {
    pub fn record(&self, state: &FlowState, kind: LossKind, data: &Dataset, perturbation_count: usize) -> Result<TraceRecord> {
        let w = state.weights();
        let test_error = match &self.test_data {
            Some(t) => Some(losses::classification_error(&state.net, t)?),
            None => None,
        };
        let margin_cosine = self
            .reference_direction
            .as_ref()
            .filter(|r| r.len() == w.len())
            .map(|r| cosine(&w, r));
        let nullspace_norm = self
            .null_projector
            .as_ref()
            .filter(|p| p.cols() == w.len())
            .map(|p| norm2(&p.matvec(&w)));
        let residual_norm = self
            .residual_direction
            .as_ref()
            .filter(|r| r.len() == w.len() && state.time > 0.0)
            .map(|r| {
                let lt = if state.time > 1e15 { state.log_time } else { state.time.ln() };
                let diff: Vec<f64> = w.iter().zip(r).map(|(a, b)| a - b * lt).collect();
                norm2(&diff)
            });
        Ok(TraceRecord {
            time: state.time,
            loss: losses::loss(kind, &state.net, data)?,
            train_error: losses::classification_error(&state.net, data)?,
            test_error,
            norms: state.net.layer_norms(),
            margin_cosine,
            nullspace_norm,
            residual_norm,
            perturbation_count,
        })
    }
}
