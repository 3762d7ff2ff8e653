//! Scripted desk-scale scenarios: polynomial perturbation study, minimum-norm
//! degree sweep, toy deep-net perturbation, weight-growth asymptotics and
//! convergence-direction study.
//!
//! Every scenario is a pure function of its config (seed included) and
//! returns a [`ScenarioReport`] whose files are byte-reproducible.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowError;
use crate::linalg::{LinalgError, Matrix};
use crate::losses::{Dataset, LossError};
use crate::network::NetworkError;
use crate::oracles::OracleError;
use crate::spectra::SpectraError;

mod deepnet;
mod direction;
mod growth;
mod sine;
mod sweep;

pub use deepnet::{toy_deepnet_perturbation, DeepNetConfig};
pub use direction::{convergence_direction_study, separable_dataset, DirectionConfig};
pub use growth::{growth_asymptotics, GrowthConfig};
pub use sine::{sine_polynomial_perturbation, SineConfig};
pub use sweep::{degree_curve, min_norm_degree_sweep, DegreePoint, SweepConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

pub(crate) fn config_error(field: &str, reason: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(format!("{field}: {reason}"))
}

/// A mechanically evaluated scenario check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Predicate {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Predicate {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// A named text output (CSV) of a scenario, without provenance header.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

/// Config hash and seed stamped into every written file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn comment(&self) -> String {
        format!("config_sha256={} seed={}", self.config_sha256, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub repetitions: usize,
    /// Repetitions left out of the aggregates for not converging.
    pub excluded: usize,
    /// Per-repetition trace file names, relative to the output directory.
    pub trace_files: Vec<String>,
    pub aggregates: BTreeMap<String, f64>,
    pub predicates: Vec<Predicate>,
    pub events: Vec<String>,
    #[serde(skip)]
    pub files: Vec<OutputFile>,
}

impl ScenarioReport {
    pub(crate) fn new(scenario: &str, seed: u64, repetitions: usize) -> Self {
        ScenarioReport {
            scenario: scenario.into(),
            seed,
            repetitions,
            excluded: 0,
            trace_files: Vec::new(),
            aggregates: BTreeMap::new(),
            predicates: Vec::new(),
            events: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.predicates.iter().all(|p| p.passed)
    }

    pub fn predicate(&self, name: &str) -> Option<&Predicate> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn aggregate(&self, name: &str) -> Option<f64> {
        self.aggregates.get(name).copied()
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|f| f.name == name).map(|f| f.contents.as_str())
    }

    pub(crate) fn set(&mut self, name: &str, value: f64) {
        self.aggregates.insert(name.into(), value);
    }

    pub(crate) fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.predicates.push(Predicate::new(name, passed, detail));
    }

    pub(crate) fn add_file(&mut self, name: String, contents: String) {
        self.files.push(OutputFile { name, contents });
    }

    pub(crate) fn add_trace(&mut self, name: String, contents: String) {
        self.trace_files.push(name.clone());
        self.add_file(name, contents);
    }

    /// Report JSON with the provenance embedded.
    pub fn to_json(&self, provenance: &Provenance) -> String {
        #[derive(Serialize)]
        struct Stamped<'a> {
            config_sha256: &'a str,
            seed: u64,
            passed: bool,
            #[serde(flatten)]
            report: &'a ScenarioReport,
        }
        let stamped = Stamped {
            config_sha256: &provenance.config_sha256,
            seed: provenance.seed,
            passed: self.passed(),
            report: self,
        };
        let mut s = serde_json::to_string_pretty(&stamped).expect("report serialization cannot fail");
        s.push('\n');
        s
    }

    /// Writes every file with a `# config_sha256=… seed=…` first line, plus
    /// `<scenario>_report.json`.
    pub fn write(&self, dir: &Path, provenance: &Provenance) -> Result<Vec<String>> {
        let io = |path: &Path, source| ExperimentError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut written = Vec::new();
        for f in &self.files {
            let path = dir.join(&f.name);
            let text = format!("# {}\n{}", provenance.comment(), f.contents);
            std::fs::write(&path, text).map_err(|e| io(&path, e))?;
            written.push(f.name.clone());
        }
        let name = format!("{}_report.json", self.scenario);
        let path = dir.join(&name);
        std::fs::write(&path, self.to_json(provenance)).map_err(|e| io(&path, e))?;
        written.push(name);
        Ok(written)
    }
}

/// Runs `f(index, seed)` for each repetition, seeds `base_seed + index`,
/// results in index order.
pub fn run_repetitions<T, F>(count: usize, base_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count)
            .into_par_iter()
            .map(|i| f(i, base_seed.wrapping_add(i as u64)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(|i| f(i, base_seed.wrapping_add(i as u64))).collect()
    }
}

/// `xᵢ = cos((2i − 1)π / 2n)`, `i = 1..n`.
pub fn chebyshev_nodes(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| ((2 * i - 1) as f64 * std::f64::consts::PI / (2 * n) as f64).cos())
        .collect()
}

/// `n` evenly spaced points on `[−1, 1]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect(),
    }
}

/// `sin(2πfx)`.
pub fn sine_target(x: f64, frequency: f64) -> f64 {
    (2.0 * std::f64::consts::PI * frequency * x).sin()
}

/// Polynomial feature basis on `[−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureBasis {
    /// Chebyshev polynomials `T₀ … T_deg`.
    #[default]
    Chebyshev,
    /// Monomials `1, x, …, x^deg`.
    Monomial,
}

/// `deg + 1` features of `x`.
pub fn polynomial_features(x: f64, degree: usize, basis: FeatureBasis) -> Vec<f64> {
    let mut out = Vec::with_capacity(degree + 1);
    out.push(1.0);
    if degree == 0 {
        return out;
    }
    out.push(x);
    for k in 2..=degree {
        let next = match basis {
            FeatureBasis::Chebyshev => 2.0 * x * out[k - 1] - out[k - 2],
            FeatureBasis::Monomial => x * out[k - 1],
        };
        out.push(next);
    }
    out
}

pub fn feature_rows(xs: &[f64], degree: usize, basis: FeatureBasis) -> Vec<Vec<f64>> {
    xs.iter().map(|&x| polynomial_features(x, degree, basis)).collect()
}

/// Sine regression data on `xs` in the given basis.
pub fn sine_dataset(xs: &[f64], frequency: f64, degree: usize, basis: FeatureBasis) -> Result<Dataset> {
    let y = xs.iter().map(|&x| sine_target(x, frequency)).collect();
    Ok(Dataset::regression(feature_rows(xs, degree, basis), y)?)
}

/// Two isotropic Gaussian blobs at `±center`, labels `±1`, alternating.
pub fn gaussian_blobs<R: Rng + ?Sized>(n: usize, center: &[f64], std: f64, rng: &mut R) -> Result<Dataset> {
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        inputs.push(
            center
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(rng);
                    y * c + std * z
                })
                .collect(),
        );
        labels.push(y);
    }
    Ok(Dataset::binary(inputs, labels)?)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// CSV text from a header and rows of numbers.
pub(crate) fn csv_table(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|&v| crate::flow::csv_float(v)).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    out
}
