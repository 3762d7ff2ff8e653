//! `gradflow` command line: parses a JSON config per subcommand, runs it and
//! writes stamped outputs under `--output-dir`.
//!
//! Exit codes: 0 success, 1 invalid or unreadable config, 2 failed scenario
//! predicate, 64 usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::experiments::{
    convergence_direction_study, growth_asymptotics, min_norm_degree_sweep, sine_polynomial_perturbation,
    toy_deepnet_perturbation, DeepNetConfig, DirectionConfig, ExperimentError, GrowthConfig, Provenance,
    ScenarioReport, SineConfig, SweepConfig,
};
use crate::flow::{csv_float, run_flow, Clock, FlowError, FlowState, Integrator, RunOptions, StopRule};
use crate::losses::{loss, Dataset, LossError, LossKind};
use crate::network::DeepNet;
use crate::oracles::{hard_margin_svm, MarginSolution, OracleError};
use crate::spectra::{classify, hessian, hyperbolicity_sweep, SpectraError, SweepSettings, DEFAULT_ZERO_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_PREDICATE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

pub const SEED_ENV: &str = "GRADFLOW_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {reason}")]
    ConfigInvalid { path: String, reason: String },
    #[error("invalid {SEED_ENV}: {0:?}")]
    SeedEnv(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error("predicates failed: {}", .0.join(", "))]
    Predicates(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Predicates(_) => EXIT_PREDICATE,
            _ => EXIT_INVALID,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "gradflow", version, about = "Gradient-flow dynamics laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a gradient flow and write its trace.
    Flow(CommonArgs),
    /// Classify the loss-Hessian spectrum, optionally over a λ sweep.
    Spectrum(CommonArgs),
    /// Solve the hard-margin SVM and print the solution as JSON.
    Svm(CommonArgs),
    /// Perturbation study (`"scenario": "sine"` or `"deepnet"`).
    Perturb(CommonArgs),
    /// Weight-growth asymptotics.
    Growth(CommonArgs),
    /// Minimum-norm degree sweep.
    Sweep(CommonArgs),
    /// Convergence-direction study.
    Direction(CommonArgs),
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// JSON config file.
    #[arg(short, long)]
    pub config: PathBuf,
    #[arg(short, long, default_value = ".")]
    pub output_dir: PathBuf,
    /// Overrides the config seed; falls back to `GRADFLOW_SEED`.
    #[arg(short, long)]
    pub seed: Option<u64>,
    /// Repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[arg(short, long, conflicts_with = "verbose")]
    pub quiet: bool,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Flow(_) => "flow",
            Command::Spectrum(_) => "spectrum",
            Command::Svm(_) => "svm",
            Command::Perturb(_) => "perturb",
            Command::Growth(_) => "growth",
            Command::Sweep(_) => "sweep",
            Command::Direction(_) => "direction",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Flow(a)
            | Command::Spectrum(a)
            | Command::Svm(a)
            | Command::Perturb(a)
            | Command::Growth(a)
            | Command::Sweep(a)
            | Command::Direction(a) => a,
        }
    }
}

/// `flow` config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub network: DeepNet,
    pub data: Dataset,
    pub loss: LossKind,
    pub step: f64,
    pub stop: StopRule,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub clock: Clock,
    /// Per-layer `λ_k`; zero when absent.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub sample_every: u64,
    #[serde(default)]
    pub seed: u64,
}

/// `spectrum` config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub network: DeepNet,
    pub data: Dataset,
    pub loss: LossKind,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default = "default_zero_tol")]
    pub zero_tol: f64,
    /// Uniform `λ` values to flow to equilibrium and classify.
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    #[serde(default)]
    pub sweep_settings: Option<SweepSettings>,
    #[serde(default)]
    pub seed: u64,
}

fn default_zero_tol() -> f64 {
    DEFAULT_ZERO_TOL
}

/// `svm` config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmConfig {
    pub data: Dataset,
    #[serde(default)]
    pub seed: u64,
}

/// `perturb` config, tagged by `scenario`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum PerturbConfig {
    Sine(SineConfig),
    Deepnet(DeepNetConfig),
}

/// Lower-case hex SHA-256 of the config bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::SeedEnv(v)),
        Err(_) => Ok(None),
    }
}

fn parse_config<T: for<'de> Deserialize<'de>>(path: &Path, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| CliError::ConfigInvalid {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn stamp_json<T: Serialize>(value: &T, prov: &Provenance) -> String {
    let mut v = serde_json::to_value(value).expect("output serialization cannot fail");
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("config_sha256".into(), prov.config_sha256.clone().into());
        map.insert("seed".into(), prov.seed.into());
    }
    let mut s = serde_json::to_string_pretty(&v).expect("output serialization cannot fail");
    s.push('\n');
    s
}

struct Output<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Output<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let err = |path: &Path, source| CliError::Write {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(self.dir).map_err(|e| err(self.dir, e))?;
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| err(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }
}

fn scenario_outcome(report: &ScenarioReport, dir: &Path, prov: &Provenance) -> Result<Vec<String>> {
    let written = report.write(dir, prov)?;
    let failed: Vec<String> = report
        .predicates
        .iter()
        .filter(|p| !p.passed)
        .map(|p| format!("{} ({})", p.name, p.detail))
        .collect();
    if failed.is_empty() {
        Ok(written)
    } else {
        Err(CliError::Predicates(failed))
    }
}

fn run_flow_command(cfg: FlowConfig, out: &mut Output, prov: &Provenance) -> Result<()> {
    let depth = cfg.network.depth();
    let state = FlowState::with_settings(
        cfg.network,
        cfg.step,
        cfg.lambdas.unwrap_or_else(|| vec![0.0; depth]),
        cfg.seed,
        cfg.integrator,
        cfg.clock,
    )?;
    let run = run_flow(state, cfg.loss, &cfg.data, cfg.stop, &RunOptions::every(cfg.sample_every))?;
    out.write("flow_trace.csv", &run.trace.to_csv(Some(&prov.comment())))?;
    #[derive(Serialize)]
    struct Final<'a> {
        steps: u64,
        time: f64,
        log_time: f64,
        loss: f64,
        converged: bool,
        stop_reason: &'a str,
        network: &'a DeepNet,
    }
    let summary = Final {
        steps: run.steps,
        time: run.state.time,
        log_time: run.state.log_time,
        loss: loss(cfg.loss, &run.state.net, &cfg.data)?,
        converged: run.trace.converged,
        stop_reason: &run.trace.stop_reason,
        network: &run.state.net,
    };
    out.write("flow_final.json", &stamp_json(&summary, prov))
}

fn run_spectrum_command(cfg: SpectrumConfig, out: &mut Output, prov: &Provenance) -> Result<()> {
    let depth = cfg.network.depth();
    let lambdas = cfg.lambdas.clone().unwrap_or_else(|| vec![0.0; depth]);
    let h = hessian(cfg.loss, &cfg.network, &cfg.data, &lambdas)?;
    let report = classify(&h, cfg.zero_tol)?;
    out.write("spectrum.csv", &report.to_csv(Some(&prov.comment())))?;
    out.write("spectrum_report.json", &stamp_json(&report, prov))?;
    let Some(sweep) = &cfg.sweep else {
        return Ok(());
    };
    let settings = cfg.sweep_settings.unwrap_or(SweepSettings {
        zero_tol: cfg.zero_tol,
        ..SweepSettings::default()
    });
    let entries = hyperbolicity_sweep(cfg.loss, &cfg.network, &cfg.data, sweep, &settings)?;
    let mut csv = format!("# {}\nlambda,n_stable,n_unstable,n_zero,min_eigenvalue,field_norm,meets_prediction\n", prov.comment());
    let mut failed = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let [s, u, z] = e.report.counts();
        let _ = writeln!(
            csv,
            "{},{s},{u},{z},{},{},{}",
            csv_float(e.lambda),
            csv_float(e.report.min_eigenvalue()),
            csv_float(e.field_norm),
            e.meets_prediction()
        );
        out.write(&format!("spectrum_sweep_{i:02}.csv"), &e.report.to_csv(Some(&prov.comment())))?;
        if !e.meets_prediction() {
            failed.push(format!("lambda = {}", e.lambda));
        }
    }
    out.write("spectrum_sweep.csv", &csv)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Predicates(failed))
    }
}

fn run_svm_command(cfg: SvmConfig, out: &mut Output, prov: &Provenance, stdout: &mut dyn Write) -> Result<()> {
    let sol: MarginSolution = hard_margin_svm(&cfg.data)?;
    let json = stamp_json(&sol, prov);
    out.write("svm.json", &json)?;
    let _ = stdout.write_all(json.as_bytes());
    Ok(())
}

/// Runs the parsed command; returns the names of written files.
pub fn execute(command: &Command, stdout: &mut dyn Write) -> Result<Vec<String>> {
    let args = command.args();
    let bytes = std::fs::read(&args.config).map_err(|source| CliError::ConfigRead {
        path: args.config.display().to_string(),
        source,
    })?;
    let seed_override = match args.seed {
        Some(s) => Some(s),
        None => env_seed()?,
    };
    let hash = config_hash(&bytes);
    let path = args.config.as_path();
    let dir = args.output_dir.as_path();
    let mut out = Output { dir, written: Vec::new() };
    macro_rules! seeded {
        ($cfg:expr) => {{
            let mut cfg = $cfg;
            if let Some(s) = seed_override {
                cfg.seed = s;
            }
            let prov = Provenance {
                config_sha256: hash.clone(),
                seed: cfg.seed,
            };
            (cfg, prov)
        }};
    }
    match command {
        Command::Flow(_) => {
            let (cfg, prov) = seeded!(parse_config::<FlowConfig>(path, &bytes)?);
            run_flow_command(cfg, &mut out, &prov)?;
        }
        Command::Spectrum(_) => {
            let (cfg, prov) = seeded!(parse_config::<SpectrumConfig>(path, &bytes)?);
            run_spectrum_command(cfg, &mut out, &prov)?;
        }
        Command::Svm(_) => {
            let (cfg, prov) = seeded!(parse_config::<SvmConfig>(path, &bytes)?);
            run_svm_command(cfg, &mut out, &prov, stdout)?;
        }
        Command::Perturb(_) => match parse_config::<PerturbConfig>(path, &bytes)? {
            PerturbConfig::Sine(c) => {
                let (cfg, prov) = seeded!(c);
                return scenario_outcome(&sine_polynomial_perturbation(&cfg)?, dir, &prov);
            }
            PerturbConfig::Deepnet(c) => {
                let (cfg, prov) = seeded!(c);
                return scenario_outcome(&toy_deepnet_perturbation(&cfg)?, dir, &prov);
            }
        },
        Command::Growth(_) => {
            let (cfg, prov) = seeded!(parse_config::<GrowthConfig>(path, &bytes)?);
            return scenario_outcome(&growth_asymptotics(&cfg)?, dir, &prov);
        }
        Command::Sweep(_) => {
            let (cfg, prov) = seeded!(parse_config::<SweepConfig>(path, &bytes)?);
            return scenario_outcome(&min_norm_degree_sweep(&cfg)?, dir, &prov);
        }
        Command::Direction(_) => {
            let (cfg, prov) = seeded!(parse_config::<DirectionConfig>(path, &bytes)?);
            return scenario_outcome(&convergence_direction_study(&cfg)?, dir, &prov);
        }
    }
    Ok(out.written)
}

/// Parses `argv` (program name first), runs it and returns the exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    let args = cli.command.args().clone();
    match execute(&cli.command, stdout) {
        Ok(written) => {
            if args.verbose > 0 {
                for f in written {
                    let _ = writeln!(stderr, "wrote {}", args.output_dir.join(f).display());
                }
            }
            EXIT_OK
        }
        Err(e) => {
            if !args.quiet || e.exit_code() != EXIT_PREDICATE {
                let _ = writeln!(stderr, "gradflow {}: {e}", cli.command.name());
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            config_hash(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn perturb_config_is_tagged() {
        let c: PerturbConfig = serde_json::from_str(r#"{"scenario": "sine", "repetitions": 3}"#).unwrap();
        assert!(matches!(c, PerturbConfig::Sine(SineConfig { repetitions: 3, .. })));
        let bad = serde_json::from_str::<PerturbConfig>(r#"{"scenario": "sine", "repetitons": 3}"#);
        assert!(bad.unwrap_err().to_string().contains("repetitons"));
    }

    #[test]
    fn unknown_subcommand_is_usage() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["gradflow", "frobnicate"], &mut o, &mut e), EXIT_USAGE);
    }
}
