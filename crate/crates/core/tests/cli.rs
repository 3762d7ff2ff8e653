use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn gradflow(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gradflow"));
    cmd.args(args).env_remove("GRADFLOW_SEED");
    if let Some(s) = env_seed {
        cmd.env("GRADFLOW_SEED", s);
    }
    cmd.output().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn svm_prints_the_antipodal_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("two_points.json");
    let out = gradflow(&["svm", "--config", cfg.to_str().unwrap(), "-o", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["w_raw"], serde_json::json!([1.0, 0.0]));
    assert_eq!(v["margin"], serde_json::json!(1.0));
    let hash = v["config_sha256"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert_eq!(read(dir.path(), "svm.json").as_bytes(), &out.stdout[..]);
}

#[test]
fn growth_writes_rho_and_product_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("k2.json");
    let out = gradflow(&["growth", "-c", cfg.to_str().unwrap(), "-o", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "growth_plot.csv");
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_sha256="));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header, ["t", "log_t", "rho_k2", "product_k2"]);
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "growth_report.json")).unwrap();
    assert_eq!(report["passed"], serde_json::json!(true));
}

#[test]
fn missing_config_names_the_path() {
    let out = gradflow(&["sweep", "--config", "no/such/config.json"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/config.json"));
}

#[test]
fn invalid_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"ks": [2], "points_per_decade": 0}"#).unwrap();
    let out = gradflow(&["growth", "-c", cfg.to_str().unwrap(), "-o", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("points_per_decade"));
    std::fs::write(&cfg, r#"{"kz": [2]}"#).unwrap();
    let out = gradflow(&["growth", "-c", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kz"));
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(gradflow(&["frobnicate"], None).status.code(), Some(64));
    assert_eq!(gradflow(&["svm"], None).status.code(), Some(64));
    assert_eq!(gradflow(&["--help"], None).status.code(), Some(0));
}

#[test]
fn failed_predicate_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.json");
    // far too short a horizon for the fitted slope to approach 1
    std::fs::write(&cfg, r#"{"ks": [1], "t_max": 100.0, "check_time": 50.0, "fit_range": [10.0, 100.0], "rho0": 3.0}"#).unwrap();
    let out = gradflow(&["growth", "-c", cfg.to_str().unwrap(), "-o", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("growth_report.json").exists());
}

#[test]
fn reruns_are_byte_identical_and_seed_falls_back_to_env() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let cfg = a.path().join("direction.json");
    std::fs::write(&cfg, r#"{"datasets": 2, "inits": 2}"#).unwrap();
    let cfg = cfg.to_str().unwrap();
    for (dir, seed) in [(&a, None), (&b, None), (&c, Some("5"))] {
        let out = gradflow(&["direction", "-c", cfg, "-o", dir.path().to_str().unwrap()], seed);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let name = "direction_plot.csv";
    assert_eq!(read(a.path(), name), read(b.path(), name));
    assert_eq!(read(a.path(), "direction_report.json"), read(b.path(), "direction_report.json"));
    assert!(read(c.path(), name).starts_with("# config_sha256="));
    assert!(read(c.path(), name).lines().next().unwrap().ends_with("seed=5"));
    assert_ne!(read(a.path(), name), read(c.path(), name));
    let flag = gradflow(&["direction", "-c", cfg, "-o", c.path().to_str().unwrap(), "--seed", "0"], Some("5"));
    assert_eq!(flag.status.code(), Some(0));
    assert_eq!(read(a.path(), name), read(c.path(), name));
}

#[test]
fn flow_and_spectrum_configs_run() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, cfg, file) in [("flow", "flow_square.json", "flow_trace.csv"), ("spectrum", "spectrum.json", "spectrum_sweep.csv")] {
        let cfg = configs().join(cfg);
        let out = gradflow(&[cmd, "-c", cfg.to_str().unwrap(), "-o", dir.path().to_str().unwrap()], None);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(read(dir.path(), file).starts_with("# config_sha256="));
    }
}
