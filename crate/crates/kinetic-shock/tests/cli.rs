use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_kinetic-shock");

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .env_remove("KINETIC_SHOCK_CACHE")
        .output()
        .expect("binary runs")
}

/// Synthetic config with one line substituted.
fn variant(dir: &Path, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(config("synthetic.toml")).unwrap();
    assert!(text.contains(from), "{from}");
    let path = dir.join("variant.toml");
    fs::write(&path, text.replace(from, to)).unwrap();
    path
}

#[test]
fn validate_succeeds_on_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["validate"], &config("synthetic.toml"), dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("validate.json")).unwrap())
            .unwrap();
    assert!(v.is_object());
}

#[test]
fn zero_amplitude_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(
        dir.path(),
        "epsilons = [0.1, 0.05, 0.025]",
        "epsilons = [0.0]",
    );
    let out = run(&["solve"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
}

#[test]
fn bad_flags_and_files_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    assert_eq!(
        run(&["validate"], &missing, dir.path()).status.code(),
        Some(2)
    );
    let out = Command::new(BIN)
        .args(["validate", "--weight-s", "1.0", "--config"])
        .arg(config("synthetic.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn uncoupled_model_violates_assumptions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("uncoupled.toml");
    fs::write(
        &cfg,
        r#"
[backend]
kind = "synthetic"
model = "custom"

[synthetic]
label = "uncoupled"
n_macro = 1
n_micro = 1
flux = [-0.5, 0.0, 0.0, 0.3]
linear = [0.0, 0.0, 0.0, -1.0]
bilinear = [0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0]
reference = [0.0, 0.0]
base = [0.5]

[shock]
epsilons = [0.1]
"#,
    )
    .unwrap();
    let out = run(&["validate"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("genuine_coupling"));
}

#[test]
fn iteration_budget_exhaustion_is_a_solver_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), "max_iterations = 30", "max_iterations = 1");
    assert_eq!(run(&["solve"], &cfg, dir.path()).status.code(), Some(4));
}

#[test]
fn underresolved_sweep_fails_acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), "nodes = 601", "nodes = 21");
    let out = run(&["sweep"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(5));
    // diagnostics are still written before the failure is reported
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn solve_is_reproducible_and_execution_independent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("synthetic.toml");
    assert!(run(&["solve", "--seed", "7"], &cfg, a.path())
        .status
        .success());
    let out = Command::new(BIN)
        .args(["solve", "--seed", "7", "--sequential", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(b.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in ["profile_eps0.05.csv", "theorem.json"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sweep"], &config("synthetic.toml"), dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let orders = fs::read_to_string(dir.path().join("orders.csv")).unwrap();
    assert_eq!(orders.lines().count(), 4);
    let report = Command::new(BIN)
        .arg("report")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        report.status.success(),
        "{}",
        String::from_utf8_lossy(&report.stderr)
    );
    assert!(dir.path().join("report.md").exists() && dir.path().join("report.csv").exists());
}

#[test]
fn tensor_cache_is_written_and_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let ce = |out: &str| {
        Command::new(BIN)
            .args(["ce-reduce", "--rank", "6", "--config"])
            .arg(config("boltzmann.toml"))
            .arg("--out")
            .arg(dir.path().join(out))
            .env("KINETIC_SHOCK_CACHE", &cache)
            .output()
            .unwrap()
    };
    let first = ce("a");
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let file = cache.join("collision-tensor-d3.json");
    let stamp = fs::metadata(&file).unwrap().modified().unwrap();
    assert!(ce("b").status.success());
    assert_eq!(fs::metadata(&file).unwrap().modified().unwrap(), stamp);
    assert_eq!(
        fs::read(dir.path().join("a/ce_reduce.json")).unwrap(),
        fs::read(dir.path().join("b/ce_reduce.json")).unwrap()
    );
}
