use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use sllbar::io::{parse_config, RunConfig};

const BASE: &str = r#"
[grid]
lengths = [3.141592653589793]
modes = [8]

[params]
beta1 = 1.0
beta2 = 0.1
beta3 = 1.0
beta4 = 1.0
beta5 = 0.1

[noise]
family = "eigenmodes"

[[noise.modes]]
index = [1]
sigma = 0.1
direction = [0.0, 0.0, 1.0]

[solver]
dt = 0.01
t_end = 0.5
record_every = 5
seed = 3

[initial]
type = "modes"
modes = [{ index = [0], value = [0.1, 0.0, 0.0] }, { index = [2], value = [0.0, 0.05, 0.0] }]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sllbar"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> i32 {
    let status = bin().args(args).output().unwrap();
    status.status.code().unwrap()
}

fn run_in(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--output-dir", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    run(&args)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn shipped_example_config_is_valid() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/example.toml");
    let cfg = parse_config(&path).unwrap();
    assert_eq!(cfg.noise.modes.len(), 2);
    assert_eq!(cfg.experiment.observables.as_ref().unwrap().len(), 3);
}

#[test]
fn check_writes_identity_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BASE);
    let out = dir.path().join("out");
    assert_eq!(run_in("check", &cfg, &out, &[]), 0);
    let table = fs::read_to_string(out.join("identities.csv")).unwrap();
    assert!(table.starts_with("identity,sample,lhs,rhs,residual"));
    assert_eq!(table.lines().count(), 1 + 3 * 20);
    let report = json(&out.join("report.json"));
    let c_h = report["results"]["noise_condition"]["c_h"].as_f64().unwrap();
    assert!((c_h - 0.08).abs() < 1e-12);
}

#[test]
fn simulate_records_blowup_as_data() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("seed = 3", "seed = 3\nblowup_k = 0.05");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    assert_eq!(run_in("simulate", &cfg, &out, &[]), 0);
    let report = json(&out.join("report.json"));
    assert_eq!(report["results"]["trajectory"]["stop_reason"], "blowup_k");
    assert_eq!(report["version"], format!("v{}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn converge_blowup_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("seed = 3", "seed = 3\nblowup_k = 0.05")
        + "\n[experiment]\ndt_halvings = 1\nrefinement_levels = [4, 8]\n";
    let cfg = write_config(dir.path(), "c.toml", &text);
    assert_eq!(run_in("converge", &cfg, &dir.path().join("out"), &[]), 3);
}

#[test]
fn converge_reports_studies() {
    let dir = tempfile::tempdir().unwrap();
    // explicit Heun companion runs need dt below the biharmonic stability limit
    let text = BASE.replace("dt = 0.01", "dt = 0.004").replace("record_every = 5", "record_every = 25")
        + "\n[experiment]\ndt_halvings = 2\nrefinement_levels = [4, 8, 16]\n";
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    assert_eq!(run_in("converge", &cfg, &out, &[]), 0);
    let r = json(&out.join("report.json"));
    assert_eq!(r["results"]["dt_halving"].as_array().unwrap().len(), 3);
    assert_eq!(r["results"]["refinement"].as_array().unwrap().len(), 2);
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&[]), 2);
    assert_eq!(run(&["--help"]), 0);
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", &BASE.replace("beta2 = 0.1", "beta2 = -1.0"));
    let out = dir.path().join("out");
    let output = bin()
        .args(["simulate", "--config", bad.to_str().unwrap(), "--output-dir", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("positive constants"), "{err}");
    let unknown = write_config(dir.path(), "u.toml", &BASE.replace("[solver]", "[solver]\nspeed = 2"));
    assert_eq!(run_in("simulate", &unknown, &out, &[]), 2);
    let missing = dir.path().join("nope.toml");
    assert_eq!(run_in("simulate", &missing, &out, &[]), 4);
}

#[test]
fn output_dir_not_overwritten_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BASE);
    let out = dir.path().join("out");
    assert_eq!(run_in("simulate", &cfg, &out, &[]), 0);
    assert_eq!(run_in("simulate", &cfg, &out, &[]), 4);
    assert_eq!(run_in("simulate", &cfg, &out, &["--force"]), 0);
}

#[test]
fn simulate_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BASE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run_in("simulate", &cfg, &a, &[]), 0);
    assert_eq!(run_in("simulate", &cfg, &b, &[]), 0);
    for f in ["series.csv", "report.json", "final.sllb"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    assert_eq!(run_in("simulate", &cfg, &c, &["--seed", "4"]), 0);
    assert_ne!(fs::read(a.join("series.csv")).unwrap(), fs::read(c.join("series.csv")).unwrap());
    assert_eq!(json(&c.join("report.json"))["seed"], 4);
}

#[test]
fn ensemble_independent_of_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{BASE}\n[experiment]\npaths = 6\n"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run_in("ensemble", &cfg, &a, &["--threads", "1"]), 0);
    assert_eq!(run_in("ensemble", &cfg, &b, &["--threads", "4"]), 0);
    for f in ["mean.csv", "report.json", "paths/path_0005.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(run_in("ensemble", &cfg, &dir.path().join("c"), &["--threads", "0"]), 2);
}

#[test]
fn invariant_reports_windows_and_tightness() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{BASE}\n[experiment]\npaths = 4\ntightness_radii = [0.0, 0.05, 0.1, 1.0]\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    assert_eq!(run_in("invariant", &cfg, &out, &[]), 0);
    let r = json(&out.join("report.json"));
    let obs = r["results"]["observables"].as_array().unwrap();
    assert_eq!(obs.len(), 3);
    assert_eq!(obs[0]["windows"].as_array().unwrap().len(), 2);
    assert_eq!(r["results"]["tightness"][0]["value"], 1.0);
    assert_eq!(r["results"]["tightness_monotone"], true);
}

#[test]
fn report_echo_matches_parsed_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "c.toml", BASE);
    let out = dir.path().join("out");
    assert_eq!(run_in("simulate", &cfg_path, &out, &[]), 0);
    let echoed: RunConfig = serde_json::from_value(json(&out.join("report.json"))["config"].clone()).unwrap();
    assert_eq!(echoed, parse_config(&cfg_path).unwrap());
}

#[test]
fn snapshot_restart_and_short_csv() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("t_end = 0.5\nrecord_every = 5", "t_end = 0.02\nrecord_every = 1");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let first = dir.path().join("first");
    assert_eq!(run_in("simulate", &cfg, &first, &[]), 0);
    assert_eq!(fs::read_to_string(first.join("series.csv")).unwrap().lines().count(), 4);

    let start = text.find("[initial]").unwrap();
    let restart = format!("{}[initial]\ntype = \"snapshot\"\npath = \"first/final.sllb\"\n", &text[..start]);
    let cfg2 = write_config(dir.path(), "restart.toml", &restart);
    let second = dir.path().join("second");
    assert_eq!(run_in("simulate", &cfg2, &second, &[]), 0);
    let a = sllbar::io::output::read_norm_csv(&first.join("series.csv")).unwrap();
    let b = sllbar::io::output::read_norm_csv(&second.join("series.csv")).unwrap();
    assert_eq!(a.last().unwrap().l2, b[0].l2);
}
