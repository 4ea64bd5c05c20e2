use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use crossdiff::io::read_snapshot_csv;

const CONFIG: &str = r#"
experiment = "custom"
description = "small cli run"

[model]
type = "skt"
a0 = [0.05, 0.05]
a = [[2.5e-5, 1.025], [0.075, 2.5e-5]]
b0 = [59.7, 49.75]
b = [[24.875, 19.9], [19.9, 19.9]]

[mesh]
kind = "interval"
a = -3.141592653589793
b = 3.141592653589793
cells = 40

[initial]
species = [
  { terms = [{ kind = "constant", value = 2.0 }, { kind = "bump", center = [0.25], amplitude = 0.31 }] },
  { terms = [{ kind = "constant", value = 0.5 }] },
]

[solver]
dt_init = 1e-4
dt_max = 1e-3

[time]
t_end = 0.01
snapshots = [0.005]
"#;

fn crossdiff(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_crossdiff"));
    cmd.args(args).env("RUST_LOG", "warn");
    match out {
        Some(o) => cmd.env("CROSSDIFF_OUTPUT_DIR", o),
        None => cmd.env_remove("CROSSDIFF_OUTPUT_DIR"),
    };
    cmd.output().unwrap()
}

#[test]
fn presets_list_names_all_four() {
    let out = crossdiff(&["presets", "list"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["testcase1", "testcase2", "testcase3", "testcase4"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn validate_reports_model_constants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = crossdiff(&["validate", cfg.to_str().unwrap()], None);
    assert!(out.status.success());
    let report: toml::Table = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(report["mesh"]["cells"].as_integer(), Some(40));
    assert_eq!(report["model"]["structure"].as_str(), Some("detailed_balance"));
    assert!(report["hypotheses"]["violations"].as_array().unwrap().is_empty());
}

#[test]
fn validate_rejects_bad_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, CONFIG.replace("a0 = [0.05, 0.05]", "a0 = [-0.05, 0.05]")).unwrap();
    let out = crossdiff(&["validate", cfg.to_str().unwrap()], None);
    assert!(!out.status.success());
}

#[test]
fn run_is_self_describing_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let (first, second) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&first, &second] {
        let o = crossdiff(&["run", cfg.to_str().unwrap()], Some(out));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["steps.csv", "snapshots/index.csv", "snapshots/snapshot_0001.csv", "snapshots/snapshot_0002.csv", "masses.dat"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
    let meta: toml::Table = toml::from_str(&fs::read_to_string(first.join("metadata.toml")).unwrap()).unwrap();
    assert!(meta["mesh"]["zeta"].as_float().unwrap() > 0.0);
    assert!(meta["time_step"]["dt_below_inverse_c_f"].as_bool().unwrap());

    // the stored config reproduces the run
    let replay = dir.path().join("c");
    let o = crossdiff(&["run", first.join("config.toml").to_str().unwrap()], Some(&replay));
    assert!(o.status.success());
    assert_eq!(fs::read(first.join("steps.csv")).unwrap(), fs::read(replay.join("steps.csv")).unwrap());

    let (centers, state) = read_snapshot_csv(&first.join("snapshots/snapshot_0002.csv")).unwrap();
    assert_eq!(centers.len(), 40);
    assert!(state.values().iter().all(|&v| v > 0.0));
    let steps = fs::read_to_string(first.join("steps.csv")).unwrap();
    let last = steps.lines().last().unwrap();
    assert!(last.split(',').nth(1).unwrap().parse::<f64>().unwrap() == 0.01);
}

#[test]
fn solver_failure_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let text = CONFIG.replace(
        "dt_init = 1e-4\ndt_max = 1e-3",
        "adaptive = false\ndt_init = 1e-3\ndt_min = 1e-3\ndt_max = 1e-3\nnewton_max_iter = 1\nnewton_tol = 1e-14",
    );
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let o = crossdiff(&["run", cfg.to_str().unwrap()], Some(&out));
    assert_eq!(o.status.code(), Some(1));
    let failure: toml::Table = toml::from_str(&fs::read_to_string(out.join("failure.toml")).unwrap()).unwrap();
    assert!(failure["error"].as_str().unwrap().contains("Newton"));
}

#[test]
fn unknown_config_is_a_usage_error() {
    let o = crossdiff(&["run", "no-such-preset"], None);
    assert_eq!(o.status.code(), Some(2));
}
