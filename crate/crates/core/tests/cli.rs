//! End-to-end runs of the `rigidity` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rigidity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rigidity")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("experiment.cfg");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_echoes_resolved_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "system.kind = rotation\norbit.T = 5000\norbit.seed = 3\n");
    let o = rigidity(&["verify", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("OK\n"));
    assert!(out.contains("system.kind = rotation"));
    assert!(out.contains("orbit.T = 5000"));
    assert!(out.contains("estimated runtime"));
}

#[test]
fn verify_names_unknown_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "orbit.T = 5000\norbit.seed = 3\nsystem.kind = solenoid\n");
    let o = rigidity(&["verify", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("system.kind"), "{err}");
}

#[test]
fn verify_states_orbit_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "system.kind = rotation\norbit.T = 999\norbit.seed = 3\n");
    let o = rigidity(&["verify", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("1000"), "{}", stderr(&o));
}

#[test]
fn malformed_config_is_line_anchored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "# header\nsystem.kind = rotation\norbit.T five thousand\n");
    let o = rigidity(&["run", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_config_exits_with_error() {
    let o = rigidity(&["run", "/nonexistent/experiment.cfg"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn rational_rotation_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "system.kind = rotation\nsystem.alpha = 1/3\norbit.T = 300000\norbit.seed = 1\nchart.cells = 1\n",
    );
    let o = rigidity(&["run", &cfg, "--out", out.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let verdict = json(&out.join("verdict.json"));
    assert_eq!(verdict["verdict"], "Atomic");
    let atoms = verdict["atoms"].as_array().unwrap();
    assert_eq!(atoms.len(), 3);
    for a in atoms {
        assert!((a["mass"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-6);
    }
    let report = json(&out.join("report.json"));
    assert_eq!(report["config_hash"], verdict["config_hash"]);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["config"]["system.alpha"], "1/3");
    assert!(report["plaques"][0]["ks_uniform"].is_number());

    let conditionals = fs::read_to_string(out.join("conditionals.csv")).unwrap();
    assert!(conditionals.starts_with("plaque_id,fiber_coord,weight\n"));
    let ladder = fs::read_to_string(out.join("ladder.csv")).unwrap();
    assert!(ladder.starts_with("anchor_id,eps,mu_ball,lambda_ball,ratio\n"));
    assert!(fs::read_to_string(out.join("summary.txt")).unwrap().contains("Atomic"));
}

#[test]
fn strict_mode_flags_inconclusive_runs() {
    let dir = tempfile::tempdir().unwrap();
    // No plaque reaches the sample minimum, so nothing can be decided.
    let text = "system.kind = rotation\norbit.T = 2000\norbit.seed = 1\nclassifier.min_count = 5000\n";
    let cfg = write_config(dir.path(), text);
    let out = dir.path().join("out");
    let o = rigidity(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&out.join("verdict.json"))["verdict"], "Inconclusive");
    let o = rigidity(&["run", &cfg, "--out", out.to_str().unwrap(), "--strict"]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(dir.path(), &format!("{text}output.strict = true\n"));
    let o = rigidity(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn packing_mode_certifies_the_plane() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "mode = packing\npacking.n = 2\npacking.r0 = 1\n");
    let o = rigidity(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cert = &json(&out.join("certificate.json"))["certificate"];
    assert_eq!(cert["verdict"], "certified");
    assert!(cert["c_hat"].as_f64().unwrap() <= 8.0);
    assert!(cert["p_hat"].as_f64().unwrap() <= 0.55);
    let centers = fs::read_to_string(out.join("packing_centers.csv")).unwrap();
    assert!(centers.starts_with("x0,x1\n"));
    assert!(centers.lines().count() > 1000);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "system.kind = product_doubling_rotation\norbit.T = 200000\norbit.seed = 12\nchart.cells = 4\nchart.cells2 = 2\nladder.k_max = 6\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(rigidity(&["run", &cfg, "--out", a.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(rigidity(&["run", &cfg, "--out", b.to_str().unwrap()]).status.code(), Some(0));
    for name in ["verdict.json", "conditionals.csv", "ladder.csv", "report.json", "summary.txt", "overlap.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
}
