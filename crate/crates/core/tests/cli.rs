use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use volterra_games::cli::{load_scenario, run, scenario_from_str, ConfigError, Status};

const BIN: &str = env!("CARGO_BIN_EXE_volterra-games");

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/scenarios")
}

const MINIMAL: &str = r#"
[grid]
cells = 8
horizon = 1.0

[kernel]
type = "ode"

[game]
type = "linear_pursuit"
x0 = [1.0]
p_grid = [-1.0, 0.0, 1.0]
q_grid = [-0.5, 0.0, 0.5]
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn minimal_scenario_loads_with_defaults() {
    let sc = scenario_from_str(MINIMAL, Path::new(".")).unwrap();
    assert_eq!(sc.file.seed, 0);
    assert_eq!(sc.file.solver.picard_tol, 1e-12);
    assert_eq!(sc.file.solver.picard_max_iter, 100);
    assert!(sc.file.experiments.is_empty());
    assert_eq!(sc.game.system.grid().cells(), 8);
}

#[test]
fn unknown_kernel_names_the_choices() {
    let text = MINIMAL.replace("type = \"ode\"", "type = \"gaussian\"");
    let msg = scenario_from_str(&text, Path::new(".")).unwrap_err().to_string();
    for k in ["ode", "fractional", "counterexample", "custom"] {
        assert!(msg.contains(k), "{msg}");
    }
}

#[test]
fn missing_control_grid_is_an_error() {
    let text = MINIMAL.replace("q_grid = [-0.5, 0.0, 0.5]\n", "");
    let err = scenario_from_str(&text, Path::new(".")).unwrap_err();
    assert!(matches!(err, ConfigError::Parse { .. }));
    assert!(err.to_string().contains("q_grid"));
}

#[test]
fn validation_errors_name_the_field() {
    let text = MINIMAL.replace("x0 = [1.0]", "x0 = [1.0, 2.0]");
    match scenario_from_str(&text, Path::new(".")).unwrap_err() {
        ConfigError::Field { field, .. } => assert_eq!(field, "game.x0"),
        e => panic!("{e}"),
    }
    let text = format!("{MINIMAL}\n[[experiments]]\nkind = \"value_gap\"\nsteps = [8]\n");
    match scenario_from_str(&text, Path::new(".")).unwrap_err() {
        ConfigError::Field { field, .. } => assert_eq!(field, "experiments[0].steps"),
        e => panic!("{e}"),
    }
    let text = MINIMAL.replace("type = \"ode\"", "type = \"fractional\"\norders = [1.5]");
    match scenario_from_str(&text, Path::new(".")).unwrap_err() {
        ConfigError::Field { field, .. } => assert!(field.starts_with("kernel"), "{field}"),
        e => panic!("{e}"),
    }
}

#[test]
fn empty_experiment_list_succeeds_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario_from_str(MINIMAL, Path::new(".")).unwrap();
    let out = dir.path().join("out");
    let report = run(&sc, Some(&out)).unwrap();
    assert_eq!(report.exit_code(), 0);
    assert!(report.outcomes.is_empty());
    assert!(!out.exists());
}

#[test]
fn solve_only_writes_one_motion_csv() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{MINIMAL}\n[[experiments]]\nkind = \"solve\"\nu = 0\nv = 2\n");
    let path = write(dir.path(), "solve.toml", &text);
    let sc = load_scenario(&path).unwrap();
    let out = dir.path().join("out");
    let report = run(&sc, Some(&out)).unwrap();
    assert_eq!(report.outcomes[0].status, Status::Pass);
    let csvs: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    assert_eq!(csvs.len(), 1);
    let text = fs::read_to_string(&csvs[0]).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("# scenario_hash={}", sc.hash));
    assert_eq!(lines.next().unwrap(), "tau,x_1,u_1,v_1,ell_1");
    assert_eq!(lines.count(), 9);
    // x = 1 - t/2 under u = -1, v = 1/2
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("1,0.5,"), "{last}");
}

#[test]
fn json_outputs_carry_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{MINIMAL}\n[[experiments]]\nkind = \"nondegeneracy\"\n");
    let path = write(dir.path(), "nd.toml", &text);
    let sc = load_scenario(&path).unwrap();
    let report = run(&sc, Some(&dir.path().join("out"))).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report.outcomes[0].files[0]).unwrap()).unwrap();
    assert_eq!(doc["scenario_hash"], sc.hash.as_str());
    assert_eq!(doc["result"]["verdict"], "satisfied");
}

#[test]
fn validate_exit_codes() {
    let ok = Command::new(BIN).arg("validate").arg(scenarios().join("ode_pursuit.toml")).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", &MINIMAL.replace("cells = 8", "cells = 0"));
    let out = Command::new(BIN).arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.cells"));
    let missing = Command::new(BIN).arg("validate").arg(dir.path().join("nope.toml")).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let usage = Command::new(BIN).arg("launch").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn every_shipped_scenario_validates() {
    for entry in fs::read_dir(scenarios()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            load_scenario(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        }
    }
}

#[test]
fn failed_assertion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{MINIMAL}\n[[experiments]]\nkind = \"zeta_experiment\"\nsteps = [4]\nzeta = 0.0\nepsilons = [1.0]\ntie_break = \"lowest_index\"\n");
    let path = write(dir.path(), "z.toml", &text);
    let out = Command::new(BIN)
        .args(["run", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("ode_pursuit.toml");
    for (sub, jobs) in [("a", "1"), ("b", "3")] {
        let out = Command::new(BIN)
            .args(["run", scenario.to_str().unwrap(), "--jobs", jobs, "--out"])
            .arg(dir.path().join(sub))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let mut names: Vec<_> = fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 9);
    for n in names {
        let a = fs::read(dir.path().join("a").join(&n)).unwrap();
        let b = fs::read(dir.path().join("b").join(&n)).unwrap();
        assert_eq!(a, b, "{n:?}");
    }
}
