mod common;

use std::path::Path;
use std::process::{Command, Output};

use relaxsing::cli::{InitialControls, ProblemSpec, ScenarioConfig, SCENARIO_SCHEMA};
use relaxsing::maxprinciple::Tolerances;
use relaxsing::measures::ControlsDocument;
use relaxsing::optimizer::OptimizerOptions;
use relaxsing::problem::Problem;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relaxsing"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn write_config(dir: &Path, name: &str, problem: Problem, scenarios: usize, optimizer: OptimizerOptions) -> String {
    let cfg = ScenarioConfig {
        schema: SCENARIO_SCHEMA.into(),
        problem: ProblemSpec::Canonical(problem),
        scenarios,
        seed: 3,
        optimizer,
        tolerances: Tolerances::default(),
        output_dir: None,
        initial_controls: InitialControls::Uniform,
    };
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn zero_coefficients_give_constant_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "zero.json", common::constant_problem(10, 0.0, 0.0, 0.0, 0.0), 5, Default::default());
    let out = tmp.path().join("out");
    assert_eq!(code(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]), 0);
    let mut rdr = csv::Reader::from_path(out.join("trajectories.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers[3], "x");
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[3], "1");
        assert_eq!(&rec[4], "1");
        rows += 1;
    }
    assert_eq!(rows, 5 * 11);
    assert!(out.join("moments.json").exists());
    assert!(out.join("manifest.json").exists());
    assert_eq!(std::fs::read_dir(out.join("cache")).unwrap().count(), 1);
}

#[test]
fn missing_field_is_invalid_config() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, format!(r#"{{"schema": "{SCENARIO_SCHEMA}", "scenarios": 10}}"#)).unwrap();
    let out = run(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("problem"));
}

#[test]
fn unknown_key_is_invalid_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", common::constant_problem(4, 0.0, 0.0, 0.0, 0.0), 2, Default::default());
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["problem"]["canonical"]["colour"] = "blue".into();
    std::fs::write(&cfg, v.to_string()).unwrap();
    assert_eq!(code(&["simulate", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]), 2);
}

#[test]
fn overflowing_state_exits_numerical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "boom.json", common::constant_problem(20, 0.0, 1e40, 0.0, 0.0), 2, Default::default());
    assert_eq!(code(&["simulate", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]), 3);
}

#[test]
fn optimize_then_verify() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "toy.json", common::fixed_point_toy(20), 400, Default::default());
    let opt = tmp.path().join("opt");
    let o = opt.to_str().unwrap();
    assert_eq!(code(&["optimize", "--config", &cfg, "--out", o]), 0);
    for f in ["trajectories.csv", "adjoints.csv", "iterations.csv", "controls.json", "report.json", "manifest.json"] {
        assert!(opt.join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(opt.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "converged");
    assert_eq!(report["optimality"]["passed"], true);

    let controls = opt.join("controls.json");
    let c = controls.to_str().unwrap();
    let v = tmp.path().join("v");
    let out = run(&["verify", "--config", &cfg, "--controls", c, "--out", v.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));

    // move the optimum's mass to the next grid point
    let mut doc: ControlsDocument = serde_json::from_str(&std::fs::read_to_string(&controls).unwrap()).unwrap();
    for row in &mut doc.weights {
        let j = row.iter().position(|&w| w == 1.0).unwrap();
        row[j] = 0.0;
        row[j + 1] = 1.0;
    }
    let perturbed = tmp.path().join("perturbed.json");
    std::fs::write(&perturbed, serde_json::to_string(&doc).unwrap()).unwrap();
    assert_eq!(code(&["verify", "--config", &cfg, "--controls", perturbed.to_str().unwrap(), "--out", v.to_str().unwrap()]), 1);

    let malformed = tmp.path().join("malformed.json");
    doc.weights[0][0] = 0.7;
    std::fs::write(&malformed, serde_json::to_string(&doc).unwrap()).unwrap();
    assert_eq!(code(&["verify", "--config", &cfg, "--controls", malformed.to_str().unwrap(), "--out", v.to_str().unwrap()]), 2);
}

#[test]
fn zero_iterations_report_initial_state() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = OptimizerOptions {
        max_iterations: 0,
        ..Default::default()
    };
    let cfg = write_config(tmp.path(), "toy.json", common::fixed_point_toy(10), 100, opts);
    let out = tmp.path().join("o");
    assert_eq!(code(&["optimize", "--config", &cfg, "--out", out.to_str().unwrap()]), 0);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "not-converged");
    assert_eq!(report["iterations"], 0);
    let log = std::fs::read_to_string(out.join("iterations.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn example_bond_is_written_and_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    assert_eq!(code(&["example-bond", "--out", dir]), 0);
    let path = tmp.path().join("example-bond.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["scenarios"] = 100.into();
    std::fs::write(&path, v.to_string()).unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&["simulate", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let header = std::fs::read_to_string(out.join("trajectories.csv")).unwrap();
    assert!(header.starts_with("scenario,step,t,x,y,dB_1,dB_2\n"));
}

#[test]
fn seed_flag_changes_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", common::constant_problem(5, 0.0, 0.0, 0.3, 0.0), 3, Default::default());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&["simulate", "--config", &cfg, "--seed", "1", "--no-timestamp", "--out", a.to_str().unwrap()]), 0);
    assert_eq!(code(&["simulate", "--config", &cfg, "--seed", "2", "--no-timestamp", "--out", b.to_str().unwrap()]), 0);
    let read = |d: &Path| std::fs::read(d.join("trajectories.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
    let manifest = std::fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 1"));
    assert!(!manifest.contains("timestamp"));
}
