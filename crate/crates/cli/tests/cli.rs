use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_splitvar"))
        .arg("--config")
        .arg(&path)
        .args(extra)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn report(dir: &Path, out: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(out).join("report.json")).unwrap()).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&o.stderr)))
}

#[test]
fn predict_prints_feasible_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), r#"{"command":"predict","p":3,"gamma":0.7,"output_dir":"out"}"#, &[]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["feasible"], Value::Bool(true));
    assert!(v["chi"].as_f64().unwrap() > 4.0);
    assert_eq!(report(dir.path(), "out")["feasible"], Value::Bool(true));
}

#[test]
fn predict_gamma_zero_marks_unbounded() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), r#"{"command":"predict","p":2,"gamma":0,"output_dir":"out"}"#, &[]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["chi"], Value::String("inf".into()));
}

const SOLVE: &str = r#"{"command":"solve","grid":{"n1":16,"n2":16},"f1":"phi_nu:1.5","f2":"power:2",
    "u0":"affine:2:-1","tolerances":{"tol_grad":1e-8},"output_dir":"out"}"#;

#[test]
fn solve_writes_converged_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), SOLVE, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path(), "out");
    assert!(r["final"]["euler_residual_max"].as_f64().unwrap() <= 1e-8);
    assert_eq!(r["records"].as_array().unwrap().len(), 6);
    let u = splitvar::io::load_vsgf(&dir.path().join("out/u_final.vsgf")).unwrap();
    let g = u.grid;
    let csv = std::fs::read(dir.path().join("out/u_final.csv")).unwrap();
    assert_eq!(splitvar::io::read_grid_csv(g, csv.as_slice()).unwrap().values, u.values);
    let header = std::fs::read_to_string(dir.path().join("out/records.csv")).unwrap();
    assert!(header.starts_with("delta,j,j_delta,delta_term,euler_residual,iterations\n"));
}

#[test]
fn identical_configs_give_identical_tables() {
    let config = r#"{"command":"solve","grid":{"n1":20,"n2":12},"f1":"phi_nu:1.2","f2":"power:3",
        "u0":"custom-table:bd.csv","delta_schedule":[0.1,0.01,0.001],"output_dir":"out"}"#;
    let mut outputs = Vec::new();
    for threads in ["1", "1", "3"] {
        let dir = tempfile::tempdir().unwrap();
        write_boundary_table(dir.path(), 20, 12, |x, y| (2.0 * x).sin() + y * y);
        let o = run(dir.path(), config, &["--threads", threads]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((
            std::fs::read(dir.path().join("out/records.csv")).unwrap(),
            std::fs::read(dir.path().join("out/u_final.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

fn write_boundary_table(dir: &Path, n1: usize, n2: usize, f: impl Fn(f64, f64) -> f64) {
    let mut text = String::from("x1,x2,value\n");
    for j in 0..=n2 {
        for i in 0..=n1 {
            if i == 0 || j == 0 || i == n1 || j == n2 {
                let (x, y) = (-1.0 + 2.0 * i as f64 / n1 as f64, -1.0 + 2.0 * j as f64 / n2 as f64);
                text.push_str(&format!("{x},{y},{}\n", f(x, y)));
            }
        }
    }
    std::fs::write(dir.join("bd.csv"), text).unwrap();
}

#[test]
fn custom_table_matches_affine_data() {
    let dir = tempfile::tempdir().unwrap();
    write_boundary_table(dir.path(), 16, 16, |x, y| 2.0 * x - y);
    let o = run(dir.path(), &SOLVE.replace("affine:2:-1", "custom-table:bd.csv"), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path(), "out");
    assert!((r["u0_lipschitz"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    let j = r["final"]["j_value"].as_f64().unwrap();
    let phi2 = 2.0 - 2.0 * (3f64.sqrt() - 1.0);
    assert!((j - 4.0 * (phi2 + 1.0)).abs() < 1e-10, "{j}");
}

#[test]
fn incomplete_custom_table_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bd.csv"), "x1,x2,value\n-1,-1,0\n").unwrap();
    let o = run(dir.path(), &SOLVE.replace("affine:2:-1", "custom-table:bd.csv"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], Value::String("validation".into()));
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        "{not json",
        r#"{"command":"fly","output_dir":"out"}"#,
        &SOLVE.replace("phi_nu:1.5", "phi_nu:2.5"),
        &SOLVE.replace("power:2", "spline"),
        &SOLVE.replace("\"output_dir\"", "\"delta_schedule\":[0.01,0.1],\"output_dir\""),
        &SOLVE.replace("affine:2:-1", "affine:2"),
        r#"{"command":"predict","p":3,"output_dir":"out"}"#,
    ] {
        let o = run(dir.path(), bad, &[]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
        assert_eq!(stderr_json(&o)["exit_code"], Value::from(2));
    }
    let o = Command::new(env!("CARGO_BIN_EXE_splitvar")).args(["--config", "/nonexistent.json"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn iteration_cap_is_a_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"command":"solve","grid":{"n1":16,"n2":16},"f1":"phi_nu:1.5","f2":"power:2",
        "u0":"custom-table:bd.csv","max_iter":1,"output_dir":"out"}"#;
    write_boundary_table(dir.path(), 16, 16, |x, y| 3.0 * (3.0 * x).sin() * y);
    let o = run(dir.path(), config, &[]);
    assert_eq!(o.status.code(), Some(3));
    let e = stderr_json(&o);
    assert_eq!(e["error"], Value::String("solver".into()));
    assert_eq!(e["delta"].as_f64(), Some(0.1));
}

#[test]
fn dual_report_is_certified() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &SOLVE.replace("\"solve\"", "\"dual-report\""), &[]);
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path(), "out");
    assert_eq!(r["final_stress_certified"], Value::Bool(true));
    assert!(r["final"]["gap_rel"].as_f64().unwrap() <= 1e-3);
    assert!(r["levels"].as_array().unwrap().iter().all(|l| l["gap_abs"].as_f64().unwrap() >= -1e-9));
}

#[test]
fn sweep_and_relax_gap_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &SOLVE.replace("\"solve\"", "\"sweep\""), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(dir.path(), "out")["all_bounded"], Value::Bool(true));
    let bad = SOLVE.replace("\"solve\"", "\"sweep\"").replace("\"output_dir\"", "\"sweep\":{\"margin\":0.6},\"output_dir\"");
    assert_eq!(run(dir.path(), &bad, &[]).status.code(), Some(2));

    let o = run(dir.path(), &SOLVE.replace("\"solve\"", "\"relax-gap\""), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(report(dir.path(), "out")["gap"].as_f64().unwrap().abs() < 1e-6);
    let jump = SOLVE.replace("\"solve\"", "\"relax-gap\"").replace(
        "\"output_dir\"",
        r#""candidates":[{"base":"solution","jumps":[{"line":8,"j_start":4,"j_end":12,"height":0.5}]}],"output_dir""#,
    );
    let o = run(dir.path(), &jump, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(report(dir.path(), "out")["gap"].as_f64().unwrap() > 0.0);
}

#[test]
fn approx_demo_approaches_relaxed_energy() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"command":"approx-demo","grid":{"n1":4096,"n2":2},"f1":"phi_nu:1.5","f2":"power:2",
        "approx":{"widths":[0.1,0.01,0.001]},"output_dir":"out"}"#;
    let o = run(dir.path(), config, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path(), "out");
    assert_eq!(r["k_value"].as_f64(), Some(2.0));
    let devs: Vec<f64> = r["rows"].as_array().unwrap().iter().map(|row| row["deviation"].as_f64().unwrap()).collect();
    assert!(devs.windows(2).all(|w| w[1] < w[0]), "{devs:?}");
}

#[test]
fn conjugate_table_strict_escalates_boundary_hits() {
    let dir = tempfile::tempdir().unwrap();
    let table = r#"{"command":"conjugate-table","f1":"phi_nu:1.5","f2":"power:3",
        "table":{"density":"f2","s_max":10,"points":101,"t_max":100},"output_dir":"out"}"#;
    let o = run(dir.path(), table, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(report(dir.path(), "out")["max_relative_error_vs_closed_form"].as_f64().unwrap() < 1e-9);

    let beyond = table.replace("\"f2\",\"s_max\":10", "\"f1\",\"s_max\":1.5");
    let o = run(dir.path(), &beyond, &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!report(dir.path(), "out")["warnings"].as_array().unwrap().is_empty());
    let o = run(dir.path(), &beyond, &["--strict"]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(stderr_json(&o)["error"], Value::String("contract".into()));
}
