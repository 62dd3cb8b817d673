use std::path::Path;
use std::process::{Command, Output};

fn nhk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nhk")).args(args).output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    nhk(args).status.code().expect("exit code")
}

fn json(args: &[&str]) -> serde_json::Value {
    let out = nhk(args);
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["check", "free_particle"]), 0);
    assert_eq!(code(&["check", "free_particle", "--f", "1"]), 1);
    assert_eq!(code(&["check", "nowhere"]), 2);
    assert_eq!(code(&["check", "free_particle", "--bogus"]), 2);
    assert_eq!(code(&["check", "chaplygin_sphere"]), 2);
    assert_eq!(code(&["check", "free_particle", "--f", "log(x-5)"]), 3);
    assert_eq!(code(&["solve2dof", &data("incompatible.toml")]), 4);
    assert_eq!(code(&["simulate", "free_particle", "--flow", "hamiltonized", "--f", "sqrt(x)", "--ic", "0.5,0,-1,0", "--t", "2"]), 5);
}

#[test]
fn sphere_hint_mentions_reduction() {
    let out = nhk(&["check", "chaplygin_sphere"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--reduce"));
    assert_eq!(code(&["check", "chaplygin_sphere", "--reduce", "--samples", "20"]), 0);
}

#[test]
fn report_schema() {
    let v = json(&["check", "iliyev", "--json", "--samples", "30", "--seed", "3", "--tol", "1e-9"]);
    assert_eq!(v["condition_family"], "condhdf");
    assert_eq!(v["samples"], 30);
    assert_eq!(v["seed"], 3);
    assert_eq!(v["tol"], 1e-9);
    assert_eq!(v["verdict"], "pass");
    assert!(v["max_residual"].as_f64().unwrap() >= v["mean_residual"].as_f64().unwrap());
}

#[test]
fn auto_multiplier_resolution() {
    assert_eq!(json(&["check", "iliyev", "--json"])["multiplier"], "cos(q1)");
    assert_eq!(json(&["check", "snakeboard", "--reduce", "--json"])["multiplier"], "tan(phi)");
    let v = json(&["check", "chaplygin_sphere", "--reduce", "--json", "--samples", "10"]);
    assert_eq!(v["multiplier"], "quadrature");
}

#[test]
fn trajectory_csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    let p = path.to_str().unwrap();
    let args = ["simulate", "free_particle", "--flow", "hamiltonized", "--t", "0.01", "--ic", "0.5,0,1,0.5", "--out", p];
    assert_eq!(code(&args), 0);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,tau,x,y,P_x,P_y"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 6);
    for cell in row {
        let mantissa = cell.split('e').next().unwrap().replace(['-', '.'], "");
        assert_eq!(mantissa.len(), 17, "{cell}");
    }
    assert_eq!(text.lines().count(), 12);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn compare_writes_both_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let args = ["compare", "snakeboard", "--reduce", "--t", "1", "--json", "--out", out.to_str().unwrap()];
    let v = json(&args);
    assert_eq!(v["verdict"], "pass");
    assert_eq!(v["tau_monotone"], true);
    for f in ["lda.csv", "hamiltonized.csv", "report.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn seeds_change_reports_and_repeat_exactly() {
    let a = nhk(&["measure", "free_particle", "--json", "--samples", "20", "--seed", "1"]).stdout;
    let b = nhk(&["measure", "free_particle", "--json", "--samples", "20", "--seed", "1"]).stdout;
    let c = nhk(&["measure", "free_particle", "--json", "--samples", "20", "--seed", "2"]).stdout;
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn toml_systems_load_from_disk() {
    let v = json(&["solve2dof", &data("free_particle.toml"), "--json"]);
    assert_eq!(v["f_proportional_to"], "(1 + x^2)^-0.5");
}

#[test]
fn condvar_and_jacobi_reports() {
    let v = json(&["condvar", "vertical_disk", "--t", "1", "--json"]);
    assert_eq!(v["verdict"], "pass");
    assert!(v["constraint_drift"].as_f64().unwrap() < 1e-10);
    let v = json(&["jacobi", "free_particle", "--samples", "20", "--json"]);
    assert!(v["nonholonomic_jacobiator"].as_f64().unwrap() > 1e-3);
    assert!(v["hamiltonized_jacobiator"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn fit_recovers_iliyev_multiplier() {
    let v = json(&["fit", "iliyev", "--basis", "log(cos(q1));q2", "--json"]);
    let c = v["coefficients"].as_array().unwrap();
    assert!((c[0].as_f64().unwrap() - 1.0).abs() < 1e-8);
    assert!(c[1].as_f64().unwrap().abs() < 1e-8);
}
