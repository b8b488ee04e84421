use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn tdens(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tdens"));
    cmd.args(args).env_remove("TDENS_OUT");
    if let Some(dir) = out {
        cmd.arg("--out").arg(dir);
    }
    cmd.output().expect("binary runs")
}

fn write_json(dir: &Path, name: &str, v: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.display().to_string()
}

fn report(dir: &Path, command: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{command}.json"))).unwrap()).unwrap()
}

fn integer_system(window: f64) -> Value {
    json!({
        "p": 2.0,
        "generators": [{
            "f": {"kind": "indicator", "cube": {"lower": [0.0], "side": 1.0}},
            "gamma": {"kind": "lattice", "basis": [[1.0]], "window": window},
            "label": "chi"
        }]
    })
}

#[test]
fn density_of_integer_csv() {
    let tmp = TempDir::new().unwrap();
    let csv: String = (-50..=50).map(|n| format!("{n}\n")).collect();
    fs::write(tmp.path().join("z.csv"), format!("x\n{csv}")).unwrap();
    let spec = write_json(tmp.path(), "spec.json", &json!({"points": "z.csv", "h_values": [2.0, 4.0, 8.0]}));
    let out_dir = tmp.path().join("out");
    let o = tdens(&["density", "--spec", &spec], Some(&out_dir));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let r = report(&out_dir, "density");
    assert_eq!(r["outputs"]["size"], 101);
    let rows = r["outputs"]["profile"]["rows"].as_array().unwrap();
    let nu: Vec<u64> = rows.iter().map(|r| r["nu_lower"].as_u64().unwrap()).collect();
    assert_eq!(nu, vec![2, 4, 8]);
    assert_eq!(r["provenance"]["inputs"].as_array().unwrap().len(), 2);

    let table = fs::read_to_string(out_dir.join("density.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn cq_sweep_on_integer_translates_diverges() {
    let tmp = TempDir::new().unwrap();
    let spec = write_json(
        tmp.path(),
        "spec.json",
        &json!({
            "system": integer_system(20.0),
            "h_values": [0.5, 0.25, 0.125, 0.0625],
            "center": [0.5]
        }),
    );
    let out_dir = tmp.path().join("out");
    let o = tdens(&["cq-sweep", "--spec", &spec], Some(&out_dir));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let r = report(&out_dir, "cq-sweep");
    assert_eq!(r["outputs"]["verdict"], "divergent");

    // the test cube has side 2h ≤ 1 inside [0, 1), so only T_0 χ meets it and
    // K_required = ‖χ_Q‖₂ / 2h = (2h)^{-1/2}
    let mut lines = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    lines = lines.trim_end().to_string();
    let mut it = lines.lines();
    let header: Vec<&str> = it.next().unwrap().split(',').collect();
    let hi = header.iter().position(|c| *c == "h").unwrap();
    let ki = header.iter().position(|c| *c == "K_required").unwrap();
    let mut n = 0;
    for line in it {
        let cols: Vec<&str> = line.split(',').collect();
        let h: f64 = cols[hi].parse().unwrap();
        let k: f64 = cols[ki].parse().unwrap();
        assert!((k - (2.0 * h).powf(-0.5)).abs() < 1e-12 * k, "h={h} K={k}");
        n += 1;
    }
    assert_eq!(n, 4);
}

#[test]
fn missing_input_exits_two() {
    let tmp = TempDir::new().unwrap();
    let spec = write_json(tmp.path(), "spec.json", &json!({"points": "absent.csv", "h_values": [1.0]}));
    let o = tdens(&["density", "--spec", &spec], None);
    assert_eq!(o.status.code(), Some(2));

    let o = tdens(&["density", "--spec", &tmp.path().join("nope.json").display().to_string()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn duplicate_points_exit_two() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("dup.csv"), "0,0\n1,1\n0,0\n").unwrap();
    let spec = write_json(tmp.path(), "spec.json", &json!({"points": "dup.csv", "h_values": [1.0]}));
    let o = tdens(&["density", "--spec", &spec], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn window_too_small_exits_three() {
    let tmp = TempDir::new().unwrap();
    let spec = write_json(
        tmp.path(),
        "spec.json",
        &json!({
            "points": {"kind": "lattice", "basis": [[1.0]], "window": 5.0},
            "h_values": [4.0, 20.0]
        }),
    );
    let o = tdens(&["density", "--spec", &spec], None);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn haar_check_requires_a_seed() {
    let tmp = TempDir::new().unwrap();
    let spec = write_json(tmp.path(), "spec.json", &json!({"batch_size": 20}));
    let o = tdens(&["haar-check", "--spec", &spec], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reports_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let spec = write_json(
        tmp.path(),
        "spec.json",
        &json!({"p_values": [1.5, 3.0], "batch_size": 100, "tests": 10, "sign_trials": 20, "seed": 7}),
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(tdens(&["haar-check", "--spec", &spec], Some(&a)).status.code(), Some(0));
    assert_eq!(tdens(&["haar-check", "--spec", &spec], Some(&b)).status.code(), Some(0));
    for name in ["haar-check.json", "haar.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }

    // a command-line seed overrides the spec
    let c = tmp.path().join("c");
    assert_eq!(tdens(&["haar-check", "--spec", &spec, "--seed", "8"], Some(&c)).status.code(), Some(0));
    assert_eq!(report(&c, "haar-check")["provenance"]["seed"], 8);
    assert_ne!(fs::read(a.join("haar.csv")).unwrap(), fs::read(c.join("haar.csv")).unwrap());
}

#[test]
fn run_chains_steps() {
    let tmp = TempDir::new().unwrap();
    write_json(tmp.path(), "system.json", &integer_system(20.0));
    let spec = write_json(
        tmp.path(),
        "run.json",
        &json!({"steps": [
            {"command": "density",
             "points": {"kind": "lattice", "basis": [[1.0]], "window": 20.0},
             "h_values": [1.0, 2.0, 4.0]},
            {"command": "localized-mass", "system": "system.json",
             "cube": {"center": [0.0], "side": 4.0}},
            {"command": "bessel", "system": "system.json",
             "tests": [{"kind": "indicator", "cube": {"lower": [0.0], "side": 3.0}}]}
        ]}),
    );
    let out_dir = tmp.path().join("out");
    let o = tdens(&["run", "--spec", &spec], Some(&out_dir));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let r = report(&out_dir, "run");
    let steps = r["outputs"].as_array().unwrap();
    let names: Vec<&str> = steps.iter().map(|s| s["command"].as_str().unwrap()).collect();
    assert_eq!(names, ["density", "localized-mass", "bessel"]);
    assert!(out_dir.join("step1-density.csv").exists());

    // [−2, 2) meets T_n χ[0,1) fully for n = −2..1, each with unit mass
    assert_eq!(steps[1]["outputs"]["total"].as_f64().unwrap(), 4.0);
    // χ[0,3) pairs to 1 with three translates
    let bessel = &steps[2]["outputs"]["per_test"][0]["bessel_sum"];
    assert_eq!(bessel.as_f64().unwrap(), 3.0);
}

#[test]
fn pair_reports_shifted_pairings() {
    let tmp = TempDir::new().unwrap();
    let spec = write_json(
        tmp.path(),
        "spec.json",
        &json!({
            "f": {"kind": "block", "lower": [0.0], "upper": [2.0], "re": 3.0},
            "g": {"kind": "indicator", "cube": {"lower": [0.0], "side": 1.0}},
            "shifts": [[0.5], [1.5], [5.0]],
            "p": 2.0
        }),
    );
    let out_dir = tmp.path().join("out");
    let o = tdens(&["pair", "--spec", &spec], Some(&out_dir));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out_dir, "pair");
    let got: Vec<f64> = r["outputs"]["shifted"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["pairing"][0].as_f64().unwrap())
        .collect();
    assert_eq!(got, vec![3.0, 1.5, 0.0]);
    assert_eq!(r["outputs"]["pairing"][0].as_f64().unwrap(), 3.0);
}

#[test]
fn stdout_report_without_out_dir() {
    let tmp = TempDir::new().unwrap();
    let spec = write_json(
        tmp.path(),
        "spec.json",
        &json!({"points": {"kind": "reciprocal", "N": 30}, "delta": 0.01}),
    );
    let o = tdens(&["separate", "--spec", &spec], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["command"], "separate");
    assert_eq!(r["outputs"]["size"], 30);
}
