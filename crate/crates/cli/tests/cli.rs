use std::process::{Command, Output};

use serde_json::Value;

fn qagf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qagf")).args(args).env_remove("QAGF_OUT_DIR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn moments_report_is_versioned_json() {
    let o = qagf(&["moments", "-d", "6"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["status"], "ok");
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    assert!((rows[0][1].as_f64().unwrap() - 1.0).abs() <= 1e-10);
    for r in &rows[1..] {
        assert!(r[1].as_f64().unwrap().abs() <= 1e-8);
    }
}

#[test]
fn pairing_delta_prime_with_gaussian_vanishes() {
    let o = qagf(&["pair", "delta'", "fn(exp(-x^2)) on [-4,4]", "--levels", "2:16384"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("n,p_n,reference,abs_err\n"));
    assert!(!text.contains('\r'));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 15);
    let last = &rows[14];
    assert_eq!(last[0], "16384");
    assert!(last[1].parse::<f64>().unwrap().abs() <= 1e-6);
}

#[test]
fn pairing_heaviside_matches_integral() {
    let o = qagf(&["pair", "H", "fn(exp(-x^2)) on [-4,4]", "--levels", "2:1024", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let reference = v["summary"]["reference"].as_f64().unwrap();
    let half_gauss = std::f64::consts::PI.sqrt() / 2.0 * 0.999_999_984_582_742;
    assert!((reference - half_gauss).abs() <= 1e-9, "{reference}");
}

#[test]
fn compose_demo_chain_rule_holds() {
    for demo in ["exp-delta", "sin-heaviside"] {
        let o = qagf(&["compose-demo", demo, "--levels", "2:256"]);
        assert_eq!(o.status.code(), Some(0), "{demo}");
        for row in &csv_rows(&stdout(&o))[1..] {
            assert!(row[1].parse::<f64>().unwrap() <= 1e-10);
        }
    }
}

#[test]
fn invalid_input_exits_with_2() {
    let o = qagf(&["pair", "delta +", "fn(x) on [-1,1]"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("1:8"));
    assert_eq!(qagf(&["moments", "-d", "3"]).status.code(), Some(2));
    assert_eq!(qagf(&["embed", "delta", "--levels", "8:2"]).status.code(), Some(2));
    assert_eq!(qagf(&["pair", "delta", "fn(x)"]).status.code(), Some(2));
}

#[test]
fn unreached_accuracy_exits_with_3() {
    let o = qagf(&["pair", "delta", "fn(x) on [-1,1]", "--levels", "2:8", "--tol", "1e-300"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("accuracy not reached"));
    assert!(stdout(&o).starts_with("n,p_n"));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("nested");
    let o = Command::new(env!("CARGO_BIN_EXE_qagf"))
        .args(["moments", "--format", "csv"])
        .env("QAGF_OUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(target.join("moments.csv")).unwrap();
    assert!(text.starts_with("j,moment,error_estimate\n"));
}

#[test]
fn explicit_output_overrides_environment() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.json");
    let o = Command::new(env!("CARGO_BIN_EXE_qagf"))
        .args(["ivt", "x^3 - 2", "--from", "0", "--to", "2", "--levels", "2:64", "--format", "json", "-o"])
        .arg(&file)
        .env("QAGF_OUT_DIR", dir.path().join("unused"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(!dir.path().join("unused").exists());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(file).unwrap()).unwrap();
    let z = v["rows"][0][1].as_f64().unwrap();
    assert!((z - 2f64.cbrt()).abs() <= 1e-12);
}

#[test]
fn classify_separates_scales() {
    let verdict = |scale: &str| {
        let o = qagf(&["classify", "2^n", "--scale", scale, "--levels", "2:1000:12"]);
        assert_eq!(o.status.code(), Some(0));
        let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
        v["summary"]["verdict"].as_str().unwrap().to_string()
    };
    assert_ne!(verdict("rho"), verdict("asy"));
}

#[test]
fn eval_jet_of_product() {
    let o = qagf(&["eval", "sin(x)*y", "--at", "0.5,2", "--jet-order", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains(&format!("\"(1,0)\",{:?}", 2.0 * 0.5f64.cos())));
}

#[test]
fn geometry_demos_succeed() {
    for args in [
        &["concat-demo", "--samples", "5"][..],
        &["retract-demo", "--samples", "3", "--levels", "2:64"],
        &["hep-demo", "--samples", "3", "--levels", "2:1024"],
        &["mvt", "exp(x)", "--from", "0", "--to", "1", "--levels", "2:64"],
    ] {
        assert_eq!(qagf(args).status.code(), Some(0), "{args:?}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let args = ["embed", "delta' + 2*H @ 0.5", "--grid", "-1:1:5", "--levels", "2:64"];
    assert_eq!(qagf(&args).stdout, qagf(&args).stdout);
}
