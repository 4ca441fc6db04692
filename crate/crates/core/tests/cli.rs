mod common;

use std::fs;
use std::path::Path;

use common::{corp_lab, scenario_path};
use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let out = corp_lab().args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn d1_json() -> Value {
    serde_json::from_str(&fs::read_to_string(scenario_path("d1.json")).unwrap()).unwrap()
}

fn write_scenario(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn check_d1_passes_all_five() {
    let (code, out, _) = run(&["check", scenario_path("d1.json").to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().filter(|l| l.starts_with("pass")).count(), 5);
}

#[test]
fn check_flags_isolated_follower() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = d1_json();
    v["graph"]["edges"] = serde_json::json!([
        { "from": 0, "to": 1, "weight": 1.0 },
        { "from": 1, "to": 2, "weight": 1.0 }
    ]);
    let path = write_scenario(tmp.path(), "isolated.json", &v);
    let (code, out, _) = run(&["check", &path]);
    assert_eq!(code, 1);
    assert!(out.contains("FAIL  leader-rooted spanning tree"), "{out}");
    let (code, _, err) = run(&["learn", &path, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("spanning tree"), "{err}");
}

#[test]
fn malformed_json_is_a_parse_error() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.json");
    fs::write(&p, "{ \"dims\": { \"n\": 2, }").unwrap();
    let (code, _, err) = run(&["check", p.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("line 1"), "{err}");
    let (code, _, _) = run(&["learn", scenario_path("d1.json").to_str().unwrap(), "--method", "newton"]);
    assert_eq!(code, 2);
}

#[test]
fn non_stabilizable_scenario_fails_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = d1_json();
    v["matrices"]["B"] = serde_json::json!([[1.0], [0.0]]);
    let path = write_scenario(tmp.path(), "unstab.json", &v);
    let (code, _, _) = run(&["oracle", &path]);
    assert_eq!(code, 1);
}

#[test]
fn oracle_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, out, _) = run(&["oracle", scenario_path("toy.json").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().filter(|l| l.starts_with("P* ")).count(), 2, "{out}");
    let rows: Vec<Vec<f64>> = fs::read_to_string(tmp.path().join("p_star.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    // Y = [[-1,0],[1,0]], J = [1;0]: P* = [[1,1],[1,2]]
    let want = [[1.0, 1.0], [1.0, 2.0]];
    for (r, w) in rows.iter().zip(want) {
        for (a, b) in r.iter().zip(w) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    let (code, _, _) = run(&["oracle", scenario_path("d1.json").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("oracle.json")).unwrap()).unwrap();
    assert!(v["riccati_residual"].as_f64().unwrap() < 1e-8);
    assert_eq!(v["ac_hurwitz"], Value::Bool(true));
    assert_eq!(fs::read_to_string(tmp.path().join("spectrum.csv")).unwrap().lines().count(), 13);
}

#[test]
fn learn_ipi_writes_bundle_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let d1 = scenario_path("d1.json");
    for dir in [&a, &b] {
        let (code, out, err) = run(&["learn", d1.to_str().unwrap(), "--method", "ipi", "--out", dir.to_str().unwrap()]);
        assert_eq!(code, 0, "{out}{err}");
    }
    let r = report(&a);
    assert_eq!(r["converged"], Value::Bool(true));
    assert_eq!(r["resolved"]["K0_source"], "auto: 1.1 x oracle gain");
    assert_eq!(r["resolved"]["omega_source"], "auto: 0.9 x omega_bound");
    assert_eq!(r["meta"]["scenario_hash"].as_str().unwrap().len(), 64);
    assert_eq!(r["learn"].as_array().unwrap().len(), 3);
    assert!(r["closed_loop"]["tail_error"].as_f64().unwrap() < 2e-2);
    for name in ["iterations.csv", "tracking.csv"] {
        let x = fs::read(a.join(name)).unwrap();
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name} differs between reruns");
    }
    let tracking = fs::read_to_string(a.join("tracking.csv")).unwrap();
    assert!(tracking.starts_with("t,v[0],v[1],x1[0],x1[1],zhat1[0],zhat1[1],eta1[0],eta1[1],u1[0],e1[0],x2[0]"));
}

#[test]
fn share_from_and_method_guard() {
    let tmp = tempfile::tempdir().unwrap();
    let d1 = scenario_path("d1.json");
    let out = tmp.path().join("s");
    let (code, _, _) = run(&["learn", d1.to_str().unwrap(), "--method", "ivi", "--share-from", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let r = report(&out);
    let gains = r["gains"].as_array().unwrap();
    assert_eq!(gains.len(), 3);
    assert!(gains.iter().all(|g| g == &gains[0]));
    assert_eq!(r["learn"].as_array().unwrap().len(), 1);

    let (code, _, err) = run(&["learn", d1.to_str().unwrap(), "--method", "pi", "--share-from", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("reduced"), "{err}");
}

#[test]
fn under_sampled_run_exits_with_rank_code() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&[
        "learn",
        scenario_path("d1.json").to_str().unwrap(),
        "--method",
        "pi",
        "--samples",
        "17",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 3);
    assert!(err.contains("achieved 17 < required 22"), "{err}");
    let r = report(tmp.path());
    assert_eq!(r["ranks"][0]["check"]["ok"], Value::Bool(false));
}

#[test]
fn vi_ignores_supplied_k0() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = d1_json();
    v["learn"]["K0"] = serde_json::json!([[-2.9, -2.75, 1.35, -0.77]]);
    let path = write_scenario(tmp.path(), "vi.json", &v);
    let (code, _, err) = run(&["learn", &path, "--method", "vi", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(err.contains("K0 ignored"), "{err}");
    assert_eq!(report(&tmp.path().join("o"))["resolved"]["K0"], Value::Null);
}

#[test]
fn destabilizing_k0_reports_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = d1_json();
    v["learn"]["K0"] = serde_json::json!([[50.0, 50.0, 0.0, 0.0]]);
    let path = write_scenario(tmp.path(), "div.json", &v);
    let (code, _, err) = run(&["learn", &path, "--method", "pi", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 4, "{err}");
}

#[test]
fn eval_with_learned_gains_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let d1 = scenario_path("d1.json");
    let learn_dir = tmp.path().join("learn");
    let (code, _, _) = run(&["learn", d1.to_str().unwrap(), "--method", "pi", "--out", learn_dir.to_str().unwrap()]);
    assert_eq!(code, 0);
    let eval_dir = tmp.path().join("eval");
    let (code, out, _) = run(&[
        "eval",
        d1.to_str().unwrap(),
        "--from",
        learn_dir.join("report.json").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--sweep",
        "20",
    ]);
    assert_eq!(code, 0, "{out}");
    let v: Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("eval.json")).unwrap()).unwrap();
    assert!(v["closed_loop"]["tail_error"].as_f64().unwrap() < 2e-2);
    assert_eq!(v["sweep"]["all_hurwitz"], Value::Bool(true));
    assert_eq!(fs::read_to_string(eval_dir.join("sweep.csv")).unwrap().lines().count(), 21);
}

#[test]
fn tables_default_and_d1() {
    let (code, out, _) = run(&["tables"]);
    assert_eq!(code, 0);
    for n in ["7675", "2675", "1275", "1555"] {
        assert!(out.contains(n), "{out}");
    }
    let (_, out, _) = run(&["tables", "--dims", "2,1,1,2,2,1"]);
    assert!(out.contains("pi,22,22") && out.contains("ipi,10,16"), "{out}");
    let (code, out, err) = run(&["tables", "--dims", "10,8,4,20,0,2"]);
    assert_eq!(code, 0);
    assert!(out.contains("true") && err.contains("degenerate"));
}
