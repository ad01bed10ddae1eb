use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn reif(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reif")).args(args).current_dir(dir).output().expect("spawn reif")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {:?}", out))
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn plane(dir: &Path, spacing: &str) {
    let o = reif(&["gen", "plane", "--n", "3", "--k", "2", "--density", "1", "--spacing", spacing, "--out", "p.csv"], dir);
    assert!(o.status.success(), "{o:?}");
}

fn decompose(dir: &Path) -> Output {
    reif(
        &[
            "decompose", "--in", "p.csv", "--k", "2", "--gamma", "1", "--delta", "0.01", "--epsilon", "0.05", "--nu",
            "0.1", "--tau", "0.25", "--rmin", "0.25", "--out", "d.json",
        ],
        dir,
    )
}

#[test]
fn gen_snowflake_vertex_count() {
    let d = tempfile::tempdir().unwrap();
    let o = reif(&["gen", "snowflake", "--delta", "0.3", "--iters", "5", "--out", "s.csv"], d.path());
    assert!(o.status.success(), "{o:?}");
    let text = std::fs::read_to_string(d.path().join("s.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 4usize.pow(5) + 1);
    assert_eq!(json(&o)["result"]["edges"], 1024);
}

#[test]
fn gen_plane_and_mixed_write_measures() {
    let d = tempfile::tempdir().unwrap();
    plane(d.path(), "0.05");
    let text = std::fs::read_to_string(d.path().join("p.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("x1,x2,x3,w"));
    let o = reif(
        &[
            "gen", "mixed", "--n", "3", "--k", "2", "--spacing", "0.1", "--dust-density", "0.01", "--dust-spacing",
            "0.25", "--out", "m.json",
        ],
        d.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let m = read_json(&d.path().join("m.json"));
    let w = m["weights"].as_array().unwrap();
    // plane points carry 0.1², dust points 0.01·0.25³
    assert!(w.iter().any(|x| (x.as_f64().unwrap() - 0.01).abs() < 1e-15));
    assert!(w.iter().any(|x| (x.as_f64().unwrap() - 0.01 * 0.25f64.powi(3)).abs() < 1e-15));
}

#[test]
fn beta_profile_has_five_dyadic_rows() {
    let d = tempfile::tempdir().unwrap();
    plane(d.path(), "0.05");
    let o = reif(
        &["beta", "--in", "p.csv", "--k", "2", "--center", "0,0,0", "--rmax", "1", "--rmin", "0.0625", "--report", "b.json"],
        d.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5);
    let rep = read_json(&d.path().join("b.json"));
    assert_eq!(rep["config"]["command"]["beta"]["rmin"], 0.0625);
    assert_eq!(rep["input_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn decompose_then_verify_and_tamper() {
    let d = tempfile::tempdir().unwrap();
    plane(d.path(), "0.1");
    let o = decompose(d.path());
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let rep = read_json(&d.path().join("d.json"));
    let necks = rep["result"]["necks"].as_array().unwrap();
    assert!(!necks.is_empty());
    assert_eq!(rep["config"]["command"]["decompose"]["neck"]["tau"], 0.25);

    let o = reif(&["verify", "--neck", "d.json", "--in", "p.csv"], d.path());
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(json(&o)["result"]["violations"], 0);

    // blow up one center radius so its τ²-ball swallows its neighbours
    let mut bad = rep.clone();
    bad["result"]["necks"][0]["centers"][0]["r"] = Value::from(0.9);
    std::fs::write(d.path().join("bad.json"), bad.to_string()).unwrap();
    let o = reif(&["verify", "--neck", "bad.json", "--in", "p.csv"], d.path());
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    let v = json(&o);
    let viol = v["result"]["necks"][0]["violations"].as_array().unwrap();
    assert!(viol.iter().any(|x| x["kind"] == "disjoint"), "{viol:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("disjoint"));
}

#[test]
fn reports_repeat_modulo_timing() {
    let d = tempfile::tempdir().unwrap();
    plane(d.path(), "0.1");
    let run = || {
        let o = reif(&["content", "--in", "p.csv", "--k", "2", "--kind", "minkowski", "--r", "0.25"], d.path());
        assert!(o.status.success(), "{o:?}");
        let mut v = json(&o);
        assert!(v["elapsed_seconds"].as_f64().unwrap() >= 0.0);
        v.as_object_mut().unwrap().remove("elapsed_seconds");
        v.to_string()
    };
    assert_eq!(run(), run());
}

#[test]
fn reifmap_on_a_graph() {
    let d = tempfile::tempdir().unwrap();
    let o = reif(&["gen", "graph", "--k", "1", "--slope", "0.05", "--spacing", "0.03125", "--out", "g.csv"], d.path());
    assert!(o.status.success(), "{o:?}");
    let o = reif(
        &["reifmap", "--in", "g.csv", "--k", "1", "--depth", "3", "--divisor", "8", "--fit-multiplier", "16"],
        d.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let r = &json(&o)["result"];
    assert_eq!(r["injective"], true);
    assert_eq!(r["diagnostics"].as_array().unwrap().len(), 3);
    let up = r["holder"]["upper"].as_f64().unwrap();
    assert!((up - 1.0).abs() < 0.05, "{up}");
}

#[test]
fn input_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let o = reif(&["gen", "snowflake", "--delta", "0.9", "--iters", "2", "--out", "s.csv"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("delta"));
    let o = reif(&["content", "--in", "missing.csv", "--k", "1", "--kind", "packing", "--r", "0.1"], d.path());
    assert_eq!(o.status.code(), Some(2));
    let o = reif(&["beta", "--in", "p.csv"], d.path());
    assert_eq!(o.status.code(), Some(2));
    plane(d.path(), "0.25");
    let o = reif(
        &["decompose", "--in", "p.csv", "--k", "2", "--gamma", "1", "--delta", "0.1", "--epsilon", "0.05", "--nu", "0.1", "--rmin", "0.25"],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_variable_is_checked() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_reif"))
        .args(["gen", "dirac", "--distance", "1", "--out", "x.csv"])
        .current_dir(d.path())
        .env("REIF_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_reif"))
        .args(["gen", "dirac", "--distance", "1", "--out", "x.csv"])
        .current_dir(d.path())
        .env("REIF_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
}
