use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hardy-beta"));
    c.env_remove("HARDY_BETA_TOL");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json_of(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!(
            "bad JSON ({e}); stderr: {}",
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

fn scalar(v: &Value) -> (f64, f64) {
    let e = &v[0][0];
    (e[0].as_f64().unwrap(), e[1].as_f64().unwrap())
}

#[test]
fn weights_beta2_reciprocal_is_binomial() {
    let o = run(&["weights", "--alpha", "2", "-n", "64"]);
    assert_eq!(code(&o), 0);
    let v = json_of(&o);
    let c = floats(&v["c"]);
    assert_eq!(c.len(), 65);
    assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] + 2.0).abs() < 1e-12 && (c[2] - 1.0).abs() < 1e-12);
    assert!(c[3..].iter().all(|x| x.abs() < 1e-12));
    let b = floats(&v["betas"]);
    for (k, bk) in b.iter().enumerate() {
        assert!((bk - 1.0 / (k as f64 + 1.0)).abs() < 1e-14);
    }
    assert_eq!(v["wiener"]["verdict"], "summable");
    assert_eq!(v["config"]["trunc"], 64);
}

#[test]
fn weights_constant_list_is_hardy() {
    let o = run(&["weights", "--betas", "1,1,1"]);
    assert_eq!(code(&o), 0);
    let v = json_of(&o);
    assert_eq!(v["kind"]["kind"], "hardy");
    assert_eq!(v["ratio_bound"].as_f64(), Some(1.0));
    let c = floats(&v["c"]);
    assert_eq!(&c[..2], &[1.0, -1.0]);
    assert!(c[2..].iter().all(|x| *x == 0.0));
}

#[test]
fn weights_rejects_increasing_list() {
    let o = run(&["weights", "--betas", "1,0.5,0.6"]);
    assert_eq!(code(&o), 2);
    assert!(o.stdout.is_empty());
}

#[test]
fn weights_custom_ratio_bound() {
    let o = run(&["weights", "--betas", "1,0.5,0.25,0.25"]);
    assert_eq!(code(&o), 0);
    let v = json_of(&o);
    assert_eq!(v["kind"]["kind"], "custom");
    assert_eq!(v["ratio_bound"].as_f64(), Some(2.0));
    assert!(v["wiener"].is_null());
}

#[test]
fn weights_rejects_alpha_not_above_one() {
    assert_eq!(code(&run(&["weights", "--alpha", "0.5"])), 2);
}

#[test]
fn analyze_scalar_isometric_pair_sets_all_flags() {
    let d = TempDir::new().unwrap();
    let p = write(
        d.path(),
        "op.json",
        r#"{"A": [[[0.5, 0]]], "C": [[[0.8660254037844386, 0]]]}"#,
    );
    let o = run(&["analyze", p.to_str().unwrap(), "--beta", "1"]);
    assert_eq!(code(&o), 0);
    let v = json_of(&o);
    let flags = v["classification"]["flags"].as_object().unwrap();
    for (name, f) in flags {
        if name != "betan_certificate" {
            assert_eq!(f, &Value::Bool(true), "{name}");
        }
    }
    assert!(flags["betan_certificate"].is_null());
    assert!((v["spectral_radius"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn analyze_reports_failed_verdicts_with_exit_zero() {
    let d = TempDir::new().unwrap();
    let p = write(
        d.path(),
        "op.json",
        r#"{"A": [[[0.5, 0]]], "C": [[[0, 0]]]}"#,
    );
    let o = run(&["analyze", p.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v = json_of(&o);
    assert_eq!(v["classification"]["flags"]["exactly_observable"], false);
}

#[test]
fn analyze_beta2_certificate_from_file_weight() {
    let d = TempDir::new().unwrap();
    let p = write(
        d.path(),
        "op.json",
        r#"{"A": [[[0.3, 0]]], "C": [[[0.5, 0]]], "weight": {"kind": "beta_alpha", "alpha": 2}}"#,
    );
    let v = json_of(&run(&["analyze", p.to_str().unwrap()]));
    assert_eq!(v["weight"]["kind"], "beta_alpha");
    assert_eq!(v["classification"]["flags"]["betan_certificate"], true);
    let v = json_of(&run(&["analyze", p.to_str().unwrap(), "--beta", "1"]));
    assert_eq!(v["weight"]["kind"], "hardy");
}

#[test]
fn analyze_unit_spectral_radius_exits_3() {
    let d = TempDir::new().unwrap();
    let p = write(
        d.path(),
        "op.json",
        r#"{"A": [[[1.2, 0]]], "C": [[[1, 0]]]}"#,
    );
    let o = run(&["analyze", p.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("spectral radius"));
}

#[test]
fn analyze_malformed_input_exits_2() {
    let d = TempDir::new().unwrap();
    let p = write(d.path(), "bad.json", r#"{"A": [[[0.5, 0]]"#);
    assert_eq!(code(&run(&["analyze", p.to_str().unwrap()])), 2);
    let p = write(
        d.path(),
        "shape.json",
        r#"{"A": [[[0.5, 0]]], "C": [[[1, 0], [2, 0]]]}"#,
    );
    assert_eq!(code(&run(&["analyze", p.to_str().unwrap()])), 2);
    let missing = d.path().join("missing.json");
    assert_eq!(code(&run(&["analyze", missing.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["analyze"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn charfn_scalar_is_blaschke_factor() {
    let t = 0.5_f64;
    let o = run(&["charfn", "--t", "0.5", "--beta", "1", "--order", "10"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_of(&o);
    for k in [0usize, 3, 12] {
        let taylor = v["taylor"][k].as_array().unwrap();
        assert_eq!(taylor.len(), 11);
        for (j, m) in taylor.iter().enumerate() {
            let want = if j == 0 {
                -t
            } else {
                (1.0 - t * t) * t.powi(j as i32 - 1)
            };
            let (re, im) = scalar(m);
            assert!(
                (re - want).abs() < 1e-12 && im.abs() < 1e-14,
                "k {k} j {j}: {re}"
            );
        }
    }
    assert_eq!(v["steps"].as_array().unwrap().len(), 13);
    assert!(v["max_residual"].as_f64().unwrap() < 1e-12);
}

#[test]
fn charfn_complex_scalar_uses_conjugate_powers() {
    // −t, then (1 − |t|²) t̄^{j−1} with t = 0.5i
    let o = run(&["charfn", "--t", "0,0.5", "--order", "5"]);
    assert_eq!(code(&o), 0);
    let v = json_of(&o);
    let taylor = v["taylor"][0].as_array().unwrap();
    let want = [
        (0.0, -0.5),
        (0.75, 0.0),
        (0.0, -0.375),
        (-0.1875, 0.0),
        (0.0, 0.09375),
        (0.046875, 0.0),
    ];
    for (m, w) in taylor.iter().zip(want) {
        let (re, im) = scalar(m);
        assert!(
            (re - w.0).abs() < 1e-12 && (im - w.1).abs() < 1e-12,
            "{re} {im}"
        );
    }
}

#[test]
fn charfn_rejects_non_contraction() {
    let o = run(&["charfn", "--t", "1.5"]);
    assert_ne!(code(&o), 0);
    assert!(o.stdout.is_empty());
    assert_eq!(code(&run(&["charfn", "--t", "abc"])), 2);
}

#[test]
fn colligate_matrix_pair_meets_tolerance() {
    let d = TempDir::new().unwrap();
    let p = write(
        d.path(),
        "op.json",
        r#"{"A": [[[0.3, 0.1], [0.2, 0]], [[0, 0], [-0.4, 0.2]]], "C": [[[1, 0], [0.5, -0.5]]],
            "weight": {"kind": "beta_alpha", "alpha": 3}}"#,
    );
    let o = run(&[
        "colligate",
        p.to_str().unwrap(),
        "--k-max",
        "5",
        "--order",
        "4",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_of(&o);
    assert_eq!(v["steps"].as_array().unwrap().len(), 6);
    assert_eq!(v["taylor"].as_array().unwrap().len(), 6);
    assert!(v["max_residual"].as_f64().unwrap() < 1e-10);
}

#[test]
fn colligate_unobservable_pair_exits_4() {
    let d = TempDir::new().unwrap();
    let p = write(
        d.path(),
        "op.json",
        r#"{"A": [[[0.5, 0]]], "C": [[[0, 0]]]}"#,
    );
    assert_eq!(code(&run(&["colligate", p.to_str().unwrap()])), 4);
}

#[test]
fn kernels_default_grid_csv_is_hermitian() {
    let d = TempDir::new().unwrap();
    let p = write(
        d.path(),
        "op.json",
        r#"{"A": [[[0.4, 0], [0.3, 0.2]], [[0, 0], [-0.3, 0]]], "C": [[[1, 0], [0, 0]], [[0, 0], [1, 0]]]}"#,
    );
    let o = run(&["kernels", p.to_str().unwrap(), "--grid", "default"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_reader(o.stdout.as_slice());
    assert_eq!(rd.headers().unwrap().len(), 4 + 2 * 4);
    let rows: Vec<Vec<f64>> = rd
        .records()
        .map(|r| r.unwrap().iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 40 * 40);
    let m = 40;
    let mut worst = 0.0_f64;
    for i in 0..m {
        for j in 0..m {
            let a = &rows[i * m + j];
            let b = &rows[j * m + i];
            assert_eq!((a[0], a[1]), (b[2], b[3]));
            for r in 0..2 {
                for c in 0..2 {
                    let (x, y) = (4 + 2 * (2 * r + c), 4 + 2 * (2 * c + r));
                    worst = worst
                        .max((a[x] - b[y]).abs())
                        .max((a[x + 1] + b[y + 1]).abs());
                }
            }
        }
    }
    assert!(worst < 1e-12, "{worst}");
}

#[test]
fn kernels_scalar_mperp_closed_form() {
    let o = run(&[
        "kernels",
        "--t",
        "0.5",
        "--grid",
        "0.3,0.6x3",
        "--format",
        "json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_of(&o);
    assert_eq!(v["config"]["grid"], "0.3,0.6x3");
    let vals = v["values"].as_array().unwrap();
    assert_eq!(vals.len(), 36);
    for e in vals {
        let z = (e["z"][0].as_f64().unwrap(), e["z"][1].as_f64().unwrap());
        let w = (
            e["zeta"][0].as_f64().unwrap(),
            e["zeta"][1].as_f64().unwrap(),
        );
        // 0.75 / ((1 − 0.5 z)(1 − 0.5 ζ̄))
        let p = (1.0 - 0.5 * z.0, -0.5 * z.1);
        let q = (1.0 - 0.5 * w.0, 0.5 * w.1);
        let den = (p.0 * q.0 - p.1 * q.1, p.0 * q.1 + p.1 * q.0);
        let n2 = den.0 * den.0 + den.1 * den.1;
        let want = (0.75 * den.0 / n2, -0.75 * den.1 / n2);
        let (re, im) = (
            e["value"][0][0][0].as_f64().unwrap(),
            e["value"][0][0][1].as_f64().unwrap(),
        );
        assert!((re - want.0).abs() < 1e-12 && (im - want.1).abs() < 1e-12);
    }
}

#[test]
fn kernels_rejects_bad_grid() {
    for g in ["0.5", "1.5x4", "0.5x0", "ax3"] {
        assert_eq!(
            code(&run(&["kernels", "--t", "0.5", "--grid", g])),
            2,
            "{g}"
        );
    }
}

#[test]
fn simulate_scalar_free_response() {
    let d = TempDir::new().unwrap();
    let p = write(
        d.path(),
        "op.json",
        r#"{"A": [[[0.5, 0]]], "C": [[[1, 0]]]}"#,
    );
    let o = run(&["simulate", p.to_str().unwrap(), "--steps", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_reader(o.stdout.as_slice());
    let recs: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(recs.len(), 6);
    for (j, r) in recs.iter().enumerate() {
        let x: f64 = r[1].parse().unwrap();
        assert!((x - 0.5_f64.powi(j as i32)).abs() < 1e-15);
        if j < 5 {
            let y: f64 = r[3].parse().unwrap();
            assert!((y - x).abs() < 1e-15);
        } else {
            assert!(r[3].is_empty());
        }
    }
}

#[test]
fn simulate_beta2_with_inputs_matches_closed_form() {
    let d = TempDir::new().unwrap();
    let p = write(
        d.path(),
        "op.json",
        r#"{"A": [[[0.3, 0]]], "C": [[[0.5, 0]]], "weight": {"kind": "beta_alpha", "alpha": 2}}"#,
    );
    let o = run(&["colligate", p.to_str().unwrap(), "--k-max", "6"]);
    let fam = json_of(&o);
    let dims: Vec<usize> = fam["steps"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["u"].as_u64().unwrap() as usize)
        .collect();
    let inputs: Vec<Vec<[f64; 2]>> = dims
        .iter()
        .take(6)
        .enumerate()
        .map(|(j, &u)| vec![[1.0 / (j as f64 + 1.0), 0.25]; u])
        .collect();
    let ip = write(d.path(), "u.json", &serde_json::to_string(&inputs).unwrap());
    let o = run(&[
        "simulate",
        p.to_str().unwrap(),
        "--steps",
        "6",
        "--x0",
        "[[0.5, -1]]",
        "--inputs",
        ip.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_of(&o);
    assert!(v["closed_form_residual"].as_f64().unwrap() < 1e-12);
    assert_eq!(v["states"].as_array().unwrap().len(), 7);
    assert_eq!(v["outputs"].as_array().unwrap().len(), 6);
}

#[test]
fn simulate_rejects_wrong_state_dimension() {
    let d = TempDir::new().unwrap();
    let p = write(
        d.path(),
        "op.json",
        r#"{"A": [[[0.5, 0]]], "C": [[[1, 0]]]}"#,
    );
    let o = run(&["simulate", p.to_str().unwrap(), "--x0", "[1, 2]"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn invalid_config_exits_2() {
    assert_eq!(code(&run(&["--tol", "0", "weights"])), 2);
    assert_eq!(code(&run(&["--tol", "-1e-3", "weights"])), 2);
    assert_eq!(code(&run(&["--k-max", "0", "charfn", "--t", "0.5"])), 2);
    assert_eq!(code(&run(&["--rank-tol", "0", "weights"])), 2);
}

#[test]
fn tolerance_env_override_is_recorded() {
    let o = bin()
        .args(["weights", "--alpha", "3", "-n", "16"])
        .env("HARDY_BETA_TOL", "1e-6")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(json_of(&o)["config"]["tol"].as_f64(), Some(1e-6));
    let o = bin()
        .args(["--tol", "1e-9", "weights"])
        .env("HARDY_BETA_TOL", "1e-6")
        .output()
        .unwrap();
    assert_eq!(json_of(&o)["config"]["tol"].as_f64(), Some(1e-9));
}

#[test]
fn out_flag_writes_file() {
    let d = TempDir::new().unwrap();
    let out = d.path().join("w.json");
    let o = run(&[
        "weights",
        "--alpha",
        "2",
        "-n",
        "16",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let direct = run(&["weights", "--alpha", "2", "-n", "16"]);
    assert_eq!(fs::read(&out).unwrap(), direct.stdout);
}

#[test]
fn reports_are_byte_identical() {
    let d = TempDir::new().unwrap();
    let p = write(
        d.path(),
        "op.json",
        r#"{"T": [[[0.3, 0], [0.2, 0.1]], [[0, 0], [-0.2, 0]]], "weight": {"kind": "beta_alpha", "alpha": 2}}"#,
    );
    let a = run(&["charfn", p.to_str().unwrap(), "--order", "6", "--jobs", "1"]);
    let b = run(&["charfn", p.to_str().unwrap(), "--order", "6", "--jobs", "4"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let a = run(&[
        "verify", "--suite", "1,2,6,7", "--trials", "2", "--seed", "11",
    ]);
    let b = run(&[
        "verify", "--suite", "1,2,6,7", "--trials", "2", "--seed", "11", "--jobs", "2",
    ]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let v = json_of(&a);
    assert_eq!(v["config"]["seed"], 11);
    assert_eq!(v["passed"], 4);
    assert!(v["results"][0].get("seconds").is_none());
}

#[test]
fn verify_rejects_unknown_criterion() {
    assert_eq!(code(&run(&["verify", "--suite", "13"])), 2);
    assert_eq!(code(&run(&["verify", "--suite", "0"])), 2);
    assert_eq!(code(&run(&["verify", "--trials", "0", "--suite", "1"])), 2);
}

#[test]
fn verify_full_suite_passes() {
    let o = run(&["verify", "--suite", "all", "--seed", "7"]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(code(&o), 0, "{err}");
    assert_eq!(err.lines().filter(|l| l.starts_with("PASS")).count(), 12);
    let v = json_of(&o);
    assert_eq!(v["passed"], 12);
    assert_eq!(v["total"], 12);
}
