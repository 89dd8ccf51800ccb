use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_thermaleq"));
    c.env_remove("THERMALEQ_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().map(String::from).zip(rec.unwrap().iter().map(String::from)).collect())
        .collect()
}

fn num(row: &std::collections::HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

#[test]
fn config_schema_lists_fields_and_defaults() {
    let o = run(&["config-schema"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for field in ["system.gap", "bath.model", "coupling.structure", "degeneracy_tolerance", "time_average.n_samples", "threads"] {
        assert!(text.contains(field), "missing {field}");
    }
    let json_start = text.find('{').unwrap();
    let v: Value = serde_json::from_str(&text[json_start..]).unwrap();
    assert_eq!(v["max_dimension"], 4096);
}

#[test]
fn uncoupled_simulation_and_byte_identical_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"bath": {"model": "ladder", "n_states": 6, "width": 1.0}, "lambdas": [0.0], "betas": [1.0]}"#,
    );
    let out = tmp.path().join("run");
    let files = ["result.json", "bath_spectrum.csv", "rho_system.json", "rho_composite.json"];
    let mut first = Vec::new();
    for pass in 0..2 {
        let o = run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--dump-matrices"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
        if pass == 0 {
            first = bytes;
        } else {
            for (f, (a, b)) in files.iter().zip(first.iter().zip(&bytes)) {
                assert!(a == b, "{f} differs between runs");
            }
        }
    }
    let result = read_json(&out.join("result.json"));
    assert_eq!(result["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(result["config"]["bath"]["n_states"], 6);
    let rec = &result["record"];
    assert!((rec["p0_diag"].as_f64().unwrap() - 1.0).abs() < 1e-15);
    let expected_dev = 1.0 - 1.0 / (1.0 + (-1.0f64).exp());
    assert!((rec["deviation"].as_f64().unwrap() - expected_dev).abs() < 1e-12);
    assert_eq!(rec["beta_eff"], "inf");

    let spectrum = fs::read_to_string(out.join("bath_spectrum.csv")).unwrap();
    let lines: Vec<&str> = spectrum.lines().collect();
    assert_eq!(lines[0], "index,energy");
    assert_eq!(lines[1], "1,0.0");
    assert_eq!(lines[6], "6,1.0");

    let dump = read_json(&out.join("rho_composite.json"));
    assert_eq!(dump["rows"], 12);
    let entries = dump["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 144);
    assert_eq!(entries[0].as_array().unwrap().len(), 2);
}

#[test]
fn rabi_configuration_matches_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "rabi.json",
        r#"{"system": {"gap": 0.8}, "bath": {"model": "ladder", "n_states": 1},
            "coupling": {"structure": "system-flip"}, "lambdas": [0.35], "betas": [2.0]}"#,
    );
    let out = tmp.path().join("out");
    let o = run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let p0 = read_json(&out.join("result.json"))["record"]["p0_diag"].as_f64().unwrap();
    let (l, d) = (0.35f64, 0.8f64);
    assert!((p0 - (1.0 - 2.0 * l * l / (4.0 * l * l + d * d))).abs() < 1e-12);
}

#[test]
fn invalid_inputs_exit_nonzero_with_messages() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();

    let o = run(&["simulate", "--out", out, "--beta", "1,2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("exactly one value"));

    let o = run(&["simulate", "--out", out, "--n-states", "3000"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("max_dimension"));

    let o = run(&["sweep", "--out", out, "--beta", "-1"]);
    assert_eq!(o.status.code(), Some(2));

    let bad = write_config(tmp.path(), "bad.json", r#"{"betas": [1.0], "bogus": 1}"#);
    let o = run(&["sweep", "--config", &bad, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));
}

#[test]
fn sweep_records_are_ordered_and_thread_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.json",
        r#"{"bath": {"n_states": 12}, "betas": [0.0, 1.5], "lambdas": [0.01, 0.1], "seeds": [4, 4, 9]}"#,
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = run(&["sweep", "--config", &cfg, "--out", a.to_str().unwrap(), "--threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bin()
        .args(["sweep", "--config", &cfg, "--out", b.to_str().unwrap()])
        .env("THERMALEQ_THREADS", "3")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("sweep.csv")).unwrap(), fs::read(b.join("sweep.csv")).unwrap());

    let rows = csv_rows(&a.join("sweep.csv"));
    assert_eq!(rows.len(), 2 * 2 * 3);
    let order: Vec<(String, String, String)> =
        rows.iter().map(|r| (r["beta"].clone(), r["lambda"].clone(), r["seed"].clone())).collect();
    assert_eq!(order[0], ("0.0".into(), "0.01".into(), "4".into()));
    assert_eq!(order[2], ("0.0".into(), "0.01".into(), "9".into()));
    assert_eq!(order[3], ("0.0".into(), "0.1".into(), "4".into()));
    assert_eq!(order[6], ("1.5".into(), "0.01".into(), "4".into()));
    for r in &rows {
        assert_eq!(r["status"], "ok");
        if r["beta"] == "0.0" {
            assert_eq!(num(r, "p0_gibbs"), 0.5);
        }
    }
    for pair in rows.chunks(3) {
        let strip = |r: &std::collections::HashMap<String, String>| {
            let mut v: Vec<(String, String)> = r.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            v.sort();
            v
        };
        assert_eq!(strip(&pair[0]), strip(&pair[1]));
    }
    let header = read_json(&a.join("sweep.json"));
    assert_eq!(header["summary"]["records"], 12);
    assert!(header["config"]["betas"].is_array());
    assert!(a.join("timings.csv").exists());
}

#[test]
fn size_sweep_emits_trend_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "n.json",
        r#"{"bath_sizes": [16, 32, 64, 128], "betas": [1.0], "lambdas": [0.1],
            "seeds": [1, 2, 3, 4, 5, 6, 7, 8]}"#,
    );
    let out = tmp.path().join("n");
    let o = run(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trend = read_json(&out.join("sweep.json"))["summary"]["size_trend"].clone();
    let trend = trend.as_array().unwrap();
    assert_eq!(trend.len(), 4);
    for (t, n) in trend.iter().zip([16, 32, 64, 128]) {
        assert_eq!(t["n_states"], n);
        assert_eq!(t["samples"], 8);
        assert!(t["mean_deviation"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn laplace_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("two");
    let o = run(&["laplace", "--delta", "1.5", "--model", "two-level-gas", "--nmax", "6", "--x", "0.5,1,3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("laplace.csv"));
    assert_eq!(rows.len(), 3 * 12);
    for r in &rows {
        assert_eq!(num(r, "partial_sum_re"), 0.0);
        assert_eq!(num(r, "partial_sum_im"), 0.0);
    }
    let report = read_json(&out.join("laplace.json"));
    for s in report["report"]["series"].as_array().unwrap() {
        assert_eq!(s["behaviour"]["verdict"], "converged");
    }

    let out = tmp.path().join("const");
    let o = run(&["laplace", "--delta", "1", "--model", "constant", "--nmax", "16", "--x", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let report = read_json(&out.join("laplace.json"));
    let s = &report["report"]["series"][0];
    assert_ne!(s["behaviour"]["verdict"], "converged");
    for t in s["terms"].as_array().unwrap() {
        let z = t["formula"].as_array().unwrap();
        let m = (z[0].as_f64().unwrap().powi(2) + z[1].as_f64().unwrap().powi(2)).sqrt();
        assert!((m - 1.0).abs() < 1e-12);
    }

    let out = tmp.path().join("gas");
    let o = run(&["laplace", "--delta", "1", "--model", "classical-ideal-gas", "--particles", "4", "--nmax", "12", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let report = read_json(&out.join("laplace.json"));
    for s in report["report"]["series"].as_array().unwrap() {
        let p = s["behaviour"]["fitted_exponent"].as_f64().unwrap();
        assert!((p + 6.0).abs() <= 0.3, "exponent {p}");
    }
}

#[test]
fn oracle_check_passes_and_detects_over_merged_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();

    let o = run(&["oracle-check", "--out", out]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));

    let o = run(&["oracle-check", "--out", out, "--lambda", "0"]);
    assert!(o.status.success(), "{}", stdout(&o));

    // 1e3 times the default bath width of 2
    let o = run(&["oracle-check", "--out", out, "--epsilon", "2000"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("FAIL diagonal-ensemble/time-average")));
    let report = read_json(&Path::new(out).join("oracle_check.json"));
    assert_eq!(report["passed"], false);

    let o = run(&["oracle-check", "--out", out, "--n-states", "40"]);
    assert_eq!(o.status.code(), Some(2));
}
