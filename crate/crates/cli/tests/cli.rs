use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sindyc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sindyc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sindyc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(args: &[&str]) -> i32 {
    sindyc(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = r#"{"simulation": {"duration": 0.2, "ramp_duration": 0.05}, "suite": {"subsets": 3, "seed": 5}}"#;

/// Simulates the small suite into `dir`.
fn small_suite(dir: &Path) -> PathBuf {
    let cfg = dir.join("config.json");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.join("data");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let head = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect();
    (head, rows)
}

fn write_csv(path: &Path, head: &[String], rows: &[Vec<String>]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(head).unwrap();
    for r in rows {
        w.write_record(r).unwrap();
    }
    w.flush().unwrap();
}

/// Copy of a dataset whose torque column is an exact library-3 expression.
fn oracle_dataset(data: &Path, dir: &Path) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let (head, mut rows) = csv_rows(&data.join("B_train.csv"));
    let meta: Value = json(&data.join("B_train.meta.json"));
    let dt = meta["dt"].as_f64().unwrap();
    let col = |name: &str| head.iter().position(|h| h.starts_with(&format!("{name}["))).unwrap();
    let (id, iq, vd, vq, te, sub) = (
        col("i_d"),
        col("i_q"),
        col("v_d"),
        col("v_q"),
        col("T_e"),
        col("subset_id"),
    );
    let mut integral = [0.0f64; 2];
    let mut prev: Option<(String, [f64; 2])> = None;
    for row in rows.iter_mut() {
        let v = [row[vd].parse::<f64>().unwrap(), row[vq].parse::<f64>().unwrap()];
        match &prev {
            Some((s, pv)) if *s == row[sub] => {
                integral[0] += 0.5 * dt * (pv[0] + v[0]);
                integral[1] += 0.5 * dt * (pv[1] + v[1]);
            }
            _ => integral = [0.0, 0.0],
        }
        prev = Some((row[sub].clone(), v));
        let (i_d, i_q) = (row[id].parse::<f64>().unwrap(), row[iq].parse::<f64>().unwrap());
        row[te] = format!("{:?}", 1.5 * (integral[0] * i_q - integral[1] * i_d));
    }
    let path = dir.join("oracle.csv");
    write_csv(&path, &head, &rows);
    fs::copy(data.join("B_train.meta.json"), dir.join("oracle.meta.json")).unwrap();
    path
}

#[test]
fn simulate_is_reproducible_and_passes_the_nameplate_check() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = small_suite(a.path());
    let db = small_suite(b.path());
    for label in ["A", "B", "C"] {
        for role in ["train", "test"] {
            let name = format!("{label}_{role}.csv");
            assert_eq!(
                fs::read(da.join(&name)).unwrap(),
                fs::read(db.join(&name)).unwrap(),
                "{name}"
            );
        }
    }
    let (head, rows) = csv_rows(&da.join("A_train.csv"));
    assert_eq!(head[0], "time[s]");
    assert_eq!(head[19], "subset_id[-]");
    assert_eq!(rows.len(), 3 * 2000);
    let manifest = json(&da.join("manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 13);
    let check = json(&da.join("nameplate.json"));
    assert!(check["relative_error"].as_f64().unwrap().abs() <= 0.02);
}

#[test]
fn desk_scale_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    ok(&["simulate", "--out", p(&out)]);
    let (_, rows) = csv_rows(&out.join("C_train.csv"));
    assert_eq!(rows.len(), 5 * 10_000);
    let (_, test) = csv_rows(&out.join("C_test.csv"));
    assert_eq!(test.len(), 10_000);
    assert!(rows.iter().filter(|r| r[19] == "4").count() == 10_000);
}

#[test]
fn tune_trace_has_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_suite(dir.path());
    let ds = data.join("B_train.csv");
    for n in ["1", "4"] {
        let out = dir.path().join(format!("tune{n}"));
        ok(&[
            "tune",
            "--dataset",
            p(&ds),
            "--target",
            "torque",
            "--trials",
            n,
            "--libraries",
            "1,3",
            "--out",
            p(&out),
        ]);
        let (head, rows) = csv_rows(&out.join("trace.csv"));
        assert_eq!(rows.len(), n.parse::<usize>().unwrap());
        assert!(head.iter().all(|h| h.ends_with(']')));
        assert!(out.join("model.json").exists());
    }
}

#[test]
fn tune_on_oracle_data_selects_an_exact_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_suite(dir.path());
    let oracle = oracle_dataset(&data, &dir.path().join("oracle"));
    let out = dir.path().join("tune");
    ok(&[
        "tune",
        "--dataset",
        p(&oracle),
        "--target",
        "torque",
        "--trials",
        "10",
        "--libraries",
        "3",
        "--optimizers",
        "stlsq",
        "--policy",
        "min-error",
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    let sel = json(&out.join("selection.json"));
    assert!(sel["normalized_mse"].as_f64().unwrap() < 1e-6, "{sel}");
}

#[test]
fn failed_trials_are_flagged_and_all_failing_is_numerical() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_suite(dir.path());
    let (head, mut rows) = csv_rows(&data.join("B_train.csv"));
    for r in rows.iter_mut() {
        r[7] = "NaN".into();
    }
    let bad = dir.path().join("nan.csv");
    write_csv(&bad, &head, &rows);
    let out = dir.path().join("tune");
    let args = [
        "tune",
        "--dataset",
        p(&bad),
        "--target",
        "torque",
        "--trials",
        "3",
        "--libraries",
        "3",
        "--out",
        p(&out),
    ];
    assert_eq!(code(&args), 3);
    let (_, trace) = csv_rows(&out.join("trace.csv"));
    assert_eq!(trace.len(), 3);
    assert!(trace.iter().all(|r| r[11] == "true"));
}

#[test]
fn fit_zero_target_wye_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_suite(dir.path());
    let centric = data.join("A_train.csv");
    let ump = dir.path().join("ump");
    ok(&["fit", "--dataset", p(&centric), "--target", "ump", "--out", p(&ump)]);
    let model = json(&ump.join("model.json"));
    assert!(model["coefficients"]
        .as_array()
        .unwrap()
        .iter()
        .all(|v| v.as_f64() == Some(0.0)));

    let dynamics = |out: &Path| {
        ok(&[
            "fit",
            "--dataset",
            p(&data.join("C_train.csv")),
            "--target",
            "dynamics",
            "--out",
            p(out),
        ]);
        fs::read(out.join("model.json")).unwrap()
    };
    let first = dynamics(&dir.path().join("dyn1"));
    let second = dynamics(&dir.path().join("dyn2"));
    assert_eq!(first, second);
    let model: Value = serde_json::from_slice(&first).unwrap();
    let terms = model["dims"]["terms"].as_u64().unwrap() as usize;
    let c = model["coefficients"].as_array().unwrap();
    assert!(c[2 * terms..3 * terms].iter().all(|v| v.as_f64() == Some(0.0)));
}

#[test]
fn evaluate_reports_and_plot_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_suite(dir.path());
    let oracle = oracle_dataset(&data, &dir.path().join("oracle"));
    let torque = dir.path().join("torque");
    ok(&[
        "fit",
        "--dataset",
        p(&oracle),
        "--target",
        "torque",
        "--library",
        "3",
        "--alpha",
        "0",
        "--threshold",
        "1e-3",
        "--out",
        p(&torque),
    ]);
    let ump = dir.path().join("ump");
    ok(&[
        "fit",
        "--dataset",
        p(&data.join("A_train.csv")),
        "--target",
        "ump",
        "--out",
        p(&ump),
    ]);
    let eval = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--model",
        p(&torque.join("model.json")),
        "--model",
        p(&ump.join("model.json")),
        "--dataset",
        p(&oracle),
        "--out",
        p(&eval),
    ]);
    let report = json(&eval.join("report.json"));
    let channel = |name: &str| {
        report["channels"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["name"] == name)
            .cloned()
            .unwrap_or_else(|| panic!("{name} missing"))
    };
    assert!(channel("T_e")["mae"].as_f64().unwrap() < 1e-8);
    assert!(channel("T_e_comp")["mae"].as_f64().is_some());
    assert_eq!(channel("F_x")["active_terms"], 0);
    assert_eq!(channel("F_y")["active_terms"], 0);
    let (head, rows) = csv_rows(&eval.join("torque.csv"));
    assert_eq!(
        head,
        vec![
            "time[s]",
            "subset_id[-]",
            "T_e_ref[N*m]",
            "T_e_pred[N*m]",
            "T_e_comp[N*m]"
        ]
    );
    assert_eq!(rows.len(), 3 * 2000);
    let (chead, crows) = csv_rows(&eval.join("coefficients_0.csv"));
    assert_eq!(chead[0], "term[-]");
    assert_eq!(crows.len(), 28);
    assert!(eval.join("ump.csv").exists());
    assert!(!eval.join("currents.csv").exists());

    let dyn_dir = dir.path().join("dyn");
    ok(&[
        "fit",
        "--dataset",
        p(&data.join("C_train.csv")),
        "--target",
        "dynamics",
        "--out",
        p(&dyn_dir),
    ]);
    let eval2 = dir.path().join("eval2");
    ok(&[
        "evaluate",
        "--model",
        p(&dyn_dir.join("model.json")),
        "--dataset",
        p(&data.join("C_test.csv")),
        "--out",
        p(&eval2),
    ]);
    let (head, _) = csv_rows(&eval2.join("currents.csv"));
    assert_eq!(head.len(), 8);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["fit", "--bogus"]), 1);
    assert_eq!(code(&["--help"]), 0);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    assert_eq!(
        code(&[
            "fit",
            "--dataset",
            p(&missing),
            "--target",
            "torque",
            "--out",
            p(dir.path())
        ]),
        2
    );

    let data = small_suite(dir.path());
    let ds = data.join("A_test.csv");
    assert_eq!(
        code(&[
            "fit",
            "--dataset",
            p(&ds),
            "--target",
            "torque",
            "--library",
            "9",
            "--out",
            p(dir.path())
        ]),
        1
    );
    assert_eq!(
        code(&[
            "fit",
            "--dataset",
            p(&ds),
            "--target",
            "torque",
            "--alpha",
            "-1",
            "--out",
            p(dir.path())
        ]),
        1
    );

    // header with an unknown channel
    let (mut head, rows) = csv_rows(&ds);
    head[16] = "T_x[N*m]".into();
    let renamed = dir.path().join("renamed.csv");
    write_csv(&renamed, &head, &rows[..50]);
    assert_eq!(
        code(&[
            "fit",
            "--dataset",
            p(&renamed),
            "--target",
            "torque",
            "--out",
            p(dir.path())
        ]),
        2
    );

    // tampering is caught by the manifest digest
    let mut text = fs::read_to_string(&ds).unwrap();
    let last = text.lines().last().unwrap().to_string();
    text.push_str(&last);
    text.push('\n');
    fs::write(&ds, text).unwrap();
    let out = sindyc(&["fit", "--dataset", p(&ds), "--target", "torque", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest"));
}
