use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use delay_h2::benchmark::{cascade_poles, cascade_state_space, benchmark_model, reported_model, CASCADE_ORDER};
use delay_h2::io::{model_to_json, parse_model, ModelFile};
use delay_h2::{DelayBlock, DelayedModel, PoleResidueModel};
use num_complex::Complex64;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delay-h2")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_model(path: &Path, m: ModelFile) {
    fs::write(path, model_to_json(&m)).unwrap();
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn first_order() -> PoleResidueModel {
    PoleResidueModel::siso(&[(Complex64::new(-1.0, 0.0), Complex64::new(1.0, 0.0))]).unwrap()
}

#[test]
fn reduce_cascade_with_input_delay() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("paper20.json");
    write_model(&model, ModelFile::PoleResidue(benchmark_model()));
    let out_dir = dir.path().join("out");
    let out = run(&["reduce", "--model", s(&model), "--order", "2", "--delays", "input", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("gap: J =") && stdout.contains("input delays") && stdout.contains("residuals"), "{stdout}");

    let reduced = parse_model(&fs::read_to_string(out_dir.join("reduced.json")).unwrap()).unwrap();
    let tau = reduced.delayed().unwrap().input_delays.delays()[0];
    assert!((tau - 8.62405).abs() < 1e-4, "{tau}");
    let report = json(&out_dir.join("report.json"));
    assert_eq!(report["converged"], Value::Bool(true));
    assert!((report["gap"]["j"].as_f64().unwrap() - 1.604828e-3).abs() < 1e-8);
    let config = json(&out_dir.join("run-config.json"));
    assert_eq!(config["subcommand"], "reduce");
    assert_eq!(config["delays"], "input");
    assert_eq!(config["config"]["order"], 2);
}

#[test]
fn run_config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("g.json");
    let mut r = 0.37_f64;
    let mut terms = Vec::new();
    for k in 0..5 {
        r = (r * 7.13).fract();
        terms.push((Complex64::new(-0.5 - k as f64 * 0.7, 0.0), Complex64::new(r - 0.3, 0.0)));
    }
    write_model(&model, ModelFile::PoleResidue(PoleResidueModel::siso(&terms).unwrap()));
    let first = dir.path().join("a");
    let out = run(&["reduce", "--model", s(&model), "--order", "2", "--delays", "io", "--seed", "5", "--out", s(&first)]);
    assert_ne!(code(&out), 1, "{}", stderr(&out));

    let echo = json(&first.join("run-config.json"));
    let second = dir.path().join("b");
    let mut args: Vec<String> = echo["args"].as_array().unwrap().iter().map(|a| a.as_str().unwrap().to_string()).collect();
    let at = args.iter().position(|a| a == "--out").unwrap();
    args[at + 1] = s(&second).to_string();
    let again = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&again), code(&out));
    for file in ["reduced.json", "report.json"] {
        assert_eq!(fs::read(first.join(file)).unwrap(), fs::read(second.join(file)).unwrap(), "{file}");
    }
    assert_eq!(echo["seed"], 5);
    assert_eq!(echo["config"]["irka"]["retry_seed"], 5);
}

#[test]
fn full_order_without_delays_has_no_gap() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("g.json");
    let g = PoleResidueModel::siso(&[
        (Complex64::new(-1.0, 2.0), Complex64::new(0.5, 0.25)),
        (Complex64::new(-1.0, -2.0), Complex64::new(0.5, -0.25)),
        (Complex64::new(-3.0, 0.0), Complex64::new(2.0, 0.0)),
    ])
    .unwrap();
    write_model(&model, ModelFile::PoleResidue(g));
    let out = run(&["reduce", "--model", s(&model), "--order", "3", "--delays", "none", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&dir.path().join("report.json"));
    assert!(report["gap"]["j"].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn state_space_input_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("cascade.json");
    write_model(&model, ModelFile::StateSpace(cascade_state_space(6)));
    let out = run(&["reduce", "--model", s(&model), "--order", "2", "--delays", "mask:1,0", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(json(&dir.path().join("run-config.json"))["model_kind"], "state_space");
}

#[test]
fn exhausted_budget_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("paper20.json");
    write_model(&model, ModelFile::PoleResidue(benchmark_model()));
    let out = run(&["reduce", "--model", s(&model), "--order", "2", "--outer-max-iters", "1", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(dir.path().join("reduced.json").exists());
    assert_eq!(json(&dir.path().join("report.json"))["converged"], Value::Bool(false));
}

#[test]
fn bad_input_exits_with_one_and_names_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"kind\": \"pole_residue\",\n \"terms\": [}").unwrap();
    let out = run(&["reduce", "--model", s(&broken), "--order", "2"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    let schema = dir.path().join("schema.json");
    fs::write(&schema, r#"{"kind": "pole_residue", "ny": 1, "nu": 1, "terms": [{"pole": [-1, 0], "left": [[1, 0]]}]}"#).unwrap();
    let out = run(&["reduce", "--model", s(&schema), "--order", "1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("$.terms[0]"), "{}", stderr(&out));

    let missing = dir.path().join("missing.json");
    assert_eq!(code(&run(&["reduce", "--model", s(&missing), "--order", "1"])), 1);
    let good = dir.path().join("g.json");
    write_model(&good, ModelFile::PoleResidue(first_order()));
    assert_eq!(code(&run(&["reduce", "--model", s(&good), "--order", "1", "--delays", "mask:11,1"])), 1);
    assert_eq!(code(&run(&["reduce", "--model", s(&good), "--order", "1", "--delays", "sideways"])), 1);
    assert_eq!(code(&run(&["reduce", "--model", s(&good), "--order", "0"])), 1);
    assert_eq!(code(&run(&["reduce", "--model", s(&good)])), 1);
    let threads = Command::new(env!("CARGO_BIN_EXE_delay-h2"))
        .args(["impulse", "--model", s(&good)])
        .env("DELAY_H2_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&threads), 1);
    assert!(stderr(&threads).contains("DELAY_H2_THREADS"));
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn impulse_of_a_first_order_lag() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("g.json");
    write_model(&model, ModelFile::PoleResidue(first_order()));
    let out = run(&["impulse", "--model", s(&model), "--t-max", "5", "--points", "501"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = csv_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(header, ["t", "y[0][0]"]);
    assert_eq!(rows.len(), 501);
    for row in &rows {
        assert!((row[1] - (-row[0]).exp()).abs() < 1e-12, "{row:?}");
    }
}

#[test]
fn impulse_of_a_delayed_model_starts_late() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("d.json");
    let d = DelayedModel::new(first_order(), DelayBlock::with_delays(vec![1.5]).unwrap(), DelayBlock::none(1)).unwrap();
    write_model(&model, ModelFile::Delayed(d));
    let csv = dir.path().join("y.csv");
    let out = run(&["impulse", "--model", s(&model), "--t-max", "5", "--points", "501", "--out", s(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (_, rows) = csv_rows(&fs::read_to_string(&csv).unwrap());
    for row in &rows {
        if row[0] < 1.5 {
            assert_eq!(row[1], 0.0);
        } else {
            assert!((row[1] - (1.5 - row[0]).exp()).abs() < 1e-12);
        }
    }
}

/// Classical RK4 on the bidiagonal cascade realization, started from `x(0) = B`.
fn rk4_cascade(t_max: f64, points: usize, substeps: usize) -> Vec<f64> {
    let mu = cascade_poles(CASCADE_ORDER);
    let n = mu.len();
    let f = |x: &[f64]| -> Vec<f64> { (0..n).map(|j| mu[j] * x[j] + if j > 0 { mu[j - 1] * x[j - 1] } else { 0.0 }).collect() };
    let h = t_max / ((points - 1) * substeps) as f64;
    let mut x = vec![0.0; n];
    x[0] = 1.0;
    let mut out = vec![mu[n - 1] * x[n - 1]];
    for _ in 1..points {
        for _ in 0..substeps {
            let k1 = f(&x);
            let k2 = f(&x.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect::<Vec<_>>());
            let k3 = f(&x.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect::<Vec<_>>());
            let k4 = f(&x.iter().zip(&k3).map(|(a, k)| a + h * k).collect::<Vec<_>>());
            for j in 0..n {
                x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        out.push(mu[n - 1] * x[n - 1]);
    }
    out
}

#[test]
fn impulse_of_the_cascade_matches_rk4() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("paper20.json");
    write_model(&model, ModelFile::PoleResidue(benchmark_model()));
    let out = run(&["impulse", "--model", s(&model), "--t-max", "40", "--points", "401"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (_, rows) = csv_rows(&String::from_utf8(out.stdout).unwrap());
    let oracle = rk4_cascade(40.0, 401, 20);
    for (row, want) in rows.iter().zip(&oracle) {
        assert!((row[1] - want).abs() < 1e-6, "t={} {} vs {want}", row[0], row[1]);
    }
}

#[test]
fn analyze_certifies_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("paper20.json");
    write_model(&model, ModelFile::PoleResidue(benchmark_model()));

    let published = dir.path().join("published.json");
    write_model(&published, ModelFile::Delayed(reported_model()));
    let out_dir = dir.path().join("analysis");
    let out = run(&["analyze", "--model", s(&model), "--candidate", s(&published), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out_dir.join("analysis.json"));
    let delay_res = v["residuals"]["delay_in"][0].as_f64().unwrap();
    assert!((delay_res - 9.7284e-5).abs() < 2e-6, "{delay_res:e}");
    assert!(v["residuals"]["interp_right"].as_array().unwrap().iter().all(|x| x.as_f64().unwrap() < 1e-4));

    let out = run(&["analyze", "--model", s(&model), "--candidate", s(&model), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out_dir.join("analysis.json"));
    assert!(v["gap"]["j"].as_f64().unwrap().abs() < 1e-12);

    let random = dir.path().join("random.json");
    let candidate = PoleResidueModel::siso(&[
        (Complex64::new(-0.3, 0.4), Complex64::new(0.1, -0.2)),
        (Complex64::new(-0.3, -0.4), Complex64::new(0.1, 0.2)),
    ])
    .unwrap();
    write_model(&random, ModelFile::PoleResidue(candidate));
    let out = run(&["analyze", "--model", s(&model), "--candidate", s(&random), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out_dir.join("analysis.json"));
    assert!(v["residuals"]["interp_hermite"].as_array().unwrap().iter().all(|x| x.as_f64().unwrap() > 0.0));

    let wide = dir.path().join("wide.json");
    let two_inputs = PoleResidueModel::new(
        vec![delay_h2::Term::new(
            delay_h2::precision::cdd(Complex64::new(-1.0, 0.0)),
            vec![delay_h2::precision::cdd(Complex64::new(1.0, 0.0))],
            vec![delay_h2::precision::cdd(Complex64::new(1.0, 0.0)); 2],
        )],
        1,
        2,
    )
    .unwrap();
    write_model(&wide, ModelFile::PoleResidue(two_inputs));
    let out = run(&["analyze", "--model", s(&model), "--candidate", s(&wide)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("dimension mismatch"), "{}", stderr(&out));
}

#[test]
fn bench_paper_regenerates_the_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["bench-paper", "--out", s(dir.path()), "--t-max", "50", "--points", "2000"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let g = parse_model(&fs::read_to_string(dir.path().join("paper20.json")).unwrap()).unwrap().pole_residue().unwrap();
    let mut poles: Vec<f64> = g.poles().iter().map(|p| p.re).collect();
    poles.sort_by(f64::total_cmp);
    assert_eq!(poles.len(), 20);
    for (k, p) in poles.iter().enumerate() {
        assert!((p - (-2.0 + k as f64 / 19.0)).abs() < 1e-15);
    }

    let table = fs::read_to_string(dir.path().join("mse.csv")).unwrap();
    let row = |label: &str| -> Vec<String> {
        table.lines().find(|l| l.starts_with(&format!("{label},"))).unwrap().split(',').map(String::from).collect()
    };
    let gap = |label: &str| -> f64 { row(label)[4].parse().unwrap() };
    let mse = |label: &str| -> f64 { row(label)[5].parse().unwrap() };
    assert!(mse("delayed_n4") < mse("free_n6"));
    for plain in ["free_n2", "free_n3"] {
        assert!(gap("delayed_n2") < gap(plain), "{plain}");
    }

    let (header, rows) = csv_rows(&fs::read_to_string(dir.path().join("impulse.csv")).unwrap());
    assert_eq!(header[..3], ["t", "original", "free_n2"]);
    assert_eq!(header.len(), 9);
    assert_eq!(rows.len(), 2000);
    assert_eq!(json(&dir.path().join("run-config.json"))["runs"].as_array().unwrap().len(), 7);
}
