use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, SymmetricEigen};
use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_cone-contraction");
const SCHEMAS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/schemas");
const PROBLEMS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/problems");

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("CONE_CONTRACTION_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn schema_check(schema_file: &str, doc: &Value) {
    let text = std::fs::read_to_string(Path::new(SCHEMAS).join(schema_file)).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{schema_file}: {errors:?}\n{doc:#}");
}

/// Runs a command that must succeed and checks the envelope and its outputs against the schemas.
fn report(args: &[&str], outputs_schema: &str) -> Value {
    let out = run(args);
    assert_eq!(code(&out), 0, "args {args:?}: {}", stderr(&out));
    let doc: Value = serde_json::from_slice(&out.stdout).expect("JSON report");
    schema_check("run-report.schema.json", &doc);
    schema_check(outputs_schema, &doc["outputs"]);
    doc
}

fn problem(name: &str) -> String {
    format!("{PROBLEMS}/{name}")
}

fn write(dir: &TempDir, name: &str, v: &Value) -> String {
    let path: PathBuf = dir.path().join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    path.display().to_string()
}

fn sym(rows: &[&[f64]]) -> Value {
    json!({ "dim": rows.len(), "rows": rows })
}

fn dense(rows: &[&[f64]]) -> Value {
    json!({ "rows": rows })
}

fn rows_of(v: &Value) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(v["rows"].clone()).unwrap();
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

/// `lambda_min(L^-1 X L^-T)` with `Y = L L'`, the largest `t` with `X >= t Y`.
fn min_generalized_eig(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let l = y.clone().cholesky().unwrap().l();
    let li = l.try_inverse().unwrap();
    let m = &li * x * li.transpose();
    SymmetricEigen::new((&m + m.transpose()) * 0.5).eigenvalues.min()
}

fn grde_problem(
    a: &[&[f64]],
    b: &[&[f64]],
    c: &[&[f64]],
    d: &[&[f64]],
    l: &[&[f64]],
    q: &[&[f64]],
    r: &[&[f64]],
) -> Value {
    json!({
        "kind": "grde",
        "params": { "A": dense(a), "B": dense(b), "C": dense(c), "D": dense(d), "L": dense(l), "Q": sym(q), "R": sym(r) }
    })
}

#[test]
fn metric_commands() {
    let dir = TempDir::new().unwrap();
    let i2 = problem("identity2.json");
    let same = report(&["metric", &i2, &i2], "metric.schema.json");
    assert_eq!(same["outputs"]["dT"], json!(0.0));

    let four = problem("four_identity2.json");
    let sup = report(&["metric", &i2, &four, "--gauge", "sup"], "metric.schema.json");
    assert!((sup["outputs"]["dNu"].as_f64().unwrap() - 4f64.ln()).abs() < 1e-14);
    assert!((sup["outputs"]["dT"].as_f64().unwrap() - 4f64.ln()).abs() < 1e-14);

    // Diagonal pairs: the 2-norm of the log ratios.
    let (a, b) = ([2.0, 0.5, 3.0], [1.0, 4.0, 0.25]);
    let pa = write(&dir, "a.json", &sym(&[&[a[0], 0.0, 0.0], &[0.0, a[1], 0.0], &[0.0, 0.0, a[2]]]));
    let pb = write(&dir, "b.json", &sym(&[&[b[0], 0.0, 0.0], &[0.0, b[1], 0.0], &[0.0, 0.0, b[2]]]));
    let hand: f64 = (0..3).map(|i| (b[i] / a[i]).ln().powi(2)).sum::<f64>().sqrt();
    let p2 = report(&["metric", &pa, &pb, "--gauge", "2"], "metric.schema.json");
    assert!((p2["outputs"]["dNu"].as_f64().unwrap() - hand).abs() < 1e-12);

    let bad = write(&dir, "bad.json", &sym(&[&[1.0, 2.0], &[2.0, 1.0]]));
    assert_eq!(code(&run(&["metric", &i2, &bad])), 2);
    assert_eq!(code(&run(&["metric", &i2, &pa])), 2);
    assert_eq!(code(&run(&["metric", &i2, "/nonexistent.json"])), 2);
}

#[test]
fn integrate_zero_field_is_constant() {
    let dir = TempDir::new().unwrap();
    let z: &[&[f64]] = &[&[0.0, 0.0], &[0.0, 0.0]];
    let zc: &[&[f64]] = &[&[0.0], &[0.0]];
    let p = write(&dir, "zero.json", &grde_problem(z, zc, z, zc, &[&[0.0, 0.0]], z, &[&[1.0]]));
    let start = write(&dir, "start.json", &sym(&[&[2.0, 0.5], &[0.5, 1.0]]));
    let csv_path = dir.path().join("traj.csv");
    let csv_arg = csv_path.display().to_string();
    let doc = report(&["integrate", &p, "--from", &start, "--t1", "3", "--out", &csv_arg], "integrate.schema.json");
    assert_eq!(doc["outputs"]["exitReason"], "horizonReached");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,p_1_1,p_1_2,p_2_2");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert!(rows.len() >= 2);
    for r in &rows {
        assert_eq!(&r[1..], &[2.0, 0.5, 1.0]);
    }
    assert_eq!(rows.last().unwrap()[0], 3.0);
}

#[test]
fn integrate_scalar_riccati_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let start = write(&dir, "p0.json", &sym(&[&[1.0]]));
    let doc = report(
        &["integrate", &problem("scalar_grde.json"), "--from", &start, "--t1", "1", "--tol", "1e-11"],
        "integrate.schema.json",
    );
    // p' = 1 - 2p - p^2 = -(p - r1)(p - r2).
    let (r1, r2) = (2f64.sqrt() - 1.0, -(2f64.sqrt()) - 1.0);
    let s = r1 - r2;
    let c = (1.0 - r1) / (1.0 - r2);
    let oracle = |t: f64| (r1 - r2 * c * (-s * t).exp()) / (1.0 - c * (-s * t).exp());
    let got = doc["outputs"]["finalState"]["rows"][0][0].as_f64().unwrap();
    assert!((got - oracle(1.0)).abs() < 1e-8, "{got} vs {}", oracle(1.0));
    let traj = &doc["outputs"]["trajectory"];
    for (t, p) in traj["times"].as_array().unwrap().iter().zip(traj["states"].as_array().unwrap()) {
        let (t, p) = (t.as_f64().unwrap(), p["rows"][0][0].as_f64().unwrap());
        assert!((p - oracle(t)).abs() < 1e-8);
    }
}

#[test]
fn integrate_well_posed_grde_reaches_horizon() {
    let dir = TempDir::new().unwrap();
    let p = write(
        &dir,
        "wp.json",
        &grde_problem(
            &[&[0.3, 1.0], &[-0.5, -0.2]],
            &[&[1.0], &[0.5]],
            &[&[0.2, 0.0], &[0.1, 0.3]],
            &[&[0.4], &[0.0]],
            &[&[0.0, 0.0]],
            &[&[1.0, 0.0], &[0.0, 0.0]],
            &[&[0.0]],
        ),
    );
    let start = write(&dir, "p0.json", &sym(&[&[1.0, 0.2], &[0.2, 0.5]]));
    let doc = report(&["integrate", &p, "--from", &start, "--t1", "2", "--every", "0.25"], "integrate.schema.json");
    assert_eq!(doc["outputs"]["exitReason"], "horizonReached");
    assert_eq!(doc["outputs"]["finalTime"], json!(2.0));
}

#[test]
fn integrate_failure_classes() {
    let dir = TempDir::new().unwrap();
    // R + D'PD = -1 + P is indefinite at P = 1/2.
    let bad = write(
        &dir,
        "bad.json",
        &grde_problem(&[&[-1.0]], &[&[1.0]], &[&[0.0]], &[&[1.0]], &[&[0.0]], &[&[1.0]], &[&[-1.0]]),
    );
    let half = write(&dir, "half.json", &sym(&[&[0.5]]));
    let out = run(&["integrate", &bad, "--from", &half, "--t1", "1"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("infeasible start"));

    // p' = p^2 + 1 from p = 1 blows up at t = pi/4.
    let blow = write(
        &dir,
        "blow.json",
        &json!({ "kind": "stdRiccati", "params": { "A": dense(&[&[0.0]]), "Sigma": sym(&[&[-1.0]]), "D": sym(&[&[1.0]]) } }),
    );
    let one = write(&dir, "one.json", &sym(&[&[1.0]]));
    let out = run(&["integrate", &blow, "--from", &one, "--t1", "2"]);
    assert_eq!(code(&out), 4);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    schema_check("integrate.schema.json", &doc["outputs"]);
    assert_ne!(doc["outputs"]["exitReason"], "horizonReached");
    assert!((doc["outputs"]["finalTime"].as_f64().unwrap() - std::f64::consts::FRAC_PI_4).abs() < 1e-3);

    assert_eq!(code(&run(&["integrate", &problem("discrete_invertible.json"), "--from", &one, "--t1", "1"])), 2);
    assert_eq!(code(&run(&["integrate", &problem("scalar_grde.json"), "--t1", "1"])), 2);
}

#[test]
fn integrate_csv_to_stdout() {
    let out = run(&["integrate", &problem("counterexample.json"), "--t1", "0.2", "--every", "0.1", "--format", "csv"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("t,p_1_1,p_1_2,p_2_2\n0,1,0,1\n"));
    assert!(text.lines().last().unwrap().starts_with("0.2,"));
}

#[test]
fn rate_standard_identity_is_two() {
    let doc = report(&["rate", &problem("std_identity.json")], "rate-certificate.schema.json");
    assert_eq!(doc["outputs"]["rate"], json!(2.0));
    assert_eq!(doc["outputs"]["method"], "stdGlobalClosedForm");
    assert_eq!(doc["outputs"]["rigor"], "closedForm");
}

#[test]
fn rate_strict_grde_with_p0_uses_local_form() {
    let dir = TempDir::new().unwrap();
    let q = [[2.0, 0.3], [0.3, 1.0]];
    let l = [[0.5, -0.2]];
    let r = 1.5;
    let p = write(
        &dir,
        "strict.json",
        &grde_problem(
            &[&[-1.0, 0.4], &[0.0, -1.5]],
            &[&[1.0], &[0.2]],
            &[&[0.1, 0.0], &[0.0, 0.1]],
            &[&[0.1], &[0.0]],
            &[&l[0]],
            &[&q[0], &q[1]],
            &[&[r]],
        ),
    );
    let p0_rows = [[2.0, 0.5], [0.5, 1.0]];
    let p0 = write(&dir, "p0.json", &sym(&[&p0_rows[0], &p0_rows[1]]));
    let doc = report(&["rate", &p, "--p0", &p0], "rate-certificate.schema.json");
    assert_eq!(doc["outputs"]["method"], "grdeLocalClosedForm");
    let lm = DMatrix::from_row_slice(1, 2, &l[0]);
    let reduced = DMatrix::from_row_slice(2, 2, &[q[0][0], q[0][1], q[1][0], q[1][1]]) - lm.transpose() * &lm / r;
    let oracle = min_generalized_eig(&reduced, &DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
    assert!((doc["outputs"]["rate"].as_f64().unwrap() - oracle).abs() < 1e-12);
    assert_eq!(doc["outputs"]["domain"]["hi"]["rows"], json!(p0_rows));

    let general =
        report(&["rate", &p, "--p0", &p0, "--method", "general", "--samples", "200"], "rate-certificate.schema.json");
    assert_eq!(general["outputs"]["rigor"], "sampledEstimate");
    // The certified rate is a lower bound for the rate over the sampled interval.
    assert!(general["outputs"]["rate"].as_f64().unwrap() >= oracle - 1e-9);
}

#[test]
fn rate_indefinite_d_samples_negative_rate() {
    let dir = TempDir::new().unwrap();
    let p = write(
        &dir,
        "indef.json",
        &json!({
            "kind": "stdRiccati",
            "params": { "A": dense(&[&[-1.0, 0.0], &[0.0, -1.0]]), "Sigma": sym(&[&[1.0, 0.0], &[0.0, 1.0]]), "D": sym(&[&[1.0, 0.0], &[0.0, -1.0]]) }
        }),
    );
    let doc = report(&["rate", &p, "--method", "general", "--samples", "300"], "rate-certificate.schema.json");
    assert!(doc["outputs"]["rate"].as_f64().unwrap() < 0.0);
    assert!(!doc["outputs"]["witnesses"].as_array().unwrap().is_empty());
    assert_eq!(doc["seed"], doc["outputs"]["seed"]);

    let out = run(&["rate", &p, "--method", "closed"]);
    assert_eq!(code(&out), 3);
    let msg = stderr(&out);
    assert!(msg.contains("stdGlobalClosedForm") && msg.contains("grdeLocalClosedForm"), "{msg}");
}

#[test]
fn rate_indefinite_sigma_box() {
    let doc = report(&["rate", &problem("std_indefinite.json")], "rate-certificate.schema.json");
    let out = &doc["outputs"];
    assert_eq!(out["method"], "indefiniteSigmaBox");
    let lo = 2.0 - 3f64.sqrt();
    assert!((out["inputs"]["lambda"].as_f64().unwrap() - lo).abs() < 1e-12);
    assert!((out["rate"].as_f64().unwrap() - (1.0 - lo * lo) / lo).abs() < 1e-12);
}

#[test]
fn gare_commands() {
    let dir = TempDir::new().unwrap();
    let doc = report(&["gare", &problem("scalar_grde.json")], "gare.schema.json");
    let pbar = doc["outputs"]["solution"]["Pbar"]["rows"][0][0].as_f64().unwrap();
    assert!((pbar - (2f64.sqrt() - 1.0)).abs() < 1e-9);
    assert!(doc["outputs"]["convergenceBound"]["rate"].as_f64().unwrap() > 0.0);

    // -2P + 2I = 0 at P = I.
    let lyap = write(
        &dir,
        "lyap.json",
        &grde_problem(
            &[&[-1.0, 0.0], &[0.0, -1.0]],
            &[&[0.0], &[0.0]],
            &[&[0.0, 0.0], &[0.0, 0.0]],
            &[&[0.0], &[0.0]],
            &[&[0.0, 0.0]],
            &[&[2.0, 0.0], &[0.0, 2.0]],
            &[&[1.0]],
        ),
    );
    let doc = report(&["gare", &lyap, "--tol", "1e-12"], "gare.schema.json");
    let p = rows_of(&doc["outputs"]["solution"]["Pbar"]);
    assert!((p - DMatrix::<f64>::identity(2, 2)).norm() < 1e-10);

    let start = write(&dir, "start.json", &sym(&[&[3.0, 0.0], &[0.0, 0.5]]));
    let doc = report(&["gare", &problem("std_identity.json"), "--P0", &start], "gare.schema.json");
    assert!(doc["outputs"]["solution"]["residualNorm"].as_f64().unwrap() < 1e-8);
    assert!(doc["outputs"]["convergenceBound"]["rate"].as_f64().unwrap() > 0.0);
}

#[test]
fn discrete_commands() {
    let dir = TempDir::new().unwrap();
    let doc = report(&["discrete", &problem("discrete_invertible.json"), "--samples", "3000"], "discrete.schema.json");
    let rep = &doc["outputs"]["report"];
    assert_eq!(rep["strict"], json!(true));
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.8]);
    let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 1.0]);
    let s = b.try_inverse().unwrap() * a;
    assert!((rows_of(&rep["S"]) - s).norm() < 1e-10);
    assert_eq!(doc["outputs"]["empirical"]["withinBound"], json!(true));
    assert!(doc["outputs"]["empirical"]["maxRatio"].as_f64().unwrap() <= rep["bound"].as_f64().unwrap() + 1e-9);

    let z: &[&[f64]] = &[&[0.0, 0.0], &[0.0, 0.0]];
    let i: &[&[f64]] = &[&[1.0, 0.0], &[0.0, 1.0]];
    let zero = write(
        &dir,
        "zero.json",
        &json!({ "kind": "discrete", "params": { "A": dense(z), "B": dense(i), "C": dense(z), "D": dense(z), "Q": sym(i), "R": sym(i) } }),
    );
    let doc = report(&["discrete", &zero, "--samples", "100"], "discrete.schema.json");
    assert_eq!(doc["outputs"]["report"]["bound"], json!(0.0));
    assert_eq!(doc["outputs"]["empirical"]["maxRatio"], json!(0.0));
}

#[test]
fn audit_commands() {
    let p2 = report(&["audit-finsler", "--n", "2", "--gauge", "2"], "violation-report.schema.json");
    assert!(!p2["outputs"]["witnesses"].as_array().unwrap().is_empty());
    let sup = report(&["audit-finsler", "--gauge", "sup"], "violation-report.schema.json");
    assert!(sup["outputs"]["witnesses"].as_array().unwrap().is_empty());
    assert!(sup["outputs"]["maxValue"].as_f64().unwrap() <= 0.0);

    let dir = TempDir::new().unwrap();
    let grid = write(&dir, "grid.json", &json!({ "epsilons": [0.01], "lambdaLast": [0.5], "e": [1.0] }));
    let one = report(&["audit-finsler", "--gauge", "1", "--grid", &grid], "violation-report.schema.json");
    let w = &one["outputs"]["witnesses"][0];
    // Subgradient of the 1-norm at lambda = (1, 0.5) is mu = (1, 1).
    let closed = -2.0 * 0.01 * (1.0 + 0.5) + 1.0 * (-0.5 * 1.0 + 1.0 * 1.0);
    assert!((w["value"].as_f64().unwrap() - closed).abs() < 1e-12, "{w}");
    assert_eq!(code(&run(&["audit-finsler", "--n", "1"])), 2);
    assert_eq!(code(&run(&["audit-finsler", "--gauge", "0.5"])), 2);
}

#[test]
fn orthant_logistic_rate() {
    let doc = report(&["orthant-rate", &problem("logistic_orthant.json")], "rate-certificate.schema.json");
    let rate = doc["outputs"]["rate"].as_f64().unwrap();
    // g(x) = 1/x + x, minimized at x = 1.
    assert!((2.0..2.0 + 1e-4).contains(&rate), "{rate}");
    assert_eq!(doc["outputs"]["method"], "orthantInfimum");
    assert_eq!(code(&run(&["orthant-rate", &problem("scalar_grde.json")])), 2);
}

#[test]
fn reports_are_deterministic_and_atomic() {
    let dir = TempDir::new().unwrap();
    let args = ["discrete", &problem("discrete_invertible.json"), "--samples", "500", "--seed", "9"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.stdout, b.stdout);
    let seq = run_env(&args, &[("CONE_CONTRACTION_THREADS", "1")]);
    let two = run_env(&args, &[("CONE_CONTRACTION_THREADS", "2")]);
    assert_eq!(a.stdout, seq.stdout);
    assert_eq!(a.stdout, two.stdout);
    assert_eq!(code(&run_env(&args, &[("CONE_CONTRACTION_THREADS", "zero")])), 2);

    let other = run(&["discrete", &problem("discrete_invertible.json"), "--samples", "500", "--seed", "10"]);
    let (da, db): (Value, Value) =
        (serde_json::from_slice(&a.stdout).unwrap(), serde_json::from_slice(&other.stdout).unwrap());
    assert_eq!(da["inputsDigest"], db["inputsDigest"]);
    assert_ne!(da["seed"], db["seed"]);

    let out_path = dir.path().join("report.json");
    let out_arg = out_path.display().to_string();
    let mut with_out = args.to_vec();
    with_out.extend(["--out", &out_arg]);
    let quiet = run(&with_out);
    assert_eq!(code(&quiet), 0);
    assert!(quiet.stdout.is_empty());
    assert_eq!(std::fs::read(&out_path).unwrap(), a.stdout);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);

    let timed = run(&["metric", &problem("identity2.json"), &problem("identity2.json"), "--timing"]);
    let doc: Value = serde_json::from_slice(&timed.stdout).unwrap();
    schema_check("run-report.schema.json", &doc);
    assert!(doc["wallTime"].as_f64().unwrap() >= 0.0);
}

#[test]
fn malformed_problems_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(problem("scalar_grde.json")).unwrap()).unwrap();
    doc["extra"] = json!(1);
    let extra = write(&dir, "extra.json", &doc);
    let out = run(&["gare", &extra]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("schema"));

    doc.as_object_mut().unwrap().remove("extra");
    doc["params"]["E"] = dense(&[&[1.0]]);
    let unknown = write(&dir, "unknown.json", &doc);
    assert_eq!(code(&run(&["gare", &unknown])), 2);

    let ragged = write(
        &dir,
        "ragged.json",
        &json!({ "kind": "stdRiccati", "params": { "A": dense(&[&[1.0, 2.0]]), "Sigma": sym(&[&[1.0]]), "D": sym(&[&[1.0]]) } }),
    );
    assert_eq!(code(&run(&["rate", &ragged])), 2);
    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{ not json").unwrap();
    assert_eq!(code(&run(&["rate", &garbage.display().to_string()])), 2);
    assert_eq!(code(&run(&["metric", &problem("identity2.json"), &problem("identity2.json"), "--format", "csv"])), 2);
}

#[test]
fn shipped_problems_match_schema() {
    for entry in std::fs::read_dir(PROBLEMS).unwrap() {
        let path = entry.unwrap().path();
        let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        if doc.get("kind").is_some() {
            schema_check("problem.schema.json", &doc);
        }
    }
}
