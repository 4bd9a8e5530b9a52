use std::path::{Path, PathBuf};
use std::time::Instant;

use cone_contraction::discrete::{empirical_lipschitz, DEFAULT_RANK_TOL};
use cone_contraction::flow::{integrate, ExitReason, Recording};
use cone_contraction::gare::gare_convergence_bound;
use cone_contraction::gauge::{audit_nonexpansiveness, finsler_distance, SearchGrid};
use cone_contraction::rates::{
    degenerate_sigma_rate, general_rate_estimate, grde_local_rate, indefinite_sigma_analysis, orthant_box_samples,
    orthant_rate, std_global_rate, Domain, IndefiniteSigmaAnalysis, JacobianMode, RateCertificate,
};
use cone_contraction::vfield::ScalarBounds;
use cone_contraction::{
    lipschitz_report, solve_gare, solve_std_are, thompson_distance, DomainSampler, Execution, GrdeParams,
    OrderInterval, SpdMat, StdRiccatiParams, VectorField,
};
use serde_json::{json, Map, Value};

use crate::cli::{Cli, Command, Format, GlobalArgs, MethodArg};
use crate::error::{CliError, CliResult};
use crate::problem::{self, DomainSpec, Loaded, Problem, ProblemOptions};
use crate::report::{self, InputDigest, RunReport};

const DEFAULT_RATE_SAMPLES: usize = 500;
const DEFAULT_ORTHANT_SAMPLES: usize = 2000;

/// What a command produced: a JSON payload, or raw text already destined for stdout.
struct Outcome {
    outputs: Value,
    seed: Option<u64>,
    /// Nonzero when the command completed but reports a failure class.
    exit_code: u8,
    /// Printed instead of the JSON report (CSV trajectories).
    raw_stdout: Option<String>,
}

impl Outcome {
    fn json(outputs: Value, seed: Option<u64>) -> Self {
        Self { outputs, seed, exit_code: 0, raw_stdout: None }
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Numerical(format!("cannot encode output: {e}")))
}

pub fn run(cli: &Cli, exec: Execution) -> CliResult<u8> {
    let start = Instant::now();
    let g = &cli.global;
    if let Some(tol) = g.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(CliError::input("--tol must be positive"));
        }
    }
    if g.format == Format::Csv && !matches!(cli.command, Command::Integrate { .. }) {
        return Err(CliError::input("--format csv is only available for integrate"));
    }
    let mut digest = InputDigest::new(cli.command.name());
    let outcome = match &cli.command {
        Command::Metric { a, b, gauge } => metric(a, b, gauge.as_ref(), &mut digest)?,
        Command::Integrate { problem, from, t0, t1, every } => {
            integrate_cmd(g, problem, from.as_deref(), *t0, *t1, *every, &mut digest)?
        }
        Command::Rate { problem, method, domain, p0, samples } => {
            rate(g, problem, *method, domain.as_deref(), p0.as_deref(), *samples, exec, &mut digest)?
        }
        Command::Gare { problem, p0 } => gare(g, problem, p0.as_deref(), &mut digest)?,
        Command::Discrete { problem, samples } => discrete(g, problem, *samples, exec, &mut digest)?,
        Command::AuditFinsler { n, gauge, grid } => audit(*n, gauge, grid, exec, &mut digest)?,
        Command::OrthantRate { problem, samples, domain } => {
            orthant(g, problem, *samples, domain.as_deref(), exec, &mut digest)?
        }
    };
    if let Some(text) = outcome.raw_stdout {
        print!("{text}");
        return Ok(outcome.exit_code);
    }
    let report = RunReport {
        command: cli.command.name().to_string(),
        inputs_digest: digest.finish(),
        outputs: outcome.outputs,
        wall_time: g.timing.then(|| start.elapsed().as_secs_f64()),
        seed: outcome.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let bytes = report::to_json(&report)?;
    match (&g.out, &cli.command) {
        (Some(path), cmd) if !matches!(cmd, Command::Integrate { .. }) => report::write_atomic(path, &bytes)?,
        _ => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(outcome.exit_code)
}

fn metric(
    a: &Path,
    b: &Path,
    gauge: Option<&cone_contraction::GaugeFunction>,
    digest: &mut InputDigest,
) -> CliResult<Outcome> {
    let (pa, ba) = problem::load_matrix(a)?;
    let (pb, bb) = problem::load_matrix(b)?;
    digest.file("a", &ba);
    digest.file("b", &bb);
    if pa.dim() != pb.dim() {
        return Err(CliError::input(format!("dimension mismatch: {} vs {}", pa.dim(), pb.dim())));
    }
    let mut out = Map::new();
    out.insert("dT".into(), json!(thompson_distance(&pa, &pb)?));
    if let Some(nu) = gauge {
        digest.arg("gauge", nu.label());
        out.insert("gauge".into(), to_value(nu)?);
        out.insert("dNu".into(), json!(finsler_distance(nu, &pa, &pb)?));
    }
    Ok(Outcome::json(Value::Object(out), None))
}

/// Borrowed matrix flow of a problem, or an input error naming the accepted kinds.
fn matrix_field<'a>(p: &'a Problem, command: &str) -> CliResult<&'a dyn VectorField> {
    match p {
        Problem::Grde(f) | Problem::Counterexample(f) => Ok(f),
        Problem::Std(f) => Ok(f),
        other => Err(CliError::input(format!(
            "{command} needs a matrix flow (grde, stdRiccati or counterexample), got {}",
            other.kind_name()
        ))),
    }
}

fn start_matrix(
    flag: Option<&Path>,
    options: &ProblemOptions,
    name: &str,
    digest: &mut InputDigest,
) -> CliResult<Option<SpdMat>> {
    match flag {
        Some(path) => {
            let (m, bytes) = problem::load_matrix(path)?;
            digest.file(name, &bytes);
            Ok(Some(m))
        }
        None => Ok(options.p0.clone()),
    }
}

fn integrate_cmd(
    g: &GlobalArgs,
    path: &Path,
    from: Option<&Path>,
    t0: f64,
    t1: f64,
    every: Option<f64>,
    digest: &mut InputDigest,
) -> CliResult<Outcome> {
    let Loaded { problem, options, bytes } = problem::load(path)?;
    digest.file("problem", &bytes);
    digest.arg("t0", t0);
    digest.arg("t1", t1);
    let field = matrix_field(&problem, "integrate")?;
    let p0 = start_matrix(from, &options, "from", digest)?
        .ok_or_else(|| CliError::input("integrate needs a start matrix: pass --from or set options.P0"))?;
    if p0.dim() != field.dim() {
        return Err(CliError::input(format!("start matrix has dimension {}, problem has {}", p0.dim(), field.dim())));
    }
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(CliError::input("need finite --t0 <= --t1"));
    }
    if !field.is_feasible(t0, &p0) {
        return Err(CliError::Hypothesis("infeasible start: R + D'P0 D is not positive definite".into()));
    }
    let mut cfg = problem::integration_config(&options, g.tol)?;
    if let Some(dt) = every {
        cfg.record = Recording::Every(dt);
        cfg.validate()?;
    }
    if let Some(tol) = g.tol {
        digest.arg("tol", tol);
    }
    let traj = integrate(field, &p0, t0, t1, &cfg)?;
    let exit_code = if traj.exit_reason == ExitReason::HorizonReached { 0 } else { 4 };
    let csv = traj.to_csv();
    let mut out = Map::new();
    out.insert("exitReason".into(), json!(traj.exit_reason.as_str()));
    out.insert("exitTime".into(), json!(traj.exit_time));
    out.insert("finalTime".into(), json!(traj.final_time()));
    out.insert("finalState".into(), to_value(traj.final_state())?);
    out.insert("recordedPoints".into(), json!(traj.times.len()));
    out.insert("acceptedSteps".into(), json!(traj.accepted_steps));
    out.insert("rejectedSteps".into(), json!(traj.rejected_steps));
    match (&g.out, g.format) {
        (Some(csv_path), _) => {
            report::write_atomic(csv_path, csv.as_bytes())?;
            out.insert("csv".into(), json!(csv_path.display().to_string()));
        }
        (None, Format::Csv) => {
            return Ok(Outcome { outputs: Value::Null, seed: None, exit_code, raw_stdout: Some(csv) });
        }
        (None, Format::Json) => {
            out.insert("trajectory".into(), json!({ "times": traj.times, "states": to_value(&traj.states)? }));
        }
    }
    Ok(Outcome { outputs: Value::Object(out), seed: None, exit_code, raw_stdout: None })
}

fn interval_from(spec: DomainSpec) -> CliResult<OrderInterval> {
    match spec {
        DomainSpec::Interval(iv) => {
            let open_lo = iv.open_lo.unwrap_or(iv.lo.is_none());
            Ok(OrderInterval::new(iv.lo, iv.hi, open_lo, iv.open_hi)?)
        }
        DomainSpec::Box(_) => Err(CliError::input("expected a matrix interval with `hi` (and optional `lo`)")),
    }
}

fn domain_spec(
    flag: Option<&Path>,
    options: &ProblemOptions,
    digest: &mut InputDigest,
) -> CliResult<Option<DomainSpec>> {
    match flag {
        Some(path) => {
            let bytes = problem::read_file(path)?;
            digest.file("domain", &bytes);
            Ok(Some(problem::parse_json(&bytes, "domain file")?))
        }
        None => Ok(options.domain.clone()),
    }
}

/// Closed-form certificates that apply, with the hypotheses of those that do not.
fn closed_forms(
    problem: &Problem,
    options: &ProblemOptions,
    p0: Option<&SpdMat>,
) -> CliResult<(Vec<RateCertificate>, Vec<String>)> {
    let mut found = Vec::new();
    let mut failed = Vec::new();
    match problem {
        Problem::Std(f) => std_closed_forms(f, options.scalar_bounds, p0, &mut found, &mut failed)?,
        Problem::Grde(f) | Problem::Counterexample(f) => grde_closed_form(f, p0, &mut found, &mut failed),
        _ => {}
    }
    Ok((found, failed))
}

fn grde_closed_form(f: &GrdeParams, p0: Option<&SpdMat>, found: &mut Vec<RateCertificate>, failed: &mut Vec<String>) {
    match p0 {
        None => failed.push("grdeLocalClosedForm: needs P0 (--p0 or options.P0)".into()),
        Some(p0) => match grde_local_rate(f, p0) {
            Ok(c) => found.push(c),
            Err(e) => failed.push(format!("grdeLocalClosedForm: {e}")),
        },
    }
}

/// Checks that user-supplied scalar bounds are at least as conservative as the coefficients imply.
fn conservative_bounds(f: &StdRiccatiParams, supplied: Option<ScalarBounds>) -> CliResult<ScalarBounds> {
    let exact = f.scalar_bounds()?;
    let Some(b) = supplied else { return Ok(exact) };
    let slack = 1e-12;
    let ok = b.c_a <= exact.c_a + slack
        && b.c_d >= exact.c_d - slack
        && b.m_d <= exact.m_d + slack
        && b.c_sigma >= exact.c_sigma - slack;
    if ok {
        Ok(b)
    } else {
        Err(CliError::Hypothesis(format!(
            "supplied scalar bounds {b:?} are not implied by the coefficients (exact values {exact:?})"
        )))
    }
}

fn std_closed_forms(
    f: &StdRiccatiParams,
    supplied: Option<ScalarBounds>,
    p0: Option<&SpdMat>,
    found: &mut Vec<RateCertificate>,
    failed: &mut Vec<String>,
) -> CliResult<()> {
    let n = f.n();
    match std_global_rate(f.sigma(), f.dmat()) {
        Ok(c) if c.rate > 0.0 => found.push(c),
        Ok(_) => failed.push("stdGlobalClosedForm: Sigma^1/2 D Sigma^1/2 is singular, the global rate is 0".into()),
        Err(e) => failed.push(format!("stdGlobalClosedForm: {e}")),
    }
    let b = conservative_bounds(f, supplied)?;
    if b.c_sigma > 0.0 {
        match indefinite_sigma_analysis(&b)? {
            IndefiniteSigmaAnalysis::Admissible { interval } => {
                let lambda = match p0 {
                    Some(p0) if interval.contains(p0.max_eig()) => p0.max_eig(),
                    _ => interval.best_lambda(),
                };
                found.push(interval.certificate(lambda, n)?);
            }
            IndefiniteSigmaAnalysis::Violated { hypothesis, detail } => {
                failed.push(format!("indefiniteSigmaBox: {hypothesis} fails ({detail})"))
            }
        }
    } else if b.c_a > 0.0 && b.m_d > 0.0 {
        let floor = b.c_d / b.c_a;
        let lambda = p0.map_or(floor, |p| p.max_eig().max(floor));
        let top = SpdMat::scalar(n, lambda)?;
        let rate = degenerate_sigma_rate(b.c_a, b.c_d, b.m_d, &top)?;
        let mut inputs = Map::new();
        for (k, v) in [("cA", b.c_a), ("cD", b.c_d), ("mD", b.m_d), ("lambda", lambda)] {
            inputs.insert(k.into(), json!(v));
        }
        found.push(RateCertificate {
            rate,
            domain: Domain::OrderInterval { lo: None, hi: top, open_lo: true, open_hi: false },
            method: cone_contraction::RateMethod::DegenerateSigma,
            rigor: cone_contraction::Rigor::ClosedForm,
            witnesses: Vec::new(),
            seed: None,
            inputs,
            notes: Vec::new(),
        });
    } else {
        failed.push("degenerateSigma: needs cA > 0 and mD > 0".into());
    }
    match (p0, f.to_grde()) {
        (Some(p0), Ok(g)) => match grde_local_rate(&g, p0) {
            Ok(c) => found.push(c),
            Err(e) => failed.push(format!("grdeLocalClosedForm: {e}")),
        },
        (None, _) => failed.push("grdeLocalClosedForm: needs P0 (--p0 or options.P0)".into()),
        (_, Err(e)) => failed.push(format!("grdeLocalClosedForm: {e}")),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn rate(
    g: &GlobalArgs,
    path: &Path,
    method: MethodArg,
    domain: Option<&Path>,
    p0_flag: Option<&Path>,
    samples: Option<usize>,
    exec: Execution,
    digest: &mut InputDigest,
) -> CliResult<Outcome> {
    let Loaded { problem, options, bytes } = problem::load(path)?;
    digest.file("problem", &bytes);
    digest.arg("method", format!("{method:?}"));
    if let Problem::Orthant(_) = problem {
        return Err(CliError::input("orthant problems are handled by the orthant-rate command"));
    }
    if let Problem::Discrete(_) = problem {
        return Err(CliError::input("discrete problems are handled by the discrete command"));
    }
    let field = matrix_field(&problem, "rate")?;
    let p0 = start_matrix(p0_flag, &options, "p0", digest)?;
    if let Some(p) = &p0 {
        if p.dim() != field.dim() {
            return Err(CliError::input(format!("P0 has dimension {}, problem has {}", p.dim(), field.dim())));
        }
    }

    let mut notes = Vec::new();
    if method != MethodArg::General {
        let (mut found, failed) = closed_forms(&problem, &options, p0.as_ref())?;
        // Largest rate first; ties keep the earlier, wider-domain form.
        found.sort_by(|a, b| b.rate.total_cmp(&a.rate));
        if let Some(mut best) = found.into_iter().next() {
            best.notes.extend(failed.iter().map(|f| format!("not applicable: {f}")));
            return Ok(Outcome::json(to_value(&best)?, None));
        }
        if method == MethodArg::Closed {
            return Err(CliError::Hypothesis(format!("no closed-form rate applies:\n  {}", failed.join("\n  "))));
        }
        notes.extend(failed.iter().map(|f| format!("not applicable: {f}")));
    }

    let n = field.dim();
    let interval = match domain_spec(domain, &options, digest)? {
        Some(spec) => interval_from(spec)?,
        None => OrderInterval::below(p0.clone().unwrap_or_else(|| SpdMat::identity(n))),
    };
    if interval.dim() != n {
        return Err(CliError::input(format!("domain has dimension {}, problem has {n}", interval.dim())));
    }
    let count = samples.or(options.samples).unwrap_or(DEFAULT_RATE_SAMPLES);
    digest.arg("samples", count);
    let sampler = DomainSampler::interval(interval, count);
    let mut cert = general_rate_estimate(field, &sampler, &[0.0], g.seed, exec)?;
    cert.notes.extend(notes);
    Ok(Outcome::json(to_value(&cert)?, Some(g.seed)))
}

fn gare(g: &GlobalArgs, path: &Path, p0_flag: Option<&Path>, digest: &mut InputDigest) -> CliResult<Outcome> {
    let Loaded { problem, options, bytes } = problem::load(path)?;
    digest.file("problem", &bytes);
    let mut opts = options.gare.clone().unwrap_or_default();
    if let Some(tol) = g.tol {
        digest.arg("tol", tol);
        opts.tol = tol;
    }
    let p0 = start_matrix(p0_flag, &options, "p0", digest)?;
    let (solution, grde) = match &problem {
        Problem::Grde(f) | Problem::Counterexample(f) => (solve_gare(f, p0.as_ref(), &opts)?, f.clone()),
        Problem::Std(f) => (solve_std_are(f, p0.as_ref(), &opts)?, f.to_grde()?),
        other => {
            return Err(CliError::input(format!(
                "gare needs grde, stdRiccati or counterexample, got {}",
                other.kind_name()
            )))
        }
    };
    let mut out = Map::new();
    out.insert("solution".into(), to_value(&solution)?);
    let from = p0.unwrap_or_else(|| SpdMat::identity(grde.n()));
    match gare_convergence_bound(&grde, &solution.pbar, &from) {
        Ok(v) => {
            out.insert("convergenceBound".into(), json!({ "from": to_value(&from)?, "rate": v }));
        }
        Err(e) => {
            out.insert("convergenceBound".into(), Value::Null);
            out.insert("notes".into(), json!([format!("no convergence bound: {e}")]));
        }
    }
    Ok(Outcome::json(Value::Object(out), None))
}

fn discrete(
    g: &GlobalArgs,
    path: &Path,
    samples: usize,
    exec: Execution,
    digest: &mut InputDigest,
) -> CliResult<Outcome> {
    let Loaded { problem, options, bytes } = problem::load(path)?;
    digest.file("problem", &bytes);
    let Problem::Discrete(p) = problem else {
        return Err(CliError::input(format!("discrete needs a discrete problem, got {}", problem.kind_name())));
    };
    let rank_tol = g.tol.or(options.rank_tol).unwrap_or(DEFAULT_RANK_TOL);
    digest.arg("rankTol", rank_tol);
    digest.arg("samples", samples);
    let report = lipschitz_report(&p, rank_tol)?;
    let mut out = Map::new();
    out.insert("report".into(), to_value(&report)?);
    if samples > 0 {
        let ratio = empirical_lipschitz(&p, samples, g.seed, exec)?;
        out.insert(
            "empirical".into(),
            json!({ "samples": samples, "maxRatio": ratio, "withinBound": ratio <= report.bound + 1e-9 }),
        );
    }
    Ok(Outcome::json(Value::Object(out), Some(g.seed)))
}

fn audit(
    n: usize,
    gauge: &cone_contraction::GaugeFunction,
    grid: &str,
    exec: Execution,
    digest: &mut InputDigest,
) -> CliResult<Outcome> {
    digest.arg("n", n);
    digest.arg("gauge", gauge.label());
    let grid = if grid == "default" {
        SearchGrid::default()
    } else {
        let bytes = problem::read_file(&PathBuf::from(grid))?;
        digest.file("grid", &bytes);
        problem::parse_json(&bytes, "search grid")?
    };
    let report = audit_nonexpansiveness(gauge, n, &grid, exec)?;
    Ok(Outcome::json(to_value(&report)?, None))
}

fn orthant(
    g: &GlobalArgs,
    path: &Path,
    samples: Option<usize>,
    domain: Option<&Path>,
    exec: Execution,
    digest: &mut InputDigest,
) -> CliResult<Outcome> {
    let Loaded { problem, options, bytes } = problem::load(path)?;
    digest.file("problem", &bytes);
    let Problem::Orthant(field) = problem else {
        return Err(CliError::input(format!("orthant-rate needs an orthant problem, got {}", problem.kind_name())));
    };
    let n = cone_contraction::rates::OrthantField::dim(&field);
    let (lo, hi, default_box) = match domain_spec(domain, &options, digest)? {
        Some(DomainSpec::Box(b)) => (b.lo, b.hi, false),
        Some(DomainSpec::Interval(_)) => {
            return Err(CliError::input("orthant-rate needs a box domain with `lo` and `hi` vectors"))
        }
        None => (vec![0.1; n], vec![10.0; n], true),
    };
    if lo.len() != n || hi.len() != n {
        return Err(CliError::input(format!("box bounds must have {n} entries")));
    }
    let count = samples.or(options.samples).unwrap_or(DEFAULT_ORTHANT_SAMPLES);
    digest.arg("samples", count);
    let points = orthant_box_samples(&lo, &hi, count, g.seed)?;
    let mode = options.jacobian.unwrap_or(JacobianMode::Analytic);
    let mut cert = orthant_rate(&field, &points, &[0.0], mode, exec)?;
    cert.seed = Some(g.seed);
    cert.domain = Domain::OrthantBox { lo, hi };
    if default_box {
        cert.notes.push("no domain given; sampled the box [0.1, 10]^n".into());
    }
    if !field.is_cooperative() {
        cert.notes.push("A has negative off-diagonal entries, so the flow need not be order-preserving".into());
    }
    Ok(Outcome::json(to_value(&cert)?, Some(g.seed)))
}
