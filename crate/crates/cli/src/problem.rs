use std::path::Path;

use cone_contraction::gauge::build_counterexample;
use cone_contraction::rates::{JacobianMode, OrthantField};
use cone_contraction::vfield::ScalarBounds;
use cone_contraction::{DiscreteParams, GareOptions, GrdeParams, IntegrationConfig, SpdMat, StdRiccatiParams};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const PROBLEM_SCHEMA: &str = include_str!("../schemas/problem.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Kind {
    Grde,
    StdRiccati,
    Discrete,
    Orthant,
    Counterexample,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    kind: Kind,
    params: Value,
    #[serde(default)]
    options: ProblemOptions,
}

/// Solver and sampler configuration shared by all problem kinds.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ProblemOptions {
    pub integration: Option<IntegrationConfig>,
    pub gare: Option<GareOptions>,
    #[serde(rename = "P0")]
    pub p0: Option<SpdMat>,
    pub domain: Option<DomainSpec>,
    pub samples: Option<usize>,
    pub rank_tol: Option<f64>,
    /// Conservative scalar bounds for a standard Riccati problem.
    pub scalar_bounds: Option<ScalarBounds>,
    pub jacobian: Option<JacobianMode>,
}

/// Order interval of matrices, or a box of positive vectors.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    Interval(IntervalSpec),
    Box(BoxSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct IntervalSpec {
    #[serde(default)]
    pub lo: Option<SpdMat>,
    pub hi: SpdMat,
    #[serde(default)]
    pub open_lo: Option<bool>,
    #[serde(default)]
    pub open_hi: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CounterexampleJson {
    n: usize,
    epsilon: f64,
    #[serde(default)]
    e: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrthantJson {
    #[serde(rename = "A", with = "cone_contraction::json::dense")]
    a: DMatrix<f64>,
    b: Vec<f64>,
    #[serde(default)]
    c: Option<Vec<f64>>,
}

/// `phi(x) = A x + b - c * x^2` (componentwise square) on the open orthant.
#[derive(Debug, Clone)]
pub struct OrthantProblem {
    a: DMatrix<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl OrthantProblem {
    fn from_json(raw: OrthantJson) -> CliResult<Self> {
        let n = raw.b.len();
        if n == 0 {
            return Err(CliError::input("orthant problem needs at least one component"));
        }
        let a = raw.a;
        if a.shape() != (n, n) {
            return Err(CliError::input(format!("A must be {n}x{n} to match b")));
        }
        let c = raw.c.unwrap_or_else(|| vec![0.0; n]);
        if c.len() != n {
            return Err(CliError::input(format!("c must have {n} entries")));
        }
        if raw.b.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(CliError::input("non-finite orthant coefficient"));
        }
        Ok(Self { a, b: raw.b, c })
    }

    /// Off-diagonal entries of `A` are nonnegative, so the flow is order-preserving.
    pub fn is_cooperative(&self) -> bool {
        let n = self.b.len();
        (0..n).all(|i| (0..n).all(|j| i == j || self.a[(i, j)] >= 0.0))
    }
}

impl OrthantField for OrthantProblem {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn phi(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| (0..x.len()).map(|j| self.a[(i, j)] * x[j]).sum::<f64>() + self.b[i] - self.c[i] * x[i] * x[i])
            .collect()
    }

    fn jacobian(&self, _t: f64, x: &[f64]) -> Option<DMatrix<f64>> {
        let mut j = self.a.clone();
        for i in 0..x.len() {
            j[(i, i)] -= 2.0 * self.c[i] * x[i];
        }
        Some(j)
    }
}

#[derive(Debug)]
pub enum Problem {
    Grde(GrdeParams),
    Std(StdRiccatiParams),
    Discrete(DiscreteParams),
    Orthant(OrthantProblem),
    Counterexample(GrdeParams),
}

impl Problem {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Problem::Grde(_) => "grde",
            Problem::Std(_) => "stdRiccati",
            Problem::Discrete(_) => "discrete",
            Problem::Orthant(_) => "orthant",
            Problem::Counterexample(_) => "counterexample",
        }
    }
}

pub struct Loaded {
    pub problem: Problem,
    pub options: ProblemOptions,
    pub bytes: Vec<u8>,
}

pub fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

pub fn parse_json<T: DeserializeOwned>(bytes: &[u8], what: &str) -> CliResult<T> {
    serde_json::from_slice(bytes).map_err(|e| CliError::input(format!("invalid {what}: {e}")))
}

fn from_value<T: DeserializeOwned>(v: Value, what: &str) -> CliResult<T> {
    serde_json::from_value(v).map_err(|e| CliError::input(format!("invalid {what}: {e}")))
}

/// Checks a document against a JSON schema and lists every violation.
pub fn validate(schema_text: &str, doc: &Value, what: &str) -> CliResult<()> {
    let schema: Value = serde_json::from_str(schema_text).expect("bundled schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("bundled schema compiles");
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| format!("{} at `{}`", e, e.instance_path)).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::input(format!("{what} does not match its schema:\n  {}", errors.join("\n  "))))
    }
}

pub fn load(path: &Path) -> CliResult<Loaded> {
    let bytes = read_file(path)?;
    let doc: Value = parse_json(&bytes, "problem file")?;
    validate(PROBLEM_SCHEMA, &doc, "problem file")?;
    let file: ProblemFile = from_value(doc, "problem file")?;
    let problem = match file.kind {
        Kind::Grde => Problem::Grde(from_value(file.params, "grde params")?),
        Kind::StdRiccati => Problem::Std(from_value(file.params, "stdRiccati params")?),
        Kind::Discrete => Problem::Discrete(from_value(file.params, "discrete params")?),
        Kind::Orthant => Problem::Orthant(OrthantProblem::from_json(from_value(file.params, "orthant params")?)?),
        Kind::Counterexample => {
            let raw: CounterexampleJson = from_value(file.params, "counterexample params")?;
            let e = raw.e.unwrap_or_else(|| vec![1.0; raw.n.saturating_sub(1)]);
            Problem::Counterexample(build_counterexample(raw.n, raw.epsilon, &e)?)
        }
    };
    Ok(Loaded { problem, options: file.options, bytes })
}

pub fn load_matrix(path: &Path) -> CliResult<(SpdMat, Vec<u8>)> {
    let bytes = read_file(path)?;
    let m = parse_json(&bytes, &format!("matrix file {}", path.display()))?;
    Ok((m, bytes))
}

/// Integration settings with the `--tol` override applied to the step tolerances.
pub fn integration_config(options: &ProblemOptions, tol: Option<f64>) -> CliResult<IntegrationConfig> {
    let mut cfg = options.integration.clone().unwrap_or_default();
    if let Some(tol) = tol {
        cfg.rel_tol = tol;
        cfg.abs_tol = tol * 1e-2;
    }
    cfg.validate()?;
    Ok(cfg)
}
