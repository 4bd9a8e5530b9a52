//! Symmetric gauge functions, the invariant Finsler metrics they induce on the
//! positive definite cone, and a search for violations of the first-order
//! condition that non-expansiveness in such a metric imposes on a flow.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cone::{relative_spectrum, SpdMat, SymMat};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::vfield::GrdeParams;

/// A p-norm gauge on `R^n`. `PNorm { p: inf }` and `SupNorm` coincide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum GaugeFunction {
    PNorm { p: f64 },
    SupNorm,
}

impl GaugeFunction {
    /// Validated constructor; `p = inf` maps to [`GaugeFunction::SupNorm`].
    pub fn p_norm(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::invalid(format!("p-norm needs p >= 1, got {p}")));
        }
        if p.is_infinite() {
            return Ok(GaugeFunction::SupNorm);
        }
        Ok(GaugeFunction::PNorm { p })
    }

    fn exponent(&self) -> f64 {
        match *self {
            GaugeFunction::PNorm { p } => p,
            GaugeFunction::SupNorm => f64::INFINITY,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            GaugeFunction::PNorm { p } if p.is_finite() => format!("p={p}"),
            _ => "sup".to_string(),
        }
    }

    pub fn eval(&self, lambda: &[f64]) -> f64 {
        let p = self.exponent();
        if p.is_infinite() {
            return lambda.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        }
        if p == 1.0 {
            return lambda.iter().map(|v| v.abs()).sum();
        }
        // Scale by the largest magnitude to avoid overflow in |v|^p.
        let top = lambda.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if top == 0.0 {
            return 0.0;
        }
        top * lambda.iter().map(|v| (v.abs() / top).powf(p)).sum::<f64>().powf(1.0 / p)
    }

    /// One element of the subdifferential at a nonzero `lambda`. Ties and zeros
    /// are resolved towards the lowest index.
    pub fn subgradient(&self, lambda: &[f64]) -> Result<Subgradient> {
        if lambda.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("subgradient requested at the zero vector"));
        }
        let p = self.exponent();
        let mu = if p.is_infinite() {
            let mut best = 0;
            for (i, v) in lambda.iter().enumerate() {
                if v.abs() > lambda[best].abs() {
                    best = i;
                }
            }
            let mut mu = vec![0.0; lambda.len()];
            mu[best] = lambda[best].signum();
            mu
        } else if p == 1.0 {
            lambda.iter().map(|&v| if v == 0.0 { 0.0 } else { v.signum() }).collect()
        } else {
            let norm = self.eval(lambda);
            lambda.iter().map(|&v| v.signum() * (v.abs() / norm).powf(p - 1.0)).collect()
        };
        Ok(Subgradient { mu })
    }

    /// `nu(lambda(P))`.
    pub fn spectral(&self, p: &SymMat) -> Result<f64> {
        Ok(self.eval(&p.eigenvalues()?))
    }
}

/// An element `mu` of the subdifferential of a gauge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgradient {
    pub mu: Vec<f64>,
}

impl Subgradient {
    pub fn pairing(&self, lambda: &[f64]) -> f64 {
        self.mu.iter().zip(lambda).map(|(m, l)| m * l).sum()
    }
}

/// `d_nu(P, Q) = nu(log eig(P^{-1/2} Q P^{-1/2}))`.
pub fn finsler_distance(nu: &GaugeFunction, p: &SpdMat, q: &SpdMat) -> Result<f64> {
    let logs: Vec<f64> = relative_spectrum(q, p)?.into_iter().map(f64::ln).collect();
    Ok(nu.eval(&logs))
}

/// `<diag(mu), DPhi(I) . diag(lambda) - diag(lambda) Phi(I)>` in the trace
/// pairing. A positive value rules out non-expansiveness in the metric whose
/// gauge has `mu` as a subgradient at `lambda`.
pub fn necessary_condition_value<L>(
    linearization: L,
    phi_at_identity: &SymMat,
    lambda: &[f64],
    mu: &Subgradient,
) -> Result<f64>
where
    L: Fn(&SymMat) -> Result<SymMat>,
{
    let n = phi_at_identity.dim();
    if lambda.len() != n || mu.mu.len() != n {
        return Err(Error::dims(n, format!("lambda {}, mu {}", lambda.len(), mu.mu.len())));
    }
    let z = SymMat::from_diagonal(lambda);
    let dz = linearization(&z)?;
    if dz.dim() != n {
        return Err(Error::dims(n, dz.dim()));
    }
    let zphi: DMatrix<f64> = z.matrix() * phi_at_identity.matrix();
    let diff = dz.matrix() - zphi;
    Ok((0..n).map(|i| mu.mu[i] * diff[(i, i)]).sum())
}

/// The parameter family showing that GRDE flows can expand every invariant
/// Finsler metric except the Thompson one. The normalizations
/// `R + D'D = I`, `B' + D'C = I` and `C - D = [[I, e], [0, 0]]` hold exactly.
pub fn build_counterexample(n: usize, epsilon: f64, e: &[f64]) -> Result<GrdeParams> {
    if n < 2 {
        return Err(Error::invalid("counterexample needs n >= 2"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if e.len() != n - 1 {
        return Err(Error::dims(n - 1, e.len()));
    }
    let s = (1.0 - epsilon).sqrt();
    let m = n - 1;
    let mut b = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..m {
        b[(i, i)] = epsilon - s;
        b[(m, i)] = -s * e[i];
        c[(i, i)] = 1.0 + s;
        c[(i, m)] = e[i];
    }
    b[(m, m)] = epsilon;
    c[(m, m)] = s;
    GrdeParams::new(
        DMatrix::identity(n, n),
        b,
        c,
        DMatrix::identity(n, n) * s,
        DMatrix::zeros(n, n),
        SymMat::scalar(n, epsilon),
        SymMat::scalar(n, epsilon),
    )
}

/// Sampling plan over `(epsilon, lambda)`. `lambda = (1, ..., 1, lambda_last)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SearchGrid {
    pub epsilons: Vec<f64>,
    pub lambda_last: Vec<f64>,
    /// Defaults to the all-ones vector of length `n - 1`.
    #[serde(default)]
    pub e: Option<Vec<f64>>,
    /// Values above this count as violations.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    1e-9
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            epsilons: vec![0.01, 0.05, 0.1, 0.2, 0.5],
            lambda_last: vec![-1.0, -0.5, -0.1, 0.1, 0.5, 1.0],
            e: None,
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationWitness {
    pub epsilon: f64,
    pub e: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ViolationReport {
    pub gauge: GaugeFunction,
    /// Grid points with a value above the threshold, largest first.
    pub witnesses: Vec<ViolationWitness>,
    /// Largest value over the whole grid, violating or not.
    pub max_value: f64,
}

/// Evaluates the necessary condition on the counterexample family at one grid point.
pub fn counterexample_condition(
    nu: &GaugeFunction,
    epsilon: f64,
    e: &[f64],
    lambda: &[f64],
) -> Result<ViolationWitness> {
    let n = lambda.len();
    let params = build_counterexample(n, epsilon, e)?;
    let identity = SymMat::identity(n);
    let phi_i = params.phi(&identity)?;
    let gain = params.gain(&identity)?;
    let mu = nu.subgradient(lambda)?;
    let value = necessary_condition_value(|z| params.dphi_with_gain(&gain, z), &phi_i, lambda, &mu)?;
    Ok(ViolationWitness { epsilon, e: e.to_vec(), lambda: lambda.to_vec(), mu: mu.mu, value })
}

/// Grid search for violations of the non-expansiveness condition of `d_nu`
/// along the counterexample family.
pub fn audit_nonexpansiveness(
    nu: &GaugeFunction,
    n: usize,
    grid: &SearchGrid,
    exec: Execution,
) -> Result<ViolationReport> {
    if n < 2 {
        return Err(Error::invalid("audit needs n >= 2"));
    }
    let e = grid.e.clone().unwrap_or_else(|| vec![1.0; n - 1]);
    let points: Vec<(f64, f64)> =
        grid.epsilons.iter().flat_map(|&eps| grid.lambda_last.iter().map(move |&l| (eps, l))).collect();
    let evaluated = par::map_slice(&points, exec, |&(eps, last)| {
        let mut lambda = vec![1.0; n];
        lambda[n - 1] = last;
        counterexample_condition(nu, eps, &e, &lambda)
    });
    let evaluated: Vec<ViolationWitness> = evaluated.into_iter().collect::<Result<_>>()?;
    let max_value = evaluated.iter().map(|w| w.value).fold(f64::NEG_INFINITY, f64::max);
    let mut witnesses: Vec<ViolationWitness> = evaluated.into_iter().filter(|w| w.value > grid.threshold).collect();
    witnesses.sort_by(|a, b| b.value.total_cmp(&a.value));
    Ok(ViolationReport { gauge: *nu, witnesses, max_value })
}
