//! Contraction rates in the Thompson metric.
//!
//! Closed-form rates are lower bounds on the contraction achieved on the stated
//! domain. Sampled rates replace a supremum over the domain by a maximum over
//! finitely many points, so they over-estimate the best rate and are never
//! guarantees. Every [`RateCertificate`] records which of the two it is.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::cone::{max_ratio, min_ratio, OrderInterval, SpdMat, SymMat};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::random;
use crate::vfield::{GrdeParams, ScalarBounds, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RateMethod {
    GeneralSupFormula,
    StdGlobalClosedForm,
    GrdeLocalClosedForm,
    IndefiniteSigmaBox,
    DegenerateSigma,
    OrthantInfimum,
    FixedPointFormula,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Rigor {
    /// The rate is a lower bound on the contraction achieved on the domain.
    ClosedForm,
    /// The rate is an upper estimate of the best rate, from finitely many samples.
    SampledEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Domain {
    WholeCone {
        n: usize,
    },
    OrderInterval {
        lo: Option<SpdMat>,
        hi: SpdMat,
        #[serde(rename = "openLo")]
        open_lo: bool,
        #[serde(rename = "openHi")]
        open_hi: bool,
    },
    OrthantBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    FixedPointBall {
        center: SpdMat,
        mu: f64,
    },
    SampleSet {
        description: String,
        count: usize,
    },
}

impl Domain {
    fn interval(iv: &OrderInterval) -> Self {
        Domain::OrderInterval { lo: iv.lo().cloned(), hi: iv.hi().clone(), open_lo: iv.open_lo, open_hi: iv.open_hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WitnessPoint {
    Matrix(SymMat),
    Vector(Vec<f64>),
    Scalar(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Witness {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    pub point: WitnessPoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RateCertificate {
    pub rate: f64,
    pub domain: Domain,
    pub method: RateMethod,
    pub rigor: Rigor,
    pub witnesses: Vec<Witness>,
    pub seed: Option<u64>,
    /// The scalar inputs a closed form was evaluated from.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub inputs: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

const SAMPLED_NOTE: &str =
    "sampled estimate: the supremum is taken over finitely many points, so the value over-estimates the best rate";
const SCALING_NOTE: &str = "the domain is assumed to be invariant under scaling by (0, 1]";

impl RateCertificate {
    fn closed(rate: f64, domain: Domain, method: RateMethod, inputs: Map<String, Value>) -> Self {
        Self {
            rate,
            domain,
            method,
            rigor: Rigor::ClosedForm,
            witnesses: Vec::new(),
            seed: None,
            inputs,
            notes: Vec::new(),
        }
    }

    fn sampled(rate: f64, domain: Domain, method: RateMethod, witnesses: Vec<Witness>, seed: Option<u64>) -> Self {
        Self {
            rate,
            domain,
            method,
            rigor: Rigor::SampledEstimate,
            witnesses,
            seed,
            inputs: Map::new(),
            notes: vec![SAMPLED_NOTE.to_string()],
        }
    }

    pub fn is_guarantee(&self) -> bool {
        self.rigor == Rigor::ClosedForm
    }
}

/// How sample points of a matrix domain are drawn.
#[derive(Debug, Clone)]
pub enum DomainSampler {
    /// `count` random points of the interval; a closed upper end is included first.
    OrderIntervalUniform {
        interval: OrderInterval,
        count: usize,
    },
    /// Every base point scaled by every factor of the grid.
    RayScaling {
        base: Vec<SpdMat>,
        scales: Vec<f64>,
    },
    List(Vec<SpdMat>),
    Composite(Vec<DomainSampler>),
}

impl DomainSampler {
    pub fn interval(interval: OrderInterval, count: usize) -> Self {
        DomainSampler::OrderIntervalUniform { interval, count }
    }

    /// Points drawn deterministically from `seed`.
    pub fn samples(&self, seed: u64) -> Result<Vec<SpdMat>> {
        match self {
            DomainSampler::OrderIntervalUniform { interval, count } => {
                let mut out = Vec::with_capacity(count + 1);
                if !interval.open_hi {
                    out.push(interval.hi().clone());
                }
                for i in 0..*count {
                    let mut rng = random::task_rng(seed, i);
                    out.push(random::in_order_interval(&mut rng, interval.lo(), interval.hi()));
                }
                Ok(out)
            }
            DomainSampler::RayScaling { base, scales } => {
                if scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
                    return Err(Error::invalid("ray scales must be positive"));
                }
                base.iter().flat_map(|p| scales.iter().map(move |&s| p.scaled(s))).collect()
            }
            DomainSampler::List(points) => Ok(points.clone()),
            DomainSampler::Composite(parts) => {
                let mut out = Vec::new();
                for (i, part) in parts.iter().enumerate() {
                    out.extend(part.samples(random::task_seed(seed, i as u64))?);
                }
                Ok(out)
            }
        }
    }

    pub fn domain(&self, count: usize) -> Domain {
        match self {
            DomainSampler::OrderIntervalUniform { interval, .. } => Domain::interval(interval),
            DomainSampler::RayScaling { .. } => {
                Domain::SampleSet { description: "rays through base points".into(), count }
            }
            DomainSampler::List(_) => Domain::SampleSet { description: "user list".into(), count },
            DomainSampler::Composite(parts) if parts.len() == 1 => parts[0].domain(count),
            DomainSampler::Composite(_) => Domain::SampleSet { description: "union of samplers".into(), count },
        }
    }
}

/// Keeps the `keep` entries with the largest `value` (ties broken by index).
fn top_witnesses(mut scored: Vec<(usize, Witness)>, keep: usize, largest: bool) -> Vec<Witness> {
    scored.sort_by(|a, b| {
        let ord = a.1.value.total_cmp(&b.1.value);
        let ord = if largest { ord.reverse() } else { ord };
        ord.then(a.0.cmp(&b.0))
    });
    scored.into_iter().take(keep).map(|(_, w)| w).collect()
}

const WITNESS_COUNT: usize = 3;

/// Sampled best rate `-max M((Dphi(s,x) x - phi(s,x)) / x)` over times and domain samples.
pub fn general_rate_estimate<F: VectorField + ?Sized>(
    field: &F,
    sampler: &DomainSampler,
    times: &[f64],
    seed: u64,
    exec: Execution,
) -> Result<RateCertificate> {
    let points = sampler.samples(seed)?;
    if points.is_empty() || times.is_empty() {
        return Err(Error::invalid("empty sampler"));
    }
    let np = points.len();
    let values = par::map_indexed(np * times.len(), exec, |i| {
        let (t, x) = (times[i / np], &points[i % np]);
        if x.dim() != field.dim() {
            return Err(Error::dims(field.dim(), x.dim()));
        }
        if !field.is_feasible(t, x) {
            return Err(Error::Infeasible);
        }
        max_ratio(&field.defect(t, x)?, x)
    });
    let mut scored = Vec::with_capacity(values.len());
    let mut worst = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        let v = v?;
        worst = worst.max(v);
        scored.push((
            i,
            Witness {
                time: Some(times[i / np]),
                point: WitnessPoint::Matrix(points[i % np].as_sym().clone()),
                component: None,
                value: -v,
            },
        ));
    }
    let witnesses = top_witnesses(scored, WITNESS_COUNT, false);
    let mut cert =
        RateCertificate::sampled(-worst, sampler.domain(np), RateMethod::GeneralSupFormula, witnesses, Some(seed));
    cert.notes.push(SCALING_NOTE.into());
    Ok(cert)
}

fn check_psd(name: &str, m: &SymMat) -> Result<()> {
    if m.is_psd()? {
        Ok(())
    } else {
        Err(Error::Hypothesis(format!("{name} must be positive semidefinite")))
    }
}

/// Global rate `2 sqrt(m(Sigma^{1/2} D Sigma^{1/2} / I))` of the standard Riccati flow.
pub fn std_global_rate(sigma: &SymMat, dmat: &SymMat) -> Result<RateCertificate> {
    if sigma.dim() != dmat.dim() {
        return Err(Error::dims(sigma.dim(), dmat.dim()));
    }
    check_psd("Sigma", sigma)?;
    check_psd("D", dmat)?;
    let root = sigma.map_spectrum(|l| l.max(0.0).sqrt())?;
    let inner = dmat.congruence(root.matrix());
    let eigs = inner.eigenvalues()?;
    let scale = eigs.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let lo = if eigs[0] <= 1e-14 * scale.max(f64::MIN_POSITIVE) { 0.0 } else { eigs[0] };
    let mut inputs = Map::new();
    inputs.insert("minEigSigmaHalfDSigmaHalf".into(), json!(lo));
    Ok(RateCertificate::closed(
        2.0 * lo.sqrt(),
        Domain::WholeCone { n: sigma.dim() },
        RateMethod::StdGlobalClosedForm,
        inputs,
    ))
}

/// Sampled `min m((P Sigma P + D) / P)` over the sampler.
pub fn std_beta_rate(
    sigma: &SymMat,
    dmat: &SymMat,
    sampler: &DomainSampler,
    seed: u64,
    exec: Execution,
) -> Result<RateCertificate> {
    if sigma.dim() != dmat.dim() {
        return Err(Error::dims(sigma.dim(), dmat.dim()));
    }
    let points = sampler.samples(seed)?;
    if points.is_empty() {
        return Err(Error::invalid("empty sampler"));
    }
    let values = par::map_slice(&points, exec, |p| {
        if p.dim() != sigma.dim() {
            return Err(Error::dims(sigma.dim(), p.dim()));
        }
        min_ratio(&(&sigma.congruence_t(p.matrix()) + dmat), p)
    });
    let mut best = f64::INFINITY;
    let mut scored = Vec::with_capacity(points.len());
    for (i, v) in values.into_iter().enumerate() {
        let v = v?;
        best = best.min(v);
        scored.push((
            i,
            Witness { time: None, point: WitnessPoint::Matrix(points[i].as_sym().clone()), component: None, value: v },
        ));
    }
    let witnesses = top_witnesses(scored, WITNESS_COUNT, false);
    Ok(RateCertificate::sampled(
        best,
        sampler.domain(points.len()),
        RateMethod::GeneralSupFormula,
        witnesses,
        Some(seed),
    ))
}

/// Rate `m((Q - L'R^{-1}L) / P0)` on `(0, P0]` for a strictly well-posed GRDE.
pub fn grde_local_rate(p: &GrdeParams, p0: &SpdMat) -> Result<RateCertificate> {
    if p0.dim() != p.n() {
        return Err(Error::dims(p.n(), p0.dim()));
    }
    if !p.is_strictly_well_posed()? {
        return Err(Error::Hypothesis("the cost block [[Q, L'], [L, R]] must be positive definite".into()));
    }
    let rate = min_ratio(&p.reduced_cost()?, p0)?;
    let mut inputs = Map::new();
    inputs.insert("minRatioReducedCostP0".into(), json!(rate));
    let mut cert = RateCertificate::closed(
        rate,
        Domain::interval(&OrderInterval::below(p0.clone())),
        RateMethod::GrdeLocalClosedForm,
        inputs,
    );
    cert.notes.push("valid on subsets of (0, P0] invariant under scaling by (0, 1]".into());
    Ok(cert)
}

/// The admissible box of the indefinite `Sigma` analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AdmissibleInterval {
    /// Smallest admissible `lambda` (included).
    pub lo: f64,
    /// Supremum of admissible `lambda` (excluded).
    pub hi: f64,
    pub m_d: f64,
    pub c_sigma: f64,
}

impl AdmissibleInterval {
    pub fn contains(&self, lambda: f64) -> bool {
        lambda >= self.lo && lambda < self.hi
    }

    /// Rate lower bound `(m_D - c_Sigma lambda^2) / lambda` on `(0, lambda I]`.
    pub fn rate_at(&self, lambda: f64) -> Result<f64> {
        if !self.contains(lambda) {
            return Err(Error::invalid(format!("lambda = {lambda} is outside [{}, {})", self.lo, self.hi)));
        }
        Ok((self.m_d - self.c_sigma * lambda * lambda) / lambda)
    }

    /// The admissible `lambda` with the largest rate bound.
    pub fn best_lambda(&self) -> f64 {
        // The bound decreases in lambda, so the lower end is optimal.
        self.lo
    }

    pub fn certificate(&self, lambda: f64, n: usize) -> Result<RateCertificate> {
        let rate = self.rate_at(lambda)?;
        let mut inputs = Map::new();
        inputs.insert("lambda".into(), json!(lambda));
        inputs.insert("mD".into(), json!(self.m_d));
        inputs.insert("cSigma".into(), json!(self.c_sigma));
        Ok(RateCertificate::closed(
            rate,
            Domain::interval(&OrderInterval::below(SpdMat::scalar(n, lambda)?)),
            RateMethod::IndefiniteSigmaBox,
            inputs,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "camelCase")]
pub enum IndefiniteSigmaAnalysis {
    Admissible { interval: AdmissibleInterval },
    Violated { hypothesis: String, detail: String },
}

/// Checks `c_A^2 >= c_D c_Sigma` and `c_Sigma m_D > (c_A - sqrt(c_A^2 - c_D c_Sigma))^2`
/// and returns the admissible `lambda` range.
pub fn indefinite_sigma_analysis(b: &ScalarBounds) -> Result<IndefiniteSigmaAnalysis> {
    let ScalarBounds { c_a, c_d, m_d, c_sigma } = *b;
    for (name, v) in [("cA", c_a), ("cD", c_d), ("mD", m_d), ("cSigma", c_sigma)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    let disc = c_a * c_a - c_d * c_sigma;
    if disc < 0.0 {
        return Ok(IndefiniteSigmaAnalysis::Violated {
            hypothesis: "cA^2 >= cD * cSigma".into(),
            detail: format!("cA^2 - cD * cSigma = {disc}"),
        });
    }
    let root = c_a - disc.sqrt();
    if !(c_sigma * m_d > root * root) {
        return Ok(IndefiniteSigmaAnalysis::Violated {
            hypothesis: "cSigma * mD > (cA - sqrt(cA^2 - cD * cSigma))^2".into(),
            detail: format!("cSigma * mD = {}, (cA - sqrt(cA^2 - cD * cSigma))^2 = {}", c_sigma * m_d, root * root),
        });
    }
    Ok(IndefiniteSigmaAnalysis::Admissible {
        interval: AdmissibleInterval { lo: root / c_sigma, hi: (m_d / c_sigma).sqrt(), m_d, c_sigma },
    })
}

/// `min(m(I / P), c_A / c_D) m_D` for the degenerate `Sigma` case.
pub fn degenerate_sigma_rate(c_a: f64, c_d: f64, m_d: f64, p: &SpdMat) -> Result<f64> {
    if !(c_a > 0.0 && m_d > 0.0 && c_d > 0.0) {
        return Err(Error::invalid("cA, cD and mD must be positive"));
    }
    let m_ip = 1.0 / p.max_eig();
    Ok(m_ip.min(c_a / c_d) * m_d)
}

/// A vector field on the open positive orthant.
pub trait OrthantField: Sync {
    fn dim(&self) -> usize;
    fn phi(&self, t: f64, x: &[f64]) -> Vec<f64>;
    /// Analytic Jacobian, if available.
    fn jacobian(&self, _t: f64, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// Closure-backed orthant field.
pub struct OrthantFn<P, J> {
    dim: usize,
    phi: P,
    jac: Option<J>,
}

impl<P> OrthantFn<P, fn(f64, &[f64]) -> DMatrix<f64>>
where
    P: Fn(f64, &[f64]) -> Vec<f64> + Sync,
{
    pub fn new(dim: usize, phi: P) -> Self {
        Self { dim, phi, jac: None }
    }
}

impl<P, J> OrthantFn<P, J>
where
    P: Fn(f64, &[f64]) -> Vec<f64> + Sync,
    J: Fn(f64, &[f64]) -> DMatrix<f64> + Sync,
{
    pub fn with_jacobian(dim: usize, phi: P, jac: J) -> Self {
        Self { dim, phi, jac: Some(jac) }
    }
}

impl<P, J> OrthantField for OrthantFn<P, J>
where
    P: Fn(f64, &[f64]) -> Vec<f64> + Sync,
    J: Fn(f64, &[f64]) -> DMatrix<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn phi(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.phi)(t, x)
    }
    fn jacobian(&self, t: f64, x: &[f64]) -> Option<DMatrix<f64>> {
        self.jac.as_ref().map(|j| j(t, x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum JacobianMode {
    Analytic,
    /// Central differences with relative step `step`.
    CentralDifference {
        step: f64,
    },
}

impl Default for JacobianMode {
    fn default() -> Self {
        JacobianMode::CentralDifference { step: 1e-6 }
    }
}

/// Product `J x` of the Jacobian at `x` with `x`.
fn jacobian_times_x<F: OrthantField + ?Sized>(field: &F, t: f64, x: &[f64], mode: JacobianMode) -> Result<Vec<f64>> {
    let n = x.len();
    match mode {
        JacobianMode::Analytic => {
            let j = field.jacobian(t, x).ok_or_else(|| Error::invalid("field has no analytic Jacobian"))?;
            if j.shape() != (n, n) {
                return Err(Error::dims(format!("{n}x{n}"), format!("{}x{}", j.nrows(), j.ncols())));
            }
            Ok((j * DMatrix::from_column_slice(n, 1, x)).column(0).iter().copied().collect())
        }
        JacobianMode::CentralDifference { step } => {
            if !(step > 0.0) {
                return Err(Error::invalid("difference step must be positive"));
            }
            let mut acc = vec![0.0; n];
            for j in 0..n {
                let h = step * x[j].abs().max(1.0);
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[j] += h;
                xm[j] -= h;
                let (fp, fm) = (field.phi(t, &xp), field.phi(t, &xm));
                for i in 0..n {
                    acc[i] += (fp[i] - fm[i]) / (2.0 * h) * x[j];
                }
            }
            Ok(acc)
        }
    }
}

/// Componentwise rates `g_i = -x_i^{-1} ((J x)_i - phi_i)` at one point.
pub fn orthant_g<F: OrthantField + ?Sized>(field: &F, t: f64, x: &[f64], mode: JacobianMode) -> Result<Vec<f64>> {
    if x.len() != field.dim() {
        return Err(Error::dims(field.dim(), x.len()));
    }
    if x.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("orthant samples must be positive"));
    }
    let jx = jacobian_times_x(field, t, x, mode)?;
    let phi = field.phi(t, x);
    if phi.len() != x.len() {
        return Err(Error::dims(x.len(), phi.len()));
    }
    Ok((0..x.len()).map(|i| -(jx[i] - phi[i]) / x[i]).collect())
}

/// `count` uniform points of the box `[lo, hi]`, preceded by the corner `hi`.
pub fn orthant_box_samples(lo: &[f64], hi: &[f64], count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    use rand::Rng as _;
    if lo.len() != hi.len() {
        return Err(Error::dims(lo.len(), hi.len()));
    }
    if lo.iter().zip(hi).any(|(&a, &b)| !(a > 0.0 && a <= b)) {
        return Err(Error::invalid("need 0 < lo <= hi componentwise"));
    }
    let mut out = vec![hi.to_vec()];
    for i in 0..count {
        let mut rng = random::task_rng(seed, i);
        out.push(lo.iter().zip(hi).map(|(&a, &b)| if a == b { a } else { rng.random_range(a..=b) }).collect());
    }
    Ok(out)
}

/// Sampled infimum of the componentwise rates over points and times.
pub fn orthant_rate<F: OrthantField + ?Sized>(
    field: &F,
    samples: &[Vec<f64>],
    times: &[f64],
    mode: JacobianMode,
    exec: Execution,
) -> Result<RateCertificate> {
    if samples.is_empty() || times.is_empty() {
        return Err(Error::invalid("empty sampler"));
    }
    let ns = samples.len();
    let values = par::map_indexed(ns * times.len(), exec, |i| orthant_g(field, times[i / ns], &samples[i % ns], mode));
    let mut best = f64::INFINITY;
    let mut scored = Vec::new();
    for (i, g) in values.into_iter().enumerate() {
        let g = g?;
        let (c, v) = g.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty");
        best = best.min(v);
        scored.push((
            i,
            Witness {
                time: Some(times[i / ns]),
                point: WitnessPoint::Vector(samples[i % ns].clone()),
                component: Some(c),
                value: v,
            },
        ));
    }
    let witnesses = top_witnesses(scored, WITNESS_COUNT, false);
    let mut lo = samples[0].clone();
    let mut hi = samples[0].clone();
    for s in samples {
        for (i, &v) in s.iter().enumerate() {
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    Ok(RateCertificate::sampled(best, Domain::OrthantBox { lo, hi }, RateMethod::OrthantInfimum, witnesses, None))
}

/// `count` points of `(1/mu, mu)` equally spaced in `log lambda`, excluding 1.
pub fn log_lambda_grid(mu: f64, count: usize) -> Vec<f64> {
    let half = count.max(1);
    let step = mu.ln() / (half as f64 + 1.0);
    (1..=half).flat_map(|i| [(-(i as f64) * step).exp(), (i as f64 * step).exp()]).collect()
}

/// Rate toward a zero `xbar` of an autonomous field on `{lambda xbar}` balls:
/// `min over lambda of m(-(lambda ln lambda)^{-1} phi(lambda xbar) / xbar)`, together
/// with the `lambda -> 1` limit `m(-Dphi(xbar) xbar / xbar)`.
pub fn fixed_point_rate<F: VectorField + ?Sized>(
    field: &F,
    xbar: &SpdMat,
    mu: f64,
    lambdas: &[f64],
) -> Result<RateCertificate> {
    if !(mu > 1.0) || !mu.is_finite() {
        return Err(Error::invalid("mu must exceed 1"));
    }
    if !field.is_autonomous() {
        return Err(Error::Hypothesis("the field must be time-independent".into()));
    }
    let residual = field.phi(0.0, xbar)?.frobenius_norm();
    if residual > 1e-8 * xbar.frobenius_norm().max(1.0) {
        return Err(Error::Hypothesis(format!("xbar is not a zero of the field (residual {residual:e})")));
    }
    let mut witnesses = Vec::with_capacity(lambdas.len() + 1);
    for &lambda in lambdas {
        if !(lambda > 1.0 / mu && lambda < mu) || lambda == 1.0 {
            return Err(Error::invalid(format!("lambda = {lambda} must lie in (1/mu, mu) and differ from 1")));
        }
        let scaled = xbar.scaled(lambda)?;
        let phi = field.phi(0.0, &scaled)?;
        let v = min_ratio(&phi.scale(-1.0 / (lambda * lambda.ln())), xbar)?;
        witnesses.push(Witness { time: None, point: WitnessPoint::Scalar(lambda), component: None, value: v });
    }
    let limit = min_ratio(&field.dphi(0.0, xbar, xbar)?.scale(-1.0), xbar)?;
    witnesses.push(Witness { time: None, point: WitnessPoint::Scalar(1.0), component: None, value: limit });
    let rate = witnesses.iter().map(|w| w.value).fold(f64::INFINITY, f64::min);
    let scored = witnesses.into_iter().enumerate().collect();
    Ok(RateCertificate::sampled(
        rate,
        Domain::FixedPointBall { center: xbar.clone(), mu },
        RateMethod::FixedPointFormula,
        top_witnesses(scored, WITNESS_COUNT, false),
        None,
    ))
}
