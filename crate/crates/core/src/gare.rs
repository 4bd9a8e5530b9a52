//! Algebraic Riccati equations solved by following the Riccati flow to its
//! fixed point, with a Newton polish once the residual is small.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cone::{min_ratio, thompson_distance, SpdMat, SymMat};
use crate::error::{Error, Result};
use crate::flow::{integrate, ExitReason, IntegrationConfig, Recording};
use crate::rates::{
    grde_local_rate, indefinite_sigma_analysis, std_global_rate, IndefiniteSigmaAnalysis, RateCertificate,
};
use crate::vfield::{GrdeParams, StdRiccatiParams, VectorField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct GareOptions {
    /// Target Frobenius norm of the residual.
    pub tol: f64,
    /// Integration horizon; defaults to `50 / rate` with a certificate and `1e3` without.
    pub horizon: Option<f64>,
    pub polish: bool,
    /// Fail unless the start point certifies convergence.
    pub require_certificate: bool,
    /// Norm beyond which the flow is declared divergent.
    pub divergence_norm: f64,
    pub integration: IntegrationConfig,
}

impl Default for GareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            horizon: None,
            polish: true,
            require_certificate: false,
            divergence_norm: 1e6,
            integration: IntegrationConfig {
                rel_tol: 1e-10,
                abs_tol: 1e-12,
                record: Recording::Every(f64::MAX),
                ..IntegrationConfig::default()
            },
        }
    }
}

impl GareOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Branch {
    /// The start point is a supersolution and the cost block is strictly positive.
    Certified,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GareDiagnostics {
    pub branch: Branch,
    pub integration_time: f64,
    pub segments: usize,
    pub newton_iterations: usize,
    /// Scale `lambda` of the start `lambda I` when it came from the heuristic search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GareSolution {
    #[serde(rename = "Pbar")]
    pub pbar: SpdMat,
    pub residual_norm: f64,
    pub feasibility_margin: f64,
    pub certificate: Option<RateCertificate>,
    pub diagnostics: GareDiagnostics,
}

/// Residual and feasibility margin of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GareCheck {
    /// `||phi(P)||_F`, infinite when `P` is infeasible.
    pub residual_norm: f64,
    /// `lambda_min(R + D'PD)`.
    pub feasibility_margin: f64,
}

pub fn verify_gare(p: &GrdeParams, pm: &SpdMat) -> Result<GareCheck> {
    if pm.dim() != p.n() {
        return Err(Error::dims(p.n(), pm.dim()));
    }
    let margin = p.feasibility_margin(pm)?;
    let residual_norm = match p.phi(pm) {
        Ok(v) => v.frobenius_norm(),
        Err(_) => f64::INFINITY,
    };
    Ok(GareCheck { residual_norm, feasibility_margin: margin })
}

/// Lower bound `(1 - e^{-d}) / d * m((Q - L'R^{-1}L) / Pbar)`, `d = d_T(P, Pbar)`, on the
/// exponential rate at which the flow from `P` approaches `Pbar`.
pub fn gare_convergence_bound(p: &GrdeParams, pbar: &SpdMat, pm: &SpdMat) -> Result<f64> {
    let check = verify_gare(p, pbar)?;
    if !(check.residual_norm <= 1e-8) {
        return Err(Error::Hypothesis(format!("Pbar is not a solution (residual {:e})", check.residual_norm)));
    }
    if !p.is_strictly_well_posed()? {
        return Err(Error::Hypothesis("the cost block [[Q, L'], [L, R]] must be positive definite".into()));
    }
    let d = thompson_distance(pm, pbar)?;
    if d == 0.0 {
        return Err(Error::invalid("P must differ from Pbar"));
    }
    Ok(-(-d).exp_m1() / d * min_ratio(&p.reduced_cost()?, pbar)?)
}

fn residual<F: VectorField + ?Sized>(field: &F, pm: &SymMat) -> Result<f64> {
    Ok(field.phi(0.0, pm)?.frobenius_norm())
}

/// Searches `lambda I`, `lambda = 2^j`, for a feasible point with `phi(lambda I) <= 0`.
pub fn search_supersolution<F: VectorField + ?Sized>(field: &F) -> Option<(SpdMat, f64)> {
    let n = field.dim();
    (0..=40).chain((1..=20).map(|j| -j)).find_map(|j: i32| {
        let lambda = 2f64.powi(j);
        let p0 = SpdMat::scalar(n, lambda).ok()?;
        if !field.is_feasible(0.0, &p0) {
            return None;
        }
        let top = field.phi(0.0, &p0).ok()?.max_eigenvalue().ok()?;
        (top <= 1e-8).then_some((p0, lambda))
    })
}

fn vech(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    DVector::from_iterator(n * (n + 1) / 2, (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]))
}

fn unvech(v: &DVector<f64>, n: usize) -> SymMat {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    SymMat::symmetrize(m)
}

/// Newton steps on `phi(P) = 0` in symmetric coordinates. Returns the last
/// improving iterate and the number of steps taken, or `None` when the first
/// step already fails.
fn newton_polish<F: VectorField + ?Sized>(field: &F, start: &SpdMat, tol: f64) -> Option<(SpdMat, usize)> {
    let n = start.dim();
    let m = n * (n + 1) / 2;
    let mut p = start.clone();
    let mut res = residual(field, &p).ok()?;
    let mut steps = 0;
    for _ in 0..12 {
        if res < tol {
            break;
        }
        let r = field.phi(0.0, &p).ok()?;
        let mut jac = DMatrix::zeros(m, m);
        let mut col = 0;
        for i in 0..n {
            for j in i..n {
                let mut e = DMatrix::zeros(n, n);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                let dz = field.dphi(0.0, &p, &SymMat::symmetrize(e)).ok()?;
                jac.set_column(col, &vech(dz.matrix()));
                col += 1;
            }
        }
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-12 * smax) {
            break;
        }
        let delta = svd.solve(&(-vech(r.matrix())), 0.0).ok()?;
        let candidate = SymMat::symmetrize(p.matrix() + unvech(&delta, n).matrix());
        let Ok(candidate) = SpdMat::new(candidate) else { break };
        if !field.is_feasible(0.0, &candidate) {
            break;
        }
        let Ok(next) = residual(field, &candidate) else { break };
        if !(next < res) {
            break;
        }
        p = candidate;
        res = next;
        steps += 1;
    }
    (steps > 0).then_some((p, steps))
}

struct FlowOutcome {
    pbar: SpdMat,
    residual: f64,
    integration_time: f64,
    segments: usize,
    newton_iterations: usize,
}

/// Follows the flow of `field` from `p0` until the residual is below `opts.tol`.
fn flow_to_zero<F: VectorField + ?Sized>(
    field: &F,
    p0: &SpdMat,
    rate: Option<f64>,
    opts: &GareOptions,
) -> Result<FlowOutcome> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let rate = rate.filter(|&a| a > 0.0 && a.is_finite());
    let horizon = opts.horizon.unwrap_or(match rate {
        Some(a) => 50.0 / a,
        None => 1e3,
    });
    let segment = rate.map(|a| 1.0 / a).unwrap_or(1.0).min(horizon).max(1e-6);
    let mut cfg = opts.integration.clone();
    cfg.record = Recording::Every(f64::MAX);
    let mut p = p0.clone();
    let mut t = 0.0;
    let mut segments = 0;
    let mut newton_iterations = 0;
    let mut polish_tried_at = f64::INFINITY;
    loop {
        let res = residual(field, &p)?;
        if res < opts.tol {
            return Ok(FlowOutcome { pbar: p, residual: res, integration_time: t, segments, newton_iterations });
        }
        // Retry the polish only after the flow has reduced the residual further.
        if opts.polish && res < opts.tol.sqrt() && res < 0.5 * polish_tried_at {
            polish_tried_at = res;
            if let Some((q, steps)) = newton_polish(field, &p, opts.tol) {
                newton_iterations += steps;
                p = q;
                continue;
            }
        }
        if t >= horizon {
            return Err(Error::NonConvergence(format!(
                "residual {res:e} after integrating to t = {t} (horizon {horizon})"
            )));
        }
        let step = segment.min(horizon - t);
        let traj = integrate(field, &p, t, t + step, &cfg)?;
        match traj.exit_reason {
            ExitReason::HorizonReached => {}
            ExitReason::LeftFeasibleDomain => {
                return Err(Error::DomainExit {
                    time: traj.exit_time.unwrap_or(t),
                    reason: ExitReason::LeftFeasibleDomain.as_str().into(),
                })
            }
            ExitReason::StepFailure => {
                return Err(Error::NonConvergence(format!(
                    "integration step failure near t = {}",
                    traj.exit_time.unwrap_or(t)
                )))
            }
        }
        p = traj.final_state().clone();
        t += step;
        segments += 1;
        if p.frobenius_norm() > opts.divergence_norm {
            return Err(Error::NonConvergence(format!(
                "flow diverged: ||P||_F > {:e} at t = {t}",
                opts.divergence_norm
            )));
        }
    }
}

/// Solves `phi(P) = 0` with `R + D'PD > 0` by the flow started at `p0`, or at the
/// first `2^j I` with `phi <= 0` when `p0` is absent.
///
/// The run is certified when the cost block is positive definite and
/// `phi(p0) <= 0`; the flow then stays in `(0, p0]` and the solution carries the
/// local rate on that interval.
pub fn solve_gare(p: &GrdeParams, p0: Option<&SpdMat>, opts: &GareOptions) -> Result<GareSolution> {
    let (start, start_scale) = match p0 {
        Some(p0) => {
            if p0.dim() != p.n() {
                return Err(Error::dims(p.n(), p0.dim()));
            }
            (p0.clone(), None)
        }
        None => match search_supersolution(p) {
            Some((p0, lambda)) => (p0, Some(lambda)),
            None if opts.require_certificate => {
                return Err(Error::Hypothesis("no supersolution found among 2^j I".into()))
            }
            None => (SpdMat::identity(p.n()), None),
        },
    };
    if !p.is_feasible(&start) {
        return Err(Error::Infeasible);
    }
    let supersolution = p.phi(&start)?.max_eigenvalue()? <= 1e-8;
    let strict = p.is_strictly_well_posed()?;
    let certificate = if strict && supersolution { Some(grde_local_rate(p, &start)?) } else { None };
    if opts.require_certificate && certificate.is_none() {
        let why =
            if !strict { "the cost block is not positive definite" } else { "phi(P0) is not negative semidefinite" };
        return Err(Error::Hypothesis(why.into()));
    }
    let outcome = flow_to_zero(p, &start, certificate.as_ref().map(|c| c.rate), opts)?;
    let check = verify_gare(p, &outcome.pbar)?;
    Ok(GareSolution {
        pbar: outcome.pbar,
        residual_norm: outcome.residual,
        feasibility_margin: check.feasibility_margin,
        diagnostics: GareDiagnostics {
            branch: if certificate.is_some() { Branch::Certified } else { Branch::Heuristic },
            integration_time: outcome.integration_time,
            segments: outcome.segments,
            newton_iterations: outcome.newton_iterations,
            start_scale,
        },
        certificate,
    })
}

/// Solves `A'P + PA + D - P Sigma P = 0` by the standard Riccati flow.
///
/// Certificates, strongest first: the global rate when `Sigma` and `D` are PSD
/// with a positive rate; the local rate of the embedded generalized field when
/// the start is a supersolution; the indefinite `Sigma` box `(0, lambda I]`.
/// Without `p0` the start is the lower end of the indefinite box when that
/// analysis applies, and the first `2^j I` supersolution otherwise.
pub fn solve_std_are(p: &StdRiccatiParams, p0: Option<&SpdMat>, opts: &GareOptions) -> Result<GareSolution> {
    let n = p.n();
    if let Some(p0) = p0 {
        if p0.dim() != n {
            return Err(Error::dims(n, p0.dim()));
        }
    }
    let sigma_psd = p.sigma().is_psd()?;
    let box_interval = if sigma_psd {
        None
    } else {
        let b = p.scalar_bounds()?;
        match indefinite_sigma_analysis(&b) {
            Ok(IndefiniteSigmaAnalysis::Admissible { interval }) => Some(interval),
            _ => None,
        }
    };
    let mut start_scale = None;
    let start = match (p0, &box_interval) {
        (Some(p0), _) => p0.clone(),
        (None, Some(iv)) => {
            start_scale = Some(iv.lo);
            SpdMat::scalar(n, iv.lo)?
        }
        (None, None) => match search_supersolution(p) {
            Some((s, lambda)) => {
                start_scale = Some(lambda);
                s
            }
            None => SpdMat::identity(n),
        },
    };
    let supersolution = p.phi(&start)?.max_eigenvalue()? <= 1e-8;

    let mut certificate = None;
    if sigma_psd && p.dmat().is_psd()? {
        let global = std_global_rate(p.sigma(), p.dmat())?;
        if global.rate > 0.0 {
            certificate = Some(global);
        }
    }
    if certificate.is_none() && sigma_psd && supersolution {
        let embedded = p.to_grde()?;
        if embedded.is_strictly_well_posed()? {
            certificate = Some(grde_local_rate(&embedded, &start)?);
        }
    }
    if certificate.is_none() {
        if let Some(iv) = &box_interval {
            // Smallest admissible lambda whose box contains the start.
            let lambda = iv.lo.max(start.max_eig());
            if iv.contains(lambda) {
                certificate = Some(iv.certificate(lambda, n)?);
            }
        }
    }
    if opts.require_certificate && certificate.is_none() {
        return Err(Error::Hypothesis("no contraction certificate applies to this start".into()));
    }
    let outcome = flow_to_zero(p, &start, certificate.as_ref().map(|c| c.rate), opts)?;
    Ok(GareSolution {
        pbar: outcome.pbar,
        residual_norm: outcome.residual,
        // The standard field has no feasibility constraint; this is lambda_min(R) = 1
        // of its generalized embedding.
        feasibility_margin: 1.0,
        diagnostics: GareDiagnostics {
            branch: if certificate.is_some() { Branch::Certified } else { Branch::Heuristic },
            integration_time: outcome.integration_time,
            segments: outcome.segments,
            newton_iterations: outcome.newton_iterations,
            start_scale,
        },
        certificate,
    })
}
