//! Adaptive integration of matrix flows `P' = phi(t, P)` on the positive
//! definite cone.
//!
//! The integrator is the Dormand–Prince 5(4) pair with FSAL and a PI step-size
//! controller. States are symmetrized after every accepted step. Integration
//! stops at the first accepted state that leaves the feasible domain of the
//! field or loses positive definiteness.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cone::{loewner_leq, SpdMat, SymMat};
use crate::error::{Error, Result};
use crate::vfield::VectorField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Recording {
    AllSteps,
    /// Record at most once per interval of this length (the final state is always kept).
    Every(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct IntegrationConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub min_step: f64,
    pub initial_step: Option<f64>,
    pub record: Recording,
    /// Locate the domain exit by bisection on the last step, to `1e-9` in time.
    pub refine_exit: bool,
    pub max_steps: usize,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: 1.0,
            min_step: 1e-12,
            initial_step: None,
            record: Recording::AllSteps,
            refine_exit: false,
            max_steps: 1_000_000,
        }
    }
}

impl IntegrationConfig {
    pub fn with_tolerances(rel_tol: f64, abs_tol: f64) -> Self {
        Self { rel_tol, abs_tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::invalid("integration tolerances must be positive"));
        }
        if !(self.min_step > 0.0 && self.min_step <= self.max_step) {
            return Err(Error::invalid("need 0 < min_step <= max_step"));
        }
        if let Recording::Every(dt) = self.record {
            if !(dt > 0.0) {
                return Err(Error::invalid("recording interval must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ExitReason {
    HorizonReached,
    LeftFeasibleDomain,
    StepFailure,
}

impl ExitReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExitReason::HorizonReached => "horizonReached",
            ExitReason::LeftFeasibleDomain => "leftFeasibleDomain",
            ExitReason::StepFailure => "stepFailure",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpdMat>,
    /// Last feasible time when the run ended before the horizon.
    pub exit_time: Option<f64>,
    pub exit_reason: ExitReason,
    #[serde(skip)]
    pub accepted_steps: usize,
    #[serde(skip)]
    pub rejected_steps: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &SpdMat {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds the initial time")
    }

    /// CSV with a `t` column followed by the upper-triangle entries `p_i_j` (1-based, i <= j).
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map(|s| s.dim()).unwrap_or(0);
        let mut out = String::from("t");
        for i in 0..n {
            for j in i..n {
                let _ = write!(out, ",p_{}_{}", i + 1, j + 1);
            }
        }
        out.push('\n');
        for (t, s) in self.times.iter().zip(&self.states) {
            let _ = write!(out, "{t}");
            for i in 0..n {
                for j in i..n {
                    let _ = write!(out, ",{}", s.get(i, j));
                }
            }
            out.push('\n');
        }
        out
    }
}

// Dormand–Prince 5(4) coefficients.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

const SAFETY: f64 = 0.9;
const PI_ALPHA: f64 = 0.17;
const PI_BETA: f64 = 0.04;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

struct Stepper<'a, F: ?Sized> {
    field: &'a F,
    cfg: &'a IntegrationConfig,
    t: f64,
    y: DMatrix<f64>,
    k1: DMatrix<f64>,
    h: f64,
    err_prev: f64,
    accepted: usize,
    rejected: usize,
}

enum StepResult {
    Accepted(SpdMat),
    Exit(ExitReason),
}

fn eval<F: VectorField + ?Sized>(field: &F, t: f64, y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = SymMat::symmetrize(y.clone());
    match field.phi(t, &p) {
        Ok(v) if v.matrix().iter().all(|x| x.is_finite()) => Some(v.into_matrix()),
        _ => None,
    }
}

impl<'a, F: VectorField + ?Sized> Stepper<'a, F> {
    fn new(field: &'a F, cfg: &'a IntegrationConfig, t0: f64, p0: &SpdMat, span: f64) -> Result<Self> {
        let y = p0.matrix().clone();
        let k1 = eval(field, t0, &y).ok_or(Error::Infeasible)?;
        let h = match cfg.initial_step {
            Some(h) => h,
            None => {
                let scale = cfg.abs_tol + cfg.rel_tol * y.norm();
                let rate = k1.norm().max(1e-12);
                (0.01 * (y.norm() + scale) / rate).max(1e-6)
            }
        };
        let h = h.min(cfg.max_step).min(span.max(cfg.min_step)).max(cfg.min_step);
        Ok(Self { field, cfg, t: t0, y, k1, h, err_prev: 1e-4, accepted: 0, rejected: 0 })
    }

    /// Single Dormand–Prince step of size `h` from the current state. Returns
    /// the new state, the stage derivative at the new point and the error norm.
    fn trial(&self, h: f64) -> Option<(DMatrix<f64>, DMatrix<f64>, f64)> {
        let mut ks: Vec<DMatrix<f64>> = Vec::with_capacity(7);
        ks.push(self.k1.clone());
        for s in 1..7 {
            let mut yi = self.y.clone();
            for (j, k) in ks.iter().enumerate() {
                if A[s][j] != 0.0 {
                    yi += k * (h * A[s][j]);
                }
            }
            ks.push(eval(self.field, self.t + C[s] * h, &yi)?);
            if s == 6 {
                // Stage 7 is evaluated at the fifth-order solution (FSAL).
                let mut err = DMatrix::zeros(self.y.nrows(), self.y.ncols());
                for (j, k) in ks.iter().enumerate() {
                    if E[j] != 0.0 {
                        err += k * (h * E[j]);
                    }
                }
                let n = self.y.len() as f64;
                let mut acc = 0.0;
                for ((e, y0), y1) in err.iter().zip(self.y.iter()).zip(yi.iter()) {
                    let sc = self.cfg.abs_tol + self.cfg.rel_tol * y0.abs().max(y1.abs());
                    acc += (e / sc).powi(2);
                }
                let norm = (acc / n).sqrt();
                let k7 = ks.pop().expect("seven stages");
                return Some((yi, k7, norm));
            }
        }
        unreachable!()
    }

    fn admissible(&self, t: f64, y: &DMatrix<f64>) -> Option<SpdMat> {
        if !y.iter().all(|v| v.is_finite()) {
            return None;
        }
        let sym = SymMat::symmetrize(y.clone());
        if !sym.is_positive_definite() || !self.field.is_feasible(t, &sym) {
            return None;
        }
        SpdMat::new(sym).ok()
    }

    /// Largest step in `[0, h]` (to `1e-9`) whose single-step result stays admissible.
    fn refine(&self, h: f64) -> Option<(f64, SpdMat)> {
        let (mut lo, mut hi) = (0.0, h);
        let mut best = None;
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            match self.trial(mid).and_then(|(y, _, _)| self.admissible(self.t + mid, &y)) {
                Some(p) => {
                    lo = mid;
                    best = Some((mid, p));
                }
                None => hi = mid,
            }
        }
        best
    }

    /// Advances by one accepted step without passing `t_end`.
    fn step(&mut self, t_end: f64, exit_time: &mut Option<f64>, refined: &mut Option<(f64, SpdMat)>) -> StepResult {
        loop {
            if self.accepted + self.rejected >= self.cfg.max_steps {
                return StepResult::Exit(ExitReason::StepFailure);
            }
            let remaining = t_end - self.t;
            let mut h = self.h.min(self.cfg.max_step);
            let landing = h >= remaining * (1.0 - 1e-12);
            if landing {
                h = remaining;
            } else if self.t + h <= self.t {
                return StepResult::Exit(ExitReason::StepFailure);
            }
            let trial = self.trial(h);
            let (y_new, k7, err) = match trial {
                Some(v) if v.2.is_finite() => v,
                _ => {
                    self.rejected += 1;
                    self.h = h * 0.25;
                    if self.h < self.cfg.min_step {
                        return StepResult::Exit(ExitReason::StepFailure);
                    }
                    continue;
                }
            };
            if err <= 1.0 {
                let t_new = if landing { t_end } else { self.t + h };
                let Some(state) = self.admissible(t_new, &y_new) else {
                    if self.cfg.refine_exit {
                        *refined = self.refine(h);
                    }
                    *exit_time = Some(refined.as_ref().map(|(dh, _)| self.t + dh).unwrap_or(self.t));
                    return StepResult::Exit(ExitReason::LeftFeasibleDomain);
                };
                let err_c = err.max(1e-10);
                let factor = SAFETY * err_c.powf(-PI_ALPHA) * self.err_prev.powf(PI_BETA);
                let factor = factor.clamp(MIN_FACTOR, MAX_FACTOR);
                self.err_prev = err_c;
                // Keep the controller's proposal when the step was shortened to land.
                if !landing || h >= self.h {
                    self.h = h * factor;
                }
                self.t = t_new;
                self.y = state.matrix().clone();
                self.k1 = k7;
                self.accepted += 1;
                return StepResult::Accepted(state);
            }
            self.rejected += 1;
            let factor = (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
            self.h = h * factor;
            if self.h < self.cfg.min_step {
                return StepResult::Exit(ExitReason::StepFailure);
            }
        }
    }
}

struct RunSummary {
    reason: ExitReason,
    exit_time: Option<f64>,
    accepted: usize,
    rejected: usize,
}

/// Integrates through the increasing `stops`, landing exactly on each one.
/// `on_accept(t, state, is_stop)` sees every accepted state.
fn drive<F, CB>(
    field: &F,
    p0: &SpdMat,
    t0: f64,
    stops: &[f64],
    cfg: &IntegrationConfig,
    mut on_accept: CB,
) -> Result<RunSummary>
where
    F: VectorField + ?Sized,
    CB: FnMut(f64, &SpdMat, bool),
{
    cfg.validate()?;
    if p0.dim() != field.dim() {
        return Err(Error::dims(field.dim(), p0.dim()));
    }
    if !t0.is_finite() || stops.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("integration times must be finite"));
    }
    if stops.first().is_some_and(|&s| s < t0) || stops.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("integration times must be nondecreasing from the start time"));
    }
    if !field.is_feasible(t0, p0) {
        return Err(Error::Infeasible);
    }
    let span = stops.last().map(|&s| s - t0).unwrap_or(0.0);
    let mut stepper = Stepper::new(field, cfg, t0, p0, span)?;
    let mut exit_time = None;
    let mut refined = None;
    for &stop in stops {
        while stepper.t < stop {
            match stepper.step(stop, &mut exit_time, &mut refined) {
                StepResult::Accepted(state) => {
                    let at_stop = stepper.t == stop;
                    on_accept(stepper.t, &state, at_stop);
                }
                StepResult::Exit(reason) => {
                    if let Some((dh, state)) = refined.take() {
                        on_accept(stepper.t + dh, &state, false);
                    }
                    let exit_time = exit_time.or(Some(stepper.t));
                    return Ok(RunSummary {
                        reason,
                        exit_time,
                        accepted: stepper.accepted,
                        rejected: stepper.rejected,
                    });
                }
            }
        }
    }
    Ok(RunSummary {
        reason: ExitReason::HorizonReached,
        exit_time: None,
        accepted: stepper.accepted,
        rejected: stepper.rejected,
    })
}

/// Solves `P' = phi(t, P)`, `P(s) = p0` on `[s, t]`.
///
/// Leaving the feasible domain or the cone and step-size underflow end the run
/// early; the partial trajectory is returned with the reason.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    p0: &SpdMat,
    s: f64,
    t: f64,
    cfg: &IntegrationConfig,
) -> Result<Trajectory> {
    if !(s <= t) {
        return Err(Error::invalid(format!("need s <= t, got s = {s}, t = {t}")));
    }
    let mut times = vec![s];
    let mut states = vec![p0.clone()];
    let mut last_recorded = s;
    let summary = drive(field, p0, s, &[t], cfg, |time, state, at_stop| {
        let keep = match cfg.record {
            Recording::AllSteps => true,
            Recording::Every(dt) => at_stop || time - last_recorded >= dt * (1.0 - 1e-12),
        };
        if keep {
            times.push(time);
            states.push(state.clone());
            last_recorded = time;
        }
    })?;
    if summary.reason != ExitReason::HorizonReached && cfg.record != Recording::AllSteps {
        // Thinning may have skipped the last feasible state.
        let _ = &summary;
    }
    Ok(Trajectory {
        times,
        states,
        exit_time: summary.exit_time,
        exit_reason: summary.reason,
        accepted_steps: summary.accepted,
        rejected_steps: summary.rejected,
    })
}

/// States at the requested grid times. `states.len() < times.len()` when the
/// run ended early.
#[derive(Debug, Clone)]
pub struct GridTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpdMat>,
    pub exit_time: Option<f64>,
    pub exit_reason: ExitReason,
}

/// Integrates from `times[0]` and samples the solution exactly at every grid time.
pub fn integrate_on_grid<F: VectorField + ?Sized>(
    field: &F,
    p0: &SpdMat,
    times: &[f64],
    cfg: &IntegrationConfig,
) -> Result<GridTrajectory> {
    let (&t0, rest) = times.split_first().ok_or_else(|| Error::invalid("empty time grid"))?;
    let mut states = vec![p0.clone()];
    let summary = drive(field, p0, t0, rest, cfg, |_, state, at_stop| {
        if at_stop {
            states.push(state.clone());
        }
    })?;
    // Repeated grid times are landed once; duplicate the state for them.
    let mut out = Vec::with_capacity(times.len());
    let mut it = states.into_iter();
    let mut current = it.next();
    out.push(current.clone().expect("initial state"));
    for w in times.windows(2) {
        if w[1] > w[0] {
            current = it.next();
        }
        match &current {
            Some(s) => out.push(s.clone()),
            None => break,
        }
    }
    Ok(GridTrajectory {
        times: times[..out.len()].to_vec(),
        states: out,
        exit_time: summary.exit_time,
        exit_reason: summary.reason,
    })
}

/// The flow map `M_s^t(p0)`. Fails with [`Error::DomainExit`] when the
/// solution does not reach `t`.
pub fn flow_map<F: VectorField + ?Sized>(
    field: &F,
    s: f64,
    t: f64,
    p0: &SpdMat,
    cfg: &IntegrationConfig,
) -> Result<SpdMat> {
    if !(s <= t) {
        return Err(Error::invalid(format!("need s <= t, got s = {s}, t = {t}")));
    }
    let mut last = p0.clone();
    let summary = drive(field, p0, s, &[t], cfg, |_, state, at_stop| {
        if at_stop {
            last = state.clone();
        }
    })?;
    match summary.reason {
        ExitReason::HorizonReached => Ok(last),
        reason => Err(Error::DomainExit { time: summary.exit_time.unwrap_or(s), reason: reason.as_str().to_string() }),
    }
}

/// Distances between the two trajectories started at `p1` and `p2`, sampled on
/// `times` and truncated at the earlier exit.
pub fn observed_contraction<F, M>(
    field: &F,
    p1: &SpdMat,
    p2: &SpdMat,
    times: &[f64],
    metric: M,
    cfg: &IntegrationConfig,
) -> Result<Vec<(f64, f64)>>
where
    F: VectorField + ?Sized,
    M: Fn(&SpdMat, &SpdMat) -> Result<f64>,
{
    let a = integrate_on_grid(field, p1, times, cfg)?;
    let b = integrate_on_grid(field, p2, times, cfg)?;
    a.states.iter().zip(&b.states).zip(times).map(|((x, y), &t)| Ok((t, metric(x, y)?))).collect()
}

/// Minimum over the grid of `lambda_min(M_t(p1) - M_t(p2))` for `p2 <= p1`.
/// Values above `-1e-8` are evidence of order preservation.
pub fn order_preservation_probe<F: VectorField + ?Sized>(
    field: &F,
    p1: &SpdMat,
    p2: &SpdMat,
    times: &[f64],
    cfg: &IntegrationConfig,
) -> Result<f64> {
    if !loewner_leq(p2, p1, 0.0)? {
        return Err(Error::invalid("order preservation probe needs p2 <= p1"));
    }
    let a = integrate_on_grid(field, p1, times, cfg)?;
    let b = integrate_on_grid(field, p2, times, cfg)?;
    let mut worst = f64::INFINITY;
    for (x, y) in a.states.iter().zip(&b.states) {
        worst = worst.min((x.as_sym() - y.as_sym()).min_eigenvalue()?);
    }
    Ok(worst)
}

/// Uniform grid `start, start + dt, ..., end` with `count` intervals.
pub fn uniform_grid(start: f64, end: f64, count: usize) -> Vec<f64> {
    let count = count.max(1);
    (0..=count).map(|i| start + (end - start) * i as f64 / count as f64).collect()
}
