//! The discrete generalized Riccati operator
//! `F(P) = A'PA + C'PC + Q - (B'PA + D'PC)'(R + B'PB + D'PD)^{-1}(B'PA + D'PC)`
//! and its Lipschitz constant in the Thompson metric.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cone::{max_ratio, thompson_distance, SpdMat, SymMat};
use crate::error::{Error, Result};
use crate::json::dense;
use crate::par::{self, Execution};
use crate::random;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiscreteParamsJson", into = "DiscreteParamsJson")]
pub struct DiscreteParams {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    q: SpdMat,
    r: SpdMat,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiscreteParamsJson {
    #[serde(rename = "A", with = "dense")]
    a: DMatrix<f64>,
    #[serde(rename = "B", with = "dense")]
    b: DMatrix<f64>,
    #[serde(rename = "C", with = "dense")]
    c: DMatrix<f64>,
    #[serde(rename = "D", with = "dense")]
    d: DMatrix<f64>,
    #[serde(rename = "Q")]
    q: SpdMat,
    #[serde(rename = "R")]
    r: SpdMat,
}

impl TryFrom<DiscreteParamsJson> for DiscreteParams {
    type Error = Error;
    fn try_from(j: DiscreteParamsJson) -> Result<Self> {
        DiscreteParams::new(j.a, j.b, j.c, j.d, j.q, j.r)
    }
}

impl From<DiscreteParams> for DiscreteParamsJson {
    fn from(p: DiscreteParams) -> Self {
        Self { a: p.a, b: p.b, c: p.c, d: p.d, q: p.q, r: p.r }
    }
}

fn shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dims(format!("{name}: {rows}x{cols}"), format!("{name}: {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Core evaluation shared by the full and reduced forms. Returns `F(P)` and the gain `N`.
fn evaluate(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    q: &SymMat,
    r: &SymMat,
    p: &SymMat,
) -> Result<(SymMat, DMatrix<f64>)> {
    let pm = p.matrix();
    let pa = pm * a;
    let pc = pm * c;
    let coupling = b.transpose() * &pa + d.transpose() * &pc;
    let weight = r.matrix() + b.transpose() * pm * b + d.transpose() * pm * d;
    let chol = weight.cholesky().ok_or(Error::Singular("R + B'PB + D'PD is not positive definite".into()))?;
    let gain = chol.solve(&coupling);
    let f = a.transpose() * pa + c.transpose() * pc + q.matrix() - coupling.transpose() * &gain;
    Ok((SymMat::symmetrize(f), gain))
}

impl DiscreteParams {
    /// Requires `A, C: n x n`, `B, D: n x m`, `Q: n x n` and `R: m x m`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        q: SpdMat,
        r: SpdMat,
    ) -> Result<Self> {
        let n = q.dim();
        let m = r.dim();
        shape("A", &a, n, n)?;
        shape("B", &b, n, m)?;
        shape("C", &c, n, n)?;
        shape("D", &d, n, m)?;
        Ok(Self { a, b, c, d, q, r })
    }

    /// The standard operator's coefficients (`C = D = 0`).
    pub fn standard(a: DMatrix<f64>, b: DMatrix<f64>, q: SpdMat, r: SpdMat) -> Result<Self> {
        let (n, m) = (q.dim(), r.dim());
        Self::new(a, b, DMatrix::zeros(n, n), DMatrix::zeros(n, m), q, r)
    }

    pub fn n(&self) -> usize {
        self.q.dim()
    }
    pub fn m(&self) -> usize {
        self.r.dim()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn q(&self) -> &SpdMat {
        &self.q
    }
    pub fn r(&self) -> &SpdMat {
        &self.r
    }

    /// The stacked input matrix `[B; D]`.
    pub fn input_stack(&self) -> DMatrix<f64> {
        stack(&self.b, &self.d)
    }

    /// The stacked state matrix `[A; C]`.
    pub fn state_stack(&self) -> DMatrix<f64> {
        stack(&self.a, &self.c)
    }

    fn check(&self, p: &SymMat) -> Result<()> {
        if p.dim() != self.n() {
            return Err(Error::dims(self.n(), p.dim()));
        }
        Ok(())
    }

    pub fn apply_f(&self, p: &SpdMat) -> Result<SpdMat> {
        self.check(p)?;
        let (f, _) = evaluate(&self.a, &self.b, &self.c, &self.d, &self.q, &self.r, p)?;
        SpdMat::new(f)
    }

    /// `N = (R + B'PB + D'PD)^{-1}(B'PA + D'PC)`.
    pub fn gain(&self, p: &SpdMat) -> Result<DMatrix<f64>> {
        self.check(p)?;
        Ok(evaluate(&self.a, &self.b, &self.c, &self.d, &self.q, &self.r, p)?.1)
    }

    /// `DF(P) Z = (A - BN)'Z(A - BN) + (C - DN)'Z(C - DN)`.
    pub fn df(&self, p: &SpdMat, z: &SymMat) -> Result<SymMat> {
        self.check(z)?;
        let gain = self.gain(p)?;
        let ka = &self.a - &self.b * &gain;
        let kc = &self.c - &self.d * &gain;
        Ok(&z.congruence_t(&ka) + &z.congruence_t(&kc))
    }

    /// Operator in the reduced coordinates `(B_bar, D_bar, R_bar)` of a rank
    /// factorization `[B; D] = [B_bar; D_bar] W`.
    pub fn apply_f_reduced(&self, red: &Reduction, p: &SpdMat) -> Result<SpdMat> {
        self.check(p)?;
        let (f, _) = evaluate(&self.a, &red.b_bar, &self.c, &red.d_bar, &self.q, &red.r_bar, p)?;
        SpdMat::new(f)
    }

    pub fn reduce(&self, rank_tol: f64) -> Result<Reduction> {
        let (left, w) = rank_factorization(&self.input_stack(), rank_tol)?;
        let n = self.n();
        let r_bar = woodbury_rbar(&w, &self.r)?;
        Ok(Reduction {
            b_bar: left.rows(0, n).into_owned(),
            d_bar: left.rows(n, n).into_owned(),
            w,
            r_bar: r_bar.into_sym(),
        })
    }
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// Standard operator `T(P) = A'PA + Q - A'PB(R + B'PB)^{-1}B'PA`.
pub fn apply_t(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &SpdMat, r: &SpdMat, p: &SpdMat) -> Result<SpdMat> {
    DiscreteParams::standard(a.clone(), b.clone(), q.clone(), r.clone())?.apply_f(p)
}

/// Rank factorization `[B; D] = [B_bar; D_bar] W` with `R_bar = (W R^{-1} W')^{-1}`.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub b_bar: DMatrix<f64>,
    pub d_bar: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub r_bar: SymMat,
}

/// `M = left * W` from the SVD, keeping singular values above `rank_tol * sigma_max`.
/// `left = U_r S_r` has full column rank and `W = V_r'` orthonormal rows.
pub fn rank_factorization(m: &DMatrix<f64>, rank_tol: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::invalid("rank tolerance must lie in (0, 1)"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Err(Error::Singular("rank factorization of a zero matrix".into()));
    }
    let u = svd.u.ok_or(Error::EigenFailure)?;
    let vt = svd.v_t.ok_or(Error::EigenFailure)?;
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > rank_tol * smax).collect();
    let r = keep.len();
    let mut left = DMatrix::zeros(m.nrows(), r);
    let mut w = DMatrix::zeros(r, m.ncols());
    for (col, &i) in keep.iter().enumerate() {
        left.set_column(col, &(u.column(i) * svd.singular_values[i]));
        w.set_row(col, &vt.row(i));
    }
    Ok((left, w))
}

/// `(W R^{-1} W')^{-1}` for `W` of full row rank.
pub fn woodbury_rbar(w: &DMatrix<f64>, r: &SpdMat) -> Result<SpdMat> {
    if w.ncols() != r.dim() {
        return Err(Error::dims(r.dim(), w.ncols()));
    }
    let inner = SymMat::symmetrize(w * r.inv().matrix() * w.transpose());
    let chol = inner.matrix().clone().cholesky().ok_or(Error::Singular("W does not have full row rank".into()))?;
    SpdMat::new(SymMat::symmetrize(chol.inverse()))
}

/// `lambda_min(R / (4(delta - 1)) - [X - X(R + X)^{-1}(delta R + X)(R + X)^{-1}X])`.
pub fn lgty_gap(r: &SpdMat, x: &SymMat, delta: f64) -> Result<f64> {
    if !(delta >= 2.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("delta must be at least 2, got {delta}")));
    }
    if x.dim() != r.dim() {
        return Err(Error::dims(r.dim(), x.dim()));
    }
    if !x.is_psd()? {
        return Err(Error::invalid("X must be positive semidefinite"));
    }
    let rx = r.matrix() + x.matrix();
    let chol = rx.cholesky().ok_or(Error::Singular("R + X".into()))?;
    let m = chol.solve(x.matrix());
    let middle = r.matrix() * delta + x.matrix();
    let lhs = x.matrix() - m.transpose() * middle * &m;
    let rhs = r.matrix() / (4.0 * (delta - 1.0));
    SymMat::symmetrize(rhs - lhs).min_eigenvalue()
}

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LipschitzReport {
    /// The operator is always non-expansive.
    pub non_expansive: bool,
    pub strict: bool,
    /// Solution of `[A; C] = [B; D] S` in the original input coordinates.
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none", with = "crate::json::dense_opt")]
    pub s: Option<DMatrix<f64>>,
    /// Least-squares residual of `[A; C] = [B_bar; D_bar] S`.
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    /// `nu / (1 + sqrt(1 + nu))^2` when strict, 1 otherwise.
    pub bound: f64,
    pub rank_tol: f64,
}

/// Strict contraction test and closed-form Lipschitz bound.
pub fn lipschitz_report(p: &DiscreteParams, rank_tol: f64) -> Result<LipschitzReport> {
    let target = p.state_stack();
    let scale = p.a.norm() + p.c.norm();
    let (n, m) = (p.n(), p.m());
    let non_strict = |residual: f64| LipschitzReport {
        non_expansive: true,
        strict: false,
        s: None,
        residual,
        nu: None,
        bound: 1.0,
        rank_tol,
    };
    if p.input_stack().iter().all(|&v| v == 0.0) {
        // No inputs: strict only for the constant map.
        if scale == 0.0 {
            return Ok(LipschitzReport {
                non_expansive: true,
                strict: true,
                s: Some(DMatrix::zeros(m, n)),
                residual: 0.0,
                nu: Some(0.0),
                bound: 0.0,
                rank_tol,
            });
        }
        return Ok(non_strict(target.norm()));
    }
    let red = p.reduce(rank_tol)?;
    let left = stack(&red.b_bar, &red.d_bar);
    let s_red = left.clone().svd(true, true).solve(&target, 0.0).map_err(|e| Error::Singular(e.to_string()))?;
    let residual = (&target - &left * &s_red).norm();
    if !(residual <= rank_tol * scale) {
        return Ok(non_strict(residual));
    }
    let weighted = red.r_bar.congruence_t(&s_red);
    let nu = max_ratio(&weighted, &p.q)?.max(0.0);
    let bound = nu / (1.0 + (1.0 + nu).sqrt()).powi(2);
    Ok(LipschitzReport {
        non_expansive: true,
        strict: true,
        s: Some(red.w.transpose() * s_red),
        residual,
        nu: Some(nu),
        bound,
        rank_tol,
    })
}

/// Random SPD pair: independent draws for even indices, nearby points for odd ones.
fn sample_pair(n: usize, seed: u64, index: usize) -> (SpdMat, SpdMat) {
    use rand::Rng as _;
    let mut rng = random::task_rng(seed, index);
    let p1 = random::spd(&mut rng, n, 2.0);
    if index.is_multiple_of(2) {
        (p1, random::spd(&mut rng, n, 2.0))
    } else {
        let h = 10f64.powf(rng.random_range(-3.0..0.0));
        let dir = random::symmetric(&mut rng, n);
        let dir = dir.scale(h / dir.frobenius_norm().max(f64::MIN_POSITIVE));
        let root = p1.sqrt();
        let step = dir.exp().expect("symmetric exponential");
        let p2 = step.congruence(root.matrix()).expect("congruence of SPD by invertible");
        (p1, p2)
    }
}

/// Largest sampled `d_T(F(P1), F(P2)) / d_T(P1, P2)` over `count` random pairs.
pub fn empirical_lipschitz(p: &DiscreteParams, count: usize, seed: u64, exec: Execution) -> Result<f64> {
    if count == 0 {
        return Err(Error::invalid("need at least one sample pair"));
    }
    let n = p.n();
    let ratios = par::map_indexed(count, exec, |i| -> Result<f64> {
        let (p1, p2) = sample_pair(n, seed, i);
        let d = thompson_distance(&p1, &p2)?;
        if d == 0.0 {
            return Ok(0.0);
        }
        Ok(thompson_distance(&p.apply_f(&p1)?, &p.apply_f(&p2)?)? / d)
    });
    ratios.into_iter().try_fold(0.0f64, |acc, r| Ok(acc.max(r?)))
}

/// Ratios along pairs `(s B, s e^h B)` with `s` large, the direction in which a
/// non-strict operator approaches ratio 1. `B` ranges over `I` and `extra_bases`
/// random SPD matrices.
pub fn directed_lipschitz(p: &DiscreteParams, scales: &[f64], h: f64, extra_bases: usize, seed: u64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid("h must be positive"));
    }
    let n = p.n();
    let mut bases = vec![SpdMat::identity(n)];
    let mut rng = random::rng(seed);
    bases.extend((0..extra_bases).map(|_| random::spd(&mut rng, n, 1.0)));
    let mut best = 0.0f64;
    for base in &bases {
        for &s in scales {
            let p1 = base.scaled(s)?;
            let p2 = base.scaled(s * h.exp())?;
            let d = thompson_distance(&p1, &p2)?;
            best = best.max(thompson_distance(&p.apply_f(&p1)?, &p.apply_f(&p2)?)? / d);
        }
    }
    Ok(best)
}

/// `max M(DF(P) P / F(P))` over the given points.
pub fn derivative_lipschitz(p: &DiscreteParams, points: &[SpdMat]) -> Result<f64> {
    points.iter().try_fold(0.0f64, |acc, x| {
        let num = p.df(x, x.as_sym())?;
        Ok(acc.max(max_ratio(&num, &p.apply_f(x)?)?))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FixedPoint {
    pub pbar: SpdMat,
    pub iterations: usize,
    /// `d_T(F(Pbar), Pbar)`.
    pub step: f64,
    pub strict: bool,
}

/// Iterates `P <- F(P)` until `d_T(F(P), P) < tol`.
///
/// For strict instances the budget follows from the contraction bound; otherwise
/// the loop is best effort, capped at `max_iter` and stopped on divergence.
pub fn iterate_to_fixed_point(p: &DiscreteParams, p0: &SpdMat, tol: f64, max_iter: usize) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let report = lipschitz_report(p, DEFAULT_RANK_TOL)?;
    let mut cur = p0.clone();
    let mut next = p.apply_f(&cur)?;
    let mut step = thompson_distance(&next, &cur)?;
    let budget = if report.strict && report.bound < 1.0 && step > 0.0 {
        let k = report.bound.max(1e-300);
        let need = ((step / (tol * (1.0 - k))).ln() / (1.0 / k).ln()).max(0.0);
        (need.ceil() as usize + 10).min(max_iter)
    } else {
        max_iter
    };
    let mut iterations = 0;
    while step >= tol {
        if iterations >= budget {
            return Err(Error::NonConvergence(format!("d_T(F(P), P) = {step:e} after {iterations} iterations")));
        }
        cur = next;
        if cur.frobenius_norm() > 1e12 {
            return Err(Error::NonConvergence("iteration diverged".into()));
        }
        next = p.apply_f(&cur)?;
        step = thompson_distance(&next, &cur)?;
        iterations += 1;
    }
    Ok(FixedPoint { pbar: cur, iterations, step, strict: report.strict })
}
