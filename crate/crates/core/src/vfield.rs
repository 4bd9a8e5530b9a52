//! Riccati vector fields on the positive definite cone.
//!
//! The generalized (stochastic) field is
//!
//! ```text
//! phi(P) = PA + A'P + C'PC + Q - (B'P + D'PC + L)' (R + D'PD)^{-1} (B'P + D'PC + L)
//! ```
//!
//! defined wherever `R + D'PD` is positive definite. The standard field
//! `A'P + PA + D - P Sigma P` is the special case without multiplicative noise.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::cone::{SymMat, PSD_REL_TOL};
use crate::error::{Error, Result};
use crate::json;

/// A time-dependent vector field `P' = phi(t, P)` on symmetric matrices
/// together with its Fréchet derivative in `P`.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    fn phi(&self, t: f64, p: &SymMat) -> Result<SymMat>;

    /// Directional derivative `Dphi_t(P) . Z`.
    fn dphi(&self, t: f64, p: &SymMat, z: &SymMat) -> Result<SymMat>;

    /// Whether `(t, P)` lies in the domain where the field is defined.
    fn is_feasible(&self, _t: f64, _p: &SymMat) -> bool {
        true
    }

    fn is_autonomous(&self) -> bool {
        true
    }

    /// `Dphi_t(P) . P - phi(t, P)`.
    fn defect(&self, t: f64, p: &SymMat) -> Result<SymMat> {
        Ok(&self.dphi(t, p, p)? - &self.phi(t, p)?)
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn phi(&self, t: f64, p: &SymMat) -> Result<SymMat> {
        (**self).phi(t, p)
    }
    fn dphi(&self, t: f64, p: &SymMat, z: &SymMat) -> Result<SymMat> {
        (**self).dphi(t, p, z)
    }
    fn is_feasible(&self, t: f64, p: &SymMat) -> bool {
        (**self).is_feasible(t, p)
    }
    fn is_autonomous(&self) -> bool {
        (**self).is_autonomous()
    }
    fn defect(&self, t: f64, p: &SymMat) -> Result<SymMat> {
        (**self).defect(t, p)
    }
}

fn check_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::dims(format!("{name}: {rows}x{cols}"), format!("{}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

fn check_sym_dim(a: &SymMat, p: &SymMat) -> Result<()> {
    if a.dim() != p.dim() {
        return Err(Error::dims(a.dim(), p.dim()));
    }
    Ok(())
}

/// Coefficients `(A, B, C, D, L, Q, R)` of the generalized Riccati field.
/// `A, C` are `n x n`; `B, D` are `n x k`; `L` is `k x n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GrdeParamsJson", into = "GrdeParamsJson")]
pub struct GrdeParams {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    l: DMatrix<f64>,
    q: SymMat,
    r: SymMat,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrdeParamsJson {
    #[serde(rename = "A", with = "json::dense")]
    a: DMatrix<f64>,
    #[serde(rename = "B", with = "json::dense")]
    b: DMatrix<f64>,
    #[serde(rename = "C", with = "json::dense")]
    c: DMatrix<f64>,
    #[serde(rename = "D", with = "json::dense")]
    d: DMatrix<f64>,
    #[serde(rename = "L", with = "json::dense")]
    l: DMatrix<f64>,
    #[serde(rename = "Q")]
    q: SymMat,
    #[serde(rename = "R")]
    r: SymMat,
}

impl TryFrom<GrdeParamsJson> for GrdeParams {
    type Error = Error;
    fn try_from(j: GrdeParamsJson) -> Result<Self> {
        GrdeParams::new(j.a, j.b, j.c, j.d, j.l, j.q, j.r)
    }
}

impl From<GrdeParams> for GrdeParamsJson {
    fn from(p: GrdeParams) -> Self {
        GrdeParamsJson { a: p.a, b: p.b, c: p.c, d: p.d, l: p.l, q: p.q, r: p.r }
    }
}

impl GrdeParams {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        l: DMatrix<f64>,
        q: SymMat,
        r: SymMat,
    ) -> Result<Self> {
        let n = q.dim();
        let k = r.dim();
        check_shape("A", &a, n, n)?;
        check_shape("B", &b, n, k)?;
        check_shape("C", &c, n, n)?;
        check_shape("D", &d, n, k)?;
        check_shape("L", &l, k, n)?;
        Ok(Self { a, b, c, d, l, q, r })
    }

    pub fn n(&self) -> usize {
        self.q.dim()
    }

    pub fn k(&self) -> usize {
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
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }
    pub fn q(&self) -> &SymMat {
        &self.q
    }
    pub fn r(&self) -> &SymMat {
        &self.r
    }

    /// The cost block `[[Q, L'], [L, R]]`.
    pub fn cost_block(&self) -> SymMat {
        let (n, k) = (self.n(), self.k());
        let mut m = DMatrix::zeros(n + k, n + k);
        m.view_mut((0, 0), (n, n)).copy_from(self.q.matrix());
        m.view_mut((0, n), (n, k)).copy_from(&self.l.transpose());
        m.view_mut((n, 0), (k, n)).copy_from(&self.l);
        m.view_mut((n, n), (k, k)).copy_from(self.r.matrix());
        SymMat::symmetrize(m)
    }

    /// Cost block PSD and `ker R ∩ ker D = {0}`; under this condition the flow is
    /// order-preserving and non-expansive on the whole cone.
    pub fn is_well_posed(&self) -> Result<bool> {
        if !self.cost_block().is_psd()? {
            return Ok(false);
        }
        let (n, k) = (self.n(), self.k());
        let mut stack = DMatrix::zeros(k + n, k);
        stack.view_mut((0, 0), (k, k)).copy_from(self.r.matrix());
        stack.view_mut((k, 0), (n, k)).copy_from(&self.d);
        let sv = stack.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        Ok(smax > 0.0 && smin > 1e-12 * smax)
    }

    /// Cost block positive definite.
    pub fn is_strictly_well_posed(&self) -> Result<bool> {
        let v = self.cost_block().eigenvalues()?;
        let scale = v[v.len() - 1].abs().max(f64::MIN_POSITIVE);
        Ok(v[0] > PSD_REL_TOL * scale)
    }

    /// `Q - L' R^{-1} L`. Requires `R` positive definite.
    pub fn reduced_cost(&self) -> Result<SymMat> {
        let chol = self
            .r
            .matrix()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Hypothesis("R must be positive definite".into()))?;
        let rl = chol.solve(&self.l);
        Ok(SymMat::symmetrize(self.q.matrix() - self.l.transpose() * rl))
    }

    /// `R + D'PD`.
    pub fn feasibility_matrix(&self, p: &SymMat) -> Result<SymMat> {
        check_sym_dim(&self.q, p)?;
        Ok(SymMat::symmetrize(self.r.matrix() + self.d.transpose() * p.matrix() * &self.d))
    }

    /// `lambda_min(R + D'PD)`.
    pub fn feasibility_margin(&self, p: &SymMat) -> Result<f64> {
        self.feasibility_matrix(p)?.min_eigenvalue()
    }

    /// `R + D'PD` positive definite.
    pub fn is_feasible(&self, p: &SymMat) -> bool {
        self.feasibility_matrix(p).map(|m| m.is_positive_definite()).unwrap_or(false)
    }

    fn factor(&self, p: &SymMat) -> Result<Cholesky<f64, Dyn>> {
        self.feasibility_matrix(p)?.into_matrix().cholesky().ok_or(Error::Infeasible)
    }

    /// `B'P + D'PC + L`.
    fn coupling(&self, p: &SymMat) -> DMatrix<f64> {
        let pm = p.matrix();
        self.b.transpose() * pm + self.d.transpose() * pm * &self.c + &self.l
    }

    /// Feedback gain `N(P) = (R + D'PD)^{-1} (B'P + D'PC + L)`, a `k x n` matrix.
    pub fn gain(&self, p: &SymMat) -> Result<DMatrix<f64>> {
        let chol = self.factor(p)?;
        Ok(chol.solve(&self.coupling(p)))
    }

    pub fn phi(&self, p: &SymMat) -> Result<SymMat> {
        let chol = self.factor(p)?;
        let g = self.coupling(p);
        let n = chol.solve(&g);
        let pm = p.matrix();
        let m = pm * &self.a + self.a.transpose() * pm + self.c.transpose() * pm * &self.c + self.q.matrix()
            - g.transpose() * n;
        Ok(SymMat::symmetrize(m))
    }

    /// Derivative at a point whose gain `N` is already known.
    pub fn dphi_with_gain(&self, gain: &DMatrix<f64>, z: &SymMat) -> Result<SymMat> {
        check_sym_dim(&self.q, z)?;
        let zm = z.matrix();
        let k = self.b.transpose() * zm + self.d.transpose() * zm * &self.c;
        let kt_n = k.transpose() * gain;
        let dn = &self.d * gain;
        let m = zm * &self.a + self.a.transpose() * zm + self.c.transpose() * zm * &self.c - &kt_n - kt_n.transpose()
            + dn.transpose() * zm * dn;
        Ok(SymMat::symmetrize(m))
    }

    /// `Dphi(P) . Z = ZA + A'Z + C'ZC - (B'Z + D'ZC)'N - N'(B'Z + D'ZC) + N'D'ZDN`.
    pub fn dphi(&self, p: &SymMat, z: &SymMat) -> Result<SymMat> {
        let n = self.gain(p)?;
        self.dphi_with_gain(&n, z)
    }

    /// `Dphi(P) . P - phi(P)` in factored form `-Q + N'L + L'N - N'RN`.
    pub fn defect(&self, p: &SymMat) -> Result<SymMat> {
        let n = self.gain(p)?;
        let nl = n.transpose() * &self.l;
        let m = -self.q.matrix() + &nl + nl.transpose() - n.transpose() * self.r.matrix() * &n;
        Ok(SymMat::symmetrize(m))
    }
}

impl VectorField for GrdeParams {
    fn dim(&self) -> usize {
        self.n()
    }
    fn phi(&self, _t: f64, p: &SymMat) -> Result<SymMat> {
        GrdeParams::phi(self, p)
    }
    fn dphi(&self, _t: f64, p: &SymMat, z: &SymMat) -> Result<SymMat> {
        GrdeParams::dphi(self, p, z)
    }
    fn is_feasible(&self, _t: f64, p: &SymMat) -> bool {
        GrdeParams::is_feasible(self, p)
    }
    fn defect(&self, _t: f64, p: &SymMat) -> Result<SymMat> {
        GrdeParams::defect(self, p)
    }
}

/// Coefficients `(A, Sigma, D)` of the standard Riccati field `A'P + PA + D - P Sigma P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StdParamsJson", into = "StdParamsJson")]
pub struct StdRiccatiParams {
    a: DMatrix<f64>,
    sigma: SymMat,
    dmat: SymMat,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StdParamsJson {
    #[serde(rename = "A", with = "json::dense")]
    a: DMatrix<f64>,
    #[serde(rename = "Sigma")]
    sigma: SymMat,
    #[serde(rename = "D")]
    dmat: SymMat,
}

impl TryFrom<StdParamsJson> for StdRiccatiParams {
    type Error = Error;
    fn try_from(j: StdParamsJson) -> Result<Self> {
        StdRiccatiParams::new(j.a, j.sigma, j.dmat)
    }
}

impl From<StdRiccatiParams> for StdParamsJson {
    fn from(p: StdRiccatiParams) -> Self {
        StdParamsJson { a: p.a, sigma: p.sigma, dmat: p.dmat }
    }
}

impl StdRiccatiParams {
    pub fn new(a: DMatrix<f64>, sigma: SymMat, dmat: SymMat) -> Result<Self> {
        let n = sigma.dim();
        check_shape("A", &a, n, n)?;
        check_sym_dim(&sigma, &dmat)?;
        Ok(Self { a, sigma, dmat })
    }

    pub fn n(&self) -> usize {
        self.sigma.dim()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn sigma(&self) -> &SymMat {
        &self.sigma
    }
    pub fn dmat(&self) -> &SymMat {
        &self.dmat
    }

    pub fn phi(&self, p: &SymMat) -> Result<SymMat> {
        check_sym_dim(&self.sigma, p)?;
        let pm = p.matrix();
        let m = self.a.transpose() * pm + pm * &self.a + self.dmat.matrix() - pm * self.sigma.matrix() * pm;
        Ok(SymMat::symmetrize(m))
    }

    /// `A'Z + ZA - Z Sigma P - P Sigma Z`.
    pub fn dphi(&self, p: &SymMat, z: &SymMat) -> Result<SymMat> {
        check_sym_dim(&self.sigma, p)?;
        check_sym_dim(&self.sigma, z)?;
        let (pm, zm) = (p.matrix(), z.matrix());
        let zsp = zm * self.sigma.matrix() * pm;
        let m = self.a.transpose() * zm + zm * &self.a - &zsp - zsp.transpose();
        Ok(SymMat::symmetrize(m))
    }

    /// Scalar bounds `(c_A, c_D, m_D, c_Sigma)` with `A + A' <= -2 c_A I`,
    /// `m_D I <= D <= c_D I` and `Sigma >= -c_Sigma I`.
    pub fn scalar_bounds(&self) -> Result<ScalarBounds> {
        let sym_a = SymMat::symmetrize(&self.a + self.a.transpose());
        let dv = self.dmat.eigenvalues()?;
        Ok(ScalarBounds {
            c_a: -sym_a.max_eigenvalue()? / 2.0,
            c_d: dv[dv.len() - 1],
            m_d: dv[0],
            c_sigma: (-self.sigma.min_eigenvalue()?).max(0.0),
        })
    }

    /// Embeds the field as a generalized one with `B = Sigma^{1/2}`, `R = I`,
    /// `C = D = L = 0`, `Q = D_std`. Requires `Sigma` PSD.
    pub fn to_grde(&self) -> Result<GrdeParams> {
        if !self.sigma.is_psd()? {
            return Err(Error::Hypothesis("Sigma must be positive semidefinite".into()));
        }
        let n = self.n();
        let root = self.sigma.map_spectrum(|l| l.max(0.0).sqrt())?;
        GrdeParams::new(
            self.a.clone(),
            root.into_matrix(),
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, n),
            self.dmat.clone(),
            SymMat::identity(n),
        )
    }
}

/// Scalar coefficient bounds used by the indefinite and degenerate `Sigma` rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScalarBounds {
    pub c_a: f64,
    pub c_d: f64,
    pub m_d: f64,
    pub c_sigma: f64,
}

impl VectorField for StdRiccatiParams {
    fn dim(&self) -> usize {
        self.n()
    }
    fn phi(&self, _t: f64, p: &SymMat) -> Result<SymMat> {
        StdRiccatiParams::phi(self, p)
    }
    fn dphi(&self, _t: f64, p: &SymMat, z: &SymMat) -> Result<SymMat> {
        StdRiccatiParams::dphi(self, p, z)
    }
}

/// Piecewise-constant coefficient schedule: `pieces[i]` is active on
/// `[breakpoints[i-1], breakpoints[i])`.
#[derive(Debug, Clone)]
pub struct PiecewiseConstant<F> {
    breakpoints: Vec<f64>,
    pieces: Vec<F>,
}

impl<F: VectorField> PiecewiseConstant<F> {
    pub fn new(breakpoints: Vec<f64>, pieces: Vec<F>) -> Result<Self> {
        if pieces.is_empty() || breakpoints.len() + 1 != pieces.len() {
            return Err(Error::invalid("need exactly one more piece than breakpoints"));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("breakpoints must be strictly increasing"));
        }
        let n = pieces[0].dim();
        if pieces.iter().any(|p| p.dim() != n) {
            return Err(Error::dims(n, "mixed piece dimensions"));
        }
        Ok(Self { breakpoints, pieces })
    }

    pub fn piece(&self, t: f64) -> &F {
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        &self.pieces[idx]
    }

    pub fn pieces(&self) -> &[F] {
        &self.pieces
    }
}

impl<F: VectorField> VectorField for PiecewiseConstant<F> {
    fn dim(&self) -> usize {
        self.pieces[0].dim()
    }
    fn phi(&self, t: f64, p: &SymMat) -> Result<SymMat> {
        self.piece(t).phi(t, p)
    }
    fn dphi(&self, t: f64, p: &SymMat, z: &SymMat) -> Result<SymMat> {
        self.piece(t).dphi(t, p, z)
    }
    fn is_feasible(&self, t: f64, p: &SymMat) -> bool {
        self.piece(t).is_feasible(t, p)
    }
    fn is_autonomous(&self) -> bool {
        self.pieces.len() == 1
    }
    fn defect(&self, t: f64, p: &SymMat) -> Result<SymMat> {
        self.piece(t).defect(t, p)
    }
}

/// A field given by closures, for ad hoc flows such as `phi(P) = -P`.
pub struct FnField<P, D> {
    dim: usize,
    phi: P,
    dphi: D,
}

impl<P, D> FnField<P, D>
where
    P: Fn(f64, &SymMat) -> SymMat + Sync,
    D: Fn(f64, &SymMat, &SymMat) -> SymMat + Sync,
{
    pub fn new(dim: usize, phi: P, dphi: D) -> Self {
        Self { dim, phi, dphi }
    }
}

impl<P, D> VectorField for FnField<P, D>
where
    P: Fn(f64, &SymMat) -> SymMat + Sync,
    D: Fn(f64, &SymMat, &SymMat) -> SymMat + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn phi(&self, t: f64, p: &SymMat) -> Result<SymMat> {
        Ok((self.phi)(t, p))
    }
    fn dphi(&self, t: f64, p: &SymMat, z: &SymMat) -> Result<SymMat> {
        Ok((self.dphi)(t, p, z))
    }
}

/// `<q, Dphi_t(P) . v>` for PSD `v, q` with `<q, v> = 0`. Nonnegative values
/// over all such pairs characterize order preservation.
pub fn monotonicity_witness(field: &impl VectorField, t: f64, p: &SymMat, v: &SymMat, q: &SymMat) -> Result<f64> {
    check_sym_dim(p, v)?;
    check_sym_dim(p, q)?;
    let pairing = q.inner(v);
    if pairing > 1e-10 {
        return Err(Error::invalid(format!("<q, v> = {pairing:.3e} must vanish")));
    }
    if !v.is_psd()? || !q.is_psd()? {
        return Err(Error::invalid("v and q must be positive semidefinite"));
    }
    Ok(q.inner(&field.dphi(t, p, v)?))
}
