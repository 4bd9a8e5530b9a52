//! Symmetric matrices, the positive definite cone, the Loewner order and the
//! Thompson part metric.
//!
//! The cone functionals `M(x/y) = inf{t : x <= t y}` and `m(x/y) = sup{t : x >= t y}`
//! are realized through the extreme eigenvalues of the congruence
//! `y^{-1/2} x y^{-1/2}`, which is symmetric so the spectrum is real.

use std::fmt;
use std::ops::{Add, Deref, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative asymmetry accepted by [`SymMat::new`].
pub const SYMMETRY_REL_TOL: f64 = 1e-8;

/// Default PSD membership tolerance, relative to the largest eigenvalue magnitude.
pub const PSD_REL_TOL: f64 = 1e-9;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// A real symmetric `n x n` matrix.
#[derive(Clone, PartialEq)]
pub struct SymMat {
    m: DMatrix<f64>,
}

impl fmt::Debug for SymMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymMat{:?}", self.to_rows())
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

impl SymMat {
    /// Builds a symmetric matrix, rejecting inputs whose asymmetry exceeds
    /// [`SYMMETRY_REL_TOL`] relative to the largest entry. The stored value is
    /// the symmetric part `(X + X^T)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dims("square matrix", format!("{}x{}", m.nrows(), m.ncols())));
        }
        if m.nrows() == 0 {
            return Err(Error::invalid("matrix dimension must be at least 1"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let scale = max_abs(&m).max(f64::MIN_POSITIVE);
        let asym = max_abs(&(&m - m.transpose())) / scale;
        if asym > SYMMETRY_REL_TOL {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetrizes without any tolerance check. Intended for the outputs of
    /// formulas that are symmetric in exact arithmetic.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrize needs a square matrix");
        let t = m.transpose();
        Self { m: (m + t) * 0.5 }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::dims(format!("{n} columns per row"), "ragged rows"));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        Self { m: DMatrix::identity(n, n) }
    }

    pub fn zeros(n: usize) -> Self {
        Self { m: DMatrix::zeros(n, n) }
    }

    pub fn scalar(n: usize, c: f64) -> Self {
        Self { m: DMatrix::identity(n, n) * c }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self { m: DMatrix::from_fn(n, n, |i, j| if i == j { d[i] } else { 0.0 }) }
    }

    /// Rank-one matrix `v v^T`.
    pub fn outer(v: &[f64]) -> Self {
        let n = v.len();
        Self { m: DMatrix::from_fn(n, n, |i, j| v[i] * v[j]) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| self.m.row(i).iter().copied().collect()).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.m.diagonal().iter().copied().collect()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { m: &self.m * c }
    }

    /// `g X g^T`.
    pub fn congruence(&self, g: &DMatrix<f64>) -> Self {
        Self::symmetrize(g * &self.m * g.transpose())
    }

    /// `g^T X g`, for a possibly rectangular `g`.
    pub fn congruence_t(&self, g: &DMatrix<f64>) -> Self {
        Self::symmetrize(g.transpose() * &self.m * g)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm()
    }

    /// Trace inner product `<X, Y> = tr(XY)`.
    pub fn inner(&self, other: &SymMat) -> f64 {
        self.m.component_mul(&other.m).sum()
    }

    /// Eigenvalues in ascending order together with matching eigenvectors (columns).
    pub fn eigen(&self) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let eig = SymmetricEigen::try_new(self.m.clone(), EIGEN_EPS, EIGEN_MAX_ITER).ok_or(Error::EigenFailure)?;
        let n = self.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        Ok((values, vectors))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let eig = SymmetricEigen::try_new(self.m.clone(), EIGEN_EPS, EIGEN_MAX_ITER).ok_or(Error::EigenFailure)?;
        let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        Ok(v)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?[0])
    }

    pub fn max_eigenvalue(&self) -> Result<f64> {
        Ok(*self.eigenvalues()?.last().expect("dim >= 1"))
    }

    /// Applies `f` to the spectrum: `V diag(f(l)) V^T`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Result<SymMat> {
        let (vals, vecs) = self.eigen()?;
        Ok(spectral(&vals.iter().map(|&l| f(l)).collect::<Vec<_>>(), &vecs))
    }

    /// Matrix exponential, which lands in the positive definite cone.
    pub fn exp(&self) -> Result<SpdMat> {
        SpdMat::new(self.map_spectrum(f64::exp)?)
    }

    /// True when the smallest eigenvalue is at least `-PSD_REL_TOL * max|eig|`.
    pub fn is_psd(&self) -> Result<bool> {
        let v = self.eigenvalues()?;
        let scale = v[0].abs().max(v[v.len() - 1].abs());
        Ok(v[0] >= -PSD_REL_TOL * scale)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.m.clone().cholesky().is_some()
    }

    fn check_dim(&self, other: &SymMat) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::dims(self.dim(), other.dim()));
        }
        Ok(())
    }
}

fn spectral(vals: &[f64], vecs: &DMatrix<f64>) -> SymMat {
    let n = vals.len();
    let scaled = DMatrix::from_fn(n, n, |i, j| vecs[(i, j)] * vals[j]);
    SymMat::symmetrize(scaled * vecs.transpose())
}

impl Add for &SymMat {
    type Output = SymMat;
    fn add(self, rhs: &SymMat) -> SymMat {
        SymMat { m: &self.m + &rhs.m }
    }
}

impl Sub for &SymMat {
    type Output = SymMat;
    fn sub(self, rhs: &SymMat) -> SymMat {
        SymMat { m: &self.m - &rhs.m }
    }
}

impl Mul<f64> for &SymMat {
    type Output = SymMat;
    fn mul(self, rhs: f64) -> SymMat {
        self.scale(rhs)
    }
}

impl Neg for &SymMat {
    type Output = SymMat;
    fn neg(self) -> SymMat {
        self.scale(-1.0)
    }
}

/// A positive definite matrix, an element of the cone interior. The spectral
/// decomposition is computed once at construction.
#[derive(Clone)]
pub struct SpdMat {
    base: SymMat,
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl fmt::Debug for SpdMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpdMat{:?}", self.base.to_rows())
    }
}

impl PartialEq for SpdMat {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base
    }
}

impl Deref for SpdMat {
    type Target = SymMat;
    fn deref(&self) -> &SymMat {
        &self.base
    }
}

impl AsRef<SymMat> for SpdMat {
    fn as_ref(&self) -> &SymMat {
        &self.base
    }
}

impl SpdMat {
    pub fn new(base: SymMat) -> Result<Self> {
        let (values, vectors) = base.eigen()?;
        if !(values[0] > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eig: values[0] });
        }
        Ok(Self { base, values, vectors })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SymMat::from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        Self { base: SymMat::identity(n), values: vec![1.0; n], vectors: DMatrix::identity(n, n) }
    }

    pub fn scalar(n: usize, c: f64) -> Result<Self> {
        Self::new(SymMat::scalar(n, c))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(SymMat::from_diagonal(d))
    }

    pub fn as_sym(&self) -> &SymMat {
        &self.base
    }

    pub fn into_sym(self) -> SymMat {
        self.base
    }

    pub fn min_eig(&self) -> f64 {
        self.values[0]
    }

    pub fn max_eig(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Ascending eigenvalues.
    pub fn spectrum(&self) -> &[f64] {
        &self.values
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    fn apply(&self, f: impl Fn(f64) -> f64) -> SymMat {
        spectral(&self.values.iter().map(|&l| f(l)).collect::<Vec<_>>(), &self.vectors)
    }

    fn apply_spd(&self, f: impl Fn(f64) -> f64) -> SpdMat {
        let values: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut sorted: Vec<usize> = (0..values.len()).collect();
        sorted.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let n = values.len();
        let vectors = DMatrix::from_fn(n, n, |i, j| self.vectors[(i, sorted[j])]);
        let values: Vec<f64> = sorted.iter().map(|&k| values[k]).collect();
        let base = spectral(&values, &vectors);
        Self { base, values, vectors }
    }

    pub fn sqrt(&self) -> SpdMat {
        self.apply_spd(f64::sqrt)
    }

    pub fn inv_sqrt(&self) -> SpdMat {
        self.apply_spd(|l| 1.0 / l.sqrt())
    }

    pub fn inv(&self) -> SpdMat {
        self.apply_spd(|l| 1.0 / l)
    }

    pub fn log(&self) -> SymMat {
        self.apply(f64::ln)
    }

    /// `c P` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<SpdMat> {
        if !(c > 0.0) {
            return Err(Error::invalid(format!("scale factor must be positive, got {c}")));
        }
        Ok(Self {
            base: self.base.scale(c),
            values: self.values.iter().map(|l| l * c).collect(),
            vectors: self.vectors.clone(),
        })
    }

    /// `g P g^T` for an invertible `g`.
    pub fn congruence(&self, g: &DMatrix<f64>) -> Result<SpdMat> {
        SpdMat::new(self.base.congruence(g))
    }
}

/// Eigenvalues (ascending) of `y^{-1/2} x y^{-1/2}`, the relative spectrum of `x` with respect to `y`.
pub fn relative_spectrum(x: &SymMat, y: &SpdMat) -> Result<Vec<f64>> {
    x.check_dim(y)?;
    let w = y.inv_sqrt();
    x.congruence(w.matrix()).eigenvalues()
}

/// `M(x/y) = inf{t : x <= t y}`.
pub fn max_ratio(x: &SymMat, y: &SpdMat) -> Result<f64> {
    let v = relative_spectrum(x, y)?;
    Ok(v[v.len() - 1])
}

/// `m(x/y) = sup{t : x >= t y}`. Negative when `x` leaves the cone.
pub fn min_ratio(x: &SymMat, y: &SpdMat) -> Result<f64> {
    Ok(relative_spectrum(x, y)?[0])
}

/// Thompson part metric `log max{M(a/b), M(b/a)}`. Both ratios are always
/// evaluated so the result is bitwise symmetric in its arguments.
pub fn thompson_distance(a: &SpdMat, b: &SpdMat) -> Result<f64> {
    if a.matrix() == b.matrix() {
        return Ok(0.0);
    }
    let ab = max_ratio(a, b)?;
    let ba = max_ratio(b, a)?;
    Ok(ab.max(ba).ln().max(0.0))
}

/// `a <= b` in the Loewner order, i.e. `lambda_min(b - a) >= -tol`.
pub fn loewner_leq(a: &SymMat, b: &SymMat, tol: f64) -> Result<bool> {
    a.check_dim(b)?;
    if tol < 0.0 {
        return Err(Error::invalid("tolerance must be nonnegative"));
    }
    // Eigenvalues of b - a carry roundoff proportional to the operands.
    let floor = 16.0 * f64::EPSILON * (a.frobenius_norm() + b.frobenius_norm());
    Ok((b - a).min_eigenvalue()? >= -(tol + floor))
}

/// An order interval `[lo, hi]` (or `(0, hi]` when `lo` is the zero marker).
#[derive(Debug, Clone)]
pub struct OrderInterval {
    lo: Option<SpdMat>,
    hi: SpdMat,
    pub open_lo: bool,
    pub open_hi: bool,
}

impl OrderInterval {
    pub fn new(lo: Option<SpdMat>, hi: SpdMat, open_lo: bool, open_hi: bool) -> Result<Self> {
        if let Some(lo) = &lo {
            if !loewner_leq(lo, &hi, 0.0)? {
                return Err(Error::invalid("order interval requires lo <= hi"));
            }
        }
        Ok(Self { lo, hi, open_lo, open_hi })
    }

    /// The interval `(0, hi]`.
    pub fn below(hi: SpdMat) -> Self {
        Self { lo: None, hi, open_lo: true, open_hi: false }
    }

    pub fn lo(&self) -> Option<&SpdMat> {
        self.lo.as_ref()
    }

    pub fn hi(&self) -> &SpdMat {
        &self.hi
    }

    pub fn dim(&self) -> usize {
        self.hi.dim()
    }

    /// Membership up to an absolute eigenvalue tolerance. Open ends require
    /// strict separation.
    pub fn contains(&self, x: &SymMat, tol: f64) -> Result<bool> {
        let upper = (self.hi.as_sym() - x).min_eigenvalue()?;
        let upper_ok = if self.open_hi { upper > -tol && upper > 0.0 } else { upper >= -tol };
        let lower = match &self.lo {
            Some(lo) => (x - lo.as_sym()).min_eigenvalue()?,
            None => x.min_eigenvalue()?,
        };
        let lower_ok = if self.open_lo || self.lo.is_none() { lower > 0.0 } else { lower >= -tol };
        Ok(upper_ok && lower_ok)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SymMatJson {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl Serialize for SymMat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SymMatJson { dim: self.dim(), rows: self.to_rows() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = SymMatJson::deserialize(d)?;
        if raw.rows.len() != raw.dim {
            return Err(serde::de::Error::custom(format!("dim {} does not match {} rows", raw.dim, raw.rows.len())));
        }
        SymMat::from_rows(&raw.rows).map_err(serde::de::Error::custom)
    }
}

impl Serialize for SpdMat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.base.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SpdMat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let sym = SymMat::deserialize(d)?;
        SpdMat::new(sym).map_err(serde::de::Error::custom)
    }
}
