//! Seeded random generators for matrices, cone elements and coefficient bundles.
//!
//! Every sampling loop in the crate derives one generator per task from a master
//! seed with [`task_seed`], so results do not depend on thread scheduling.

use nalgebra::DMatrix;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cone::{SpdMat, SymMat};
use crate::vfield::GrdeParams;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 mix of `(master, index)`.
pub fn task_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn task_rng(master: u64, index: usize) -> Rng {
    rng(task_seed(master, index as u64))
}

pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign correction).
pub fn orthogonal(rng: &mut Rng, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, n, n).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn symmetric(rng: &mut Rng, n: usize) -> SymMat {
    SymMat::symmetrize(gaussian_matrix(rng, n, n))
}

/// `V diag(exp(u)) V^T` with `u` uniform in `[-log_spread, log_spread]`.
pub fn spd(rng: &mut Rng, n: usize, log_spread: f64) -> SpdMat {
    loop {
        let v = orthogonal(rng, n);
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-log_spread..=log_spread).exp()).collect();
        let m = SymMat::from_diagonal(&d).congruence(&v);
        if let Ok(p) = SpdMat::new(m) {
            return p;
        }
    }
}

/// Invertible matrix with singular values in `[e^-log_spread, e^log_spread]`.
pub fn invertible(rng: &mut Rng, n: usize, log_spread: f64) -> DMatrix<f64> {
    let u = orthogonal(rng, n);
    let v = orthogonal(rng, n);
    let d = DMatrix::from_fn(n, n, |i, j| if i == j { rng.random_range(-log_spread..=log_spread).exp() } else { 0.0 });
    u * d * v.transpose()
}

/// A point of the order interval `[lo, hi]` (or `(0, hi]`): `lo + S W S` with
/// `S = (hi - lo)^{1/2}` and `W = V diag(w) V^T`, `w` uniform in `(0, 1]`.
pub fn in_order_interval(rng: &mut Rng, lo: Option<&SpdMat>, hi: &SpdMat) -> SpdMat {
    let n = hi.dim();
    let gap = match lo {
        Some(lo) => hi.as_sym() - lo.as_sym(),
        None => hi.as_sym().clone(),
    };
    let root = gap.map_spectrum(|l| l.max(0.0).sqrt()).expect("symmetric eigen");
    loop {
        let v = orthogonal(rng, n);
        let w: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();
        let inner = SymMat::from_diagonal(&w).congruence(&v);
        let mut m = inner.congruence(root.matrix());
        if let Some(lo) = lo {
            m = &m + lo.as_sym();
        }
        if let Ok(p) = SpdMat::new(m) {
            return p;
        }
    }
}

/// PSD matrices `v`, `q` with `<q, v> = 0`, built from complementary projectors
/// of a random orthonormal basis.
pub fn complementary_psd_pair(rng: &mut Rng, n: usize) -> (SymMat, SymMat) {
    let basis = orthogonal(rng, n);
    let split = if n == 1 { 0 } else { rng.random_range(1..n) };
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
    let v: Vec<f64> = (0..n).map(|i| if i < split { weights[i] } else { 0.0 }).collect();
    let q: Vec<f64> = (0..n).map(|i| if i >= split { weights[i] } else { 0.0 }).collect();
    (SymMat::from_diagonal(&v).congruence(&basis), SymMat::from_diagonal(&q).congruence(&basis))
}

/// Random GRDE coefficients with `[[Q, L^T], [L, R]]` PSD and `ker R ∩ ker D = {0}`.
///
/// `strict` makes the block positive definite. The drift is `A = G/sqrt(n) - a_shift I`.
pub fn grde_params(rng: &mut Rng, n: usize, k: usize, strict: bool, a_shift: f64) -> GrdeParams {
    loop {
        let scale = 1.0 / (n as f64).sqrt();
        let a = gaussian_matrix(rng, n, n) * scale - DMatrix::identity(n, n) * a_shift;
        let b = gaussian_matrix(rng, n, k) * scale;
        let c = gaussian_matrix(rng, n, n) * (0.5 * scale);
        let d = gaussian_matrix(rng, n, k) * (0.5 * scale);
        let total = n + k;
        let rank = if strict { total } else { total - 1 };
        let g = gaussian_matrix(rng, total, rank.max(1)) * (1.0 / (total as f64).sqrt());
        let mut block = &g * g.transpose();
        if strict {
            block += DMatrix::identity(total, total) * 0.05;
        }
        let q = SymMat::symmetrize(block.view((0, 0), (n, n)).into_owned());
        let l = block.view((n, 0), (k, n)).into_owned();
        let r = SymMat::symmetrize(block.view((n, n), (k, k)).into_owned());
        let p = GrdeParams::new(a, b, c, d, l, q, r).expect("consistent dims");
        let ok = if strict { p.is_strictly_well_posed() } else { p.is_well_posed() };
        if ok.unwrap_or(false) {
            return p;
        }
    }
}
