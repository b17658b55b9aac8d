//! Dense complex matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> CMat {
    CMat::zeros(r, c)
}

pub fn scalar(x: Complex64) -> CMat {
    CMat::from_element(1, 1, x)
}

/// Largest singular value; zero for empty matrices.
pub fn op_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b))
}

pub fn fro_norm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * c64(0.5, 0.0)
}

pub fn hermitian_defect(m: &CMat) -> f64 {
    op_norm(&(m - m.adjoint()))
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermEig {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

pub fn herm_eig(m: &CMat) -> HermEig {
    let n = m.nrows();
    if n == 0 {
        return HermEig {
            values: vec![],
            vectors: zeros(0, 0),
        };
    }
    let se = SymmetricEigen::new(hermitize(m));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let values = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vectors = zeros(n, n);
    for (dst, &src) in idx.iter().enumerate() {
        vectors.set_column(dst, &se.eigenvectors.column(src));
    }
    HermEig { values, vectors }
}

pub fn lambda_min(m: &CMat) -> f64 {
    herm_eig(m).values.first().copied().unwrap_or(0.0)
}

pub fn lambda_max(m: &CMat) -> f64 {
    herm_eig(m).values.last().copied().unwrap_or(0.0)
}

/// Rebuilds V diag(f(λ)) V*.
pub fn herm_fn(e: &HermEig, f: impl Fn(f64) -> f64) -> CMat {
    let n = e.values.len();
    let mut scaled = e.vectors.clone();
    for j in 0..n {
        let s = c64(f(e.values[j]), 0.0);
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    scaled * e.vectors.adjoint()
}

/// Positive semidefinite square root; eigenvalues below zero are clamped.
pub fn psd_sqrt(m: &CMat) -> CMat {
    herm_fn(&herm_eig(m), |l| l.max(0.0).sqrt())
}

/// Inverse of a Hermitian positive definite matrix, refusing near-singular input.
pub fn pd_inverse(m: &CMat, rank_tol: f64) -> Result<CMat> {
    let e = herm_eig(m);
    check_pd(&e, rank_tol)?;
    Ok(herm_fn(&e, |l| 1.0 / l))
}

/// Returns (M^{1/2}, M^{-1/2}) for Hermitian positive definite M.
pub fn pd_sqrt_pair(m: &CMat, rank_tol: f64) -> Result<(CMat, CMat)> {
    let e = herm_eig(m);
    check_pd(&e, rank_tol)?;
    Ok((herm_fn(&e, f64::sqrt), herm_fn(&e, |l| 1.0 / l.sqrt())))
}

fn check_pd(e: &HermEig, rank_tol: f64) -> Result<()> {
    let (Some(&lo), Some(&hi)) = (e.values.first(), e.values.last()) else {
        return Ok(());
    };
    if hi <= 0.0 || lo <= rank_tol * hi {
        return Err(Error::ExactObservabilityRequired(format!(
            "lambda_min = {lo:e}, lambda_max = {hi:e}"
        )));
    }
    Ok(())
}

/// Unitary (or partial isometry) factor U V* of the polar decomposition.
///
/// Read off the positive spectral projector of [[0, M], [M*, 0]], whose
/// off-diagonal block is U V* / 2 however the singular values cluster.
pub fn polar_unitary(m: &CMat) -> CMat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return zeros(r, c);
    }
    let e = herm_eig(&block2x2(&zeros(r, r), m, &m.adjoint(), &zeros(c, c)));
    let top = e.values.last().copied().unwrap_or(0.0);
    let cut = top * f64::EPSILON * (r + c) as f64 * 16.0;
    let mut out = zeros(r, c);
    for (j, &lam) in e.values.iter().enumerate() {
        if lam > cut {
            let x = e.vectors.column(j);
            out += x.rows(0, r) * x.rows(r, c).adjoint() * c64(2.0, 0.0);
        }
    }
    out
}

/// Spectral radius from the complex Schur form.
pub fn spectral_radius(m: &CMat) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return m[(0, 0)].norm();
    }
    if let Some(s) = Schur::try_new(m.clone(), f64::EPSILON, 10_000) {
        let (_, t) = s.unpack();
        return (0..n).map(|i| t[(i, i)].norm()).fold(0.0, f64::max);
    }
    gelfand_radius(m)
}

fn gelfand_radius(m: &CMat) -> f64 {
    // rho(A) = lim ||A^e||^{1/e}, tracked in log scale with e = 2^i
    let mut p = m.clone();
    let mut log_s = 0.0_f64;
    let mut e = 1.0_f64;
    let mut est = f64::INFINITY;
    for _ in 0..16 {
        let nrm = op_norm(&p);
        if nrm == 0.0 {
            return 0.0;
        }
        est = est.min(((nrm.ln() + log_s) / e).exp());
        p /= c64(nrm, 0.0);
        log_s = 2.0 * (log_s + nrm.ln());
        p = &p * &p;
        e *= 2.0;
    }
    est
}

pub fn block2x2(a: &CMat, b: &CMat, c: &CMat, d: &CMat) -> CMat {
    let (r1, c1) = (a.nrows(), a.ncols());
    let (r2, c2) = (d.nrows(), d.ncols());
    let mut m = zeros(r1 + r2, c1 + c2);
    m.view_mut((0, 0), (r1, c1)).copy_from(a);
    if b.nrows() * b.ncols() > 0 {
        m.view_mut((0, c1), (r1, c2)).copy_from(b);
    }
    if c.nrows() * c.ncols() > 0 {
        m.view_mut((r1, 0), (r2, c1)).copy_from(c);
    }
    m.view_mut((r1, c1), (r2, c2)).copy_from(d);
    m
}

pub fn block_diag(a: &CMat, d: &CMat) -> CMat {
    block2x2(
        a,
        &zeros(a.nrows(), d.ncols()),
        &zeros(d.nrows(), a.ncols()),
        d,
    )
}

pub fn vstack(a: &CMat, b: &CMat) -> CMat {
    let mut m = zeros(a.nrows() + b.nrows(), a.ncols().max(b.ncols()));
    m.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    m.view_mut((a.nrows(), 0), (b.nrows(), b.ncols()))
        .copy_from(b);
    m
}

pub fn hstack(a: &CMat, b: &CMat) -> CMat {
    vstack(&a.adjoint(), &b.adjoint()).adjoint()
}

/// Complex Gaussian matrix with unit-variance entries.
pub fn random_gaussian<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(r, c, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c64(re * s, im * s)
    })
}

/// Haar-distributed unitary via QR with phase correction.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    let g = random_gaussian(rng, n, n);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            c64(1.0, 0.0)
        };
        for i in 0..n {
            q[(i, j)] *= ph;
        }
    }
    q
}

/// Random matrix rescaled to the requested spectral radius.
pub fn random_with_radius<R: Rng + ?Sized>(rng: &mut R, n: usize, rho: f64) -> CMat {
    loop {
        let g = random_gaussian(rng, n, n);
        let r = spectral_radius(&g);
        if r > 1e-8 {
            return g * c64(rho / r, 0.0);
        }
    }
}

pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| c64(x, 0.0))
}
