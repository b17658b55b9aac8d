//! Cholesky construction of β-unitary colligation families and their transfer functions.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hereditary::{resolvent_series, GramianTable, OutputPair};
use crate::linalg::{
    block2x2, block_diag, c64, eye, herm_eig, op_norm, pd_inverse, vstack, zeros, CMat,
};
use crate::weights::WeightSequence;

/// One colligation [A B_k; C D_k] of the family.
#[derive(Clone, Debug)]
pub struct ColligationStep {
    pub b: CMat,
    pub d: CMat,
}

impl ColligationStep {
    /// dim 𝒰_k
    pub fn u(&self) -> usize {
        self.b.ncols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResiduals {
    pub isometry: f64,
    pub coisometry: f64,
}

/// Shared (A, C), per-index (B_k, D_k) and the gramians 𝔊^{(0)}..𝔊^{(K+1)}.
#[derive(Clone, Debug)]
pub struct ColligationFamily {
    weight: Arc<WeightSequence>,
    pair: OutputPair,
    gramians: GramianTable,
    gram_inv: Vec<CMat>,
    steps: Vec<ColligationStep>,
    residuals: Vec<MetricResiduals>,
    tol: f64,
}

/// Solve [B; D][B*, D*] = diag(𝔊^{(k+1)−1}, β_k I) − [A; C] 𝔊^{(k)−1} [A*, C*] with rank truncation.
pub fn build_step(
    w: &WeightSequence,
    k: usize,
    pair: &OutputPair,
    gramians: &GramianTable,
    rank_tol: f64,
) -> Result<ColligationStep> {
    let gk = gramian_at(gramians, k)?;
    let gk1 = gramian_at(gramians, k + 1)?;
    let inv_k = pd_inverse(gk, rank_tol)?;
    let inv_k1 = pd_inverse(gk1, rank_tol)?;
    step_from_inverses(w, k, pair, &inv_k, &inv_k1, rank_tol)
}

fn gramian_at(g: &GramianTable, k: usize) -> Result<&CMat> {
    g.get(k).ok_or(Error::MissingStep(k))
}

fn step_from_inverses(
    w: &WeightSequence,
    k: usize,
    pair: &OutputPair,
    inv_k: &CMat,
    inv_k1: &CMat,
    rank_tol: f64,
) -> Result<ColligationStep> {
    let n = pair.n();
    let p = pair.p();
    let bk = w.beta(k).ok_or(Error::MissingStep(k))?;
    let v = vstack(pair.a(), pair.c());
    let target = block_diag(inv_k1, &(eye(p) * c64(bk, 0.0)));
    let r = target - &v * inv_k * v.adjoint();
    let e = herm_eig(&r);
    let lmax = e.values.last().copied().unwrap_or(0.0).max(0.0);
    let lmin = e.values.first().copied().unwrap_or(0.0);
    if lmin < -10.0 * rank_tol * lmax {
        return Err(Error::NotCoisometrizable(lmin));
    }
    let keep: Vec<usize> = (0..e.values.len())
        .rev()
        .filter(|&i| lmax > 0.0 && e.values[i] >= rank_tol * lmax)
        .collect();
    let u = keep.len();
    let mut bd = zeros(n + p, u);
    for (col, &i) in keep.iter().enumerate() {
        let mut vec = e.vectors.column(i).into_owned();
        let lead = vec
            .iter()
            .enumerate()
            .fold((0usize, -1.0_f64), |best, (idx, z)| {
                if z.norm() > best.1 + 1e-12 {
                    (idx, z.norm())
                } else {
                    best
                }
            })
            .0;
        let ph = vec[lead].conj() / vec[lead].norm();
        vec *= ph * e.values[i].sqrt();
        bd.set_column(col, &vec);
    }
    Ok(ColligationStep {
        b: bd.rows(0, n).into_owned(),
        d: bd.rows(n, p).into_owned(),
    })
}

/// Steps 0..=k_max from gramians 0..=k_max+1.
pub fn build_family(
    w: &WeightSequence,
    pair: &OutputPair,
    k_max: usize,
    rank_tol: f64,
    tol: f64,
) -> Result<ColligationFamily> {
    let gramians = GramianTable::build(w, pair, k_max + 1, tol)?;
    ColligationFamily::from_gramians(w, pair.clone(), gramians, rank_tol, tol)
}

impl ColligationFamily {
    pub fn from_gramians(
        w: &WeightSequence,
        pair: OutputPair,
        gramians: GramianTable,
        rank_tol: f64,
        tol: f64,
    ) -> Result<Self> {
        if pair.p() == 0 || pair.c().iter().all(|z| z.norm() == 0.0) {
            return Err(Error::ExactObservabilityRequired("C vanishes".into()));
        }
        let kk = gramians.k_max();
        if kk == 0 {
            return Err(Error::MissingStep(1));
        }
        let gram_inv: Vec<CMat> = (0..=kk)
            .into_par_iter()
            .map(|k| pd_inverse(gramians.get(k).expect("in range"), rank_tol))
            .collect::<Result<_>>()?;
        let steps: Vec<ColligationStep> = (0..kk)
            .into_par_iter()
            .map(|k| step_from_inverses(w, k, &pair, &gram_inv[k], &gram_inv[k + 1], rank_tol))
            .collect::<Result<_>>()?;
        Self::assemble(w, pair, gramians, gram_inv, steps, tol)
    }

    /// Family with caller-supplied blocks; residuals are recomputed.
    pub fn from_parts(
        w: &WeightSequence,
        pair: OutputPair,
        gramians: GramianTable,
        steps: Vec<ColligationStep>,
        rank_tol: f64,
        tol: f64,
    ) -> Result<Self> {
        if steps.len() > gramians.k_max() {
            return Err(Error::MissingStep(steps.len()));
        }
        for (k, s) in steps.iter().enumerate() {
            if s.b.nrows() != pair.n() || s.d.nrows() != pair.p() || s.d.ncols() != s.b.ncols() {
                return Err(Error::DimensionMismatch(format!("step {k} blocks")));
            }
        }
        let gram_inv: Vec<CMat> = (0..=steps.len())
            .map(|k| pd_inverse(gramians.get(k).expect("in range"), rank_tol))
            .collect::<Result<_>>()?;
        Self::assemble(w, pair, gramians, gram_inv, steps, tol)
    }

    fn assemble(
        w: &WeightSequence,
        pair: OutputPair,
        gramians: GramianTable,
        gram_inv: Vec<CMat>,
        steps: Vec<ColligationStep>,
        tol: f64,
    ) -> Result<Self> {
        let mut fam = ColligationFamily {
            weight: Arc::new(w.clone()),
            pair,
            gramians,
            gram_inv,
            steps,
            residuals: vec![],
            tol,
        };
        fam.residuals = (0..fam.steps.len())
            .into_par_iter()
            .map(|k| fam.compute_residuals(k))
            .collect();
        Ok(fam)
    }

    /// Replace the blocks of one step, recomputing its residuals.
    pub fn with_step(&self, k: usize, b: CMat, d: CMat) -> Result<Self> {
        if k >= self.steps.len() {
            return Err(Error::MissingStep(k));
        }
        let mut f = self.clone();
        f.steps[k] = ColligationStep { b, d };
        f.residuals[k] = f.compute_residuals(k);
        Ok(f)
    }

    pub fn weight(&self) -> &WeightSequence {
        &self.weight
    }

    pub fn weight_arc(&self) -> &Arc<WeightSequence> {
        &self.weight
    }

    pub fn pair(&self) -> &OutputPair {
        &self.pair
    }

    pub fn gramians(&self) -> &GramianTable {
        &self.gramians
    }

    pub fn gramian_inverse(&self, k: usize) -> Option<&CMat> {
        self.gram_inv.get(k)
    }

    pub fn steps(&self) -> &[ColligationStep] {
        &self.steps
    }

    pub fn step(&self, k: usize) -> Result<&ColligationStep> {
        self.steps.get(k).ok_or(Error::MissingStep(k))
    }

    /// Highest step index built.
    pub fn k_max(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn residuals(&self) -> &[MetricResiduals] {
        &self.residuals
    }

    fn compute_residuals(&self, k: usize) -> MetricResiduals {
        let s = &self.steps[k];
        let (p, u) = (self.pair.p(), s.u());
        let bk = self.weight.beta(k).unwrap_or(f64::NAN);
        let big = block2x2(self.pair.a(), &s.b, self.pair.c(), &s.d);
        let wout = block_diag(
            self.gramians.get(k + 1).expect("gramian k+1"),
            &(eye(p) * c64(1.0 / bk, 0.0)),
        );
        let win = block_diag(self.gramians.get(k).expect("gramian k"), &eye(u));
        let isometry = op_norm(&(big.adjoint() * wout * &big - win));
        let cin = block_diag(&self.gram_inv[k], &eye(u));
        let cout = block_diag(&self.gram_inv[k + 1], &(eye(p) * c64(bk, 0.0)));
        let coisometry = op_norm(&(&big * cin * big.adjoint() - cout));
        MetricResiduals {
            isometry,
            coisometry,
        }
    }

    /// C R_{β,k}(zA) as a p×n matrix.
    pub fn c_resolvent(&self, k: usize, z: Complex64) -> Result<CMat> {
        let r = resolvent_series(
            &self.weight,
            k,
            self.pair.a(),
            self.pair.spectral_radius(),
            z,
            self.tol,
        )?;
        Ok(self.pair.c() * r.value)
    }
}

pub fn metric_residuals(family: &ColligationFamily, k: usize) -> Result<MetricResiduals> {
    family
        .residuals
        .get(k)
        .copied()
        .ok_or(Error::MissingStep(k))
}

/// Θ_k(z) = β_k^{-1} D_k + z C R_{β,k+1}(zA) B_k.
pub fn transfer_eval(family: &ColligationFamily, k: usize, z: Complex64, tol: f64) -> Result<CMat> {
    let s = family.step(k)?;
    let w = family.weight();
    let bk = w.inv_beta_or(k)?;
    let mut out = &s.d * c64(bk, 0.0);
    if z.norm() > 0.0 && s.u() > 0 {
        let r = resolvent_series(
            w,
            k + 1,
            family.pair.a(),
            family.pair.spectral_radius(),
            z,
            tol,
        )?;
        out += family.pair.c() * r.value * &s.b * z;
    }
    Ok(out)
}

/// Ξ_k(z, ζ) = v(z) [diag(𝔊^{(k+1)−1}, β_k I) − U diag(𝔊^{(k)−1}, I) U*] v(ζ)*,
/// v(z) = [z C R_{β,k+1}(zA), β_k^{-1} I].
pub fn defect_kernel(
    family: &ColligationFamily,
    k: usize,
    z: Complex64,
    zeta: Complex64,
    tol: f64,
) -> Result<CMat> {
    let s = family.step(k)?;
    let w = family.weight();
    let p = family.pair.p();
    let bk = w.beta(k).ok_or(Error::MissingStep(k))?;
    let inv_k1 = family
        .gram_inv
        .get(k + 1)
        .ok_or(Error::MissingStep(k + 1))?;
    let big = block2x2(family.pair.a(), &s.b, family.pair.c(), &s.d);
    let mid = block_diag(inv_k1, &(eye(p) * c64(bk, 0.0)))
        - &big * block_diag(&family.gram_inv[k], &eye(s.u())) * big.adjoint();
    let v = |x: Complex64| -> Result<CMat> {
        let left = if x.norm() == 0.0 {
            zeros(p, family.pair.n())
        } else {
            let r = resolvent_series(
                w,
                k + 1,
                family.pair.a(),
                family.pair.spectral_radius(),
                x,
                tol,
            )?;
            family.pair.c() * r.value * x
        };
        Ok(crate::linalg::hstack(&left, &(eye(p) * c64(1.0 / bk, 0.0))))
    };
    let vz = v(z)?;
    let vzeta = v(zeta)?;
    Ok(vz * mid * vzeta.adjoint())
}

fn resolvent_matrix(family: &ColligationFamily, k: usize, z: Complex64, tol: f64) -> Result<CMat> {
    Ok(resolvent_series(
        family.weight(),
        k,
        family.pair.a(),
        family.pair.spectral_radius(),
        z,
        tol,
    )?
    .value)
}

/// ||β_k^{-1}I − Θ_k(z)*Θ_k(ζ) − β_k[B_k*R_k(zA)*𝔊^{(k+1)}R_k(ζA)B_k − z̄ζ B_k*R_{k+1}(zA)*𝔊^{(k)}R_{k+1}(ζA)B_k]||
pub fn isometric_kernel_residual(
    family: &ColligationFamily,
    k: usize,
    z: Complex64,
    zeta: Complex64,
    tol: f64,
) -> Result<f64> {
    let s = family.step(k)?;
    let bk = family.weight().beta(k).ok_or(Error::MissingStep(k))?;
    let g = |j: usize| family.gramians.get(j).ok_or(Error::MissingStep(j));
    let tz = transfer_eval(family, k, z, tol)?;
    let tw = transfer_eval(family, k, zeta, tol)?;
    let lhs = eye(s.u()) * c64(1.0 / bk, 0.0) - tz.adjoint() * tw;
    let (rz, rw) = (
        resolvent_matrix(family, k, z, tol)?,
        resolvent_matrix(family, k, zeta, tol)?,
    );
    let (rz1, rw1) = (
        resolvent_matrix(family, k + 1, z, tol)?,
        resolvent_matrix(family, k + 1, zeta, tol)?,
    );
    let rhs = (s.b.adjoint() * rz.adjoint() * g(k + 1)? * rw * &s.b
        - s.b.adjoint() * rz1.adjoint() * g(k)? * rw1 * &s.b * (z.conj() * zeta))
        * c64(bk, 0.0);
    Ok(op_norm(&(lhs - rhs)))
}

/// ||β_k^{-1}I − Θ_k(z)Θ_k(ζ)* − [C R_k(zA)𝔊^{(k)−1}R_k(ζA)*C* − zζ̄ C R_{k+1}(zA)𝔊^{(k+1)−1}R_{k+1}(ζA)*C*]||
pub fn coisometric_kernel_residual(
    family: &ColligationFamily,
    k: usize,
    z: Complex64,
    zeta: Complex64,
    tol: f64,
) -> Result<f64> {
    let p = family.pair.p();
    let bk = family.weight().beta(k).ok_or(Error::MissingStep(k))?;
    let inv = |j: usize| family.gram_inv.get(j).ok_or(Error::MissingStep(j));
    let tz = transfer_eval(family, k, z, tol)?;
    let tw = transfer_eval(family, k, zeta, tol)?;
    let lhs = eye(p) * c64(1.0 / bk, 0.0) - &tz * tw.adjoint();
    let c = family.pair.c();
    let term = |j: usize| -> Result<CMat> {
        let a = c * resolvent_matrix(family, j, z, tol)?;
        let b = c * resolvent_matrix(family, j, zeta, tol)?;
        Ok(a * inv(j)? * b.adjoint())
    };
    let rhs = term(k)? - term(k + 1)? * (z * zeta.conj());
    Ok(op_norm(&(lhs - rhs)))
}

/// Maxima over all ordered grid pairs of the isometric and coisometric kernel residuals.
pub fn kernel_identity_residuals(
    family: &ColligationFamily,
    k: usize,
    points: &[Complex64],
    tol: f64,
) -> Result<MetricResiduals> {
    let s = family.step(k)?;
    let bk = family.weight().beta(k).ok_or(Error::MissingStep(k))?;
    let g = |j: usize| family.gramians.get(j).ok_or(Error::MissingStep(j));
    let inv = |j: usize| family.gram_inv.get(j).ok_or(Error::MissingStep(j));
    let (gk, gk1, ik, ik1) = (g(k)?, g(k + 1)?, inv(k)?, inv(k + 1)?);
    let c = family.pair.c();
    let (p, u) = (family.pair.p(), s.u());
    struct At {
        z: Complex64,
        rb0: CMat,
        rb1: CMat,
        cr0: CMat,
        cr1: CMat,
        theta: CMat,
    }
    let cache: Vec<At> = points
        .par_iter()
        .map(|&z| {
            let r0 = resolvent_matrix(family, k, z, tol)?;
            let r1 = resolvent_matrix(family, k + 1, z, tol)?;
            let cr1 = c * &r1;
            let theta = &s.d * c64(1.0 / bk, 0.0) + &cr1 * &s.b * z;
            Ok(At {
                z,
                rb0: &r0 * &s.b,
                rb1: &r1 * &s.b,
                cr0: c * r0,
                cr1,
                theta,
            })
        })
        .collect::<Result<_>>()?;
    let m = points.len();
    let pairs: Vec<(f64, f64)> = (0..m * m)
        .into_par_iter()
        .map(|idx| {
            let (a, b) = (&cache[idx / m], &cache[idx % m]);
            let iso_l = eye(u) * c64(1.0 / bk, 0.0) - a.theta.adjoint() * &b.theta;
            let iso_r = (a.rb0.adjoint() * gk1 * &b.rb0
                - a.rb1.adjoint() * gk * &b.rb1 * (a.z.conj() * b.z))
                * c64(bk, 0.0);
            let co_l = eye(p) * c64(1.0 / bk, 0.0) - &a.theta * b.theta.adjoint();
            let co_r =
                &a.cr0 * ik * b.cr0.adjoint() - &a.cr1 * ik1 * b.cr1.adjoint() * (a.z * b.z.conj());
            (op_norm(&(iso_l - iso_r)), op_norm(&(co_l - co_r)))
        })
        .collect();
    Ok(MetricResiduals {
        isometry: pairs.iter().map(|x| x.0).fold(0.0, f64::max),
        coisometry: pairs.iter().map(|x| x.1).fold(0.0, f64::max),
    })
}

/// Taylor coefficients Θ_{k,0..J} of every Θ_k in a family.
#[derive(Clone, Debug)]
pub struct TransferFamily {
    taylor: Vec<Vec<CMat>>,
    order: usize,
}

impl TransferFamily {
    /// Θ_{k,0} = β_k^{-1} D_k, Θ_{k,j+1} = β_{j+k+1}^{-1} C A^j B_k.
    pub fn new(family: &ColligationFamily, order: usize) -> Result<Self> {
        let w = family.weight();
        let taylor = family
            .steps()
            .par_iter()
            .enumerate()
            .map(|(k, s)| {
                let mut coeffs = Vec::with_capacity(order + 1);
                coeffs.push(&s.d * c64(w.inv_beta_or(k)?, 0.0));
                let mut q = family.pair.c().clone();
                for j in 0..order {
                    coeffs.push(&q * &s.b * c64(w.inv_beta_or(j + k + 1)?, 0.0));
                    q = &q * family.pair.a();
                }
                Ok(coeffs)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TransferFamily { taylor, order })
    }

    pub fn from_coeffs(taylor: Vec<Vec<CMat>>) -> Result<Self> {
        let order = taylor.first().map(|t| t.len()).unwrap_or(0);
        if order == 0 || taylor.iter().any(|t| t.len() != order) {
            return Err(Error::DimensionMismatch("ragged Taylor data".into()));
        }
        Ok(TransferFamily {
            taylor,
            order: order - 1,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k_max(&self) -> usize {
        self.taylor.len() - 1
    }

    pub fn coeffs(&self, k: usize) -> &[CMat] {
        &self.taylor[k]
    }

    pub fn coeff(&self, k: usize, j: usize) -> &CMat {
        &self.taylor[k][j]
    }

    /// Truncated Taylor sum Σ_{j≤J} Θ_{k,j} z^j.
    pub fn eval_series(&self, k: usize, z: Complex64) -> CMat {
        let t = &self.taylor[k];
        let mut acc = t[self.order].clone();
        for j in (0..self.order).rev() {
            acc = acc * z + &t[j];
        }
        acc
    }
}
