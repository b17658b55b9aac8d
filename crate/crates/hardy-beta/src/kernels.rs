//! Elements of H²_β as truncated Taylor sequences, subspace reproducing kernels,
//! inner-family and contractive-multiplier verification.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colligation::{ColligationFamily, TransferFamily};
use crate::error::{Error, Result};
use crate::hereditary::{resolvent_series, GramianTable, OutputPair};
use crate::linalg::{c64, eye, fro_norm, lambda_min, op_norm, pd_inverse, CMat, CVec};
use crate::series::{geometric_tail, PowerCert};
use crate::weights::WeightSequence;

/// f = Σ_j f_j z^j with f_j ∈ Y, truncated at J.
#[derive(Clone, Debug)]
pub struct HardyElement {
    weight: Arc<WeightSequence>,
    dim: usize,
    coeffs: Vec<CVec>,
    norm_sq: f64,
}

fn same_weight(a: &Arc<WeightSequence>, b: &Arc<WeightSequence>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl HardyElement {
    pub fn new(weight: &Arc<WeightSequence>, dim: usize, coeffs: Vec<CVec>) -> Result<Self> {
        if coeffs.iter().any(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "coefficients must have length {dim}"
            )));
        }
        let mut norm_sq = 0.0;
        for (j, f) in coeffs.iter().enumerate() {
            norm_sq += weight
                .beta(j)
                .ok_or(Error::Truncation(format!("beta_{j} unavailable")))?
                * f.norm_squared();
        }
        Ok(HardyElement {
            weight: Arc::clone(weight),
            dim,
            coeffs,
            norm_sq,
        })
    }

    pub fn zero(weight: &Arc<WeightSequence>, dim: usize) -> Self {
        HardyElement {
            weight: Arc::clone(weight),
            dim,
            coeffs: vec![CVec::zeros(dim)],
            norm_sq: 0.0,
        }
    }

    /// z^j y
    pub fn monomial(weight: &Arc<WeightSequence>, j: usize, y: CVec) -> Result<Self> {
        let dim = y.len();
        let mut coeffs = vec![CVec::zeros(dim); j + 1];
        coeffs[j] = y;
        Self::new(weight, dim, coeffs)
    }

    pub fn weight(&self) -> &Arc<WeightSequence> {
        &self.weight
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &[CVec] {
        &self.coeffs
    }

    /// Truncation order J.
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Σ β_j ||f_j||², cached at construction.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn recompute_norm_sq(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(j, f)| self.weight.beta(j).unwrap_or(f64::NAN) * f.norm_squared())
            .sum()
    }

    pub fn eval(&self, z: Complex64) -> CVec {
        let mut acc = CVec::zeros(self.dim);
        for f in self.coeffs.iter().rev() {
            acc = acc * z + f;
        }
        acc
    }

    pub fn add_scaled(&self, s: Complex64, other: &HardyElement) -> Result<HardyElement> {
        if !same_weight(&self.weight, &other.weight) {
            return Err(Error::WeightMismatch);
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch("Y dimensions differ".into()));
        }
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len)
            .map(|j| {
                let mut v = self
                    .coeffs
                    .get(j)
                    .cloned()
                    .unwrap_or_else(|| CVec::zeros(self.dim));
                if let Some(o) = other.coeffs.get(j) {
                    v += o * s;
                }
                v
            })
            .collect();
        HardyElement::new(&self.weight, self.dim, coeffs)
    }
}

/// ⟨f, g⟩ = Σ_j β_j ⟨f_j, g_j⟩, truncated at min(J_f, J_g).
pub fn hardy_inner(f: &HardyElement, g: &HardyElement) -> Result<Complex64> {
    if !same_weight(&f.weight, &g.weight) {
        return Err(Error::WeightMismatch);
    }
    if f.dim != g.dim {
        return Err(Error::DimensionMismatch("Y dimensions differ".into()));
    }
    Ok(inner_raw(&f.weight, &f.coeffs, &g.coeffs))
}

fn inner_raw(w: &WeightSequence, f: &[CVec], g: &[CVec]) -> Complex64 {
    f.iter()
        .zip(g)
        .enumerate()
        .map(|(j, (a, b))| b.dotc(a) * w.beta(j).unwrap_or(f64::NAN))
        .sum()
}

/// S_β f = z f.
pub fn shift_apply(f: &HardyElement) -> HardyElement {
    let mut coeffs = Vec::with_capacity(f.coeffs.len() + 1);
    coeffs.push(CVec::zeros(f.dim));
    coeffs.extend(f.coeffs.iter().cloned());
    HardyElement::new(&f.weight, f.dim, coeffs).expect("weight long enough for shifted element")
}

/// S*_β f with coefficients (β_{k+1}/β_k) f_{k+1}.
pub fn shift_adjoint_apply(f: &HardyElement) -> HardyElement {
    let w = &f.weight;
    let coeffs: Vec<CVec> = if f.coeffs.len() <= 1 {
        vec![CVec::zeros(f.dim)]
    } else {
        f.coeffs[1..]
            .iter()
            .enumerate()
            .map(|(k, c)| c * c64(w.beta(k + 1).unwrap() / w.beta(k).unwrap(), 0.0))
            .collect()
    };
    HardyElement::new(w, f.dim, coeffs).expect("shorter element fits weight")
}

/// Tensor grid of radii {0, 0.2, 0.4, 0.6, 0.8} and 8 equally spaced angles.
pub fn default_grid() -> Vec<Complex64> {
    grid(&[0.0, 0.2, 0.4, 0.6, 0.8], 8)
}

pub fn grid(radii: &[f64], angles: usize) -> Vec<Complex64> {
    let mut pts = Vec::with_capacity(radii.len() * angles);
    for &r in radii {
        for a in 0..angles {
            pts.push(Complex64::from_polar(
                r,
                2.0 * std::f64::consts::PI * a as f64 / angles as f64,
            ));
        }
    }
    pts
}

/// Kernel values at all ordered pairs of a point list.
#[derive(Clone, Debug)]
pub struct KernelGrid {
    pub points: Vec<Complex64>,
    /// values[i * m + j] = K(points[i], points[j])
    pub values: Vec<CMat>,
}

impl KernelGrid {
    pub fn at(&self, i: usize, j: usize) -> &CMat {
        &self.values[i * self.points.len() + j]
    }

    /// max ||K(z, ζ) − K(ζ, z)*||
    pub fn hermitian_defect(&self) -> f64 {
        let m = self.points.len();
        let mut worst = 0.0_f64;
        for i in 0..m {
            for j in i..m {
                worst = worst.max(fro_norm(&(self.at(i, j) - self.at(j, i).adjoint())));
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// K_β(z, ζ) I
    Beta,
    /// K_{M⊥}
    Mperp,
    /// K_M
    M,
    /// K_{S^k M}
    Skm,
    /// K_{S^k M ⊖ S^{k+1} M}
    Gap,
}

/// Gramian inverses and the pair needed by the subspace kernels.
#[derive(Clone, Debug)]
pub struct KernelData {
    weight: Arc<WeightSequence>,
    pair: OutputPair,
    gram_inv: Vec<CMat>,
    tol: f64,
}

impl KernelData {
    pub fn new(
        w: &WeightSequence,
        pair: &OutputPair,
        k_max: usize,
        rank_tol: f64,
        tol: f64,
    ) -> Result<Self> {
        let g = GramianTable::build(w, pair, k_max + 1, tol)?;
        Self::from_gramians(w, pair, &g, rank_tol, tol)
    }

    pub fn from_gramians(
        w: &WeightSequence,
        pair: &OutputPair,
        g: &GramianTable,
        rank_tol: f64,
        tol: f64,
    ) -> Result<Self> {
        let gram_inv = (0..=g.k_max())
            .map(|k| pd_inverse(g.get(k).expect("in range"), rank_tol))
            .collect::<Result<_>>()?;
        Ok(KernelData {
            weight: Arc::new(w.clone()),
            pair: pair.clone(),
            gram_inv,
            tol,
        })
    }

    pub fn from_family(f: &ColligationFamily) -> Self {
        KernelData {
            weight: Arc::new(f.weight().clone()),
            pair: f.pair().clone(),
            gram_inv: (0..=f.gramians().k_max())
                .map(|k| f.gramian_inverse(k).expect("in range").clone())
                .collect(),
            tol: f.tol(),
        }
    }

    pub fn k_max(&self) -> usize {
        self.gram_inv.len() - 2
    }

    fn ginv(&self, k: usize) -> Result<&CMat> {
        self.gram_inv.get(k).ok_or(Error::MissingStep(k))
    }

    /// C R_{β,k}(zA)
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

    /// K_β(z, ζ) = R_β(z ζ̄)
    pub fn k_beta(&self, z: Complex64, zeta: Complex64) -> Result<Complex64> {
        self.weight.resolvent_scalar(0, z * zeta.conj(), self.tol)
    }

    pub fn mperp(&self, z: Complex64, zeta: Complex64) -> Result<CMat> {
        self.skm_core(0, &self.c_resolvent(0, z)?, &self.c_resolvent(0, zeta)?)
    }

    pub fn m(&self, z: Complex64, zeta: Complex64) -> Result<CMat> {
        self.skm(0, z, zeta)
    }

    /// z^k ζ̄^k (R_{β,k}(z ζ̄) I − C R_{β,k}(zA) 𝔊^{(k)−1} R_{β,k}(ζA)* C*)
    pub fn skm(&self, k: usize, z: Complex64, zeta: Complex64) -> Result<CMat> {
        let ck_z = self.c_resolvent(k, z)?;
        let ck_w = self.c_resolvent(k, zeta)?;
        self.skm_from(k, z, zeta, &ck_z, &ck_w)
    }

    fn skm_core(&self, k: usize, cz: &CMat, cw: &CMat) -> Result<CMat> {
        Ok(cz * self.ginv(k)? * cw.adjoint())
    }

    fn skm_from(
        &self,
        k: usize,
        z: Complex64,
        zeta: Complex64,
        cz: &CMat,
        cw: &CMat,
    ) -> Result<CMat> {
        let x = z * zeta.conj();
        let rk = self.weight.resolvent_scalar(k, x, self.tol)?;
        let p = self.pair.p();
        let inner = eye(p) * rk - self.skm_core(k, cz, cw)?;
        Ok(inner * x.powu(k as u32))
    }

    /// z^k ζ̄^k (β_k^{-1} I − C R_k 𝔊^{(k)−1} R_k* C* + z ζ̄ C R_{k+1} 𝔊^{(k+1)−1} R_{k+1}* C*)
    pub fn gap(&self, k: usize, z: Complex64, zeta: Complex64) -> Result<CMat> {
        let cz = [self.c_resolvent(k, z)?, self.c_resolvent(k + 1, z)?];
        let cw = [self.c_resolvent(k, zeta)?, self.c_resolvent(k + 1, zeta)?];
        self.gap_from(k, z, zeta, &cz, &cw)
    }

    fn gap_from(
        &self,
        k: usize,
        z: Complex64,
        zeta: Complex64,
        cz: &[CMat; 2],
        cw: &[CMat; 2],
    ) -> Result<CMat> {
        let x = z * zeta.conj();
        let p = self.pair.p();
        let bk = self.weight.inv_beta_or(k)?;
        let inner = eye(p) * c64(bk, 0.0) - self.skm_core(k, &cz[0], &cw[0])?
            + self.skm_core(k + 1, &cz[1], &cw[1])? * x;
        Ok(inner * x.powu(k as u32))
    }

    /// Kernel values on all ordered pairs of `points`, resolvents cached per point.
    pub fn grid(&self, kind: KernelKind, k: usize, points: &[Complex64]) -> Result<KernelGrid> {
        let kk = match kind {
            KernelKind::Mperp | KernelKind::M => 0,
            _ => k,
        };
        let need_next = kind == KernelKind::Gap;
        let cache: Vec<[CMat; 2]> = points
            .par_iter()
            .map(|&z| {
                let a = self.c_resolvent(kk, z)?;
                let b = if need_next {
                    self.c_resolvent(kk + 1, z)?
                } else {
                    a.clone()
                };
                Ok([a, b])
            })
            .collect::<Result<_>>()?;
        let m = points.len();
        let values = (0..m * m)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / m, idx % m);
                let (z, zeta) = (points[i], points[j]);
                match kind {
                    KernelKind::Beta => Ok(eye(self.pair.p()) * self.k_beta(z, zeta)?),
                    KernelKind::Mperp => self.skm_core(0, &cache[i][0], &cache[j][0]),
                    KernelKind::M => self.skm_from(0, z, zeta, &cache[i][0], &cache[j][0]),
                    KernelKind::Skm => self.skm_from(kk, z, zeta, &cache[i][0], &cache[j][0]),
                    KernelKind::Gap => self.gap_from(kk, z, zeta, &cache[i], &cache[j]),
                }
            })
            .collect::<Result<_>>()?;
        Ok(KernelGrid {
            points: points.to_vec(),
            values,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Inconclusive,
    Fails,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerFamilyReport {
    /// max_k ||Gram(S^k Θ_k 𝒰_k) − I||
    pub isometry: f64,
    /// max_{k<ℓ} |⟨S^k Θ_k u, S^ℓ Θ_ℓ u'⟩|
    pub orthogonality: f64,
    /// max_k ||S^{k+1} Θ_k u − projection onto the span of later images||
    pub span_residual: f64,
    /// bound on ||P_{≥L+1} S^{k+1} Θ_k u|| plus Taylor truncation
    pub span_allowance: f64,
    /// bound on the H²_β norm of omitted Taylor coefficients
    pub taylor_tail: f64,
    pub k_checked: usize,
    pub verdict: Verdict,
}

/// Inner-family properties (1)-(3) for k ≤ k_max, with inner products in H²_β.
pub fn check_inner_family(
    family: &ColligationFamily,
    transfer: &TransferFamily,
    k_max: usize,
    tol: f64,
) -> Result<InnerFamilyReport> {
    let w = family.weight();
    let top = transfer.k_max();
    if k_max > top {
        return Err(Error::MissingStep(k_max));
    }
    let jj = transfer.order();
    let p = family.pair().p();
    let elem = |k: usize, shift: usize, u: usize| -> Vec<CVec> {
        let mut v = vec![CVec::zeros(p); k + shift];
        v.extend(transfer.coeffs(k).iter().map(|m| m.column(u).into_owned()));
        v
    };
    let needed = top + jj + 2;
    if w.beta(needed).is_none() {
        return Err(Error::Truncation(format!("beta_{needed} unavailable")));
    }
    let mut flat: Vec<Vec<CVec>> = Vec::new();
    let mut offsets = vec![0usize];
    for k in 0..=top {
        for u in 0..transfer.coeff(k, 0).ncols() {
            flat.push(elem(k, 0, u));
        }
        offsets.push(flat.len());
    }
    let m_all = flat.len();
    let rows: Vec<Vec<Complex64>> = (0..m_all)
        .into_par_iter()
        .map(|a| {
            (0..m_all)
                .map(|b| {
                    if b < a {
                        Complex64::new(0.0, 0.0)
                    } else {
                        inner_raw(w, &flat[a], &flat[b])
                    }
                })
                .collect()
        })
        .collect();
    let mut gram_all = CMat::zeros(m_all, m_all);
    for a in 0..m_all {
        for b in a..m_all {
            gram_all[(a, b)] = rows[a][b];
            gram_all[(b, a)] = rows[a][b].conj();
        }
    }

    let mut isometry = 0.0_f64;
    let mut orthogonality = 0.0_f64;
    for k in 0..=k_max {
        for a in offsets[k]..offsets[k + 1] {
            for b in offsets[k]..offsets[k + 1] {
                let target = if a == b { 1.0 } else { 0.0 };
                isometry = isometry.max((gram_all[(a, b)] - target).norm());
            }
            for b in offsets[k + 1]..offsets[k_max + 1] {
                orthogonality = orthogonality.max(gram_all[(a, b)].norm());
            }
        }
    }

    let taylor_tail = taylor_tail_bound(family, transfer)?;
    let ks: Vec<usize> = if top == 0 {
        vec![]
    } else {
        (0..=k_max.min(top - 1)).collect()
    };
    let per_k: Vec<(f64, f64)> = ks
        .par_iter()
        .map(|&k| {
            let lo = offsets[k + 1];
            let m = m_all - lo;
            let gram = gram_all.view((lo, lo), (m, m)).into_owned();
            let lu = gram.lu();
            let mut worst = 0.0_f64;
            let mut tail = 0.0_f64;
            for u in 0..offsets[k + 1] - offsets[k] {
                let f = elem(k, 1, u);
                let rhs = CVec::from_iterator(m, (lo..m_all).map(|b| inner_raw(w, &f, &flat[b])));
                let coef = lu.solve(&rhs).unwrap_or_else(|| CVec::zeros(m));
                let mut r = f.clone();
                for (a, e) in flat[lo..].iter().enumerate() {
                    for (j, v) in e.iter().enumerate() {
                        if j >= r.len() {
                            r.push(CVec::zeros(p));
                        }
                        r[j] -= v * coef[a];
                    }
                }
                worst = worst.max(inner_raw(w, &r, &r).re.max(0.0).sqrt());
                let t: f64 = f
                    .iter()
                    .enumerate()
                    .skip(top + 1)
                    .map(|(j, v)| w.beta(j).unwrap_or(0.0) * v.norm_squared())
                    .sum();
                tail = tail.max(t.sqrt());
            }
            (worst, tail)
        })
        .collect();
    let mut span_residual = 0.0_f64;
    let mut tail_part = 0.0_f64;
    for (r, t) in per_k {
        span_residual = span_residual.max(r);
        tail_part = tail_part.max(t);
    }
    let taylor_allow = 2.0 * taylor_tail * (1.0 + taylor_tail);
    let span_allowance = tail_part + taylor_tail;
    let verdict = if isometry > tol + taylor_allow
        || orthogonality > tol + taylor_allow
        || span_residual > tol + span_allowance
    {
        Verdict::Fails
    } else if span_residual > tol || isometry > tol || orthogonality > tol {
        Verdict::Inconclusive
    } else {
        Verdict::Holds
    };
    Ok(InnerFamilyReport {
        isometry,
        orthogonality,
        span_residual,
        span_allowance,
        taylor_tail,
        k_checked: k_max,
        verdict,
    })
}

/// max_k sqrt(Σ_{j>J} β_{j+k}^{-1} ||C A^{j−1} B_k||²), bounded through a power certificate.
pub(crate) fn taylor_tail_bound(
    family: &ColligationFamily,
    transfer: &TransferFamily,
) -> Result<f64> {
    let w = family.weight();
    let a = family.pair().a();
    let jj = transfer.order();
    let n = a.nrows();
    let mut pow = eye(n);
    let mut cert = PowerCert::new();
    for _ in 0..jj.max(1) {
        pow = &pow * a;
        cert.push(fro_norm(&pow));
    }
    let mut q = family.pair().c().clone();
    for _ in 0..jj.saturating_sub(1) {
        q = &q * a;
    }
    let qn = fro_norm(&q);
    let mut worst = 0.0_f64;
    for (k, s) in family.steps().iter().enumerate().take(transfer.k_max() + 1) {
        let bn = fro_norm(&s.b);
        if bn == 0.0 || qn == 0.0 {
            continue;
        }
        let g = w.growth_bound(jj + k);
        let Some(ib) = w.inv_beta(jj + k) else {
            return Ok(f64::INFINITY);
        };
        let geo = [0usize, 8, 64, jj]
            .iter()
            .filter_map(|&j| cert.bound(j))
            .map(|(f, th)| f * f * geometric_tail(g * th * th))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max((ib * qn * qn * bn * bn * geo).sqrt());
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierVerdict {
    pub sup_norm: f64,
    /// λ_min of the block kernel matrix divided by its trace
    pub lambda_min_scaled: f64,
    pub contractive: bool,
}

/// ||Θ(z)|| ≤ 1 + tol on the grid and [(I − Θ(z_i)Θ(z_j)*) K_β(z_i, z_j)] ⪰ 0 after trace scaling.
pub fn check_contractive_multiplier(
    w: &WeightSequence,
    theta: &(dyn Fn(Complex64) -> Result<CMat> + Sync),
    points: &[Complex64],
    tol: f64,
) -> Result<MultiplierVerdict> {
    if points.iter().any(|z| z.norm() >= 1.0) {
        return Err(Error::InvalidParameter(
            "grid must lie inside the unit disk".into(),
        ));
    }
    let vals: Vec<CMat> = points.iter().map(|&z| theta(z)).collect::<Result<_>>()?;
    let p = vals.first().map(|v| v.nrows()).unwrap_or(0);
    let sup_norm = vals.iter().map(op_norm).fold(0.0, f64::max);
    let m = points.len();
    let mut big = CMat::zeros(m * p, m * p);
    let series_tol = (tol * 1e-3).max(1e-15);
    for i in 0..m {
        for j in 0..m {
            let kb = w.resolvent_scalar(0, points[i] * points[j].conj(), series_tol)?;
            let blk = (eye(p) - &vals[i] * vals[j].adjoint()) * kb;
            big.view_mut((i * p, j * p), (p, p)).copy_from(&blk);
        }
    }
    let tr: f64 = (0..m * p).map(|i| big[(i, i)].re).sum();
    let lmin = if m * p == 0 { 0.0 } else { lambda_min(&big) };
    let lambda_min_scaled = if tr > 0.0 {
        lmin / tr
    } else if op_norm(&big) == 0.0 {
        0.0
    } else {
        f64::NEG_INFINITY
    };
    Ok(MultiplierVerdict {
        sup_norm,
        lambda_min_scaled,
        contractive: sup_norm <= 1.0 + tol && lambda_min_scaled >= -tol,
    })
}

/// [K_β(z_i, z_j) I − Θ(z_i)Θ(z_j)*/(1 − z_i z̄_j)] ⪰ 0 after trace scaling: M_Θ contractive from H²(U) into H²_β(Y).
pub fn check_hardy_multiplier(
    w: &WeightSequence,
    theta: &(dyn Fn(Complex64) -> Result<CMat> + Sync),
    points: &[Complex64],
    tol: f64,
) -> Result<MultiplierVerdict> {
    if points.iter().any(|z| z.norm() >= 1.0) {
        return Err(Error::InvalidParameter(
            "grid must lie inside the unit disk".into(),
        ));
    }
    let vals: Vec<CMat> = points.iter().map(|&z| theta(z)).collect::<Result<_>>()?;
    let p = vals.first().map(|v| v.nrows()).unwrap_or(0);
    let sup_norm = vals.iter().map(op_norm).fold(0.0, f64::max);
    let m = points.len();
    let mut big = CMat::zeros(m * p, m * p);
    let series_tol = (tol * 1e-3).max(1e-15);
    for i in 0..m {
        for j in 0..m {
            let x = points[i] * points[j].conj();
            let kb = w.resolvent_scalar(0, x, series_tol)?;
            let blk = eye(p) * kb - &vals[i] * vals[j].adjoint() / (c64(1.0, 0.0) - x);
            big.view_mut((i * p, j * p), (p, p)).copy_from(&blk);
        }
    }
    let tr: f64 = (0..m * p).map(|i| big[(i, i)].re).sum();
    let lmin = if m * p == 0 { 0.0 } else { lambda_min(&big) };
    let lambda_min_scaled = if tr > 0.0 {
        lmin / tr
    } else {
        f64::NEG_INFINITY
    };
    Ok(MultiplierVerdict {
        sup_norm,
        lambda_min_scaled,
        contractive: lambda_min_scaled >= -tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colligation::{build_family, transfer_eval};
    use crate::hereditary::observability_coeffs;
    use crate::linalg::{random_gaussian, random_with_radius, scalar};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-13;

    fn arc(w: WeightSequence) -> Arc<WeightSequence> {
        Arc::new(w)
    }

    fn v(xs: &[(f64, f64)]) -> CVec {
        CVec::from_iterator(xs.len(), xs.iter().map(|&(a, b)| c64(a, b)))
    }

    fn s(x: f64) -> CMat {
        scalar(c64(x, 0.0))
    }

    fn hardy_scalar(a: f64) -> ColligationFamily {
        let w = WeightSequence::hardy(512).unwrap();
        let pair = OutputPair::new(s(a), s((1.0 - a * a).sqrt())).unwrap();
        build_family(&w, &pair, 3, 1e-10, TOL).unwrap()
    }

    fn random_family(
        w: &WeightSequence,
        seed: u64,
        n: usize,
        p: usize,
        rho: f64,
        k_max: usize,
    ) -> ColligationFamily {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_with_radius(&mut rng, n, rho);
        let pair = OutputPair::new(a, random_gaussian(&mut rng, p, n)).unwrap();
        build_family(w, &pair, k_max, 1e-10, TOL).unwrap()
    }

    fn blaschke(a: f64, z: Complex64) -> Complex64 {
        (z - a) / (c64(1.0, 0.0) - z * a)
    }

    /// S^shift applied to Σ_j coeffs[j] z^j.
    fn shifted(w: &Arc<WeightSequence>, shift: usize, coeffs: &[CVec]) -> HardyElement {
        let dim = coeffs[0].len();
        let mut c = vec![CVec::zeros(dim); shift];
        c.extend(coeffs.iter().cloned());
        HardyElement::new(w, dim, c).unwrap()
    }

    #[test]
    fn inner_product_examples() {
        let w = arc(WeightSequence::beta_alpha(2.0, 64).unwrap());
        let y = v(&[(1.0, 2.0), (0.0, -1.0)]);
        let f = HardyElement::new(&w, 2, vec![y.clone()]).unwrap();
        assert!((hardy_inner(&f, &f).unwrap() - c64(6.0, 0.0)).norm() < 1e-15);
        let z = HardyElement::monomial(&w, 1, v(&[(1.0, 0.0)])).unwrap();
        assert!((z.norm_sq() - 0.5).abs() < 1e-15);
        for j in 0..6 {
            for m in 0..6 {
                let a = HardyElement::monomial(&w, j, y.clone()).unwrap();
                let b = HardyElement::monomial(&w, m, y.clone()).unwrap();
                let want = if j == m { 6.0 / (j + 1) as f64 } else { 0.0 };
                assert!((hardy_inner(&a, &b).unwrap() - c64(want, 0.0)).norm() < 1e-14);
            }
        }
        let other = arc(WeightSequence::hardy(64).unwrap());
        let g = HardyElement::new(&other, 2, vec![y.clone()]).unwrap();
        assert!(matches!(hardy_inner(&f, &g), Err(Error::WeightMismatch)));
        assert!(matches!(
            f.add_scaled(c64(1.0, 0.0), &g),
            Err(Error::WeightMismatch)
        ));
        assert!(HardyElement::new(&w, 3, vec![y]).is_err());
        assert_eq!(HardyElement::zero(&w, 2).norm_sq(), 0.0);
    }

    #[test]
    fn shift_examples() {
        let w = arc(WeightSequence::beta_alpha(3.0, 64).unwrap());
        let c = HardyElement::new(&w, 1, vec![v(&[(2.0, 1.0)])]).unwrap();
        assert_eq!(shift_adjoint_apply(&c).norm_sq(), 0.0);
        let h = arc(WeightSequence::hardy(64).unwrap());
        let f = HardyElement::new(
            &h,
            1,
            vec![v(&[(1.0, 0.0)]), v(&[(2.0, 0.0)]), v(&[(3.0, 0.0)])],
        )
        .unwrap();
        let g = shift_adjoint_apply(&f);
        assert_eq!(g.coeffs(), &[v(&[(2.0, 0.0)]), v(&[(3.0, 0.0)])]);
        let sf = shift_apply(&f);
        assert_eq!(sf.order(), 3);
        assert!((sf.eval(c64(0.5, 0.0))[0] - c64(0.5 * (1.0 + 1.0 + 0.75), 0.0)).norm() < 1e-15);
        for j in 0..20 {
            let m = HardyElement::monomial(&w, j + 1, v(&[(1.0, 0.0)])).unwrap();
            let ratio = shift_adjoint_apply(&m).norm_sq() / m.norm_sq();
            let want = w.beta(j + 1).unwrap() / w.beta(j).unwrap();
            assert!((ratio - want).abs() < 1e-14 && ratio <= 1.0);
        }
    }

    #[test]
    fn grid_layout() {
        let g = default_grid();
        assert_eq!(g.len(), 40);
        assert!(g[..8].iter().all(|z| z.norm() == 0.0));
        assert!((g[39].norm() - 0.8).abs() < 1e-15);
        assert_eq!(
            grid(&[0.5], 4)[1],
            Complex64::from_polar(0.5, std::f64::consts::FRAC_PI_2)
        );
    }

    #[test]
    fn scalar_hardy_kernels() {
        let a = 0.6;
        let fam = hardy_scalar(a);
        let kd = KernelData::from_family(&fam);
        let o = c64(0.0, 0.0);
        assert!((kd.mperp(o, o).unwrap()[(0, 0)] - c64(1.0 - a * a, 0.0)).norm() < 1e-12);
        let pts = [c64(0.3, 0.2), c64(-0.5, 0.1), c64(0.0, -0.7)];
        for &z in &pts {
            for &x in &pts {
                let one = c64(1.0, 0.0);
                let want = c64(1.0 - a * a, 0.0) / ((one - z * a) * (one - x.conj() * a));
                assert!((kd.mperp(z, x).unwrap()[(0, 0)] - want).norm() < 1e-12);
                let km = blaschke(a, z) * blaschke(a, x).conj() / (one - z * x.conj());
                assert!((kd.m(z, x).unwrap()[(0, 0)] - km).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn subspace_kernel_relations() {
        let w = WeightSequence::beta_alpha(2.5, 512).unwrap();
        let fam = random_family(&w, 4, 3, 2, 0.6, 4);
        let kd = KernelData::from_family(&fam);
        assert_eq!(kd.k_max(), 4);
        let pts = [
            c64(0.0, 0.0),
            c64(0.3, 0.2),
            c64(-0.5, 0.4),
            c64(0.1, -0.75),
        ];
        for &z in &pts {
            for &x in &pts {
                let kb = kd.k_beta(z, x).unwrap();
                let sum = kd.m(z, x).unwrap() + kd.mperp(z, x).unwrap();
                assert!((sum - eye(2) * kb).norm() < 1e-11);
                assert!((kd.skm(0, z, x).unwrap() - kd.m(z, x).unwrap()).norm() < 1e-15);
                let mut acc = kd.skm(5, z, x).unwrap();
                for k in 0..5 {
                    let diff = kd.skm(k, z, x).unwrap() - kd.skm(k + 1, z, x).unwrap();
                    let g = kd.gap(k, z, x).unwrap();
                    assert!((&diff - &g).norm() < 1e-10, "k = {k}");
                    acc += g;
                }
                assert!((acc - kd.m(z, x).unwrap()).norm() < 1e-10);
            }
        }
        assert_eq!(
            kd.skm(2, c64(0.0, 0.0), c64(0.4, 0.1)).unwrap(),
            CMat::zeros(2, 2)
        );
        let o = c64(0.0, 0.0);
        let t0 = transfer_eval(&fam, 0, o, TOL).unwrap();
        assert!((kd.gap(0, o, o).unwrap() - &t0 * t0.adjoint()).norm() < 1e-11);
        for (k, z, x) in [(1, pts[1], pts[2]), (2, pts[3], pts[1])] {
            let tz = transfer_eval(&fam, k, z, TOL).unwrap();
            let tx = transfer_eval(&fam, k, x, TOL).unwrap();
            let want = tz * tx.adjoint() * (z * x.conj()).powu(k as u32);
            assert!((kd.gap(k, z, x).unwrap() - want).norm() < 1e-10);
        }
        assert!(matches!(kd.gap(5, o, o), Err(Error::MissingStep(6))));
    }

    #[test]
    fn kernel_grids_are_hermitian() {
        let w = WeightSequence::beta_alpha(2.0, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pair = OutputPair::new(
            random_with_radius(&mut rng, 3, 0.7),
            random_gaussian(&mut rng, 2, 3),
        )
        .unwrap();
        let kd = KernelData::new(&w, &pair, 2, 1e-10, TOL).unwrap();
        let pts = default_grid();
        for kind in [
            KernelKind::Beta,
            KernelKind::Mperp,
            KernelKind::M,
            KernelKind::Skm,
            KernelKind::Gap,
        ] {
            let g = kd.grid(kind, 1, &pts).unwrap();
            assert!(g.hermitian_defect() < 1e-11, "{kind:?}");
            let direct = match kind {
                KernelKind::Beta => eye(2) * kd.k_beta(pts[20], pts[33]).unwrap(),
                KernelKind::Mperp => kd.mperp(pts[20], pts[33]).unwrap(),
                KernelKind::M => kd.m(pts[20], pts[33]).unwrap(),
                KernelKind::Skm => kd.skm(1, pts[20], pts[33]).unwrap(),
                KernelKind::Gap => kd.gap(1, pts[20], pts[33]).unwrap(),
            };
            assert!((g.at(20, 33) - direct).norm() < 1e-14);
        }
    }

    #[test]
    fn built_family_is_inner() {
        let w = WeightSequence::beta_alpha(2.0, 512).unwrap();
        let fam = random_family(&w, 9, 2, 1, 0.5, 51);
        let tf = TransferFamily::new(&fam, 160).unwrap();
        let r = check_inner_family(&fam, &tf, 3, 1e-8).unwrap();
        assert_eq!(r.verdict, Verdict::Holds, "{r:?}");
        assert_eq!(r.k_checked, 3);
        assert!(matches!(
            check_inner_family(&fam, &tf, 52, 1e-8),
            Err(Error::MissingStep(52))
        ));
    }

    #[test]
    fn blaschke_family_preserves_norm() {
        let fam = hardy_scalar(0.5);
        let tf = TransferFamily::new(&fam, 120).unwrap();
        let r = check_inner_family(&fam, &tf, 2, 1e-10).unwrap();
        assert!(r.isometry < 1e-10);
        assert_eq!(r.verdict, Verdict::Holds);
    }

    #[test]
    fn doubled_transfer_function_fails() {
        let w = WeightSequence::beta_alpha(3.0, 512).unwrap();
        let fam = random_family(&w, 13, 2, 1, 0.5, 3);
        let tf = TransferFamily::new(&fam, 160).unwrap();
        let mut taylor: Vec<Vec<CMat>> = (0..=tf.k_max()).map(|k| tf.coeffs(k).to_vec()).collect();
        for c in &mut taylor[0] {
            *c *= c64(2.0, 0.0);
        }
        let bad = TransferFamily::from_coeffs(taylor).unwrap();
        let r = check_inner_family(&fam, &bad, 2, 1e-8).unwrap();
        assert_eq!(r.verdict, Verdict::Fails);
        assert!((r.isometry - 3.0).abs() < 1e-6, "{}", r.isometry);
    }

    #[test]
    fn multiplier_examples() {
        let pts = default_grid();
        let w = WeightSequence::beta_alpha(2.0, 256).unwrap();
        let zero = |_z: Complex64| -> Result<CMat> { Ok(CMat::zeros(2, 3)) };
        let r = check_contractive_multiplier(&w, &zero, &pts, 1e-8).unwrap();
        assert!(r.contractive && r.sup_norm == 0.0);
        let big = |_z: Complex64| -> Result<CMat> { Ok(eye(2) * c64(1.1, 0.0)) };
        let r = check_contractive_multiplier(&w, &big, &pts, 1e-8).unwrap();
        assert!(!r.contractive && (r.sup_norm - 1.1).abs() < 1e-14);
        let b = |z: Complex64| -> Result<CMat> { Ok(scalar(blaschke(0.4, z))) };
        let r = check_contractive_multiplier(&w, &b, &pts, 1e-8).unwrap();
        assert!(r.contractive && r.sup_norm < 1.0);
        let outside = [c64(1.0, 0.0)];
        assert!(matches!(
            check_contractive_multiplier(&w, &b, &outside, 1e-8),
            Err(Error::InvalidParameter(_))
        ));
        let r = check_hardy_multiplier(&w, &b, &pts, 1e-8).unwrap();
        assert!(r.contractive);
        let doubled = |z: Complex64| -> Result<CMat> { Ok(scalar(blaschke(0.4, z) * 2.0)) };
        assert!(
            !check_hardy_multiplier(&w, &doubled, &pts, 1e-8)
                .unwrap()
                .contractive
        );
    }

    fn weight_strategy() -> impl Strategy<Value = WeightSequence> {
        prop_oneof![
            Just(WeightSequence::hardy(512).unwrap()),
            Just(WeightSequence::beta_alpha(2.0, 512).unwrap()),
            Just(WeightSequence::beta_alpha(3.0, 512).unwrap()),
            Just(WeightSequence::beta_alpha(2.5, 512).unwrap()),
        ]
    }

    fn random_element(
        w: &Arc<WeightSequence>,
        seed: u64,
        dim: usize,
        order: usize,
    ) -> HardyElement {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..=order)
            .map(|_| random_gaussian(&mut rng, dim, 1).column(0).into_owned())
            .collect();
        HardyElement::new(w, dim, coeffs).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn shift_adjoint_relation(w in weight_strategy(), seed in any::<u64>(), dim in 1usize..3, jf in 0usize..12, jg in 0usize..12) {
            let w = arc(w);
            let f = random_element(&w, seed, dim, jf);
            let g = random_element(&w, seed ^ 7, dim, jg);
            let lhs = hardy_inner(&shift_apply(&f), &g).unwrap();
            let rhs = hardy_inner(&f, &shift_adjoint_apply(&g)).unwrap();
            prop_assert!((lhs - rhs).norm() <= 1e-12 * f.norm_sq().max(g.norm_sq()).max(1.0));
            prop_assert!(shift_adjoint_apply(&g).norm_sq() <= g.norm_sq() * (1.0 + 1e-14));
            prop_assert!((f.norm_sq() - f.recompute_norm_sq()).abs() <= 1e-12 * f.norm_sq());
        }

        #[test]
        fn transfer_images_are_orthogonal_to_observability(w in weight_strategy(), seed in any::<u64>(), n in 1usize..4, p in 1usize..3) {
            let fam = random_family(&w, seed, n, p, 0.5, 3);
            let tf = TransferFamily::new(&fam, 150).unwrap();
            let wa = arc(w.clone());
            for k in 0..=3 {
                let obs = observability_coeffs(&w, 0, fam.pair(), 150 + k).unwrap();
                let obs_k = observability_coeffs(&w, k, fam.pair(), 150).unwrap();
                for x in 0..n {
                    let ox: Vec<CVec> = obs.iter().map(|m| m.column(x).into_owned()).collect();
                    let ox = shifted(&wa, 0, &ox);
                    let okx: Vec<CVec> = obs_k.iter().map(|m| m.column(x).into_owned()).collect();
                    let okx = shifted(&wa, k, &okx);
                    for u in 0..fam.step(k).unwrap().u() {
                        let th: Vec<CVec> = tf.coeffs(k).iter().map(|m| m.column(u).into_owned()).collect();
                        let e = shifted(&wa, k, &th);
                        let scale = (e.norm_sq() * ox.norm_sq()).sqrt().max(1.0);
                        prop_assert!(hardy_inner(&e, &ox).unwrap().norm() <= 1e-9 * scale);
                        for l in k..=3 {
                            for u2 in 0..fam.step(l).unwrap().u() {
                                let th: Vec<CVec> = tf.coeffs(l).iter().map(|m| m.column(u2).into_owned()).collect();
                                let e2 = shifted(&wa, l, &th);
                                let scale = (e2.norm_sq() * okx.norm_sq()).sqrt().max(1.0);
                                prop_assert!(hardy_inner(&e2, &okx).unwrap().norm() <= 1e-9 * scale, "k = {}, l = {}", k, l);
                            }
                        }
                    }
                }
            }
        }

        #[test]
        fn shifted_transfer_is_contractive_on_polynomials(w in weight_strategy(), seed in any::<u64>(), n in 1usize..4, deg in 0usize..5, k in 0usize..3) {
            let fam = random_family(&w, seed, n, 1, 0.5, 3);
            let tf = TransferFamily::new(&fam, 150).unwrap();
            let u = fam.step(k).unwrap().u();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
            let f: Vec<CVec> = (0..=deg).map(|_| random_gaussian(&mut rng, u, 1).column(0).into_owned()).collect();
            let hardy_norm: f64 = f.iter().map(|c| c.norm_squared()).sum();
            let mut prod = vec![CVec::zeros(1); 151 + deg];
            for (i, fi) in f.iter().enumerate() {
                for (j, t) in tf.coeffs(k).iter().enumerate() {
                    prod[i + j] += t * fi;
                }
            }
            let e = shifted(&arc(w.clone()), k, &prod);
            prop_assert!(e.norm_sq() <= hardy_norm * (1.0 + 1e-9));
            if deg == 0 {
                prop_assert!((e.norm_sq() - hardy_norm).abs() <= 1e-9 * hardy_norm);
            }
        }
    }
}
