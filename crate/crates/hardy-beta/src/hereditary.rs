//! Hereditary calculus on matrices: resolvents, Γ-maps, gramians, Stein identities
//! and classification of output pairs.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, eye, fro_norm, hermitize, lambda_min, op_norm, psd_sqrt, CMat};
use crate::series::{geometric_tail, PowerCert, StopRule};
use crate::weights::{WeightKind, WeightSequence, WienerVerdict};

/// Largest spectral radius accepted by the series-summed gramians.
pub const MAX_SPECTRAL_RADIUS: f64 = 0.999;

/// Output pair (C, A) with A: X → X and C: X → Y.
#[derive(Clone, Debug)]
pub struct OutputPair {
    a: CMat,
    c: CMat,
    rho: f64,
}

impl OutputPair {
    pub fn new(a: CMat, c: CMat) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if c.ncols() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "C has {} columns, A is {}x{}",
                c.ncols(),
                a.nrows(),
                a.ncols()
            )));
        }
        let rho = crate::linalg::spectral_radius(&a);
        Ok(OutputPair { a, c, rho })
    }

    pub fn a(&self) -> &CMat {
        &self.a
    }

    pub fn c(&self) -> &CMat {
        &self.c
    }

    /// dim X
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// dim Y
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.rho
    }
}

/// Truncated series value with its certified tail bound.
#[derive(Clone, Debug)]
pub struct SeriesValue {
    pub value: CMat,
    pub terms: usize,
    pub tail_bound: f64,
}

/// R_{β,k}(zA) = Σ_j β_{k+j}^{-1} z^j A^j.
pub fn resolvent_apply(
    w: &WeightSequence,
    k: usize,
    a: &CMat,
    z: Complex64,
    tol: f64,
) -> Result<CMat> {
    let rho = crate::linalg::spectral_radius(a);
    resolvent_series(w, k, a, rho, z, tol).map(|s| s.value)
}

pub(crate) fn resolvent_series(
    w: &WeightSequence,
    k: usize,
    a: &CMat,
    rho: f64,
    z: Complex64,
    tol: f64,
) -> Result<SeriesValue> {
    let n = a.nrows();
    let zr = z.norm() * rho;
    if zr >= 1.0 {
        return Err(Error::Divergence(zr));
    }
    let b0 = w.inv_beta_or(k)?;
    if z.norm() == 0.0 || n == 0 || a.iter().all(|x| x.norm() == 0.0) {
        return Ok(SeriesValue {
            value: eye(n) * c64(b0, 0.0),
            terms: 1,
            tail_bound: 0.0,
        });
    }
    let x = a * z;
    let mut pow = eye(n);
    let mut sum = eye(n) * c64(b0, 0.0);
    let mut cert = PowerCert::new();
    let mut rule = StopRule::new(tol);
    let avail = w.series_len().saturating_sub(k);
    for j in 1..avail {
        pow = &pow * &x;
        let b = w.inv_ext_at(k + j);
        sum += &pow * c64(b, 0.0);
        let nrm = fro_norm(&pow);
        cert.push(nrm);
        let term = b * nrm;
        let tail = match cert.nilpotent_at() {
            Some(m) if j + 1 >= m => 0.0,
            _ => match cert.bound(j) {
                Some((f, theta)) => {
                    f * b * theta.powi(j as i32) * geometric_tail(w.growth_bound(k + j) * theta)
                }
                None => f64::INFINITY,
            },
        };
        if rule.observe(term, tail) {
            return Ok(SeriesValue {
                value: sum,
                terms: j + 1,
                tail_bound: tail,
            });
        }
    }
    Err(Error::NoConvergence(format!(
        "resolvent R_(beta,{k}) at |z| rho = {zr:.4} exhausted {avail} terms"
    )))
}

/// 𝔊^{(k)} = Σ_j β_{j+k}^{-1} A^{*j} C^*C A^j.
pub fn gramian(w: &WeightSequence, k: usize, pair: &OutputPair, tol: f64) -> Result<SeriesValue> {
    weighted_square_sum(w, k, pair.a(), pair.c(), pair.spectral_radius(), tol)
}

/// Σ_j β_{j+k}^{-1} A^{*j} C^*C A^j for an arbitrary factor C.
pub(crate) fn weighted_square_sum(
    w: &WeightSequence,
    k: usize,
    a: &CMat,
    c: &CMat,
    rho: f64,
    tol: f64,
) -> Result<SeriesValue> {
    if rho > MAX_SPECTRAL_RADIUS {
        return Err(Error::UnsupportedSpectralRadius(rho));
    }
    let n = a.nrows();
    let mut q = c.clone();
    let mut pow = eye(n);
    let mut sum = CMat::zeros(n, n);
    let mut cert = PowerCert::new();
    let mut rule = StopRule::new(tol);
    let avail = w.series_len().saturating_sub(k);
    for j in 0..avail {
        let b = w.inv_ext_at(k + j);
        let qn = fro_norm(&q);
        sum += q.adjoint() * &q * c64(b, 0.0);
        let term = b * qn * qn;
        let g = w.growth_bound(k + j);
        let tail = if qn == 0.0 {
            0.0
        } else {
            best_square_tail(&cert, g) * term
        };
        if rule.observe(term, tail) {
            return Ok(SeriesValue {
                value: hermitize(&sum),
                terms: j + 1,
                tail_bound: tail,
            });
        }
        q = &q * a;
        pow = &pow * a;
        cert.push(fro_norm(&pow));
    }
    Err(Error::NoConvergence(format!(
        "gramian series (k = {k}, rho = {rho:.4}) exhausted {avail} terms"
    )))
}

/// min over certificates of F² Σ_{s≥1} (g θ²)^s.
fn best_square_tail(cert: &PowerCert, g: f64) -> f64 {
    let mut best = f64::INFINITY;
    for j in [0usize, 4, 16, 64, 256] {
        if let Some((f, theta)) = cert.bound(j) {
            best = best.min(f * f * geometric_tail(g * theta * theta));
        }
    }
    best
}

/// Gramians 𝔊^{(0)}..𝔊^{(K)} of a fixed pair.
#[derive(Clone, Debug)]
pub struct GramianTable {
    entries: Vec<CMat>,
    terms: Vec<usize>,
    tail_bounds: Vec<f64>,
    tol: f64,
}

impl GramianTable {
    pub fn build(w: &WeightSequence, pair: &OutputPair, k_max: usize, tol: f64) -> Result<Self> {
        let vals: Vec<SeriesValue> = (0..=k_max)
            .into_par_iter()
            .map(|k| gramian(w, k, pair, tol))
            .collect::<Result<_>>()?;
        Ok(GramianTable {
            terms: vals.iter().map(|v| v.terms).collect(),
            tail_bounds: vals.iter().map(|v| v.tail_bound).collect(),
            entries: vals.into_iter().map(|v| v.value).collect(),
            tol,
        })
    }

    pub fn get(&self, k: usize) -> Option<&CMat> {
        self.entries.get(k)
    }

    /// Highest index k stored.
    pub fn k_max(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn terms(&self) -> &[usize] {
        &self.terms
    }

    pub fn tail_bounds(&self) -> &[f64] {
        &self.tail_bounds
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// max_k −λ_min(𝔊^{(k+1)} − 𝔊^{(k)}); nonpositive when the table is monotone.
    pub fn monotonicity_defect(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|g| -lambda_min(&(&g[1] - &g[0])))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// (β_{j+k}^{-1} C A^j)_{j ≤ J}.
pub fn observability_coeffs(
    w: &WeightSequence,
    k: usize,
    pair: &OutputPair,
    jmax: usize,
) -> Result<Vec<CMat>> {
    let mut out = Vec::with_capacity(jmax + 1);
    let mut q = pair.c().clone();
    for j in 0..=jmax {
        out.push(&q * c64(w.inv_beta_or(j + k)?, 0.0));
        q = &q * pair.a();
    }
    Ok(out)
}

fn check_hereditary_domain(a: &CMat, x: &CMat, tol: f64) -> Result<()> {
    let axa = a.adjoint() * x * a;
    let s = op_norm(x).max(1.0);
    let l1 = lambda_min(&(x - &axa));
    let l2 = lambda_min(&axa);
    if l1 < -tol * s || l2 < -tol * s {
        return Err(Error::HereditaryDomain(format!(
            "X - A*XA has lambda_min {l1:e}, A*XA has lambda_min {l2:e}"
        )));
    }
    Ok(())
}

/// Σ_j f_j A^{*j} X A^j with tail bounded by ||X|| Σ_{i>j} |f_i| min(1, ||A^i||²).
fn coefficient_map(coeffs: &[f64], beyond: f64, a: &CMat, x: &CMat, tol: f64) -> Result<CMat> {
    let n = a.nrows();
    let xn = op_norm(x);
    let mut pow = eye(n);
    let mut sum = CMat::zeros(n, n);
    let mut cert = PowerCert::new();
    let mut rule = StopRule::new(tol);
    let len = coeffs.len();
    let mut suffix = vec![0.0; len + 1];
    for j in (0..len).rev() {
        suffix[j] = suffix[j + 1] + coeffs[j].abs();
    }
    for j in 0..len {
        let t = pow.adjoint() * x * &pow;
        let term = coeffs[j].abs() * fro_norm(&t);
        sum += t * c64(coeffs[j], 0.0);
        pow = &pow * a;
        let pn = fro_norm(&pow);
        cert.push(pn);
        let tail = if (suffix[j + 1] == 0.0 && beyond == 0.0) || pn == 0.0 {
            0.0
        } else {
            let mut t = 0.0;
            match cert.bound(j + 1) {
                Some((f, theta)) => {
                    for (i, ci) in coeffs.iter().enumerate().skip(j + 1) {
                        t += ci.abs() * (f * theta.powi(i as i32)).powi(2).min(1.0);
                    }
                    t += beyond * (f * theta.powi(len as i32)).powi(2).min(1.0);
                }
                None => t = suffix[j + 1] + beyond,
            }
            xn * t
        };
        if rule.observe(term, tail) {
            return Ok(hermitize(&sum));
        }
    }
    let tail = xn * beyond;
    if tail <= tol {
        return Ok(hermitize(&sum));
    }
    Err(Error::NoConvergence(format!(
        "hereditary map exhausted {len} coefficients with tail {tail:e}"
    )))
}

fn wiener_tail(w: &WeightSequence) -> Result<f64> {
    let n = w.trunc_len();
    if n < 8 {
        let c = w.c_coeffs();
        return Ok(if c[1..].iter().all(|x| *x == 0.0) || n < 2 {
            0.0
        } else {
            f64::INFINITY
        });
    }
    let rep = w.wiener_report(n)?;
    if rep.verdict == WienerVerdict::Diverging {
        return Err(Error::HereditaryDomain(
            "reciprocal weight coefficients are not summable".into(),
        ));
    }
    Ok(rep.tail_estimate)
}

/// Γ_{β,A}[X] = Σ c_j A^{*j} X A^j.
pub fn gamma_map(w: &WeightSequence, a: &CMat, x: &CMat, tol: f64) -> Result<CMat> {
    check_hereditary_domain(a, x, tol)?;
    let beyond = polynomial_beyond(w, wiener_tail(w)?);
    coefficient_map(w.c_coeffs(), beyond, a, x, tol)
}

/// Integer-α weights have polynomial 1/R_β, so nothing lies beyond the table.
fn polynomial_beyond(w: &WeightSequence, est: f64) -> f64 {
    match w.kind() {
        WeightKind::Hardy => 0.0,
        WeightKind::BetaAlpha { alpha }
            if alpha.fract() == 0.0 && (alpha as usize) < w.trunc_len() =>
        {
            0.0
        }
        _ => est,
    }
}

/// Γ^{(k)}_{β,A}[X] = Σ_j d^{(k)}_j A^{*j} X A^j.
pub fn gamma_k_map(w: &WeightSequence, k: usize, a: &CMat, x: &CMat, tol: f64) -> Result<CMat> {
    if k == 0 {
        return Ok(x.clone());
    }
    check_hereditary_domain(a, x, tol)?;
    let n = w.trunc_len();
    if k >= n {
        return Err(Error::Truncation(format!(
            "gamma_k_map with k = {k} needs trunc_len > {k}"
        )));
    }
    let d = w.gamma_k_coeffs(k, n - k)?;
    let ctail = polynomial_beyond(w, wiener_tail(w)?);
    let c = w.c_coeffs();
    let stored: f64 = c[n - k + 1..].iter().map(|x| x.abs()).sum();
    let scale: f64 = (0..k).map(|l| 1.0 / w.betas()[l]).sum();
    let beyond = if ctail == 0.0 && stored == 0.0 {
        0.0
    } else {
        scale * (stored + ctail)
    };
    coefficient_map(&d, beyond, a, x, tol)
}

/// Γ_{ℓ,A}[H] = Σ_{j≤ℓ} (−1)^j binom(ℓ, j) A^{*j} H A^j.
pub fn gamma_binomial(l: usize, a: &CMat, h: &CMat) -> CMat {
    let n = a.nrows();
    let mut pow = eye(n);
    let mut sum = CMat::zeros(n, n);
    let mut binom = 1.0_f64;
    for j in 0..=l {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        sum += pow.adjoint() * h * &pow * c64(sign * binom, 0.0);
        binom = binom * (l - j) as f64 / (j + 1) as f64;
        pow = &pow * a;
    }
    hermitize(&sum)
}

/// ||A^*·G_{k+1}·A + β_k^{-1}C^*C − G_k||.
pub fn stein_residual(
    w: &WeightSequence,
    k: usize,
    pair: &OutputPair,
    g_k: &CMat,
    g_k1: &CMat,
) -> f64 {
    let a = pair.a();
    let c = pair.c();
    let bk = w.inv_beta(k).unwrap_or(f64::NAN);
    let r = a.adjoint() * g_k1 * a + c.adjoint() * c * c64(bk, 0.0) - g_k;
    op_norm(&r)
}

/// λ_min(M) ≥ −tol·max(1, ||M||).
pub fn psd_verdict(m: &CMat, tol: f64) -> (bool, f64) {
    let l = lambda_min(m);
    (l >= -tol * op_norm(m).max(1.0), l)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationFlags {
    pub output_stable: bool,
    pub contraction: bool,
    pub contractive_pair: bool,
    pub isometric_pair: bool,
    pub hypercontraction: bool,
    pub strongly_stable_beta: bool,
    pub exactly_observable: bool,
    /// For β = β_n: Γ_{ℓ,A}[I] ⪰ 0 for ℓ < n, which certifies Γ^{(k)}[I] ⪰ 0 for every k.
    pub betan_certificate: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub flags: ClassificationFlags,
    pub residuals: BTreeMap<String, f64>,
    pub k_checked: usize,
}

/// Classification of (C, A): stability, contractivity, hypercontractivity, observability.
pub fn classify(
    w: &WeightSequence,
    pair: &OutputPair,
    k_max: usize,
    tol: f64,
) -> Result<ClassificationReport> {
    let rho = pair.spectral_radius();
    if rho > MAX_SPECTRAL_RADIUS {
        return Err(Error::UnsupportedSpectralRadius(rho));
    }
    let a = pair.a();
    let c = pair.c();
    let n = pair.n();
    let mut flags = ClassificationFlags::default();
    let mut res = BTreeMap::new();
    res.insert("spectral_radius".to_string(), rho);

    let g = gramian(w, 0, pair, tol)?;
    flags.output_stable = g.tail_bound.is_finite();
    res.insert("gramian_tail_bound".into(), g.tail_bound);
    let g_min = lambda_min(&g.value);
    res.insert("gramian_lambda_min".into(), g_min);
    flags.exactly_observable = g_min > tol;

    let a_norm = op_norm(a);
    res.insert("norm_A".into(), a_norm);
    flags.contraction = a_norm <= 1.0 + tol;

    if flags.contraction {
        let id = eye(n);
        let gi = gamma_map(w, a, &id, tol)?;
        let (ok0, l0) = psd_verdict(&gi, tol);
        res.insert("gamma_I_lambda_min".into(), l0);
        let mut hyper = ok0;
        let mut worst = f64::INFINITY;
        let mut last = gi.clone();
        for k in 1..=k_max {
            let gk = gamma_k_map(w, k, a, &id, tol)?;
            let (ok, l) = psd_verdict(&gk, tol);
            hyper &= ok;
            worst = worst.min(l);
            last = gk;
        }
        if k_max >= 1 {
            res.insert("gamma_k_I_lambda_min".into(), worst);
        }
        flags.hypercontraction = hyper;

        if let WeightKind::BetaAlpha { alpha } = w.kind() {
            if alpha.fract() == 0.0 && alpha <= 8.0 {
                let nn = alpha as usize;
                let mut ok = true;
                for l in 0..nn {
                    ok &= psd_verdict(&gamma_binomial(l, a, &id), tol).0;
                }
                flags.betan_certificate = Some(ok);
            }
        }

        let defect = &gi - c.adjoint() * c;
        let (cp, lmin) = psd_verdict(&defect, tol);
        let dn = op_norm(&defect);
        flags.contractive_pair = cp;
        flags.isometric_pair = dn <= tol * op_norm(&gi).max(1.0);
        res.insert("pair_defect_lambda_min".into(), lmin);
        res.insert("pair_defect_norm".into(), dn);

        let top = if k_max == 0 { id.clone() } else { last };
        let mut ak = eye(n);
        for _ in 0..k_max {
            ak = &ak * a;
        }
        let s = op_norm(&(ak.adjoint() * top * &ak));
        res.insert("strong_stability".into(), s);
        flags.strongly_stable_beta = s <= tol;
    }

    Ok(ClassificationReport {
        flags,
        residuals: res,
        k_checked: k_max,
    })
}

#[derive(Clone, Debug)]
pub struct DeltaReport {
    pub delta: CMat,
    pub converged: bool,
    /// Worst −λ_min of successive decrements (≤ tol when monotone).
    pub monotone_defect: f64,
    /// ||Σ_j β_j^{-1} A^{*j} Γ[H] A^j − (H − Δ)||, when converged.
    pub series_residual: Option<f64>,
}

/// Δ = lim_k A^{*k} Γ^{(k)}[H] A^k, evaluated at k = k_max.
pub fn delta_limit(
    w: &WeightSequence,
    a: &CMat,
    h: &CMat,
    k_max: usize,
    tol: f64,
) -> Result<DeltaReport> {
    let n = a.nrows();
    let mut ak = eye(n);
    let mut prev: Option<CMat> = None;
    let mut worst = f64::NEG_INFINITY;
    let mut last_step = f64::INFINITY;
    let scale = op_norm(h).max(1.0);
    for k in 0..=k_max {
        let gk = gamma_k_map(w, k, a, h, tol)?;
        let mk = ak.adjoint() * gk * &ak;
        if let Some(p) = &prev {
            let dec = p - &mk;
            worst = worst.max(-lambda_min(&dec));
            last_step = op_norm(&dec);
        }
        prev = Some(mk);
        ak = &ak * a;
    }
    if worst > tol * scale {
        return Err(Error::HereditaryDomain(format!(
            "A*^k Gamma^(k)[H] A^k is not monotone (defect {worst:e})"
        )));
    }
    let delta = hermitize(&prev.expect("k_max >= 0"));
    let converged = last_step <= tol * scale;
    let series_residual = if converged {
        let gh = gamma_map(w, a, h, tol)?;
        let root = psd_sqrt(&gh);
        let rho = crate::linalg::spectral_radius(a);
        let s = weighted_square_sum(w, 0, a, &root, rho, tol)?;
        Some(op_norm(&(s.value - (h - &delta))))
    } else {
        None
    };
    Ok(DeltaReport {
        delta,
        converged,
        monotone_defect: worst.max(0.0),
        series_residual,
    })
}
