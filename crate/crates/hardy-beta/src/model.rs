//! Characteristic function families of *-β-hypercontractions, coincidence,
//! model round trip and functional-model coordinates.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colligation::{
    build_family, transfer_eval, ColligationFamily, ColligationStep, TransferFamily,
};
use crate::error::{Error, Result};
use crate::hereditary::{
    classify, gamma_map, gramian, stein_residual, ClassificationReport, GramianTable, OutputPair,
    MAX_SPECTRAL_RADIUS,
};
use crate::linalg::{
    c64, eye, fro_norm, herm_eig, hermitize, lambda_min, op_norm, pd_sqrt_pair, polar_unitary,
    psd_sqrt, random_gaussian, spectral_radius, CMat, CVec,
};
use crate::series::{geometric_tail, PowerCert};
use crate::weights::WeightSequence;

/// Depth of the Γ^{(k)}[I] ⪰ 0 checks behind the hypercontraction flag.
pub const HYPER_K_MAX: usize = 20;
pub const MAX_SWEEPS: usize = 50;

/// D_{β,A} = Γ_{β,A}[I]^{1/2} for A = T*.
pub fn defect_operator(w: &WeightSequence, t: &CMat, tol: f64) -> Result<CMat> {
    let a = t.adjoint();
    let n = a.nrows();
    let g = match gamma_map(w, &a, &eye(n), tol) {
        Ok(g) => g,
        Err(Error::HereditaryDomain(_)) => {
            return Err(Error::NotStarHypercontraction(lambda_min(
                &(eye(n) - a.adjoint() * &a),
            )))
        }
        Err(e) => return Err(e),
    };
    let g = hermitize(&g);
    let lmin = lambda_min(&g);
    if lmin < -10.0 * tol {
        return Err(Error::NotStarHypercontraction(lmin));
    }
    Ok(psd_sqrt(&g))
}

/// T with A = T*, its defect operator and classification.
#[derive(Clone, Debug)]
pub struct Hypercontraction {
    t: CMat,
    a: CMat,
    defect: CMat,
    output: CMat,
    classification: ClassificationReport,
    /// ||I − Σ_j β_j^{-1} A^{*j} D² A^j||, the limit of ||A^{*k} Γ^{(k)}[I] A^k||
    strong_stability_residual: f64,
}

impl Hypercontraction {
    pub fn new(w: &WeightSequence, t: &CMat, rank_tol: f64, tol: f64) -> Result<Self> {
        if t.nrows() != t.ncols() || t.nrows() == 0 {
            return Err(Error::DimensionMismatch(
                "T must be square and nonempty".into(),
            ));
        }
        let rho = spectral_radius(t);
        if rho > MAX_SPECTRAL_RADIUS {
            return Err(Error::UnsupportedSpectralRadius(rho));
        }
        let a = t.adjoint();
        let defect = defect_operator(w, t, tol)?;
        let output = range_compression(&defect, rank_tol);
        if output.nrows() == 0 {
            return Err(Error::ExactObservabilityRequired(
                "defect operator vanishes".into(),
            ));
        }
        let pair = OutputPair::new(a.clone(), output.clone())?;
        let classification = classify(w, &pair, HYPER_K_MAX.min(w.trunc_len() - 1), tol)?;
        let g = gramian(w, 0, &pair, tol * 1e-2)?;
        let strong_stability_residual = op_norm(&(eye(a.nrows()) - g.value)) + g.tail_bound;
        Ok(Hypercontraction {
            t: t.clone(),
            a,
            defect,
            output,
            classification,
            strong_stability_residual,
        })
    }

    pub fn t(&self) -> &CMat {
        &self.t
    }

    pub fn a(&self) -> &CMat {
        &self.a
    }

    pub fn defect(&self) -> &CMat {
        &self.defect
    }

    /// The output operator C: D_{β,A} restricted to its range.
    pub fn output(&self) -> &CMat {
        &self.output
    }

    pub fn classification(&self) -> &ClassificationReport {
        &self.classification
    }

    pub fn strong_stability_residual(&self) -> f64 {
        self.strong_stability_residual
    }

    pub fn is_strongly_stable(&self, tol: f64) -> bool {
        self.strong_stability_residual <= 10.0 * tol
    }

    pub fn pair(&self) -> Result<OutputPair> {
        OutputPair::new(self.a.clone(), self.output.clone())
    }
}

/// Q_r* D with Q_r spanning the range of the Hermitian D.
fn range_compression(d: &CMat, rank_tol: f64) -> CMat {
    let e = herm_eig(d);
    let lmax = e.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let keep: Vec<usize> = (0..e.values.len())
        .rev()
        .filter(|&i| lmax > 0.0 && e.values[i] > rank_tol * lmax)
        .collect();
    if keep.len() == d.nrows() {
        return d.clone();
    }
    let mut q = CMat::zeros(d.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        q.set_column(c, &e.vectors.column(i));
    }
    q.adjoint() * d
}

/// Characteristic function family of T: colligation family of (D_{β,A}, A) with its Taylor data.
#[derive(Clone, Debug)]
pub struct CharFamily {
    hyper: Hypercontraction,
    family: ColligationFamily,
    transfer: TransferFamily,
    identity_defect: f64,
}

impl CharFamily {
    pub fn hyper(&self) -> &Hypercontraction {
        &self.hyper
    }

    pub fn defect(&self) -> &CMat {
        &self.hyper.defect
    }

    pub fn family(&self) -> &ColligationFamily {
        &self.family
    }

    pub fn transfer(&self) -> &TransferFamily {
        &self.transfer
    }

    /// ||𝒢_{β,C,A} − I||
    pub fn identity_defect(&self) -> f64 {
        self.identity_defect
    }
}

/// Taylor order long enough for every gramian series of the family.
pub fn default_order(family: &ColligationFamily) -> usize {
    family.gramians().terms().iter().copied().max().unwrap_or(0) + 16
}

pub fn characteristic_family(
    w: &WeightSequence,
    t: &CMat,
    k_max: usize,
    rank_tol: f64,
    tol: f64,
) -> Result<CharFamily> {
    let hyper = Hypercontraction::new(w, t, rank_tol, tol)?;
    if !hyper.classification.flags.hypercontraction
        && hyper.classification.flags.betan_certificate != Some(true)
    {
        return Err(Error::ModelHypothesis(format!(
            "T* is not a beta-hypercontraction (lambda_min {:e})",
            hyper
                .classification
                .residuals
                .get("gamma_k_I_lambda_min")
                .copied()
                .unwrap_or(f64::NAN)
        )));
    }
    if !hyper.is_strongly_stable(tol) {
        return Err(Error::ModelHypothesis(format!(
            "T* is not beta-strongly stable (residual {:e})",
            hyper.strong_stability_residual
        )));
    }
    let pair = hyper.pair()?;
    let family = build_family(w, &pair, k_max, rank_tol, tol * 1e-4)?;
    let identity_defect = op_norm(&(family.gramians().get(0).expect("k = 0") - eye(pair.n())));
    let transfer = TransferFamily::new(&family, default_order(&family))?;
    Ok(CharFamily {
        hyper,
        family,
        transfer,
        identity_defect,
    })
}

/// Unitary colligations built from defect operators in 𝔊^{(k)}-weighted coordinates,
/// then transported back to X.
pub fn defect_form_family(cf: &CharFamily, rank_tol: f64) -> Result<ColligationFamily> {
    let fam = &cf.family;
    let w = fam.weight();
    let pair = fam.pair();
    let g = fam.gramians();
    let kk = fam.k_max();
    let roots: Vec<(CMat, CMat)> = (0..=kk + 1)
        .map(|k| pd_sqrt_pair(g.get(k).expect("gramian"), rank_tol))
        .collect::<Result<_>>()?;
    let steps: Vec<ColligationStep> = (0..=kk)
        .map(|k| {
            let bk = w.beta(k).ok_or(Error::MissingStep(k))?;
            let (_, sk_inv) = &roots[k];
            let (sk1, sk1_inv) = &roots[k + 1];
            let ah = sk1 * pair.a() * sk_inv;
            let ch = pair.c() * sk_inv * c64(bk.powf(-0.5), 0.0);
            let omega = polar_unitary(&ch);
            let e = herm_eig(&hermitize(&(eye(pair.n()) - &ah * ah.adjoint())));
            let lmax = e.values.last().copied().unwrap_or(0.0).max(0.0);
            let keep: Vec<usize> = (0..e.values.len())
                .rev()
                .filter(|&i| lmax > 0.0 && e.values[i] >= rank_tol * lmax)
                .collect();
            let mut v = CMat::zeros(pair.n(), keep.len());
            let mut bh = CMat::zeros(pair.n(), keep.len());
            for (c, &i) in keep.iter().enumerate() {
                v.set_column(c, &e.vectors.column(i));
                bh.set_column(c, &(e.vectors.column(i) * c64(e.values[i].sqrt(), 0.0)));
            }
            let dh = -(&omega * ah.adjoint() * &v);
            Ok(ColligationStep {
                b: sk1_inv * bh,
                d: dh * c64(bk.sqrt(), 0.0),
            })
        })
        .collect::<Result<_>>()?;
    ColligationFamily::from_parts(w, pair.clone(), g.clone(), steps, rank_tol, fam.tol())
}

#[derive(Clone, Debug)]
pub struct CoincidenceReport {
    pub coincide: bool,
    /// max_{k,i} ||τ Θ_{A,k}(z_i) − Θ_{B,k}(z_i) σ_k||_F
    pub residual: f64,
    pub tau: Option<CMat>,
    pub sigmas: Vec<CMat>,
    pub sweeps: usize,
}

impl CoincidenceReport {
    fn structural() -> Self {
        CoincidenceReport {
            coincide: false,
            residual: f64::INFINITY,
            tau: None,
            sigmas: vec![],
            sweeps: 0,
        }
    }
}

pub fn check_coincidence(
    fa: &CharFamily,
    fb: &CharFamily,
    points: &[Complex64],
    tol: f64,
) -> Result<CoincidenceReport> {
    families_coincide(&fa.family, &fb.family, points, tol)
}

/// Alternating Procrustes search for unitaries τ, σ_k with τΘ_{A,k} = Θ_{B,k}σ_k on the grid.
pub fn families_coincide(
    fa: &ColligationFamily,
    fb: &ColligationFamily,
    points: &[Complex64],
    tol: f64,
) -> Result<CoincidenceReport> {
    if fa.weight() != fb.weight() {
        return Err(Error::WeightMismatch);
    }
    let kk = fa.k_max();
    let p = fa.pair().p();
    if fb.k_max() != kk
        || fb.pair().p() != p
        || (0..=kk).any(|k| fa.steps()[k].u() != fb.steps()[k].u())
    {
        return Ok(CoincidenceReport::structural());
    }
    let eval_tol = (tol * 1e-3).max(1e-15);
    let values = |f: &ColligationFamily| -> Result<Vec<Vec<CMat>>> {
        (0..=kk)
            .into_par_iter()
            .map(|k| {
                points
                    .iter()
                    .map(|&z| transfer_eval(f, k, z, eval_tol))
                    .collect()
            })
            .collect()
    };
    let xa = values(fa)?;
    let yb = values(fb)?;

    let alternate = |tau0: &CMat| -> (CMat, Vec<CMat>, f64, usize) {
        let mut tau = polar_unitary(tau0);
        let mut sigmas: Vec<CMat> = Vec::with_capacity(kk + 1);
        let mut last = f64::INFINITY;
        let mut residual = f64::INFINITY;
        let mut sweeps = 0;
        while sweeps < MAX_SWEEPS {
            sweeps += 1;
            sigmas.clear();
            for k in 0..=kk {
                let u = fa.steps()[k].u();
                let mut m = CMat::zeros(u, u);
                for (x, y) in xa[k].iter().zip(&yb[k]) {
                    m += y.adjoint() * &tau * x;
                }
                sigmas.push(polar_unitary(&m));
            }
            let mut m = CMat::zeros(p, p);
            for k in 0..=kk {
                for (x, y) in xa[k].iter().zip(&yb[k]) {
                    m += y * &sigmas[k] * x.adjoint();
                }
            }
            tau = polar_unitary(&m);
            residual = 0.0;
            for k in 0..=kk {
                for (x, y) in xa[k].iter().zip(&yb[k]) {
                    residual = residual.max(fro_norm(&(&tau * x - y * &sigmas[k])));
                }
            }
            if residual <= tol * 1e-3 || (last - residual).abs() < tol / 10.0 {
                break;
            }
            last = residual;
        }
        (tau, sigmas, residual, sweeps)
    };

    let mut best: Option<(CMat, Vec<CMat>, f64, usize)> = None;
    let mut total = 0;
    for start in kernel_intertwiners(&xa, &yb, points, p) {
        let run = alternate(&start);
        total += run.3;
        if best.as_ref().is_none_or(|b| run.2 < b.2) {
            best = Some(run);
        }
        if best.as_ref().is_some_and(|b| b.2 <= tol) {
            break;
        }
    }
    let (tau, sigmas, residual, _) = best.expect("at least one start");
    Ok(CoincidenceReport {
        coincide: residual <= tol,
        residual,
        tau: Some(tau),
        sigmas,
        sweeps: total,
    })
}

const INTERTWINER_POINTS: usize = 6;
const INTERTWINER_STARTS: usize = 8;

/// Starting points for τ: least-squares solutions of τ K_A(z_i, z_j) = K_B(z_i, z_j) τ
/// over a few distinct grid points. One per null direction, plus seeded mixtures.
fn kernel_intertwiners(
    xa: &[Vec<CMat>],
    yb: &[Vec<CMat>],
    points: &[Complex64],
    p: usize,
) -> Vec<CMat> {
    let mut chosen: Vec<usize> = Vec::new();
    let stride = (points.len() / INTERTWINER_POINTS).max(1);
    for i in (0..points.len()).step_by(stride).chain(0..points.len()) {
        if chosen.len() == INTERTWINER_POINTS {
            break;
        }
        if chosen
            .iter()
            .all(|&j| (points[j] - points[i]).norm() > 1e-12)
        {
            chosen.push(i);
        }
    }
    let mut normal = CMat::zeros(p * p, p * p);
    let id = eye(p);
    for (ka, kb) in xa.iter().zip(yb) {
        for &i in &chosen {
            for &j in &chosen {
                let k_a = &ka[i] * ka[j].adjoint();
                let k_b = &kb[i] * kb[j].adjoint();
                let e = k_a.transpose().kronecker(&id) - id.kronecker(&k_b);
                normal += e.adjoint() * e;
            }
        }
    }
    let eig = herm_eig(&hermitize(&normal));
    let top = eig
        .values
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(f64::MIN_POSITIVE);
    let null = eig
        .values
        .iter()
        .take_while(|&&l| l <= top * 1e-10)
        .count()
        .max(1);
    let unvec = |v: CVec| CMat::from_fn(p, p, |r, c| v[c * p + r]);
    let mut starts: Vec<CMat> = (0..null.min(INTERTWINER_STARTS))
        .map(|j| unvec(eig.vectors.column(j).into_owned()))
        .collect();
    if null > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..INTERTWINER_STARTS {
            let coef = random_gaussian(&mut rng, null, 1);
            starts.push(unvec(eig.vectors.columns(0, null) * coef.column(0)));
        }
    }
    starts
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub residual: f64,
    pub tail_allowance: f64,
}

/// max over grid pairs of ||R_β(zζ̄)I − Σ_{k≤K} (zζ̄)^k Θ_k(z)Θ_k(ζ)* − C R_β(zA) R_β(ζA)* C*||.
pub fn model_roundtrip_residual(
    cf: &CharFamily,
    points: &[Complex64],
    tol: f64,
) -> Result<RoundtripReport> {
    let fam = &cf.family;
    let w = fam.weight();
    let kk = fam.k_max();
    let p = fam.pair().p();
    let eval_tol = (tol * 1e-3).max(1e-15);
    let thetas: Vec<Vec<CMat>> = points
        .par_iter()
        .map(|&z| {
            (0..=kk)
                .map(|k| transfer_eval(fam, k, z, eval_tol))
                .collect()
        })
        .collect::<Result<_>>()?;
    let cres: Vec<CMat> = points
        .par_iter()
        .map(|&z| fam.c_resolvent(0, z))
        .collect::<Result<_>>()?;
    let m = points.len();
    let residual = (0..m * m)
        .into_par_iter()
        .map(|idx| -> Result<f64> {
            let (i, j) = (idx / m, idx % m);
            let x = points[i] * points[j].conj();
            let mut lhs = eye(p) * w.resolvent_scalar(0, x, eval_tol)?;
            let mut xk = c64(1.0, 0.0);
            for k in 0..=kk {
                lhs -= &thetas[i][k] * thetas[j][k].adjoint() * xk;
                xk *= x;
            }
            let rhs = &cres[i] * cres[j].adjoint();
            Ok(op_norm(&(lhs - rhs)))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let r = points.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut peak = 0.0_f64;
    for th in &thetas {
        for (k, t) in th.iter().enumerate() {
            let n = op_norm(t);
            peak = peak.max(w.beta(k).unwrap_or(1.0) * n * n);
        }
    }
    Ok(RoundtripReport {
        residual,
        tail_allowance: peak * weighted_power_tail(w, kk + 1, r * r),
    })
}

/// Σ_{k≥start} x^k / β_k.
fn weighted_power_tail(w: &WeightSequence, start: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if start == 0 { 1.0 } else { 0.0 };
    }
    let len = w.series_len();
    let mut sum = 0.0;
    let mut last = 0.0;
    for k in start..len {
        last = x.powi(k as i32) * w.inv_beta(k).unwrap_or(0.0);
        sum += last;
        if last < 1e-18 * sum {
            return sum * (1.0 + 1e-12);
        }
    }
    sum + last * geometric_tail(w.growth_bound(len - 1) * x)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FunctionalModelReport {
    pub check1: f64,
    pub check2: f64,
    pub check3: f64,
    /// min over unitary σ of ||x_B − B_k σ||
    pub alignment: f64,
    /// (truncation tail of the coordinate sum + ||𝒢 − I||)·||B_k||
    pub allowance: f64,
}

/// Functional-model B_k in X-coordinates, x_B = Σ_{j≤J} (β_{j+k+1}/β_j) A^{*j} C^* Θ_{k,j+1}.
pub fn functional_model_colligation(
    family: &ColligationFamily,
    k: usize,
    order: usize,
    tol: f64,
) -> Result<(FunctionalModelReport, CMat)> {
    let w = family.weight();
    let pair = family.pair();
    let n = pair.n();
    let ident = op_norm(&(family.gramians().get(0).expect("k = 0") - eye(n)));
    if ident > tol {
        return Err(Error::ModelCoordinates(ident));
    }
    let s = family.step(k)?;
    let gk = family.gramians().get(k).ok_or(Error::MissingStep(k))?;
    let gk1 = family
        .gramians()
        .get(k + 1)
        .ok_or(Error::MissingStep(k + 1))?;
    let a = pair.a();
    let c = pair.c();
    let mut xb = CMat::zeros(n, s.u());
    let mut ca = c.clone();
    let mut adj = eye(n);
    let mut pow = eye(n);
    let mut cert = PowerCert::new();
    for j in 0..=order {
        let theta = &ca * &s.b * c64(w.inv_beta_or(j + k + 1)?, 0.0);
        let ratio = w.beta(j + k + 1).ok_or(Error::MissingStep(j + k + 1))? / w.beta(j).unwrap();
        xb += &adj * c.adjoint() * theta * c64(ratio, 0.0);
        ca = &ca * a;
        adj = &adj * a.adjoint();
        pow = &pow * a;
        cert.push(fro_norm(&pow));
    }
    let qn = fro_norm(&ca);
    let g = w.growth_bound(order + 1);
    let geo = [0usize, 8, 64, order]
        .iter()
        .filter_map(|&j| cert.bound(j))
        .map(|(f, th)| f * f * (1.0 + geometric_tail(g * th * th)))
        .fold(f64::INFINITY, f64::min);
    let tail = w
        .inv_beta(order + 1)
        .map(|ib| ib * qn * qn * geo)
        .unwrap_or(f64::INFINITY);
    let bn = op_norm(&s.b);
    let bk = w.inv_beta_or(k)?;
    let check1 = stein_residual(w, k, pair, gk, gk1);
    let check2 = op_norm(&(a.adjoint() * gk1 * &xb + c.adjoint() * &s.d * c64(bk, 0.0)));
    let check3 =
        op_norm(&(xb.adjoint() * gk1 * &xb + s.d.adjoint() * &s.d * c64(bk, 0.0) - eye(s.u())));
    let sigma = polar_unitary(&(s.b.adjoint() * &xb));
    let alignment = op_norm(&(&xb - &s.b * sigma));
    Ok((
        FunctionalModelReport {
            check1,
            check2,
            check3,
            alignment,
            allowance: (tail + ident) * bn,
        },
        xb,
    ))
}

/// Θ(z) = D + z C R_{β,1}(zA) B from the k = 0 Cholesky step.
#[derive(Clone, Debug)]
pub struct WanderingTheta {
    family: ColligationFamily,
}

pub fn wandering_theta(
    w: &WeightSequence,
    pair: &OutputPair,
    rank_tol: f64,
    tol: f64,
) -> Result<WanderingTheta> {
    let g = GramianTable::build(w, pair, 1, tol)?;
    let family = ColligationFamily::from_gramians(w, pair.clone(), g, rank_tol, tol)?;
    Ok(WanderingTheta { family })
}

impl WanderingTheta {
    pub fn b(&self) -> &CMat {
        &self.family.steps()[0].b
    }

    pub fn d(&self) -> &CMat {
        &self.family.steps()[0].d
    }

    pub fn family(&self) -> &ColligationFamily {
        &self.family
    }

    pub fn eval(&self, z: Complex64) -> Result<CMat> {
        transfer_eval(&self.family, 0, z, self.family.tol())
    }

    /// max over grid pairs of ||K_M(z,ζ) − K_{S M}(z,ζ) − Θ(z)Θ(ζ)*||
    pub fn factorization_residual(&self, points: &[Complex64]) -> Result<f64> {
        let kd = crate::kernels::KernelData::from_family(&self.family);
        let m_grid = kd.grid(crate::kernels::KernelKind::M, 0, points)?;
        let s_grid = kd.grid(crate::kernels::KernelKind::Skm, 1, points)?;
        let vals: Vec<CMat> = points
            .iter()
            .map(|&z| self.eval(z))
            .collect::<Result<_>>()?;
        let m = points.len();
        let mut worst = 0.0_f64;
        for i in 0..m {
            for j in 0..m {
                let d = m_grid.at(i, j) - s_grid.at(i, j) - &vals[i] * vals[j].adjoint();
                worst = worst.max(op_norm(&d));
            }
        }
        Ok(worst)
    }
}
