//! Randomized verification suite: one residual-bound criterion per identity.

use std::collections::BTreeMap;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::colligation::{build_family, kernel_identity_residuals, transfer_eval, TransferFamily};
use crate::error::Result;
use crate::hereditary::{
    gamma_binomial, gamma_k_map, gamma_map, stein_residual, GramianTable, OutputPair,
};
use crate::kernels::{
    check_contractive_multiplier, check_inner_family, default_grid, KernelData, KernelKind,
};
use crate::linalg::{
    c64, eye, op_norm, random_gaussian, random_unitary, random_with_radius, CMat, CVec,
};
use crate::model::{
    characteristic_family, check_coincidence, functional_model_colligation,
    model_roundtrip_residual,
};
use crate::syssim::{check_io_isometry, check_ztransform};
use crate::weights::WeightSequence;

pub const CRITERIA: usize = 12;

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub seed: u64,
    pub trials: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 7,
            trials: 20,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

/// β = 1, β_2, β_3 and the non-integer α = 2.5.
pub fn suite_weights() -> Vec<(&'static str, WeightSequence)> {
    vec![
        ("hardy", WeightSequence::hardy(256).expect("valid")),
        (
            "beta_2",
            WeightSequence::beta_alpha(2.0, 256).expect("valid"),
        ),
        (
            "beta_3",
            WeightSequence::beta_alpha(3.0, 256).expect("valid"),
        ),
        (
            "alpha_2.5",
            WeightSequence::beta_alpha(2.5, 256).expect("valid"),
        ),
    ]
}

fn rng_for(cfg: &SuiteConfig, id: usize, salt: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        cfg.seed
            .wrapping_mul(1_000_003)
            .wrapping_add((id * 7919 + salt) as u64),
    )
}

/// Generic pair: n ≤ 8, p ∈ [n/2, n], ρ(A) ∈ [0.3, 0.9].
pub fn random_pair<R: Rng>(rng: &mut R, max_n: usize) -> OutputPair {
    let n = rng.random_range(2..=max_n);
    let p = rng.random_range(n.div_ceil(2)..=n);
    let rho = rng.random_range(0.3..=0.9);
    let a = random_with_radius(rng, n, rho);
    let c = random_gaussian(rng, p, n) / c64((n as f64).sqrt(), 0.0);
    OutputPair::new(a, c).expect("consistent shapes")
}

/// Normal T = U diag(λ) U* with |λ| ≤ r_max: a *-β-hypercontraction for every suite weight.
pub fn random_normal_contraction<R: Rng>(rng: &mut R, n: usize, r_max: f64) -> CMat {
    let u = random_unitary(rng, n);
    let d = CVec::from_fn(n, |_, _| {
        Complex64::from_polar(
            rng.random_range(0.05..r_max),
            rng.random_range(0.0..std::f64::consts::TAU),
        )
    });
    &u * CMat::from_diagonal(&d) * u.adjoint()
}

/// Non-normal T with ||T|| = 0.45.
pub fn random_small_contraction<R: Rng>(rng: &mut R, n: usize) -> CMat {
    let g = random_gaussian(rng, n, n);
    let nrm = op_norm(&g);
    g * c64(0.45 / nrm, 0.0)
}

fn blaschke(a: Complex64, z: Complex64) -> Complex64 {
    (z - a) / (c64(1.0, 0.0) - a.conj() * z)
}

fn random_point<R: Rng>(rng: &mut R, r_max: f64) -> Complex64 {
    Complex64::from_polar(
        rng.random_range(0.0..r_max),
        rng.random_range(0.0..std::f64::consts::TAU),
    )
}

struct Tally {
    metrics: BTreeMap<String, f64>,
}

impl Tally {
    fn new() -> Self {
        Tally {
            metrics: BTreeMap::new(),
        }
    }

    fn max(&mut self, key: &str, v: f64) {
        let e = self
            .metrics
            .entry(key.to_string())
            .or_insert(f64::NEG_INFINITY);
        if v > *e || v.is_nan() {
            *e = v;
        }
    }

    fn min(&mut self, key: &str, v: f64) {
        let e = self.metrics.entry(key.to_string()).or_insert(f64::INFINITY);
        if v < *e || v.is_nan() {
            *e = v;
        }
    }

    fn get(&self, key: &str) -> f64 {
        self.metrics.get(key).copied().unwrap_or(f64::NAN)
    }
}

pub fn criterion_name(id: usize) -> &'static str {
    match id {
        1 => "stein identity",
        2 => "gamma-gramian duality",
        3 => "cholesky colligation residuals",
        4 => "kernel identities",
        5 => "inner family",
        6 => "scalar golden case",
        7 => "beta_n identity",
        8 => "model round trip",
        9 => "coincidence under unitary conjugation",
        10 => "functional-model checks",
        11 => "system/transfer consistency",
        12 => "contractive multiplier",
        _ => "unknown",
    }
}

pub fn run_criterion(id: usize, cfg: &SuiteConfig) -> CriterionResult {
    let start = Instant::now();
    let out = match id {
        1 => c1(cfg),
        2 => c2(cfg),
        3 => c3(cfg),
        4 => c4(cfg),
        5 => c5(cfg),
        6 => c6(cfg),
        7 => c7(cfg),
        8 => c8(cfg),
        9 => c9(cfg),
        10 => c10(cfg),
        11 => c11(cfg),
        12 => c12(cfg),
        _ => Err(crate::Error::InvalidParameter(format!("no criterion {id}"))),
    };
    let seconds = start.elapsed().as_secs_f64();
    match out {
        Ok((passed, t)) => CriterionResult {
            id,
            name: criterion_name(id).into(),
            passed,
            metrics: t.metrics,
            seconds,
            error: None,
        },
        Err(e) => CriterionResult {
            id,
            name: criterion_name(id).into(),
            passed: false,
            metrics: BTreeMap::new(),
            seconds,
            error: Some(e.to_string()),
        },
    }
}

pub fn run_all(cfg: &SuiteConfig) -> Vec<CriterionResult> {
    (1..=CRITERIA).map(|id| run_criterion(id, cfg)).collect()
}

type Outcome = Result<(bool, Tally)>;

fn c1(cfg: &SuiteConfig) -> Outcome {
    let mut t = Tally::new();
    let start = Instant::now();
    for (wi, (_, w)) in suite_weights().iter().enumerate() {
        let mut rng = rng_for(cfg, 1, wi);
        for _ in 0..cfg.trials {
            let pair = random_pair(&mut rng, 8);
            let g = GramianTable::build(w, &pair, 11, 1e-12)?;
            for k in 0..=10 {
                t.max(
                    "stein_residual",
                    stein_residual(w, k, &pair, g.get(k).unwrap(), g.get(k + 1).unwrap()),
                );
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    t.max("seconds", secs);
    Ok((t.get("stein_residual") <= 1e-7 && secs < 5.0, t))
}

fn c2(cfg: &SuiteConfig) -> Outcome {
    let mut t = Tally::new();
    for (wi, (_, w)) in suite_weights().iter().enumerate() {
        let mut rng = rng_for(cfg, 2, wi);
        for _ in 0..cfg.trials {
            let pair = random_pair(&mut rng, 8);
            let g = GramianTable::build(w, &pair, 6, 1e-13)?;
            let g0 = g.get(0).unwrap();
            let cc = pair.c().adjoint() * pair.c();
            t.max(
                "gamma_residual",
                op_norm(&(gamma_map(w, pair.a(), g0, 1e-13)? - cc)),
            );
            for k in 1..=6 {
                let gk = gamma_k_map(w, k, pair.a(), g0, 1e-13)?;
                t.max("gamma_k_residual", op_norm(&(gk - g.get(k).unwrap())));
            }
        }
    }
    Ok((
        t.get("gamma_residual") <= 1e-7 && t.get("gamma_k_residual") <= 1e-7,
        t,
    ))
}

fn c3(cfg: &SuiteConfig) -> Outcome {
    let mut t = Tally::new();
    for (wi, (_, w)) in suite_weights().iter().enumerate() {
        let mut rng = rng_for(cfg, 3, wi);
        for _ in 0..cfg.trials {
            let pair = random_pair(&mut rng, 8);
            let fam = build_family(w, &pair, 10, 1e-10, 1e-13)?;
            for r in fam.residuals() {
                t.max("isometry", r.isometry);
                t.max("coisometry", r.coisometry);
            }
        }
    }
    Ok((t.get("isometry") <= 1e-9 && t.get("coisometry") <= 1e-9, t))
}

fn c4(cfg: &SuiteConfig) -> Outcome {
    let mut t = Tally::new();
    let grid = default_grid();
    for (wi, (_, w)) in suite_weights().iter().enumerate() {
        let mut rng = rng_for(cfg, 4, wi);
        for _ in 0..cfg.trials {
            let pair = random_pair(&mut rng, 6);
            let fam = build_family(w, &pair, 3, 1e-10, 1e-13)?;
            let kd = KernelData::from_family(&fam);
            for k in 0..=2 {
                let r = kernel_identity_residuals(&fam, k, &grid, 1e-14)?;
                t.max("isometric_kernel", r.isometry);
                t.max("coisometric_kernel", r.coisometry);
                let gap = kd.grid(KernelKind::Gap, k, &grid)?;
                let th: Vec<CMat> = grid
                    .iter()
                    .map(|&z| transfer_eval(&fam, k, z, 1e-14))
                    .collect::<Result<_>>()?;
                let m = grid.len();
                for i in 0..m {
                    for j in 0..m {
                        let x = (grid[i] * grid[j].conj()).powu(k as u32);
                        let d = gap.at(i, j) - &th[i] * th[j].adjoint() * x;
                        t.max("gap_factorization", op_norm(&d));
                    }
                }
            }
        }
    }
    Ok((
        t.get("isometric_kernel") <= 1e-7
            && t.get("coisometric_kernel") <= 1e-7
            && t.get("gap_factorization") <= 1e-7,
        t,
    ))
}

fn c5(cfg: &SuiteConfig) -> Outcome {
    let mut t = Tally::new();
    let mut ok = true;
    for (wi, (_, w)) in suite_weights().iter().enumerate() {
        let mut rng = rng_for(cfg, 5, wi);
        for _ in 0..cfg.trials {
            let pair = random_pair(&mut rng, 5);
            let fam = build_family(w, &pair, 8 + 48, 1e-10, 1e-13)?;
            let order = crate::model::default_order(&fam);
            let tf = TransferFamily::new(&fam, order)?;
            let rep = check_inner_family(&fam, &tf, 8, 1e-7)?;
            t.max("isometry", rep.isometry);
            t.max("orthogonality", rep.orthogonality);
            t.max("span_residual", rep.span_residual);
            t.max("span_allowance", rep.span_allowance);
            t.max("span_excess", rep.span_residual - rep.span_allowance);
            ok &= rep.isometry <= 1e-7
                && rep.orthogonality <= 1e-7
                && rep.span_residual <= 1e-6 + rep.span_allowance;
        }
    }
    Ok((ok, t))
}

fn c6(cfg: &SuiteConfig) -> Outcome {
    let mut t = Tally::new();
    let w = WeightSequence::hardy(256)?;
    let cf = characteristic_family(&w, &crate::linalg::scalar(c64(0.5, 0.0)), 2, 1e-10, 1e-10)?;
    let fam = cf.family();
    let mut rng = rng_for(cfg, 6, 0);
    for _ in 0..20 {
        let z = random_point(&mut rng, 0.95);
        let v = transfer_eval(fam, 0, z, 1e-15)?[(0, 0)];
        t.max("interior_error", (v - blaschke(c64(0.5, 0.0), z)).norm());
    }
    let s = fam.step(0)?;
    let (a, b, c, d) = (
        fam.pair().a()[(0, 0)],
        s.b[(0, 0)],
        fam.pair().c()[(0, 0)],
        s.d[(0, 0)],
    );
    for i in 0..16 {
        let z = Complex64::from_polar(1.0, std::f64::consts::TAU * i as f64 / 16.0);
        let v = d + z * c * b / (c64(1.0, 0.0) - z * a);
        t.max("boundary_modulus_error", (v.norm() - 1.0).abs());
    }
    Ok((
        t.get("interior_error") <= 1e-11 && t.get("boundary_modulus_error") <= 1e-10,
        t,
    ))
}

fn c7(cfg: &SuiteConfig) -> Outcome {
    let mut t = Tally::new();
    for n in [2usize, 3] {
        let w = WeightSequence::beta_alpha(n as f64, 256)?;
        let mut rng = rng_for(cfg, 7, n);
        for _ in 0..cfg.trials {
            let dim = rng.random_range(2..=8);
            let g = random_gaussian(&mut rng, dim, dim);
            let a = &g * c64(rng.random_range(0.3..0.95) / op_norm(&g), 0.0);
            let id = eye(dim);
            for k in 0..=5 {
                let lhs = gamma_k_map(&w, k, &a, &id, 1e-13)?;
                let mut rhs = CMat::zeros(dim, dim);
                for l in 0..n {
                    rhs += gamma_binomial(l, &a, &id) * c64(multiset(l, k), 0.0);
                }
                t.max("betan_residual", op_norm(&(lhs - rhs)));
            }
        }
    }
    Ok((t.get("betan_residual") <= 1e-7, t))
}

/// binom(ℓ + k − 1, ℓ), which is [ℓ = 0] at k = 0.
fn multiset(l: usize, k: usize) -> f64 {
    (0..l).fold(1.0, |acc, i| acc * (k + i) as f64 / (i + 1) as f64)
}

fn model_operator<R: Rng>(rng: &mut R, trial: usize) -> CMat {
    let n = rng.random_range(2..=6);
    if trial.is_multiple_of(2) {
        random_normal_contraction(rng, n, 0.8)
    } else {
        random_small_contraction(rng, n)
    }
}

fn c8(cfg: &SuiteConfig) -> Outcome {
    let mut t = Tally::new();
    let mut ok = true;
    let grid: Vec<Complex64> = default_grid()
        .into_iter()
        .filter(|z| z.norm() <= 0.6 + 1e-12)
        .collect();
    for (wi, (_, w)) in suite_weights().iter().enumerate() {
        let mut rng = rng_for(cfg, 8, wi);
        for trial in 0..cfg.trials {
            let tm = model_operator(&mut rng, trial);
            let cf = characteristic_family(w, &tm, 16, 1e-10, 1e-8)?;
            let r = model_roundtrip_residual(&cf, &grid, 1e-8)?;
            t.max("residual", r.residual);
            t.max("tail_allowance", r.tail_allowance);
            t.max("excess", r.residual - r.tail_allowance);
            ok &= r.residual <= 1e-5 + r.tail_allowance;
        }
    }
    Ok((ok, t))
}

fn c9(cfg: &SuiteConfig) -> Outcome {
    let mut t = Tally::new();
    let grid = default_grid();
    let mut ok = true;
    for (wi, (_, w)) in suite_weights().iter().enumerate() {
        let mut rng = rng_for(cfg, 9, wi);
        for trial in 0..cfg.trials {
            let tm = model_operator(&mut rng, trial);
            let n = tm.nrows();
            let om = random_unitary(&mut rng, n);
            let a = characteristic_family(w, &tm, 8, 1e-10, 1e-8)?;
            let b = characteristic_family(w, &(&om * &tm * om.adjoint()), 8, 1e-10, 1e-8)?;
            let same = check_coincidence(&a, &b, &grid, 1e-7)?;
            t.max("conjugate_residual", same.residual);
            ok &= same.coincide && same.residual <= 1e-7;
            let shift = random_normal_contraction(&mut rng, n, 0.8);
            let other = (&tm + shift) * c64(0.5, 0.0);
            let c = characteristic_family(w, &other, 8, 1e-10, 1e-8)?;
            let diff = check_coincidence(&a, &c, &grid, 1e-7)?;
            t.min("distinct_residual", diff.residual);
            ok &= !diff.coincide;
        }
    }
    Ok((ok, t))
}

fn c10(cfg: &SuiteConfig) -> Outcome {
    let mut t = Tally::new();
    let mut ok = true;
    for (wi, (_, w)) in suite_weights().iter().enumerate() {
        let mut rng = rng_for(cfg, 10, wi);
        for trial in 0..cfg.trials {
            let tm = model_operator(&mut rng, trial);
            let cf = characteristic_family(w, &tm, 6, 1e-10, 1e-8)?;
            let order = crate::model::default_order(cf.family());
            for k in 0..=5 {
                let (r, _) = functional_model_colligation(cf.family(), k, order, 1e-8)?;
                t.max("check1", r.check1);
                t.max("check2", r.check2);
                t.max("check3", r.check3);
                t.max("alignment", r.alignment);
                t.max("allowance", r.allowance);
                ok &= r.check1 <= 1e-7
                    && r.check2 <= 1e-7
                    && r.check3 <= 1e-7
                    && r.alignment <= 1e-5 + r.allowance;
            }
        }
    }
    Ok((ok, t))
}

fn c11(cfg: &SuiteConfig) -> Outcome {
    let mut t = Tally::new();
    let mut ok = true;
    let horizon = 24;
    for (wi, (_, w)) in suite_weights().iter().enumerate() {
        let mut rng = rng_for(cfg, 11, wi);
        for trial in 0..cfg.trials {
            let pair = random_pair(&mut rng, 6);
            let fam = build_family(w, &pair, horizon, 1e-10, 1e-13)?;
            let tf = TransferFamily::new(&fam, horizon)?;
            let x0 = random_gaussian(&mut rng, pair.n(), 1)
                .column(0)
                .into_owned();
            let inputs: Vec<CVec> = (0..horizon)
                .map(|k| {
                    random_gaussian(&mut rng, fam.steps()[k].u(), 1)
                        .column(0)
                        .into_owned()
                })
                .collect();
            let z = check_ztransform(&fam, &tf, &x0, &inputs, horizon)?;
            t.max("ztransform_residual", z);
            let io =
                check_io_isometry(&fam, 1, horizon / 2, horizon, cfg.seed + trial as u64, 1e-6)?;
            t.max("io_defect", io.defect);
            t.max("io_tail_allowance", io.tail_allowance);
            t.max("io_corrected_defect", io.corrected_defect);
            ok &= z <= 1e-9 && io.isometric;
        }
    }
    Ok((ok, t))
}

fn c12(cfg: &SuiteConfig) -> Outcome {
    let mut t = Tally::new();
    let grid = default_grid();
    let mut ok = true;
    for (wi, (_, w)) in suite_weights().iter().enumerate() {
        let mut rng = rng_for(cfg, 12, wi);
        for _ in 0..cfg.trials {
            let a = random_point(&mut rng, 0.9);
            let theta =
                move |z: Complex64| -> Result<CMat> { Ok(crate::linalg::scalar(blaschke(a, z))) };
            let v = check_contractive_multiplier(w, &theta, &grid, 1e-8)?;
            t.min("blaschke_lambda_min_scaled", v.lambda_min_scaled);
            t.max("blaschke_sup_norm", v.sup_norm);
            ok &= v.contractive;
        }
        let big = |_: Complex64| -> Result<CMat> { Ok(eye(2) * c64(1.1, 0.0)) };
        let v = check_contractive_multiplier(w, &big, &grid, 1e-8)?;
        t.max("scaled_identity_sup_norm", v.sup_norm);
        ok &= !v.contractive;
    }
    Ok((ok, t))
}
