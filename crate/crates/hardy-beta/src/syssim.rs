//! Time-domain simulation of the weighted time-varying system and its
//! frequency-domain cross-checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colligation::{ColligationFamily, TransferFamily};
use crate::error::{Error, Result};
use crate::hereditary::{gramian, observability_coeffs};
use crate::linalg::{c64, random_gaussian, CMat, CVec};

/// x(0..=T), y(0..T), u(0..T).
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<CVec>,
    pub outputs: Vec<CVec>,
    pub inputs: Vec<CVec>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.outputs.len()
    }

    /// max_j of the state and output deviations from the closed forms
    /// x(j) = β_j^{-1}(A^j x(0) + Σ_{ℓ<j} A^{j−ℓ−1} B_ℓ u(ℓ)),
    /// y(j) = β_j^{-1}(C A^j x(0) + Σ_{ℓ<j} C A^{j−ℓ−1} B_ℓ u(ℓ) + D_j u(j)).
    pub fn closed_form_residual(&self, family: &ColligationFamily) -> Result<f64> {
        let w = family.weight();
        let a = family.pair().a();
        let c = family.pair().c();
        let mut worst = 0.0_f64;
        for j in 0..self.states.len() {
            let mut v = self.states[0].clone();
            for _ in 0..j {
                v = a * v;
            }
            for l in 0..j.min(self.inputs.len()) {
                let mut t = &family.step(l)?.b * &self.inputs[l];
                for _ in 0..j - l - 1 {
                    t = a * t;
                }
                v += t;
            }
            let ib = w.inv_beta_or(j)?;
            worst = worst.max((&v * c64(ib, 0.0) - &self.states[j]).norm());
            if j < self.outputs.len() {
                let y = (c * &v + &family.step(j)?.d * &self.inputs[j]) * c64(ib, 0.0);
                worst = worst.max((y - &self.outputs[j]).norm());
            }
        }
        Ok(worst)
    }
}

fn padded_inputs(family: &ColligationFamily, inputs: &[CVec], steps: usize) -> Result<Vec<CVec>> {
    if inputs.len() > steps {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs for {steps} steps",
            inputs.len()
        )));
    }
    (0..steps)
        .map(|j| {
            let u = family.step(j)?.u();
            match inputs.get(j) {
                Some(v) if v.len() != u => Err(Error::DimensionMismatch(format!(
                    "input {j} has length {}, U_{j} has dimension {u}",
                    v.len()
                ))),
                Some(v) => Ok(v.clone()),
                None => Ok(CVec::zeros(u)),
            }
        })
        .collect()
}

/// x(j+1) = (β_j/β_{j+1}) A x(j) + β_{j+1}^{-1} B_j u(j),  y(j) = C x(j) + β_j^{-1} D_j u(j).
pub fn simulate(
    family: &ColligationFamily,
    x0: &CVec,
    inputs: &[CVec],
    steps: usize,
) -> Result<Trajectory> {
    let w = family.weight();
    let pair = family.pair();
    if x0.len() != pair.n() {
        return Err(Error::DimensionMismatch(format!(
            "x0 has length {}, state dimension is {}",
            x0.len(),
            pair.n()
        )));
    }
    let inputs = padded_inputs(family, inputs, steps)?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut outputs = Vec::with_capacity(steps);
    states.push(x0.clone());
    for j in 0..steps {
        let s = family.step(j)?;
        let bj = w.beta(j).ok_or(Error::MissingStep(j))?;
        let bj1 = w.beta(j + 1).ok_or(Error::MissingStep(j + 1))?;
        let x = &states[j];
        outputs.push(pair.c() * x + &s.d * &inputs[j] * c64(1.0 / bj, 0.0));
        let next = pair.a() * x * c64(bj / bj1, 0.0) + &s.b * &inputs[j] * c64(1.0 / bj1, 0.0);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        outputs,
        inputs,
    })
}

/// Block lower-triangular input-output matrix with its ragged column offsets.
#[derive(Clone, Debug)]
pub struct IoMatrix {
    pub matrix: CMat,
    /// column offset of block j; the last entry is the total width
    pub col_offsets: Vec<usize>,
    pub p: usize,
}

impl IoMatrix {
    /// Concatenate per-step inputs into the stacked input vector.
    pub fn stack(&self, inputs: &[CVec]) -> Result<CVec> {
        let steps = self.col_offsets.len() - 1;
        let mut v = CVec::zeros(self.col_offsets[steps]);
        for j in 0..steps {
            let width = self.col_offsets[j + 1] - self.col_offsets[j];
            match inputs.get(j) {
                Some(u) if u.len() != width => {
                    return Err(Error::DimensionMismatch(format!("input {j}")))
                }
                Some(u) => v.rows_mut(self.col_offsets[j], width).copy_from(u),
                None => {}
            }
        }
        Ok(v)
    }
}

/// [T]_{i,i} = β_i^{-1} D_i, [T]_{i,j} = β_i^{-1} C A^{i−1−j} B_j for i > j, zero above.
pub fn io_matrix(family: &ColligationFamily, steps: usize) -> Result<IoMatrix> {
    let w = family.weight();
    let pair = family.pair();
    let p = pair.p();
    let mut col_offsets = vec![0];
    for j in 0..steps {
        col_offsets.push(col_offsets[j] + family.step(j)?.u());
    }
    let mut m = CMat::zeros(p * steps, col_offsets[steps]);
    let obs = observability_coeffs(w, 0, pair, steps)?;
    for j in 0..steps {
        let s = family.step(j)?;
        let u = s.u();
        let ib = w.inv_beta_or(j)?;
        m.view_mut((j * p, col_offsets[j]), (p, u))
            .copy_from(&(&s.d * c64(ib, 0.0)));
        for i in j + 1..steps {
            let ca = &obs[i - 1 - j] * c64(w.beta(i - 1 - j).unwrap(), 0.0);
            let blk = ca * &s.b * c64(w.inv_beta_or(i)?, 0.0);
            m.view_mut((i * p, col_offsets[j]), (p, u)).copy_from(&blk);
        }
    }
    Ok(IoMatrix {
        matrix: m,
        col_offsets,
        p,
    })
}

/// max_{j≤J} ||y(j) − [β_j^{-1} C A^j x0 + Σ_{k≤j} Θ_{k,j−k} u(k)]||.
pub fn check_ztransform(
    family: &ColligationFamily,
    transfer: &TransferFamily,
    x0: &CVec,
    inputs: &[CVec],
    horizon: usize,
) -> Result<f64> {
    if transfer.order() + 1 < horizon {
        return Err(Error::Truncation(format!(
            "Taylor order {} below horizon {horizon}",
            transfer.order()
        )));
    }
    let traj = simulate(family, x0, inputs, horizon)?;
    let obs = observability_coeffs(family.weight(), 0, family.pair(), horizon)?;
    let mut worst = 0.0_f64;
    for j in 0..horizon {
        let mut y = &obs[j] * x0;
        for k in 0..=j.min(traj.inputs.len().saturating_sub(1)) {
            if k > transfer.k_max() {
                if traj.inputs[k].iter().any(|z| z.norm() != 0.0) {
                    return Err(Error::MissingStep(k));
                }
                continue;
            }
            y += transfer.coeff(k, j - k) * &traj.inputs[k];
        }
        worst = worst.max((y - &traj.outputs[j]).norm());
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoIsometryReport {
    /// max over trials of |Σ_{j<H} β_j ||y(j)||² − Σ ||u(k)||²|
    pub defect: f64,
    /// max over trials of Σ_{j≥H} β_j ||y(j)||²
    pub tail_allowance: f64,
    /// max over trials of |Σ_{j<H} β_j ||y(j)||² + tail − Σ ||u(k)||²|
    pub corrected_defect: f64,
    pub isometric: bool,
}

/// Random unit-energy inputs on steps 0..support, zero initial state, outputs to the horizon.
pub fn check_io_isometry(
    family: &ColligationFamily,
    trials: usize,
    support: usize,
    horizon: usize,
    seed: u64,
    tol: f64,
) -> Result<IoIsometryReport> {
    if support > horizon || support == 0 {
        return Err(Error::InvalidParameter(format!(
            "input support {support} must lie in 1..={horizon}"
        )));
    }
    let w = family.weight();
    let pair = family.pair();
    let n = pair.n();
    let g_tail = gramian(w, horizon, pair, (tol * 1e-3).max(1e-15))?.value;
    let results: Vec<(f64, f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            let mut inputs: Vec<CVec> = (0..support)
                .map(|j| {
                    Ok(random_gaussian(&mut rng, family.step(j)?.u(), 1)
                        .column(0)
                        .into_owned())
                })
                .collect::<Result<_>>()?;
            let energy: f64 = inputs.iter().map(|u| u.norm_squared()).sum();
            if energy > 0.0 {
                for u in &mut inputs {
                    *u /= c64(energy.sqrt(), 0.0);
                }
            }
            let traj = simulate(family, &CVec::zeros(n), &inputs, horizon)?;
            let out: f64 = traj
                .outputs
                .iter()
                .enumerate()
                .map(|(j, y)| w.beta(j).unwrap() * y.norm_squared())
                .sum();
            let uin: f64 = inputs.iter().map(|u| u.norm_squared()).sum();
            let v = &traj.states[horizon]
                * c64(w.beta(horizon).ok_or(Error::MissingStep(horizon))?, 0.0);
            let tail = (v.adjoint() * &g_tail * &v)[(0, 0)].re.max(0.0);
            Ok(((out - uin).abs(), tail, (out + tail - uin).abs()))
        })
        .collect::<Result<_>>()?;
    let defect = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let tail_allowance = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let corrected_defect = results.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(IoIsometryReport {
        defect,
        tail_allowance,
        corrected_defect,
        isometric: defect <= tol + tail_allowance && corrected_defect <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colligation::build_family;
    use crate::hereditary::OutputPair;
    use crate::linalg::random_with_radius;
    use crate::weights::WeightSequence;
    use proptest::prelude::*;

    fn family(
        w: &WeightSequence,
        seed: u64,
        n: usize,
        p: usize,
        k_max: usize,
    ) -> ColligationFamily {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_with_radius(&mut rng, n, 0.6);
        let pair = OutputPair::new(a, random_gaussian(&mut rng, p, n)).unwrap();
        build_family(w, &pair, k_max, 1e-10, 1e-13).unwrap()
    }

    fn random_inputs(fam: &ColligationFamily, seed: u64, steps: usize) -> Vec<CVec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..steps)
            .map(|j| {
                random_gaussian(&mut rng, fam.step(j).unwrap().u(), 1)
                    .column(0)
                    .into_owned()
            })
            .collect()
    }

    fn x0(n: usize, seed: u64) -> CVec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_gaussian(&mut rng, n, 1).column(0).into_owned()
    }

    #[test]
    fn zero_input_constant_weight() {
        let w = WeightSequence::hardy(64).unwrap();
        let fam = family(&w, 1, 3, 2, 10);
        let x = x0(3, 2);
        let t = simulate(&fam, &x, &[], 10).unwrap();
        let mut ax = x.clone();
        for j in 0..10 {
            assert!((fam.pair().c() * &ax - &t.outputs[j]).norm() < 1e-13);
            ax = fam.pair().a() * ax;
        }
        assert_eq!(t.steps(), 10);
        assert_eq!(t.states.len(), 11);
    }

    #[test]
    fn impulse_response() {
        let w = WeightSequence::beta_alpha(2.5, 64).unwrap();
        let fam = family(&w, 3, 2, 1, 8);
        let u = x0(fam.step(0).unwrap().u(), 4);
        let t = simulate(&fam, &CVec::zeros(2), std::slice::from_ref(&u), 8).unwrap();
        let s0 = fam.step(0).unwrap();
        assert!((&s0.d * &u - &t.outputs[0]).norm() < 1e-14);
        let mut v = &s0.b * &u;
        for j in 1..8 {
            let want = fam.pair().c() * &v * c64(w.inv_beta(j).unwrap(), 0.0);
            assert!((want - &t.outputs[j]).norm() < 1e-13);
            v = fam.pair().a() * v;
        }
    }

    #[test]
    fn observation_map_is_zero_input_output() {
        let w = WeightSequence::beta_alpha(3.0, 64).unwrap();
        let fam = family(&w, 5, 3, 2, 12);
        let x = x0(3, 6);
        let t = simulate(&fam, &x, &[], 12).unwrap();
        let obs = observability_coeffs(&w, 0, fam.pair(), 11).unwrap();
        for (j, o) in obs.iter().enumerate() {
            assert!((o * &x - &t.outputs[j]).norm() < 1e-13);
        }
    }

    #[test]
    fn io_matrix_structure() {
        let w = WeightSequence::beta_alpha(2.0, 64).unwrap();
        let fam = family(&w, 7, 3, 2, 6);
        let io = io_matrix(&fam, 6).unwrap();
        let d0 = &fam.step(0).unwrap().d;
        assert_eq!(io.matrix.view((0, 0), (2, d0.ncols())).into_owned(), *d0);
        assert_eq!(io.col_offsets.len(), 7);
        for i in 0..6 {
            for j in i + 1..6 {
                let w = io.col_offsets[j + 1] - io.col_offsets[j];
                assert!(io
                    .matrix
                    .view((i * 2, io.col_offsets[j]), (2, w))
                    .iter()
                    .all(|z| z.norm() == 0.0));
            }
        }
        let u = random_inputs(&fam, 8, 6);
        let y = &io.matrix * io.stack(&u).unwrap();
        let t = simulate(&fam, &CVec::zeros(3), &u, 6).unwrap();
        for j in 0..6 {
            assert!((y.rows(j * 2, 2) - &t.outputs[j]).norm() < 1e-10);
        }
        assert!(io.stack(&[CVec::zeros(7)]).is_err());
    }

    #[test]
    fn constant_weight_io_matrix_is_block_toeplitz() {
        let w = WeightSequence::hardy(64).unwrap();
        let fam = family(&w, 9, 2, 1, 5);
        let io = io_matrix(&fam, 5).unwrap();
        let u = fam.step(0).unwrap().u();
        for i in 1..5 {
            for j in 1..=i {
                let a = io.matrix.view((i, io.col_offsets[j]), (1, u)).into_owned();
                let b = io
                    .matrix
                    .view((i - 1, io.col_offsets[j - 1]), (1, u))
                    .into_owned();
                assert!((a - b).norm() < 1e-12, "({i}, {j})");
            }
        }
    }

    #[test]
    fn ztransform_matches_simulation() {
        for w in [
            WeightSequence::hardy(256).unwrap(),
            WeightSequence::beta_alpha(2.5, 256).unwrap(),
        ] {
            let fam = family(&w, 11, 3, 2, 30);
            let tf = TransferFamily::new(&fam, 40).unwrap();
            let u = random_inputs(&fam, 12, 9);
            let r = check_ztransform(&fam, &tf, &x0(3, 13), &u, 30).unwrap();
            assert!(r <= 1e-10, "{r:e}");
            let short = TransferFamily::new(&fam, 10).unwrap();
            assert!(matches!(
                check_ztransform(&fam, &short, &x0(3, 13), &u, 30),
                Err(Error::Truncation(_))
            ));
        }
    }

    #[test]
    fn io_isometry_and_its_failure() {
        let w = WeightSequence::beta_alpha(2.0, 512).unwrap();
        let fam = family(&w, 14, 3, 1, 150);
        let r = check_io_isometry(&fam, 8, 5, 150, 1, 1e-9).unwrap();
        assert!(r.isometric && r.corrected_defect <= 1e-9, "{r:?}");
        let s = fam.step(0).unwrap().clone();
        let bad = fam.with_step(0, s.b.clone(), &s.d * c64(2.0, 0.0)).unwrap();
        let rb = check_io_isometry(&bad, 8, 5, 150, 1, 1e-9).unwrap();
        assert!(!rb.isometric && rb.corrected_defect > 1e-3);
        assert!(matches!(
            check_io_isometry(&fam, 1, 0, 10, 1, 1e-9),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            check_io_isometry(&fam, 1, 11, 10, 1, 1e-9),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn shape_errors() {
        let w = WeightSequence::hardy(64).unwrap();
        let fam = family(&w, 15, 2, 1, 3);
        assert!(matches!(
            simulate(&fam, &CVec::zeros(3), &[], 2),
            Err(Error::DimensionMismatch(_))
        ));
        let bad_u = vec![CVec::zeros(fam.step(0).unwrap().u() + 1)];
        assert!(matches!(
            simulate(&fam, &CVec::zeros(2), &bad_u, 2),
            Err(Error::DimensionMismatch(_))
        ));
        let many = random_inputs(&fam, 1, 3);
        assert!(matches!(
            simulate(&fam, &CVec::zeros(2), &many, 2),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            simulate(&fam, &CVec::zeros(2), &[], 5),
            Err(Error::MissingStep(4))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn closed_forms_and_causality(alpha in prop_oneof![Just(1.0), Just(2.0), Just(2.5)], seed in any::<u64>(), n in 1usize..4, p in 1usize..3, cut in 0usize..10) {
            let w = if alpha == 1.0 { WeightSequence::hardy(64).unwrap() } else { WeightSequence::beta_alpha(alpha, 64).unwrap() };
            let fam = family(&w, seed, n, p, 10);
            let u = random_inputs(&fam, seed ^ 1, 10);
            let x = x0(n, seed ^ 2);
            let t = simulate(&fam, &x, &u, 10).unwrap();
            prop_assert!(t.closed_form_residual(&fam).unwrap() <= 1e-10);
            let mut v = u.clone();
            for item in v.iter_mut().skip(cut + 1) {
                *item *= c64(-3.0, 1.0);
            }
            let t2 = simulate(&fam, &x, &v, 10).unwrap();
            for j in 0..=cut {
                prop_assert_eq!(&t.outputs[j], &t2.outputs[j]);
            }
        }
    }
}
