//! Stopping rule and power-decay certificates shared by the adaptive series.

/// Stop once `QUIET` consecutive terms fall below tol/10 and the tail bound is below tol.
pub(crate) struct StopRule {
    tol: f64,
    quiet: usize,
}

pub(crate) const QUIET: usize = 5;

impl StopRule {
    pub fn new(tol: f64) -> Self {
        StopRule { tol, quiet: 0 }
    }

    pub fn observe(&mut self, term: f64, tail: f64) -> bool {
        if term < self.tol / 10.0 {
            self.quiet += 1;
        } else {
            self.quiet = 0;
        }
        self.quiet >= QUIET && tail <= self.tol
    }
}

/// Bound ||X^t|| <= F theta^t for all t >= 0 from observed norms of X^i.
///
/// With q = ||X^m|| < 1 and K = max_{r<m} ||X^r||, submultiplicativity gives
/// ||X^t|| <= K q^{floor(t/m)} <= (K/q) (q^{1/m})^t.
#[derive(Clone, Debug, Default)]
pub(crate) struct PowerCert {
    norms: Vec<f64>,
    running_max: Vec<f64>,
    candidates: Vec<(f64, f64)>,
    nilpotent_at: Option<usize>,
}

impl PowerCert {
    pub fn new() -> Self {
        let mut c = PowerCert::default();
        c.norms.push(1.0);
        c.running_max.push(1.0);
        c
    }

    /// Record the norm (any submultiplicative upper bound) of the next power.
    pub fn push(&mut self, norm: f64) {
        let i = self.norms.len();
        let k = *self.running_max.last().unwrap();
        if norm == 0.0 && self.nilpotent_at.is_none() {
            self.nilpotent_at = Some(i);
        } else if norm < 1.0 {
            self.candidates.push((norm.powf(1.0 / i as f64), k / norm));
        }
        self.norms.push(norm);
        self.running_max.push(k.max(norm));
    }

    pub fn nilpotent_at(&self) -> Option<usize> {
        self.nilpotent_at
    }

    /// Best (F, theta) for a tail that starts around index `j`.
    pub fn bound(&self, j: usize) -> Option<(f64, f64)> {
        self.candidates
            .iter()
            .map(|&(theta, f)| (f, theta))
            .min_by(|a, b| {
                let va = a.0.ln() + j as f64 * a.1.ln();
                let vb = b.0.ln() + j as f64 * b.1.ln();
                va.total_cmp(&vb)
            })
    }
}

/// Sum over s >= 1 of x^s, infinite when x >= 1.
pub(crate) fn geometric_tail(x: f64) -> f64 {
    if x < 1.0 {
        x / (1.0 - x)
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stop_rule_needs_quiet_run_and_small_tail() {
        let mut s = StopRule::new(1e-6);
        for _ in 0..QUIET - 1 {
            assert!(!s.observe(1e-9, 0.0));
        }
        assert!(!s.observe(1e-9, 1e-3));
        assert!(s.observe(1e-9, 1e-9));
        assert!(!s.observe(1.0, 0.0));
    }

    #[test]
    fn nilpotent_power_is_flagged() {
        let mut c = PowerCert::new();
        c.push(2.0);
        c.push(0.0);
        assert_eq!(c.nilpotent_at(), Some(2));
        assert!(c.bound(0).is_none());
    }

    #[test]
    fn geometric_tail_values() {
        assert!((geometric_tail(0.5) - 1.0).abs() < 1e-15);
        assert!(geometric_tail(1.0).is_infinite());
    }

    proptest! {
        #[test]
        fn certificate_dominates_matrix_power_norms(
            r in 0.05f64..0.95,
            k in 0.0f64..20.0,
            seen in 1usize..40,
            j in 0usize..200,
        ) {
            use crate::linalg::{c64, eye, op_norm, CMat};
            let x = CMat::from_row_slice(2, 2, &[c64(r, 0.0), c64(k, 0.0), c64(0.0, 0.0), c64(r, 0.0)]);
            let mut norms = vec![1.0];
            let mut p = eye(2);
            for _ in 0..300 {
                p = &p * &x;
                norms.push(op_norm(&p));
            }
            let mut c = PowerCert::new();
            for &n in &norms[1..=seen] {
                c.push(n);
            }
            if let Some((f, theta)) = c.bound(j) {
                prop_assert!(theta < 1.0);
                for (t, &n) in norms.iter().enumerate() {
                    prop_assert!(n <= f * theta.powi(t as i32) * (1.0 + 1e-9), "t = {}", t);
                }
            }
        }
    }
}
