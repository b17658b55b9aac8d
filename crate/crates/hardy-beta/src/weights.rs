//! Weight sequences β and the scalar coefficient tables derived from them.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{geometric_tail, StopRule};

pub const DEFAULT_TRUNC: usize = 256;

/// Minimum length of the reciprocal-weight table used by the matrix series.
const MIN_SERIES_BASE: usize = 256;

fn default_trunc() -> usize {
    DEFAULT_TRUNC
}

/// JSON descriptor of a weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    Hardy {
        #[serde(default = "default_trunc")]
        n: usize,
    },
    BetaAlpha {
        alpha: f64,
        #[serde(default = "default_trunc")]
        n: usize,
    },
    Custom {
        betas: Vec<f64>,
    },
}

impl WeightSpec {
    pub fn build(&self) -> Result<WeightSequence> {
        match self {
            WeightSpec::Hardy { n } => WeightSequence::hardy(*n),
            WeightSpec::BetaAlpha { alpha, n } => WeightSequence::beta_alpha(*alpha, *n),
            WeightSpec::Custom { betas } => WeightSequence::custom(betas),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    Hardy,
    BetaAlpha { alpha: f64 },
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WienerVerdict {
    Summable,
    Inconclusive,
    Diverging,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WienerReport {
    pub partial_sum: f64,
    pub tail_estimate: f64,
    pub ratio_estimate: f64,
    pub verdict: WienerVerdict,
}

/// An admissible weight β_0 = 1 ≥ β_1 ≥ ... with 1 ≤ β_j/β_{j+1} ≤ M.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSequence {
    kind: WeightKind,
    betas: Vec<f64>,
    inv_ext: Vec<f64>,
    growth: Vec<f64>,
    ratio_bound: f64,
    c: Vec<f64>,
}

impl WeightSequence {
    /// β_j = 1 for all j.
    pub fn hardy(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("trunc_len must be >= 1".into()));
        }
        let ext = 10 * n.max(MIN_SERIES_BASE);
        Ok(Self::assemble(
            WeightKind::Hardy,
            vec![1.0; n + 1],
            vec![1.0; ext + 1],
        ))
    }

    /// β_k = k!Γ(α)/Γ(α+k) via β_{k+1} = β_k (k+1)/(α+k).
    pub fn beta_alpha(alpha: f64, n: usize) -> Result<Self> {
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha must exceed 1, got {alpha}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("trunc_len must be >= 1".into()));
        }
        let ext = 10 * n.max(MIN_SERIES_BASE);
        let mut all = Vec::with_capacity(ext + 1);
        let mut b = 1.0_f64;
        for k in 0..=ext {
            all.push(b);
            b *= (k as f64 + 1.0) / (alpha + k as f64);
        }
        let inv = all.iter().map(|b| 1.0 / b).collect();
        all.truncate(n + 1);
        Ok(Self::assemble(WeightKind::BetaAlpha { alpha }, all, inv))
    }

    /// User-supplied β_0..β_N.
    pub fn custom(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidParameter("empty weight".into()));
        }
        if betas[0] != 1.0 {
            return Err(Error::Normalization(format!("beta_0 = {} != 1", betas[0])));
        }
        for (j, &b) in betas.iter().enumerate() {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::Admissibility(format!(
                    "beta_{j} = {b} is not positive"
                )));
            }
        }
        for j in 0..betas.len() - 1 {
            if betas[j] < betas[j + 1] {
                return Err(Error::Admissibility(format!(
                    "beta_{j} = {} < beta_{} = {}",
                    betas[j],
                    j + 1,
                    betas[j + 1]
                )));
            }
        }
        let inv = betas.iter().map(|b| 1.0 / b).collect();
        Ok(Self::assemble(WeightKind::Custom, betas.to_vec(), inv))
    }

    fn assemble(kind: WeightKind, betas: Vec<f64>, inv_ext: Vec<f64>) -> Self {
        let ratio_bound = betas
            .windows(2)
            .map(|w| w[0] / w[1])
            .fold(1.0_f64, f64::max);
        let len = inv_ext.len();
        let mut growth = vec![1.0; len];
        let mut running = 1.0_f64;
        for j in (0..len.saturating_sub(1)).rev() {
            running = running.max(inv_ext[j + 1] / inv_ext[j]);
            growth[j] = running;
        }
        if len >= 2 {
            growth[len - 1] = growth[len - 1 - (len - 1) / 4];
        }
        let c = match kind {
            WeightKind::Hardy => binomial_coeffs(1.0, betas.len()),
            WeightKind::BetaAlpha { alpha } => binomial_coeffs(alpha, betas.len()),
            WeightKind::Custom => reciprocal_recursion(&betas),
        };
        WeightSequence {
            kind,
            betas,
            inv_ext,
            growth,
            ratio_bound,
            c,
        }
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn spec(&self) -> WeightSpec {
        match self.kind {
            WeightKind::Hardy => WeightSpec::Hardy {
                n: self.trunc_len(),
            },
            WeightKind::BetaAlpha { alpha } => WeightSpec::BetaAlpha {
                alpha,
                n: self.trunc_len(),
            },
            WeightKind::Custom => WeightSpec::Custom {
                betas: self.betas.clone(),
            },
        }
    }

    pub fn trunc_len(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn ratio_bound(&self) -> f64 {
        self.ratio_bound
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// β_j from the stored table or, for closed-form kinds, its extension.
    pub fn beta(&self, j: usize) -> Option<f64> {
        self.inv_beta(j).map(|x| 1.0 / x)
    }

    pub fn inv_beta(&self, j: usize) -> Option<f64> {
        if j < self.betas.len() {
            Some(1.0 / self.betas[j])
        } else {
            self.inv_ext.get(j).copied()
        }
    }

    pub(crate) fn inv_beta_or(&self, j: usize) -> Result<f64> {
        self.inv_beta(j).ok_or_else(|| {
            Error::Truncation(format!(
                "beta_{j} requested beyond available length {}",
                self.series_len()
            ))
        })
    }

    /// Number of reciprocal weights available to the matrix series.
    pub fn series_len(&self) -> usize {
        self.inv_ext.len()
    }

    /// Upper bound on β_i/β_{i+1} for all i ≥ j.
    pub fn growth_bound(&self, j: usize) -> f64 {
        let last = self.growth.len() - 1;
        self.growth[j.min(last)]
    }

    pub fn c_coeffs(&self) -> &[f64] {
        &self.c
    }

    pub fn reciprocal_coeffs(&self, n: usize) -> Result<Vec<f64>> {
        if n > self.trunc_len() {
            return Err(Error::Truncation(format!(
                "c_{n} requested, trunc_len = {}",
                self.trunc_len()
            )));
        }
        Ok(self.c[..=n].to_vec())
    }

    pub fn wiener_report(&self, n: usize) -> Result<WienerReport> {
        if n < 8 {
            return Err(Error::InvalidParameter("wiener_report needs N >= 8".into()));
        }
        let c = self.reciprocal_coeffs(n)?;
        Ok(wiener_from_coeffs(&c))
    }

    /// (β_{k+j}^{-1})_{j ≤ N}.
    pub fn shifted_resolvent_coeffs(&self, k: usize, n: usize) -> Result<Vec<f64>> {
        if k + n > self.trunc_len() {
            return Err(Error::Truncation(format!(
                "k + N = {} exceeds trunc_len {}",
                k + n,
                self.trunc_len()
            )));
        }
        Ok((0..=n).map(|j| 1.0 / self.betas[k + j]).collect())
    }

    /// d^{(k)}_j = −Σ_{ℓ=1}^{k} c_{j+ℓ}/β_{k−ℓ}, the coefficients of R_{β,k}/R_β.
    pub fn gamma_k_coeffs(&self, k: usize, n: usize) -> Result<Vec<f64>> {
        if k == 0 {
            let mut d = vec![0.0; n + 1];
            d[0] = 1.0;
            return Ok(d);
        }
        if n + k > self.trunc_len() {
            return Err(Error::Truncation(format!(
                "gamma_k_coeffs needs c up to {}, trunc_len = {}",
                n + k,
                self.trunc_len()
            )));
        }
        Ok((0..=n)
            .map(|j| {
                -(1..=k)
                    .map(|l| self.c[j + l] / self.betas[k - l])
                    .sum::<f64>()
            })
            .collect())
    }

    /// Scalar R_{β,k}(x) = Σ_j β_{k+j}^{-1} x^j for |x| < 1.
    pub fn resolvent_scalar(&self, k: usize, x: Complex64, tol: f64) -> Result<Complex64> {
        let ax = x.norm();
        if ax >= 1.0 {
            return Err(Error::Divergence(ax));
        }
        let mut sum = Complex64::new(0.0, 0.0);
        let mut pow = Complex64::new(1.0, 0.0);
        let mut rule = StopRule::new(tol);
        let avail = self.series_len().saturating_sub(k);
        for j in 0..avail {
            let b = self.inv_ext_at(k + j);
            sum += pow * b;
            let term = b * ax.powi(j as i32);
            if ax == 0.0 {
                return Ok(sum);
            }
            let tail = term * geometric_tail(self.growth_bound(k + j) * ax);
            if rule.observe(term, tail) {
                return Ok(sum);
            }
            pow *= x;
        }
        Err(Error::NoConvergence(format!(
            "scalar resolvent at |x| = {ax} exhausted {avail} terms"
        )))
    }

    pub(crate) fn inv_ext_at(&self, j: usize) -> f64 {
        self.inv_ext[j]
    }
}

/// Taylor coefficients of (1 − x)^α.
fn binomial_coeffs(alpha: f64, n: usize) -> Vec<f64> {
    let mut c = Vec::with_capacity(n);
    let mut cur = 1.0;
    for j in 0..n {
        if j > 0 {
            cur *= (j as f64 - 1.0 - alpha) / j as f64;
        }
        c.push(cur);
    }
    c
}

/// c_0 = 1, c_n = −Σ_{j<n} c_j β_{n−j}^{-1}.
fn reciprocal_recursion(betas: &[f64]) -> Vec<f64> {
    let n = betas.len();
    let inv: Vec<f64> = betas.iter().map(|b| 1.0 / b).collect();
    let mut c = Vec::with_capacity(n);
    c.push(1.0);
    for m in 1..n {
        let s: f64 = (0..m).map(|j| c[j] * inv[m - j]).sum();
        c.push(-s);
    }
    c
}

fn wiener_from_coeffs(c: &[f64]) -> WienerReport {
    let n = c.len() - 1;
    let partial_sum: f64 = c.iter().map(|x| x.abs()).sum();
    let scale = partial_sum.max(1.0);
    let m = (n / 4).max(2);
    let half = (m / 2).max(1);
    let max_abs = |lo: usize, hi: usize| c[lo..=hi].iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let a_hi = max_abs(n + 1 - half, n);
    let a_lo = max_abs(n + 1 - m, n - half);
    let negligible = 1e-14 * scale;
    let (ratio, tail, verdict) = if a_hi <= negligible && a_lo <= negligible {
        (0.0, 0.0, WienerVerdict::Summable)
    } else if a_lo <= negligible {
        (f64::INFINITY, f64::INFINITY, WienerVerdict::Diverging)
    } else {
        let r = (a_hi / a_lo).powf(1.0 / half as f64);
        if r < 1.0 {
            let tail = a_hi * r / (1.0 - r);
            let v = if tail <= 1e-6 * scale {
                WienerVerdict::Summable
            } else {
                WienerVerdict::Inconclusive
            };
            (r, tail, v)
        } else if r > 1.0 + 1e-3 && a_hi > a_lo {
            (r, f64::INFINITY, WienerVerdict::Diverging)
        } else {
            (r, f64::INFINITY, WienerVerdict::Inconclusive)
        }
    };
    WienerReport {
        partial_sum,
        tail_estimate: tail,
        ratio_estimate: ratio,
        verdict,
    }
}
