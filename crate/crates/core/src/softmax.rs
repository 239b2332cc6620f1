//! Softmax, KL divergence and the log-partition identities on the simplex.

use crate::error::{invalid, FpldError, Result};

/// Tolerance on `sum(p) - 1` accepted when constructing a [`ProbVector`].
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Accept an (almost) normalized vector and renormalize it exactly.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        let sum = check_nonnegative(&p)?;
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(FpldError::InvalidInput(format!("probabilities sum to {sum}")));
        }
        Ok(Self::scaled(p, sum))
    }

    /// Normalize arbitrary non-negative weights with a positive sum.
    pub fn normalize(w: Vec<f64>) -> Result<Self> {
        let sum = check_nonnegative(&w)?;
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(FpldError::InvalidInput(format!("cannot normalize weights summing to {sum}")));
        }
        Ok(Self::scaled(w, sum))
    }

    pub fn uniform(v: usize) -> Self {
        Self(vec![1.0 / v as f64; v])
    }

    fn scaled(mut p: Vec<f64>, sum: f64) -> Self {
        if sum != 1.0 {
            p.iter_mut().for_each(|x| *x /= sum);
        }
        Self(p)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn check_nonnegative(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(FpldError::InvalidInput("empty probability vector".into()));
    }
    if let Some(i) = p.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(FpldError::InvalidInput(format!("p[{i}] = {} is not a probability", p[i])));
    }
    Ok(p.iter().sum())
}

fn max_of(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `ln sum_v exp(l_v)`, max-shifted.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = max_of(logits);
    if !m.is_finite() {
        return m;
    }
    m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> ProbVector {
    assert!(!logits.is_empty(), "softmax of an empty vector");
    let m = max_of(logits);
    let mut p: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    ProbVector(p)
}

/// `g(r) = (1 + r) ln(1 + r) - r`, accurate near `r = 0`.
#[inline]
fn kl_kernel(r: f64) -> f64 {
    if r.abs() < 0.1 {
        // sum_{k>=2} (-1)^k r^k / (k (k - 1)); truncation below 1e-20 relative
        let mut acc = 0.0;
        for k in (2..=20).rev() {
            let c = 1.0 / (k * (k - 1)) as f64;
            acc = if k % 2 == 0 { c } else { -c } + r * acc;
        }
        acc * r * r
    } else if r == -1.0 {
        1.0
    } else {
        (1.0 + r) * r.ln_1p() - r
    }
}

/// `KL(p || q) = sum p ln(p / q)`.
///
/// Evaluated as `sum q g((p - q) / q)`, a sum of non-negative terms, so small
/// divergences do not cancel. A coordinate with `p > 0 = q` is reported as
/// [`FpldError::InfiniteDivergence`].
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid(format!("kl length mismatch: {} vs {}", p.len(), q.len())));
    }
    let mut total = 0.0;
    for (v, (&pv, &qv)) in p.iter().zip(q).enumerate() {
        if pv == 0.0 {
            total += qv;
        } else if qv == 0.0 {
            return Err(FpldError::InfiniteDivergence { index: v });
        } else {
            total += qv * kl_kernel((pv - qv) / qv);
        }
    }
    Ok(total)
}

/// Like [`kl`] but maps a support violation to `+inf`.
pub fn kl_or_inf(p: &[f64], q: &[f64]) -> f64 {
    match kl(p, q) {
        Ok(x) => x,
        Err(FpldError::InfiniteDivergence { .. }) => f64::INFINITY,
        Err(e) => panic!("{e}"),
    }
}

/// Trace of the softmax Hessian of the log-partition, `1 - ||p||^2`.
pub fn hessian_trace(p: &[f64]) -> f64 {
    // sum p(1 - p) avoids cancelling 1 against ||p||^2 near a vertex
    p.iter().map(|&x| x * (1.0 - x)).sum()
}

/// `e^x - 1 - x` without cancellation for small `x`.
#[inline]
fn expm1_minus_x(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let mut acc = 0.0;
        let mut fact = 1.0;
        let mut coeffs = [0.0; 19];
        for (k, c) in coeffs.iter_mut().enumerate() {
            fact *= (k + 2) as f64;
            *c = 1.0 / fact;
        }
        for c in coeffs.iter().rev() {
            acc = c + x * acc;
        }
        acc * x * x
    } else {
        x.exp_m1() - x
    }
}

/// `ln sum_v p_v e^{eta_v} - sum_v p_v eta_v` with `p = softmax(logits)`.
///
/// This is `KL(softmax(logits) || softmax(logits + eta))`.
pub fn cumulant_kl_exact(logits: &[f64], eta: &[f64]) -> Result<f64> {
    if logits.len() != eta.len() {
        return Err(invalid("logit and perturbation lengths differ"));
    }
    if logits.iter().chain(eta).any(|x| !x.is_finite()) {
        return Err(FpldError::InvalidInput("non-finite logit or perturbation".into()));
    }
    let p = softmax(logits);
    let mean: f64 = p.iter().zip(eta).map(|(pv, e)| pv * e).sum();
    let centered: Vec<f64> = eta.iter().map(|e| e - mean).collect();
    let top =
        centered.iter().zip(p.iter()).filter(|(_, &pv)| pv > 0.0).map(|(&e, _)| e).fold(f64::NEG_INFINITY, f64::max);
    let residual: f64 = p.iter().zip(&centered).map(|(pv, &e)| pv * e).sum();
    if top > 30.0 {
        // large perturbation: no cancellation to protect, avoid overflow instead
        let shifted: Vec<f64> =
            centered.iter().zip(p.iter()).filter(|(_, &pv)| pv > 0.0).map(|(&e, &pv)| pv.ln() + e).collect();
        return Ok((log_sum_exp(&shifted) - residual).max(0.0));
    }
    let convex: f64 = p.iter().zip(&centered).map(|(pv, &e)| pv * expm1_minus_x(e)).sum();
    Ok(((convex + residual).ln_1p() - residual).max(0.0))
}

/// Mean Hessian trace over probe rows: the empirical non-degeneracy constant.
pub fn nondegeneracy_cp<P: AsRef<[f64]>>(rows: &[P]) -> Result<f64> {
    if rows.is_empty() {
        return Err(invalid("non-degeneracy constant of an empty probe set"));
    }
    Ok(rows.iter().map(|r| hessian_trace(r.as_ref())).sum::<f64>() / rows.len() as f64)
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}
