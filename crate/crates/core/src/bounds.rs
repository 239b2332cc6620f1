//! Closed-form rate bounds for the quantized logit channel.
//!
//! All budgets are in bits per probe context: `B` is the total for one node
//! (so `B / V` bits per coordinate). Constants `c1`, `c2` are illustrative
//! and default to 1; the bandwidth constant is `L^2 / 6`, the dither
//! variance of a `[-L, L]` quantizer folded through the softmax Hessian.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, FpldError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundParams {
    /// Parameter dimension of the student.
    pub d: f64,
    #[serde(rename = "K")]
    pub k: usize,
    /// Samples per node; `inf` drops the statistical term.
    pub n: f64,
    pub m: usize,
    #[serde(rename = "V")]
    pub v: usize,
    pub delta: f64,
    pub rho: f64,
    #[serde(rename = "L")]
    pub l: f64,
    /// Per-node clip levels.
    #[serde(rename = "L_list")]
    pub l_list: Option<Vec<f64>>,
    pub c1: f64,
    pub c2: f64,
    pub eps_opt: f64,
    pub eps_fit: f64,
    pub cp: f64,
    #[serde(rename = "T")]
    pub t: usize,
    /// Total bits per probe for every node.
    #[serde(rename = "B")]
    pub b: Option<f64>,
    /// Per-node bits per probe.
    #[serde(rename = "B_list")]
    pub b_list: Option<Vec<f64>>,
    /// Threshold of the small-error condition.
    pub c0: f64,
    /// Remainder constant of the calibrated small-error condition.
    pub c_remainder: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            d: 256.0,
            k: 1,
            n: 30_000.0,
            m: 64,
            v: 256,
            delta: 0.05,
            rho: 1.0,
            l: 1.0,
            l_list: None,
            c1: 1.0,
            c2: 1.0,
            eps_opt: 0.0,
            eps_fit: 0.0,
            cp: 1.0,
            t: 1,
            b: None,
            b_list: None,
            c0: 1.0,
            c_remainder: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeFlags {
    pub small_error: bool,
    pub small_error_calibrated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundEstimates {
    pub statistical_term: f64,
    pub probe_term: f64,
    pub bandwidth_term: f64,
    pub slack_term: f64,
    pub total: f64,
    pub regime_flags: RegimeFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBound {
    pub value: f64,
    /// Set when `B < V`, outside the range the bound is stated for.
    pub below_stated_range: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultiroundBound {
    pub value: f64,
    /// Cubic remainder `(ln V)^{3/2} / K^{3/2} * 2^{-3TB/V}`, reported separately.
    pub remainder: f64,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && !x.is_nan() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {x}")))
    }
}

fn nonnegative(name: &str, x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite and non-negative, got {x}")))
    }
}

impl BoundParams {
    pub fn new(k: usize, v: usize) -> Self {
        Self { k, v, d: v as f64, ..Self::default() }
    }

    pub fn with_bits_per_coord(mut self, bits: f64) -> Self {
        self.b = Some(bits * self.v as f64);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(invalid("K must be at least 1"));
        }
        if self.v < 1 {
            return Err(invalid("V must be at least 1"));
        }
        if self.m < 1 {
            return Err(invalid("m must be at least 1"));
        }
        if self.t < 1 {
            return Err(invalid("T must be at least 1"));
        }
        positive("d", self.d)?;
        positive("n", self.n)?;
        positive("L", self.l)?;
        positive("c0", self.c0)?;
        positive("c_remainder", self.c_remainder)?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.rho >= 1.0) || !self.rho.is_finite() {
            return Err(invalid(format!("rho must be >= 1, got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.cp) {
            return Err(invalid(format!("cp must lie in [0, 1], got {}", self.cp)));
        }
        for (name, x) in [("c1", self.c1), ("c2", self.c2), ("eps_opt", self.eps_opt), ("eps_fit", self.eps_fit)] {
            nonnegative(name, x)?;
        }
        if let Some(b) = self.b {
            if !(b >= 0.0) {
                return Err(invalid(format!("B must be non-negative, got {b}")));
            }
        }
        if let Some(bs) = &self.b_list {
            if bs.len() != self.k {
                return Err(invalid(format!("B_list has {} entries for K = {}", bs.len(), self.k)));
            }
            if let Some(b) = bs.iter().find(|b| !(**b >= 0.0)) {
                return Err(invalid(format!("B_list entry {b} is negative")));
            }
        }
        if let Some(ls) = &self.l_list {
            if ls.len() != self.k {
                return Err(invalid(format!("L_list has {} entries for K = {}", ls.len(), self.k)));
            }
            for &l in ls {
                positive("L_list entry", l)?;
            }
        }
        Ok(())
    }

    fn is_heterogeneous(&self) -> bool {
        self.b_list.is_some() || self.l_list.is_some()
    }

    fn homogeneous_b(&self) -> Result<f64> {
        self.b.ok_or_else(|| invalid("total bits B is not set"))
    }

    fn per_node_b(&self) -> Result<Vec<f64>> {
        match (&self.b_list, self.b) {
            (Some(bs), _) => Ok(bs.clone()),
            (None, Some(b)) => Ok(vec![b; self.k]),
            (None, None) => Err(invalid("neither B nor B_list is set")),
        }
    }

    fn per_node_l(&self) -> Vec<f64> {
        self.l_list.clone().unwrap_or_else(|| vec![self.l; self.k])
    }

    fn statistical_term(&self) -> f64 {
        self.c1 * self.d / (self.k as f64 * self.n)
    }

    fn probe_term(&self) -> f64 {
        let v = self.v as f64;
        self.c2 * self.rho * (v * (v / self.delta).ln() / self.m as f64).sqrt()
    }

    fn estimates(&self, bandwidth_term: f64) -> Result<BoundEstimates> {
        let statistical_term = self.statistical_term();
        let probe_term = self.probe_term();
        let slack_term = self.eps_opt + self.eps_fit;
        let (small_error, small_error_calibrated) = check_small_error(self, self.c0)?;
        Ok(BoundEstimates {
            statistical_term,
            probe_term,
            bandwidth_term,
            slack_term,
            total: statistical_term + probe_term + bandwidth_term + slack_term,
            regime_flags: RegimeFlags { small_error, small_error_calibrated },
        })
    }
}

/// `2^{-2B/V}` for total bits `b`.
#[inline]
fn distortion(b: f64, v: usize) -> f64 {
    (-2.0 * b / v as f64).exp2()
}

/// Homogeneous upper bound: every node sends `B` bits at clip `L`.
pub fn upper_bound_homogeneous(p: &BoundParams) -> Result<BoundEstimates> {
    p.validate()?;
    if p.is_heterogeneous() {
        return Err(FpldError::Heterogeneous);
    }
    let b = p.homogeneous_b()?;
    let c3 = p.l * p.l / 6.0;
    p.estimates(c3 / p.k as f64 * distortion(b, p.v))
}

/// Upper bound with per-node budgets and, optionally, per-node clips.
pub fn upper_bound_heterogeneous(p: &BoundParams) -> Result<BoundEstimates> {
    p.validate()?;
    let bw = het_bandwidth_term(p)?;
    p.estimates(bw)
}

/// `(1 / (6 K^2)) sum_i L_i^2 2^{-2 B_i / V}`.
pub fn het_bandwidth_term(p: &BoundParams) -> Result<f64> {
    p.validate()?;
    let bs = p.per_node_b()?;
    let ls = p.per_node_l();
    let k = p.k as f64;
    let sum: f64 = bs.iter().zip(&ls).map(|(&b, &l)| l * l * distortion(b, p.v)).sum();
    Ok(sum / (6.0 * k * k))
}

/// Bandwidth contribution every dithered scheme of this form must pay:
/// `cp L^2 / (12 K) 2^{-2B/V}`.
pub fn lower_bound_fpld(p: &BoundParams) -> Result<LowerBound> {
    p.validate()?;
    if p.is_heterogeneous() {
        return Err(FpldError::Heterogeneous);
    }
    let b = p.homogeneous_b()?;
    Ok(LowerBound {
        value: p.cp * p.l * p.l / (12.0 * p.k as f64) * distortion(b, p.v),
        below_stated_range: b < p.v as f64,
    })
}

/// Bandwidth term after `T` rounds of residual refinement.
pub fn multiround_bound(p: &BoundParams) -> Result<MultiroundBound> {
    p.validate()?;
    if p.is_heterogeneous() {
        return Err(FpldError::Heterogeneous);
    }
    let b = p.homogeneous_b()?;
    let k = p.k as f64;
    let tb = p.t as f64 * b;
    let v = p.v as f64;
    Ok(MultiroundBound {
        value: p.l * p.l / 6.0 / k * distortion(tb, p.v),
        remainder: v.ln().powf(1.5) / k.powf(1.5) * (-3.0 * tb / v).exp2(),
    })
}

/// Evaluate the small-error condition `2^{-B/V} (ln V)^{3/2} / sqrt(K) <= c0`
/// and its calibrated variant with threshold `sqrt(3) cp / (4 C L)`.
///
/// With per-node budgets the smallest `B_i` and largest `L_i` are used.
pub fn check_small_error(p: &BoundParams, c0: f64) -> Result<(bool, bool)> {
    positive("c0", c0)?;
    let b = match (&p.b_list, p.b) {
        (Some(bs), _) => bs.iter().copied().fold(f64::INFINITY, f64::min),
        (None, Some(b)) => b,
        (None, None) => return Err(invalid("neither B nor B_list is set")),
    };
    let l = p.l_list.as_ref().map_or(p.l, |ls| ls.iter().copied().fold(0.0, f64::max));
    let lhs = small_error_lhs(b, p.v, p.k);
    let c0_calibrated = 3f64.sqrt() * p.cp / (4.0 * p.c_remainder * l);
    Ok((lhs <= c0, lhs <= c0_calibrated))
}

pub fn small_error_lhs(b: f64, v: usize, k: usize) -> f64 {
    (-b / v as f64).exp2() * (v as f64).ln().powf(1.5) / (k as f64).sqrt()
}
