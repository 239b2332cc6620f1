//! Two-stage adaptive allocation: estimate per-node second moments from a
//! warm-up at the uniform pilot allocation, then water-fill on the estimates.

use serde::Serialize;

use crate::alloc::{objective_f, waterfill_clipped, AllocationPlan};
use crate::error::{invalid, FpldError, Result};

/// Floor applied to estimated weights, relative to the largest estimate.
pub const DEFAULT_W_FLOOR: f64 = 1e-9;

/// Warm-up statistics: the mean square of every reconstructed probe vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmupRecord {
    pub t0: usize,
    pub m: usize,
    pub v: usize,
    /// Pilot bits per coordinate, `B_tot / (K V)`.
    pub pilot_bits_per_coord: f64,
    /// Clip level of each node.
    pub clips: Vec<f64>,
    /// Per node: `T0 * m` block mean squares, round-major then probe.
    pub block_mean_squares: Vec<Vec<f64>>,
}

impl WarmupRecord {
    pub fn new(t0: usize, m: usize, v: usize, pilot_bits_per_coord: f64, clips: Vec<f64>) -> Self {
        let k = clips.len();
        Self { t0, m, v, pilot_bits_per_coord, clips, block_mean_squares: vec![Vec::with_capacity(t0 * m); k] }
    }

    pub fn k(&self) -> usize {
        self.clips.len()
    }

    /// Record one reconstructed probe vector of node `node`.
    pub fn push(&mut self, node: usize, reconstruction: &[f64]) -> Result<()> {
        if reconstruction.len() != self.v {
            return Err(FpldError::InvalidInput(format!(
                "warm-up vector of length {}, expected V = {}",
                reconstruction.len(),
                self.v
            )));
        }
        let s = reconstruction.iter().map(|x| x * x).sum::<f64>() / self.v as f64;
        self.block_mean_squares[node].push(s);
        Ok(())
    }

    /// Post-quantization range of node `i`: `L_i (1 + 2^{-bits})`.
    pub fn range(&self, node: usize) -> f64 {
        self.clips[node] * (1.0 + (-self.pilot_bits_per_coord).exp2())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightEstimate {
    pub w_hat: Vec<f64>,
    /// Radius `R^2 sqrt(ln(2K / delta) / (2 m T0))` of the Hoeffding bound.
    pub eta_bound: f64,
    /// Largest post-quantization range over nodes.
    pub r_ell: f64,
    pub delta: f64,
}

/// Mean squared reconstruction per node.
pub fn estimate_weights(rec: &WarmupRecord, delta: f64) -> Result<WeightEstimate> {
    if rec.t0 < 1 || rec.m < 1 || rec.v < 1 {
        return Err(invalid("warm-up needs T0 >= 1, m >= 1 and V >= 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let k = rec.k();
    if k == 0 || rec.block_mean_squares.len() != k {
        return Err(FpldError::InvalidInput("warm-up record has no nodes".into()));
    }
    let expected = rec.t0 * rec.m;
    let mut w_hat = Vec::with_capacity(k);
    for (i, blocks) in rec.block_mean_squares.iter().enumerate() {
        if blocks.len() != expected {
            return Err(FpldError::InvalidInput(format!(
                "node {i} has {} warm-up blocks, expected T0*m = {expected}",
                blocks.len()
            )));
        }
        let r2 = rec.range(i).powi(2);
        // each block average is one bounded summand of the Hoeffding argument
        if let Some(block) = blocks.iter().position(|&s| !(s >= 0.0 && s <= r2 * (1.0 + 1e-12))) {
            return Err(FpldError::InvalidInput(format!(
                "node {i} block {block}: mean square {} outside [0, R^2 = {r2}]",
                blocks[block]
            )));
        }
        w_hat.push(blocks.iter().sum::<f64>() / expected as f64);
    }
    let r_ell = (0..k).map(|i| rec.range(i)).fold(0.0, f64::max);
    let eta_bound = r_ell * r_ell * (((2 * k) as f64 / delta).ln() / (2.0 * (rec.m * rec.t0) as f64)).sqrt();
    Ok(WeightEstimate { w_hat, eta_bound, r_ell, delta })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptivePlan {
    pub plan: AllocationPlan,
    /// Nodes whose estimate was raised to the floor.
    pub floored: Vec<usize>,
}

/// Plug-in water-filling on estimated weights.
///
/// Estimates below `w_floor * max_j w_hat_j` are raised to that floor so the
/// logarithms stay finite.
pub fn adaptive_allocate(
    est: &WeightEstimate,
    b_tot: f64,
    v: usize,
    b_max: Option<f64>,
    w_floor: f64,
) -> Result<AdaptivePlan> {
    let top = est.w_hat.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) || !top.is_finite() {
        return Err(FpldError::InvalidInput(format!("no positive weight estimate (max {top})")));
    }
    let floor = w_floor * top;
    let mut floored = Vec::new();
    let w: Vec<f64> = est
        .w_hat
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if x < floor || x.is_nan() {
                floored.push(i);
                floor
            } else {
                x
            }
        })
        .collect();
    Ok(AdaptivePlan { plan: waterfill_clipped(&w, b_tot, v, b_max)?, floored })
}

/// `F(plan for w_hat) / F(plan for w)`, both evaluated under the true weights.
pub fn suboptimality_ratio(w: &[f64], w_hat: &[f64], b_tot: f64, v: usize, b_max: Option<f64>) -> Result<f64> {
    if w.len() != w_hat.len() {
        return Err(invalid("true and estimated weights differ in length"));
    }
    let plug_in = waterfill_clipped(w_hat, b_tot, v, b_max)?;
    let oracle = waterfill_clipped(w, b_tot, v, b_max)?;
    Ok(objective_f(&plug_in.b, w, v)? / objective_f(&oracle.b, w, v)?)
}

/// Unclipped closed form of the ratio: `(1/K) sum (w_i / w_hat_i) (w_hat_g / w_g)`.
pub fn suboptimality_ratio_closed_form(w: &[f64], w_hat: &[f64]) -> f64 {
    let k = w.len() as f64;
    let mean_log = |x: &[f64]| x.iter().map(|v| v.ln()).sum::<f64>() / k;
    let geo = (mean_log(w_hat) - mean_log(w)).exp();
    w.iter().zip(w_hat).map(|(a, b)| a / b).sum::<f64>() / k * geo
}

/// Worst-case ratio when every estimate is within relative error `eta <= 1/2`.
pub fn transfer_bound(eta: f64) -> f64 {
    1.0 + 2.0 * eta + 4.0 * eta * eta
}
