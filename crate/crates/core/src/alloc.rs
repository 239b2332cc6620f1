//! Bandwidth allocation across nodes.
//!
//! Minimizes `F(B) = (1 / K^2) sum_i w_i 2^{-2 B_i / V}` subject to
//! `sum_i B_i = B_tot` and `0 <= B_i <= B_max`. The unconstrained optimum is
//! the water-filling split `B_i = B_tot / K + (V / 2) log2(w_i / w_g)` with
//! `w_g` the geometric mean of the weights.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, FpldError, Result};
use crate::quant::MAX_BITS_PER_COORD;

/// Budget conservation tolerance of every returned plan.
pub const BUDGET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationPlan {
    /// Bits per probe context for each node.
    pub b: Vec<f64>,
    /// Weights the plan was solved for.
    pub weights: Vec<f64>,
    pub b_tot: f64,
    pub b_max: Option<f64>,
    /// Nodes pinned at 0 or at `b_max`.
    pub saturated: Vec<bool>,
}

impl AllocationPlan {
    pub fn k(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, v: usize) -> f64 {
        objective_unchecked(&self.b, &self.weights, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Optimal,
    Uniform,
    Inverse,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Optimal, Policy::Uniform, Policy::Inverse];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Optimal => "optimal",
            Policy::Uniform => "uniform",
            Policy::Inverse => "inverse",
        }
    }

    pub fn plan(&self, w: &[f64], b_tot: f64, v: usize, b_max: Option<f64>) -> Result<AllocationPlan> {
        match self {
            Policy::Optimal => waterfill_clipped(w, b_tot, v, b_max),
            Policy::Uniform => uniform(w.len(), b_tot, b_max),
            Policy::Inverse => inverse_weighted_baseline(w, b_tot, v, b_max),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Policy {
    type Err = FpldError;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| invalid(format!("unknown policy {s:?}")))
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(invalid("no weights"));
    }
    match w.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        Some(x) => Err(invalid(format!("weights must be positive and finite, got {x}"))),
        None => Ok(()),
    }
}

fn check_budget(k: usize, b_tot: f64, v: usize, b_max: Option<f64>) -> Result<()> {
    if v < 1 {
        return Err(invalid("V must be at least 1"));
    }
    if !(b_tot >= 0.0) || !b_tot.is_finite() {
        return Err(invalid(format!("B_tot must be finite and non-negative, got {b_tot}")));
    }
    if let Some(cap) = b_max {
        if !(cap >= 0.0) {
            return Err(invalid(format!("B_max must be non-negative, got {cap}")));
        }
        if k as f64 * cap < b_tot * (1.0 - 1e-15) {
            return Err(FpldError::Infeasible(format!("K * B_max = {} is below B_tot = {b_tot}", k as f64 * cap)));
        }
    }
    Ok(())
}

fn objective_unchecked(b: &[f64], w: &[f64], v: usize) -> f64 {
    let k = b.len() as f64;
    b.iter().zip(w).map(|(&bi, &wi)| wi * (-2.0 * bi / v as f64).exp2()).sum::<f64>() / (k * k)
}

/// `F(B) = (1 / K^2) sum_i w_i 2^{-2 B_i / V}`.
pub fn objective_f(b: &[f64], w: &[f64], v: usize) -> Result<f64> {
    if b.len() != w.len() {
        return Err(invalid(format!("{} budgets for {} weights", b.len(), w.len())));
    }
    check_weights(w)?;
    if v < 1 {
        return Err(invalid("V must be at least 1"));
    }
    Ok(objective_unchecked(b, w, v))
}

/// Closed-form split of `budget` over the nodes in `free`, written into `b`.
fn closed_form(w: &[f64], free: &[usize], budget: f64, v: usize, b: &mut [f64]) {
    let logs: Vec<f64> = free.iter().map(|&i| w[i].log2()).collect();
    let mean_log = logs.iter().sum::<f64>() / free.len() as f64;
    let share = budget / free.len() as f64;
    for (&i, &lw) in free.iter().zip(&logs) {
        b[i] = share + 0.5 * v as f64 * (lw - mean_log);
    }
}

/// Unclipped water-filling; entries can be negative.
pub fn waterfill(w: &[f64], b_tot: f64, v: usize) -> Result<AllocationPlan> {
    check_weights(w)?;
    check_budget(w.len(), b_tot, v, None)?;
    let mut b = vec![0.0; w.len()];
    let all: Vec<usize> = (0..w.len()).collect();
    closed_form(w, &all, b_tot, v, &mut b);
    Ok(AllocationPlan { b, weights: w.to_vec(), b_tot, b_max: None, saturated: vec![false; w.len()] })
}

/// Water-filling restricted to `[0, b_max]`.
///
/// Active-set pegging: solve in closed form on the free nodes, measure the
/// total violation below 0 and above the cap, pin the side with the larger
/// violation (both on a tie), and re-solve the rest with the remaining budget.
/// Each pass pins at least one node, so this stops within `K` passes.
pub fn waterfill_clipped(w: &[f64], b_tot: f64, v: usize, b_max: Option<f64>) -> Result<AllocationPlan> {
    check_weights(w)?;
    let k = w.len();
    check_budget(k, b_tot, v, b_max)?;
    let cap = b_max.unwrap_or(f64::INFINITY);
    let mut b = vec![0.0; k];
    let mut saturated = vec![false; k];
    let mut free: Vec<usize> = (0..k).collect();
    let mut budget = b_tot;
    while !free.is_empty() {
        closed_form(w, &free, budget, v, &mut b);
        let lower: f64 = free.iter().map(|&i| (-b[i]).max(0.0)).sum();
        let upper: f64 = free.iter().map(|&i| (b[i] - cap).max(0.0)).sum();
        if lower == 0.0 && upper == 0.0 {
            break;
        }
        let pin_lower = lower >= upper;
        let pin_upper = upper >= lower;
        free.retain(|&i| {
            if pin_lower && b[i] < 0.0 {
                b[i] = 0.0;
            } else if pin_upper && b[i] > cap {
                b[i] = cap;
                budget -= cap;
            } else {
                return true;
            }
            saturated[i] = true;
            false
        });
    }
    Ok(AllocationPlan { b, weights: w.to_vec(), b_tot, b_max, saturated })
}

/// Optimal allocation by bisection on the Lagrange multiplier.
///
/// Stationarity gives `2^{-2 B_i / V} = lambda V K^2 / (2 w_i ln 2)`; with
/// `t = log2(lambda V K^2 / (2 ln 2))` each budget is the box projection of
/// `(V / 2)(log2 w_i - t)`, and the total is non-increasing in `t`.
pub fn kkt_oracle(w: &[f64], b_tot: f64, v: usize, b_max: Option<f64>) -> Result<AllocationPlan> {
    check_weights(w)?;
    let k = w.len();
    check_budget(k, b_tot, v, b_max)?;
    let cap = b_max.unwrap_or(f64::INFINITY);
    let half_v = 0.5 * v as f64;
    let logs: Vec<f64> = w.iter().map(|x| x.log2()).collect();
    let at = |t: f64| -> Vec<f64> { logs.iter().map(|&lw| (half_v * (lw - t)).clamp(0.0, cap)).collect() };
    let total = |t: f64| at(t).iter().sum::<f64>();
    let lo_log = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_log = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // at t_lo every node would get more than B_tot before the cap; at t_hi every node gets 0
    let mut t_lo = lo_log - b_tot / half_v - 1.0;
    let mut t_hi = hi_log + 1.0;
    let mut t = 0.5 * (t_lo + t_hi);
    for _ in 0..400 {
        t = 0.5 * (t_lo + t_hi);
        let s = total(t);
        if (s - b_tot).abs() <= 1e-10 || t == t_lo || t == t_hi {
            break;
        }
        if s > b_tot {
            t_lo = t;
        } else {
            t_hi = t;
        }
    }
    let b = at(t);
    let saturated = b.iter().map(|&x| x <= 0.0 || x >= cap).collect();
    Ok(AllocationPlan { b, weights: w.to_vec(), b_tot, b_max, saturated })
}

/// Equal split, solved for unit weights.
pub fn uniform(k: usize, b_tot: f64, b_max: Option<f64>) -> Result<AllocationPlan> {
    if k == 0 {
        return Err(invalid("no nodes"));
    }
    check_budget(k, b_tot, 1, b_max)?;
    Ok(AllocationPlan { b: vec![b_tot / k as f64; k], weights: vec![1.0; k], b_tot, b_max, saturated: vec![false; k] })
}

/// The sign-flipped tilt `B_tot / K - (V / 2) log2(w_i / w_g)`, clipped at 0
/// with redistribution: water-filling on the reciprocal weights.
pub fn inverse_weighted_baseline(w: &[f64], b_tot: f64, v: usize, b_max: Option<f64>) -> Result<AllocationPlan> {
    check_weights(w)?;
    let inv: Vec<f64> = w.iter().map(|x| 1.0 / x).collect();
    waterfill_clipped(&inv, b_tot, v, b_max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegerPlan {
    pub bits_per_coord: Vec<u8>,
    /// `bits_per_coord * V` for each node.
    pub b: Vec<f64>,
    pub b_tot: f64,
}

impl IntegerPlan {
    pub fn total(&self) -> f64 {
        self.b.iter().sum()
    }
}

/// Round a real-valued plan to whole bits per coordinate.
///
/// Each node is rounded to the nearest integer bits per coordinate and
/// capped. While over budget, the bit whose removal raises `F` least is
/// taken away; then, while a whole extra bit still fits, the bit that lowers
/// `F` most is added. `F` uses the weights the plan was solved for.
pub fn integerize(plan: &AllocationPlan, v: usize) -> Result<IntegerPlan> {
    if v < 1 {
        return Err(invalid("V must be at least 1"));
    }
    let vf = v as f64;
    let cap_bits =
        plan.b_max.map(|c| (c / vf + 1e-9).floor().min(MAX_BITS_PER_COORD as f64)).unwrap_or(MAX_BITS_PER_COORD as f64)
            as i64;
    let budget_bits = (plan.b_tot / vf + 1e-9).floor() as i64;
    let mut bits: Vec<i64> = plan.b.iter().map(|&x| ((x / vf).round() as i64).clamp(0, cap_bits)).collect();
    let w = &plan.weights;
    let level = |b: i64| (-2.0 * b as f64).exp2();
    let mut total: i64 = bits.iter().sum();
    while total > budget_bits {
        // cost of removing one bit from node i: w_i (4^{-(b-1)} - 4^{-b})
        let i = (0..bits.len())
            .filter(|&i| bits[i] > 0)
            .min_by(|&a, &b| {
                let ca = w[a] * (level(bits[a] - 1) - level(bits[a]));
                let cb = w[b] * (level(bits[b] - 1) - level(bits[b]));
                ca.total_cmp(&cb)
            })
            .expect("positive total implies a node with bits");
        bits[i] -= 1;
        total -= 1;
    }
    while total < budget_bits {
        let best = (0..bits.len()).filter(|&i| bits[i] < cap_bits).max_by(|&a, &b| {
            let ga = w[a] * (level(bits[a]) - level(bits[a] + 1));
            let gb = w[b] * (level(bits[b]) - level(bits[b] + 1));
            // prefer the lower index on ties
            ga.total_cmp(&gb).then(b.cmp(&a))
        });
        match best {
            Some(i) => {
                bits[i] += 1;
                total += 1;
            }
            None => break,
        }
    }
    Ok(IntegerPlan {
        bits_per_coord: bits.iter().map(|&b| b as u8).collect(),
        b: bits.iter().map(|&b| b as f64 * vf).collect(),
        b_tot: plan.b_tot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const W: [f64; 4] = [1.0, 1.0, 16.0, 16.0];

    #[test]
    fn objective_examples() {
        assert_eq!(objective_f(&[0.0; 4], &W, 256).unwrap(), 34.0 / 16.0);
        let f = objective_f(&[256.0, 256.0, 768.0, 768.0], &W, 256).unwrap();
        assert!((f - 0.0625).abs() < 1e-15);
        let scaled: Vec<f64> = W.iter().map(|x| 3.0 * x).collect();
        let g = objective_f(&[256.0, 256.0, 768.0, 768.0], &scaled, 256).unwrap();
        assert!((g - 3.0 * f).abs() < 1e-15);
        assert!(objective_f(&[1.0], &W, 256).is_err());
    }

    #[test]
    fn waterfill_examples() {
        assert_eq!(waterfill(&[2.0; 5], 100.0, 16).unwrap().b, vec![20.0; 5]);
        let p = waterfill(&W, 2048.0, 256).unwrap();
        assert_eq!(p.b, vec![256.0, 256.0, 768.0, 768.0]);
        assert!(waterfill(&[1.0, 0.0], 1.0, 1).is_err());
    }

    #[test]
    fn doubling_a_weight_tilts_by_half_v() {
        let base = waterfill(&[1.0, 3.0, 5.0], 90.0, 8).unwrap();
        let bumped = waterfill(&[2.0, 3.0, 5.0], 90.0, 8).unwrap();
        // +V/2 before renormalization, spread as -V/(2K) across all nodes through w_g
        let shift = 4.0 / 3.0;
        assert!((bumped.b[0] - base.b[0] - (4.0 - shift)).abs() < 1e-12);
        assert!((bumped.b[1] - base.b[1] + shift).abs() < 1e-12);
    }

    #[test]
    fn clipped_examples() {
        let p = waterfill_clipped(&[1.0, 1024.0], 2.0, 1, Some(2.0)).unwrap();
        assert_eq!(p.b, vec![0.0, 2.0]);
        assert_eq!(p.saturated, vec![true, true]);
        let p = waterfill_clipped(&[1.0, 1024.0], 2.0, 1, Some(1.5)).unwrap();
        assert_eq!(p.b, vec![0.5, 1.5]);
        let p = waterfill_clipped(&W, 2048.0, 256, Some(1024.0)).unwrap();
        assert_eq!(p.b, waterfill(&W, 2048.0, 256).unwrap().b);
        assert!(matches!(waterfill_clipped(&W, 2048.0, 256, Some(500.0)), Err(FpldError::Infeasible(_))));
    }

    #[test]
    fn oracle_examples() {
        let p = kkt_oracle(&[3.0; 6], 60.0, 4, None).unwrap();
        assert!(p.b.iter().all(|&b| (b - 10.0).abs() < 1e-10));
        let p = kkt_oracle(&W, 2048.0, 256, None).unwrap();
        for (a, b) in p.b.iter().zip([256.0, 256.0, 768.0, 768.0]) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(matches!(kkt_oracle(&W, 2048.0, 256, Some(100.0)), Err(FpldError::Infeasible(_))));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse_weighted_baseline(&[5.0; 4], 40.0, 2, None).unwrap().b, vec![10.0; 4]);
        let inv = inverse_weighted_baseline(&W, 2048.0, 256, None).unwrap();
        assert_eq!(inv.b, vec![768.0, 768.0, 256.0, 256.0]);
        let f = |b: &[f64]| objective_f(b, &W, 256).unwrap();
        let opt = waterfill_clipped(&W, 2048.0, 256, None).unwrap();
        let uni = uniform(4, 2048.0, None).unwrap();
        assert!(f(&inv.b) >= f(&uni.b) && f(&uni.b) >= f(&opt.b));
    }

    #[test]
    fn integerize_exact_plans_are_unchanged() {
        let p = waterfill_clipped(&W, 2048.0, 256, None).unwrap();
        let ip = integerize(&p, 256).unwrap();
        assert_eq!(ip.bits_per_coord, vec![1, 1, 3, 3]);
        assert_eq!(ip.total(), 2048.0);
        let ip = integerize(&inverse_weighted_baseline(&W, 1024.0, 256, None).unwrap(), 256).unwrap();
        assert_eq!(ip.bits_per_coord, vec![2, 2, 0, 0]);
    }

    #[test]
    fn integerize_repairs_budget() {
        // 1.5 bits each rounds to 2 each: over by 2 bits, remove from the cheapest nodes
        let p = waterfill_clipped(&[1.0, 1.0, 1.0, 1.0], 6.0 * 16.0, 16, None).unwrap();
        let ip = integerize(&p, 16).unwrap();
        assert_eq!(ip.bits_per_coord.iter().map(|&b| b as u32).sum::<u32>(), 6);
        // fill: a budget of 7 bits leaves one more bit for the heaviest node
        let p = waterfill_clipped(&[1.0, 8.0], 7.0 * 4.0, 4, None).unwrap();
        let ip = integerize(&p, 4).unwrap();
        assert_eq!(ip.total(), 28.0);
        assert!(ip.bits_per_coord[1] >= ip.bits_per_coord[0]);
    }

    fn random_feasible(rng: &mut ChaCha8Rng, k: usize, b_tot: f64, cap: Option<f64>) -> Vec<f64> {
        match cap {
            None => {
                let e: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().ln()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|x| x / s * b_tot).collect()
            }
            Some(c) => {
                let mut u: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * c).collect();
                let s: f64 = u.iter().sum();
                if s > b_tot {
                    u.iter_mut().for_each(|x| *x *= b_tot / s);
                } else {
                    let head: f64 = u.iter().map(|x| c - x).sum();
                    let deficit = b_tot - s;
                    u.iter_mut().for_each(|x| *x += (c - *x) * deficit / head);
                }
                u
            }
        }
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, f64, usize, Option<f64>)> {
        (1usize..24, any::<u64>()).prop_map(|(k, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = [1usize, 4, 16, 256][rng.gen_range(0..4)];
            let w: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.gen_range(-3.0..3.0))).collect();
            let b_tot = rng.gen_range(0.0..8.0) * v as f64 * k as f64;
            let cap = if rng.gen_bool(0.6) { Some(b_tot / k as f64 * rng.gen_range(1.0..3.0)) } else { None };
            (w, b_tot, v, cap)
        })
    }

    proptest! {
        #[test]
        fn clipped_matches_oracle((w, b_tot, v, cap) in instance()) {
            let a = waterfill_clipped(&w, b_tot, v, cap).unwrap();
            let b = kkt_oracle(&w, b_tot, v, cap).unwrap();
            for (x, y) in a.b.iter().zip(&b.b) {
                prop_assert!((x - y).abs() <= 1e-6, "{:?} vs {:?}", a.b, b.b);
            }
            prop_assert!((a.b.iter().sum::<f64>() - b_tot).abs() <= BUDGET_TOL * b_tot.max(1.0));
            let c = cap.unwrap_or(f64::INFINITY);
            prop_assert!(a.b.iter().all(|&x| (0.0..=c).contains(&x)));
        }

        #[test]
        fn clipped_beats_random_feasible((w, b_tot, v, cap) in instance(), seed in any::<u64>()) {
            let opt = waterfill_clipped(&w, b_tot, v, cap).unwrap();
            let f_opt = opt.objective(v);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..100 {
                let b = random_feasible(&mut rng, w.len(), b_tot, cap);
                prop_assert!(f_opt <= objective_f(&b, &w, v).unwrap() * (1.0 + 1e-12));
            }
        }

        #[test]
        fn interior_marginals_are_equal((w, b_tot, v, cap) in instance()) {
            let p = waterfill_clipped(&w, b_tot, v, cap).unwrap();
            let marg: Vec<f64> = (0..w.len())
                .filter(|&i| !p.saturated[i])
                .map(|i| w[i] * (-2.0 * p.b[i] / v as f64).exp2())
                .collect();
            if let Some(&first) = marg.first() {
                prop_assert!(marg.iter().all(|m| (m / first - 1.0).abs() < 1e-9));
            }
        }

        #[test]
        fn permutation_equivariance((w, b_tot, v, cap) in instance(), seed in any::<u64>()) {
            let mut perm: Vec<usize> = (0..w.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let wp: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
            let a = waterfill_clipped(&w, b_tot, v, cap).unwrap();
            let b = waterfill_clipped(&wp, b_tot, v, cap).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert!((b.b[j] - a.b[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn weight_scale_invariance((w, b_tot, v, cap) in instance(), c in 1e-3f64..1e3) {
            let ws: Vec<f64> = w.iter().map(|x| x * c).collect();
            let a = waterfill_clipped(&w, b_tot, v, cap).unwrap();
            let b = waterfill_clipped(&ws, b_tot, v, cap).unwrap();
            for (x, y) in a.b.iter().zip(&b.b) {
                prop_assert!((x - y).abs() < 1e-9 * b_tot.max(1.0));
            }
        }

        #[test]
        fn integerized_plan_respects_budget_and_cap((w, b_tot, v, cap) in instance()) {
            for policy in Policy::ALL {
                let p = policy.plan(&w, b_tot, v, cap).unwrap();
                let ip = integerize(&p, v).unwrap();
                prop_assert!(ip.total() <= b_tot + 1e-9);
                prop_assert!(ip.total() + v as f64 > b_tot
                    || ip.bits_per_coord.iter().all(|&b| cap.map_or(b == MAX_BITS_PER_COORD, |c| (b as f64 + 1.0) * v as f64 > c)));
            }
        }
    }
}
