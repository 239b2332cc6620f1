//! Experiment drivers: per-seed work units run on a local thread pool and
//! collected in submission order, so output never depends on `jobs`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::{gen_truth, run_fpld, run_round, SimConfig, Truth};
use crate::adaptive::{
    adaptive_allocate, estimate_weights, suboptimality_ratio, WarmupRecord, WeightEstimate, DEFAULT_W_FLOOR,
};
use crate::alloc::{integerize, uniform, waterfill_clipped, IntegerPlan, Policy};
use crate::bounds::{lower_bound_fpld, upper_bound_heterogeneous, upper_bound_homogeneous, BoundParams};
use crate::error::{invalid, FpldError, Result};

/// One CSV row: one seed at one sweep point under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: u64,
    pub sweep_name: String,
    pub sweep_value: f64,
    pub policy: String,
    pub seed: u64,
    pub kl: f64,
    pub upper_bound: Option<f64>,
    pub lower_bound: Option<f64>,
}

/// Run `f` over `items` on `jobs` threads (0 = all cores), keeping order.
pub fn run_points<I, T, F>(items: &[I], jobs: usize, f: F) -> Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConstants {
    pub c1: f64,
    pub c2: f64,
    pub delta: f64,
    pub rho: f64,
    /// Student dimension; defaults to `V` (free logits per probe).
    pub d: Option<f64>,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self { c1: 1.0, c2: 1.0, delta: 0.05, rho: 1.0, d: None }
    }
}

impl BoundConstants {
    fn params(&self, sim: &SimConfig, k: usize) -> BoundParams {
        BoundParams {
            d: self.d.unwrap_or(sim.v as f64),
            k,
            n: sim.effective_n(),
            m: sim.m,
            v: sim.v,
            delta: self.delta,
            rho: self.rho,
            l: sim.clip,
            c1: self.c1,
            c2: self.c2,
            ..BoundParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig1Config {
    #[serde(rename = "K_values")]
    pub k_values: Vec<usize>,
    /// Bits per coordinate held fixed during the K sweep.
    pub k_sweep_bits: u8,
    pub bits_values: Vec<u8>,
    /// Node count held fixed during the bits sweep.
    #[serde(rename = "bits_sweep_K")]
    pub bits_sweep_k: usize,
    pub bounds: BoundConstants,
}

impl Default for Fig1Config {
    fn default() -> Self {
        Self {
            k_values: vec![2, 4, 8, 16],
            k_sweep_bits: 4,
            bits_values: (2..=8).collect(),
            bits_sweep_k: 4,
            bounds: BoundConstants::default(),
        }
    }
}

struct Fig1Point {
    name: &'static str,
    value: f64,
    k: usize,
    bits: u8,
}

/// K sweep at fixed bits and bits sweep at fixed K, homogeneous nodes.
pub fn sweep_fig1(sim: &SimConfig, fig: &Fig1Config, jobs: usize) -> Result<Vec<ResultRow>> {
    sim.validate()?;
    let mut points: Vec<Fig1Point> =
        fig.k_values.iter().map(|&k| Fig1Point { name: "K", value: k as f64, k, bits: fig.k_sweep_bits }).collect();
    points.extend(fig.bits_values.iter().map(|&b| Fig1Point {
        name: "bits_per_coord",
        value: b as f64,
        k: fig.bits_sweep_k,
        bits: b,
    }));
    let mut items = Vec::new();
    for (pi, p) in points.iter().enumerate() {
        let cfg = SimConfig { k: p.k, bits: p.bits, node_clips: None, node_bits: None, ..sim.clone() };
        cfg.validate()?;
        let params = BoundParams { b: Some(p.bits as f64 * sim.v as f64), ..fig.bounds.params(sim, p.k) };
        let upper = upper_bound_homogeneous(&params)?.total;
        for &seed in &sim.seeds {
            items.push((pi, cfg.clone(), params.clone(), upper, seed));
        }
    }
    run_points(&items, jobs, |(pi, cfg, params, upper, seed)| {
        let out = run_fpld(cfg, *seed)?;
        let lower = lower_bound_fpld(&BoundParams { cp: out.cp, ..params.clone() })?.value;
        let p = &points[*pi];
        Ok(ResultRow {
            experiment_id: cfg.experiment_id,
            sweep_name: p.name.into(),
            sweep_value: p.value,
            policy: "fpld".into(),
            seed: *seed,
            kl: out.kl,
            upper_bound: Some(*upper),
            lower_bound: Some(lower),
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig2Config {
    /// Total budget per probe divided by `V`.
    pub budgets_per_v: Vec<f64>,
    pub policies: Vec<Policy>,
    /// Allocation weights; defaults to `L_i^2`.
    pub weights: Option<Vec<f64>>,
    #[serde(rename = "B_max")]
    pub b_max: Option<f64>,
    pub bounds: BoundConstants,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self {
            budgets_per_v: vec![4.0, 8.0, 12.0, 16.0, 20.0],
            policies: Policy::ALL.to_vec(),
            weights: None,
            b_max: None,
            bounds: BoundConstants::default(),
        }
    }
}

impl Fig2Config {
    /// The heterogeneous deployment the sweep runs on by default.
    pub fn default_sim() -> SimConfig {
        SimConfig {
            k: 4,
            node_clips: Some(vec![1.0, 1.0, 4.0, 4.0]),
            seeds: (0..100).collect(),
            ..SimConfig::default()
        }
    }
}

fn clip_weights(sim: &SimConfig) -> Vec<f64> {
    sim.node_clip_list().iter().map(|l| l * l).collect()
}

fn het_params(sim: &SimConfig, consts: &BoundConstants, plan: &IntegerPlan) -> BoundParams {
    BoundParams { b_list: Some(plan.b.clone()), l_list: Some(sim.node_clip_list()), ..consts.params(sim, sim.k) }
}

/// Policy comparison on heterogeneous nodes over a range of total budgets.
pub fn sweep_fig2(sim: &SimConfig, fig: &Fig2Config, jobs: usize) -> Result<Vec<ResultRow>> {
    sim.validate()?;
    let w = fig.weights.clone().unwrap_or_else(|| clip_weights(sim));
    if w.len() != sim.k {
        return Err(invalid(format!("{} weights for K = {}", w.len(), sim.k)));
    }
    let mut items = Vec::new();
    for &per_v in &fig.budgets_per_v {
        let b_tot = per_v * sim.v as f64;
        for &policy in &fig.policies {
            let plan = integerize(&policy.plan(&w, b_tot, sim.v, fig.b_max)?, sim.v)?;
            let cfg = SimConfig { node_bits: Some(plan.bits_per_coord.clone()), ..sim.clone() };
            let upper = upper_bound_heterogeneous(&het_params(sim, &fig.bounds, &plan))?.total;
            for &seed in &sim.seeds {
                items.push((per_v, policy, cfg.clone(), upper, seed));
            }
        }
    }
    run_points(&items, jobs, |(per_v, policy, cfg, upper, seed)| {
        let out = run_fpld(cfg, *seed)?;
        Ok(ResultRow {
            experiment_id: cfg.experiment_id,
            sweep_name: "B_tot_per_V".into(),
            sweep_value: *per_v,
            policy: policy.name().into(),
            seed: *seed,
            kl: out.kl,
            upper_bound: Some(*upper),
            lower_bound: None,
        })
    })
}

/// Weights the adaptive plan is judged against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceWeights {
    /// `w_i = L_i^2`.
    #[default]
    ClipSquared,
    /// Population second moment of the pilot reconstructions, the quantity
    /// the warm-up estimator converges to.
    SecondMoment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    #[serde(rename = "B_tot_per_V")]
    pub b_tot_per_v: f64,
    #[serde(rename = "T0_values")]
    pub t0_values: Vec<usize>,
    /// Also emit oracle rows (plan on the reference weights, no warm-up).
    pub include_oracle: bool,
    pub reference: ReferenceWeights,
    /// Explicit reference weights, overriding `reference`.
    pub weights: Option<Vec<f64>>,
    #[serde(rename = "B_max")]
    pub b_max: Option<f64>,
    pub delta: f64,
    pub w_floor: f64,
    pub bounds: BoundConstants,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            b_tot_per_v: 8.0,
            t0_values: vec![1, 4, 16],
            include_oracle: true,
            reference: ReferenceWeights::ClipSquared,
            weights: None,
            b_max: None,
            delta: 0.05,
            w_floor: DEFAULT_W_FLOOR,
            bounds: BoundConstants::default(),
        }
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[clamp(s Z, -L, L)^2]` for standard normal `Z`.
fn clamped_normal_second_moment(s: f64, l: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    let a = l / s;
    let cdf = std_normal_cdf(a);
    s * s * ((2.0 * cdf - 1.0) - 2.0 * a * std_normal_pdf(a)) + 2.0 * l * l * (1.0 - cdf)
}

/// `E[clamp(mu + nu Z, -M, M)^2]` for standard normal `Z`.
fn shifted_clamped_second_moment(mu: f64, nu: f64, m: f64) -> f64 {
    if nu == 0.0 {
        return mu.clamp(-m, m).powi(2);
    }
    let (lo, hi) = ((-m - mu) / nu, (m - mu) / nu);
    let (fl, fh) = (std_normal_cdf(lo), std_normal_cdf(hi));
    let (pl, ph) = (std_normal_pdf(lo), std_normal_pdf(hi));
    let inside = mu * mu * (fh - fl) + 2.0 * mu * nu * (pl - ph) + nu * nu * ((fh - fl) + lo * pl - hi * ph);
    inside + m * m * (fl + (1.0 - fh))
}

/// Population mean square of node `i`'s reconstructions at the given bits.
///
/// A reconstruction of input `y` is `y + e` with `e ~ U(-step/2, step/2)`
/// while `|y| <= L_i - step/2`; beyond that the top cell always wins and the
/// reconstruction is `L_i - step/2 - u`. Either way
/// `E[r^2] = E[clamp(y, L_i - step/2)^2] + step^2/12`. The input is modeled as
/// `(1 - 1/V) clamp(s Z, L)` plus a normal term for the centering shift and
/// the observation noise.
pub fn second_moment_weights(sim: &SimConfig, bits: &[u8]) -> Vec<f64> {
    let v = sim.v as f64;
    let s = sim.truth_scale;
    let a = 1.0 - 1.0 / v;
    let var_c = clamped_normal_second_moment(s, sim.clip);
    let nu = (var_c * (v - 1.0) / (v * v) + sim.noise_sd().powi(2)).sqrt();
    // Simpson's rule over z in [-12, 12]
    let n = 4800;
    let h = 24.0 / n as f64;
    (0..sim.k)
        .map(|i| {
            let step = 2.0 * sim.node_clip(i) * (-(bits[i] as f64)).exp2();
            let m = sim.node_clip(i) - step / 2.0;
            let f = |z: f64| {
                std_normal_pdf(z) * shifted_clamped_second_moment(a * (s * z).clamp(-sim.clip, sim.clip), nu, m)
            };
            let mut acc = f(-12.0) + f(12.0);
            for j in 1..n {
                acc += f(-12.0 + j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0 + step * step / 12.0
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveOutcome {
    pub t0: usize,
    pub seed: u64,
    /// Stage-B KL.
    pub kl: f64,
    pub suboptimality_ratio: f64,
    pub w_hat: Vec<f64>,
    pub w_ref: Vec<f64>,
    pub eta_bound: f64,
    pub bits_per_coord: Vec<u8>,
    pub floored: Vec<usize>,
    pub upper_bound: f64,
}

/// Integer uniform allocation used during the warm-up.
pub fn pilot_plan(sim: &SimConfig, b_tot: f64, b_max: Option<f64>) -> Result<IntegerPlan> {
    integerize(&uniform(sim.k, b_tot, b_max)?, sim.v)
}

/// Stage A: `t0` rounds at the pilot bits, then the per-node estimates.
pub fn run_warmup(
    sim: &SimConfig,
    seed: u64,
    truth: &Truth,
    t0: usize,
    pilot_bits: &[u8],
    delta: f64,
) -> Result<WeightEstimate> {
    let pilot_cfg = SimConfig { node_bits: Some(pilot_bits.to_vec()), ..sim.clone() };
    let min_bits = pilot_bits.iter().copied().min().unwrap_or(0);
    let mut rec = WarmupRecord::new(t0, sim.m, sim.v, min_bits as f64, sim.node_clip_list());
    for t in 1..=t0 {
        run_round(&pilot_cfg, seed, truth, t, Some(&mut rec))?;
    }
    estimate_weights(&rec, delta)
}

pub fn reference_weights(sim: &SimConfig, acfg: &AdaptiveConfig, pilot_bits: &[u8]) -> Result<Vec<f64>> {
    let w = match (&acfg.weights, acfg.reference) {
        (Some(w), _) => w.clone(),
        (None, ReferenceWeights::ClipSquared) => clip_weights(sim),
        (None, ReferenceWeights::SecondMoment) => second_moment_weights(sim, pilot_bits),
    };
    if w.len() != sim.k {
        return Err(invalid(format!("{} reference weights for K = {}", w.len(), sim.k)));
    }
    Ok(w)
}

/// Two-stage protocol for one seed. `t0 = 0` skips the warm-up and plans on
/// the reference weights directly (oracle mode, sent in round 1).
pub fn run_adaptive(sim: &SimConfig, acfg: &AdaptiveConfig, seed: u64, t0: usize) -> Result<AdaptiveOutcome> {
    sim.validate()?;
    let truth: Truth = gen_truth(sim, seed);
    let b_tot = acfg.b_tot_per_v * sim.v as f64;
    let pilot = pilot_plan(sim, b_tot, acfg.b_max)?;
    let w_ref = reference_weights(sim, acfg, &pilot.bits_per_coord)?;
    let (w_hat, eta_bound, floored, plan) = if t0 == 0 {
        let plan = waterfill_clipped(&w_ref, b_tot, sim.v, acfg.b_max)?;
        (w_ref.clone(), 0.0, Vec::new(), plan)
    } else {
        let est = run_warmup(sim, seed, &truth, t0, &pilot.bits_per_coord, acfg.delta)?;
        let adaptive = adaptive_allocate(&est, b_tot, sim.v, acfg.b_max, acfg.w_floor)?;
        (est.w_hat, est.eta_bound, adaptive.floored, adaptive.plan)
    };
    let ratio = suboptimality_ratio(&w_ref, &plan.weights, b_tot, sim.v, acfg.b_max)?;
    let int_plan = integerize(&plan, sim.v)?;
    let stage_b = SimConfig { node_bits: Some(int_plan.bits_per_coord.clone()), ..sim.clone() };
    let round = u16::try_from(t0 + 1).map_err(|_| invalid("T0 must be below 65535"))? as usize;
    let out = run_round(&stage_b, seed, &truth, round, None)?;
    let upper = upper_bound_heterogeneous(&het_params(sim, &acfg.bounds, &int_plan))?.total;
    Ok(AdaptiveOutcome {
        t0,
        seed,
        kl: out.kl,
        suboptimality_ratio: ratio,
        w_hat,
        w_ref,
        eta_bound,
        bits_per_coord: int_plan.bits_per_coord,
        floored,
        upper_bound: upper,
    })
}

/// Per-seed diagnostics of the adaptive sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveDiagnostic {
    pub experiment_id: u64,
    #[serde(rename = "T0")]
    pub t0: usize,
    pub seed: u64,
    pub suboptimality_ratio: f64,
    pub eta_bound: f64,
    pub w_hat: String,
    pub w_ref: String,
    pub bits_per_coord: String,
    pub floored: usize,
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

pub fn sweep_adaptive(
    sim: &SimConfig,
    acfg: &AdaptiveConfig,
    jobs: usize,
) -> Result<(Vec<ResultRow>, Vec<AdaptiveDiagnostic>)> {
    sim.validate()?;
    if acfg.t0_values.contains(&0) {
        return Err(invalid("T0 values must be at least 1; oracle rows come from include_oracle"));
    }
    let mut t0s = Vec::new();
    if acfg.include_oracle {
        t0s.push(0);
    }
    t0s.extend(&acfg.t0_values);
    let items: Vec<(usize, u64)> = t0s.iter().flat_map(|&t0| sim.seeds.iter().map(move |&s| (t0, s))).collect();
    let outcomes = run_points(&items, jobs, |&(t0, seed)| run_adaptive(sim, acfg, seed, t0))?;
    let rows = outcomes
        .iter()
        .map(|o| ResultRow {
            experiment_id: sim.experiment_id,
            sweep_name: "T0".into(),
            sweep_value: o.t0 as f64,
            policy: if o.t0 == 0 { "oracle" } else { "adaptive" }.into(),
            seed: o.seed,
            kl: o.kl,
            upper_bound: Some(o.upper_bound),
            lower_bound: None,
        })
        .collect();
    let diags = outcomes
        .iter()
        .map(|o| AdaptiveDiagnostic {
            experiment_id: sim.experiment_id,
            t0: o.t0,
            seed: o.seed,
            suboptimality_ratio: o.suboptimality_ratio,
            eta_bound: o.eta_bound,
            w_hat: join(&o.w_hat),
            w_ref: join(&o.w_ref),
            bits_per_coord: join(&o.bits_per_coord),
            floored: o.floored.len(),
        })
        .collect();
    Ok((rows, diags))
}

/// Mean and standard error of `kl` per (sweep point, policy), in first-seen order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub sweep_name: String,
    pub sweep_value: f64,
    pub policy: String,
    pub seeds: usize,
    pub mean: f64,
    pub stderr: f64,
    pub upper_bound: Option<f64>,
    pub lower_bound: Option<f64>,
}

pub fn summarize(rows: &[ResultRow]) -> Vec<PointSummary> {
    let mut keys: Vec<(String, u64, String)> = Vec::new();
    let mut groups: Vec<Vec<&ResultRow>> = Vec::new();
    for r in rows {
        let key = (r.sweep_name.clone(), r.sweep_value.to_bits(), r.policy.clone());
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r),
            None => {
                keys.push(key);
                groups.push(vec![r]);
            }
        }
    }
    let mean_of = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    groups
        .into_iter()
        .map(|g| {
            let kls: Vec<f64> = g.iter().map(|r| r.kl).collect();
            let n = kls.len();
            let mean = mean_of(&kls);
            let var = if n > 1 { kls.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
            let opt_mean = |f: fn(&ResultRow) -> Option<f64>| {
                let xs: Option<Vec<f64>> = g.iter().map(|r| f(r)).collect();
                xs.map(|v| mean_of(&v))
            };
            PointSummary {
                sweep_name: g[0].sweep_name.clone(),
                sweep_value: g[0].sweep_value,
                policy: g[0].policy.clone(),
                seeds: n,
                mean,
                stderr: (var / n as f64).sqrt(),
                upper_bound: opt_mean(|r| r.upper_bound),
                lower_bound: opt_mean(|r| r.lower_bound),
            }
        })
        .collect()
}

impl From<csv::Error> for FpldError {
    fn from(e: csv::Error) -> Self {
        FpldError::InvalidInput(e.to_string())
    }
}
