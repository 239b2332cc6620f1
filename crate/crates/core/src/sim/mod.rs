//! Synthetic probe-logit simulator.
//!
//! Each seed draws `m` probe contexts with ground-truth logits, lets every
//! node observe them with Gaussian estimation noise, pushes the observations
//! through the quantized uplink as real wire payloads, and measures the KL
//! divergence between the truth and the softmax of the aggregated logits.

mod config;
mod sweeps;

pub use config::{Mode, SimConfig};
pub use sweeps::{
    pilot_plan, reference_weights, run_adaptive, run_points, run_warmup, second_moment_weights, summarize,
    sweep_adaptive, sweep_fig1, sweep_fig2, AdaptiveConfig, AdaptiveDiagnostic, AdaptiveOutcome, BoundConstants,
    Fig1Config, Fig2Config, PointSummary, ReferenceWeights, ResultRow,
};

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::adaptive::WarmupRecord;
use crate::error::{FpldError, Result};
use crate::quant::{
    dequantize_with_dither, quantize_vector, refine_sequential, DitherStream, QuantizerSpec, RefinementSchedule,
};
use crate::rng::{Lane, StreamKey};
use crate::softmax::{kl, nondegeneracy_cp, softmax, ProbVector};
use crate::wire::{pack, unpack, PayloadHeader, HEADER_LEN};

/// Ground truth for one seed: `m` logit rows and their softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<ProbVector>,
}

impl Truth {
    pub fn cp(&self) -> f64 {
        nondegeneracy_cp(&self.probs).expect("m >= 1")
    }
}

/// Draw `m` truth rows: `V` standard normals scaled by `truth_scale`,
/// clamped to `[-L, L]` and shifted to zero mean.
pub fn gen_truth(cfg: &SimConfig, seed: u64) -> Truth {
    let mut logits = Vec::with_capacity(cfg.m);
    for l in 0..cfg.m {
        let mut rng = StreamKey::new(cfg.experiment_id, seed, Lane::Truth).probe(l as u32).rng();
        let mut row: Vec<f64> = (0..cfg.v)
            .map(|_| (cfg.truth_scale * rng.sample::<f64, _>(StandardNormal)).clamp(-cfg.clip, cfg.clip))
            .collect();
        let mean = row.iter().sum::<f64>() / cfg.v as f64;
        row.iter_mut().for_each(|x| *x -= mean);
        logits.push(row);
    }
    let probs = logits.iter().map(|r| softmax(r)).collect();
    Truth { logits, probs }
}

/// Noisy local estimate `clamp(truth + g, -clip, clip)` with
/// `g ~ N(0, noise_sd^2)` drawn from `key`'s stream.
pub fn node_observe(truth: &[f64], noise_sd: f64, clip: f64, key: StreamKey) -> Vec<f64> {
    node_observe_counted(truth, noise_sd, clip, key).0
}

/// [`node_observe`] plus the number of coordinates the clamp changed.
pub fn node_observe_counted(truth: &[f64], noise_sd: f64, clip: f64, key: StreamKey) -> (Vec<f64>, usize) {
    let mut clipped = 0;
    let mut clamp = |x: f64| {
        clipped += (x.abs() > clip) as usize;
        x.clamp(-clip, clip)
    };
    let out = if noise_sd == 0.0 {
        truth.iter().map(|&x| clamp(x)).collect()
    } else {
        let mut rng = key.rng();
        truth.iter().map(|x| clamp(x + noise_sd * rng.sample::<f64, _>(StandardNormal))).collect()
    };
    (out, clipped)
}

/// Node `i`'s observation of probe `l`; fixed per (seed, node, probe).
pub fn observe(cfg: &SimConfig, seed: u64, node: usize, probe: usize, truth_row: &[f64]) -> (Vec<f64>, usize) {
    let key = StreamKey::new(cfg.experiment_id, seed, Lane::Observation).node(node as u32).probe(probe as u32);
    node_observe_counted(truth_row, cfg.noise_sd(), cfg.node_clip(node), key)
}

/// Public dither seed the aggregator announces for a run.
pub fn dither_seed(experiment_id: u64, seed: u64) -> u64 {
    StreamKey::new(experiment_id, seed, Lane::DitherSeed).rng().next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Mean over probes of `KL(p* || student)`.
    pub kl: f64,
    /// Empirical non-degeneracy constant of this seed's truth.
    pub cp: f64,
    /// Coordinates where the node-side clip was active, summed over nodes.
    pub clipped: usize,
    /// Every uplink payload, in send order.
    pub payloads: Vec<Vec<u8>>,
}

fn check_budget_law(bytes: &[u8], header: &PayloadHeader) -> Result<()> {
    let body_bits = header.probe_count as u64 * header.vocab as u64 * header.bits_per_coord as u64;
    let body_len = bytes.len() - HEADER_LEN;
    if body_bits != header.body_bits() || body_len as u64 != body_bits.div_ceil(8) {
        return Err(FpldError::Protocol(format!(
            "payload body of {body_len} bytes breaks the m*V*bits = {body_bits} budget"
        )));
    }
    Ok(())
}

/// Node side of one round: quantize `rows` and serialize.
fn node_send(
    cfg: &SimConfig,
    dseed: u64,
    node: usize,
    round: usize,
    spec: &QuantizerSpec,
    rows: &[Vec<f64>],
) -> Result<Vec<u8>> {
    let stream = DitherStream::new(dseed, node as u16, round as u16);
    let mut indices = Vec::with_capacity(cfg.m * cfg.v);
    for (l, row) in rows.iter().enumerate() {
        indices.extend_from_slice(&quantize_vector(spec, row, &stream, l as u32)?.indices);
    }
    let header = header_for(cfg, dseed, node, round, spec);
    let bytes = pack(&header, &indices)?;
    check_budget_law(&bytes, &header)?;
    Ok(bytes)
}

fn header_for(cfg: &SimConfig, dseed: u64, node: usize, round: usize, spec: &QuantizerSpec) -> PayloadHeader {
    PayloadHeader {
        node_id: node as u16,
        round: round as u16,
        probe_count: cfg.m as u32,
        vocab: cfg.v as u32,
        bits_per_coord: spec.bits_per_coord(),
        clip: spec.clip(),
        dither_seed: dseed,
    }
}

/// Aggregator side: parse a payload and reconstruct its `m` rows, adding
/// them into `acc`. Dither is regenerated from the header unless the round
/// is undithered by protocol.
fn receive_into(bytes: &[u8], dithered: bool, acc: &mut [Vec<f64>]) -> Result<PayloadHeader> {
    let (header, indices) = unpack(bytes)?;
    check_budget_law(bytes, &header)?;
    let spec = QuantizerSpec::new(header.clip, header.bits_per_coord)?;
    let v = header.vocab as usize;
    if header.probe_count as usize != acc.len() {
        return Err(FpldError::Protocol(format!(
            "payload carries {} probes, expected {}",
            header.probe_count,
            acc.len()
        )));
    }
    let stream = DitherStream::new(header.dither_seed, header.node_id, header.round);
    let mut dither = vec![0.0; v];
    for (l, row) in acc.iter_mut().enumerate() {
        if dithered {
            stream.fill(l as u32, spec.step(), &mut dither);
        }
        let r = dequantize_with_dither(&spec, &indices[l * v..(l + 1) * v], &dither)?;
        row.iter_mut().zip(&r).for_each(|(a, x)| *a += x);
    }
    Ok(header)
}

fn finish(
    cfg: &SimConfig,
    truth: &Truth,
    mut sum: Vec<Vec<f64>>,
    clipped: usize,
    payloads: Vec<Vec<u8>>,
) -> Result<RunOutcome> {
    let k = cfg.k as f64;
    let mut total = 0.0;
    for (row, p) in sum.iter_mut().zip(&truth.probs) {
        row.iter_mut().for_each(|x| *x /= k);
        let student = softmax(row);
        let d = kl(p, &student)?;
        debug_assert!(d.is_finite() && d >= 0.0);
        total += d;
    }
    Ok(RunOutcome { kl: total / cfg.m as f64, cp: truth.cp(), clipped, payloads })
}

fn observations(cfg: &SimConfig, seed: u64, truth: &Truth, node: usize) -> (Vec<Vec<f64>>, usize) {
    let mut clipped = 0;
    let rows = truth
        .logits
        .iter()
        .enumerate()
        .map(|(l, row)| {
            let (obs, c) = observe(cfg, seed, node, l, row);
            clipped += c;
            obs
        })
        .collect();
    (rows, clipped)
}

/// One round of the single-shot protocol at `round`, with the per-node bits
/// of `cfg`. Optionally records the aggregator's per-node reconstructions.
fn single_round(
    cfg: &SimConfig,
    seed: u64,
    truth: &Truth,
    round: usize,
    mut warmup: Option<&mut WarmupRecord>,
) -> Result<RunOutcome> {
    let dseed = dither_seed(cfg.experiment_id, seed);
    let mut sum = vec![vec![0.0; cfg.v]; cfg.m];
    let mut clipped = 0;
    let mut payloads = Vec::with_capacity(cfg.k);
    let mut node_acc = vec![vec![0.0; cfg.v]; cfg.m];
    for node in 0..cfg.k {
        let spec = QuantizerSpec::new(cfg.node_clip(node), cfg.node_bits(node))?;
        let (rows, c) = observations(cfg, seed, truth, node);
        clipped += c;
        let bytes = node_send(cfg, dseed, node, round, &spec, &rows)?;
        node_acc.iter_mut().for_each(|r| r.iter_mut().for_each(|x| *x = 0.0));
        receive_into(&bytes, true, &mut node_acc)?;
        for (s, r) in sum.iter_mut().zip(&node_acc) {
            s.iter_mut().zip(r).for_each(|(a, x)| *a += x);
        }
        if let Some(rec) = warmup.as_deref_mut() {
            for r in &node_acc {
                rec.push(node, r)?;
            }
        }
        payloads.push(bytes);
    }
    finish(cfg, truth, sum, clipped, payloads)
}

/// Single-shot protocol: every node sends one payload, the aggregator
/// averages the reconstructions and the student is their softmax.
pub fn run_fpld(cfg: &SimConfig, seed: u64) -> Result<RunOutcome> {
    cfg.validate()?;
    let truth = gen_truth(cfg, seed);
    single_round(cfg, seed, &truth, 1, None)
}

/// Same as [`run_fpld`] but at a given round index and with the truth
/// supplied; the warm-up record, if any, receives the reconstructions.
pub(crate) fn run_round(
    cfg: &SimConfig,
    seed: u64,
    truth: &Truth,
    round: usize,
    warmup: Option<&mut WarmupRecord>,
) -> Result<RunOutcome> {
    single_round(cfg, seed, truth, round, warmup)
}

/// Multi-round residual refinement: each node sends `T` payloads, one per
/// round, and the aggregator sums them before averaging across nodes.
pub fn run_sequential(cfg: &SimConfig, seed: u64) -> Result<RunOutcome> {
    cfg.validate()?;
    let schedule = match cfg.mode {
        Mode::SequentialRefinement => cfg.refinement,
        Mode::FixedResend => RefinementSchedule::Fixed,
        Mode::Vanilla => return run_fpld(cfg, seed),
    };
    let truth = gen_truth(cfg, seed);
    let dseed = dither_seed(cfg.experiment_id, seed);
    let t_rounds = cfg.rounds;
    let mut sum = vec![vec![0.0; cfg.v]; cfg.m];
    let mut clipped = 0;
    let mut payloads = Vec::with_capacity(cfg.k * t_rounds);
    for node in 0..cfg.k {
        let (clip, bits) = (cfg.node_clip(node), cfg.node_bits(node));
        let (rows, c) = observations(cfg, seed, &truth, node);
        clipped += c;
        let mut per_round: Vec<Vec<u32>> = vec![Vec::with_capacity(cfg.m * cfg.v); t_rounds];
        let mut specs = Vec::new();
        for (l, row) in rows.iter().enumerate() {
            let rounds = refine_sequential(clip, bits, row, t_rounds, schedule, l as u32, |t| {
                DitherStream::new(dseed, node as u16, t as u16)
            })?;
            if specs.is_empty() {
                specs = rounds.iter().map(|r| r.spec).collect();
            }
            for (t, r) in rounds.into_iter().enumerate() {
                per_round[t].extend_from_slice(&r.indices);
            }
        }
        for (t, indices) in per_round.iter().enumerate() {
            let header = header_for(cfg, dseed, node, t + 1, &specs[t]);
            let bytes = pack(&header, indices)?;
            check_budget_law(&bytes, &header)?;
            receive_into(&bytes, schedule.round_is_dithered(t + 1), &mut sum)?;
            payloads.push(bytes);
        }
    }
    finish(cfg, &truth, sum, clipped, payloads)
}

/// Dispatch on `cfg.mode`.
pub fn run(cfg: &SimConfig, seed: u64) -> Result<RunOutcome> {
    match cfg.mode {
        Mode::Vanilla => run_fpld(cfg, seed),
        _ => run_sequential(cfg, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::softmax::hessian_trace;

    fn exact(k: usize, bits: u8) -> SimConfig {
        SimConfig { k, bits, exact_logits: true, ..SimConfig::default() }
    }

    #[test]
    fn zero_scale_truth_is_uniform() {
        let cfg = SimConfig { truth_scale: 0.0, ..SimConfig::default() };
        let t = gen_truth(&cfg, 1);
        assert!((t.cp() - (1.0 - 1.0 / 256.0)).abs() < 1e-15);
    }

    #[test]
    fn truth_is_deterministic_in_seed() {
        let cfg = SimConfig::default();
        assert_eq!(gen_truth(&cfg, 5), gen_truth(&cfg, 5));
        assert_ne!(gen_truth(&cfg, 5), gen_truth(&cfg, 6));
    }

    #[test]
    fn unit_scale_truth_cp() {
        let cfg = SimConfig { truth_scale: 1.0, ..SimConfig::default() };
        let cp = gen_truth(&cfg, 0).cp();
        assert!(cp > 0.9 && cp < 1.0, "{cp}");
        // regression fixture
        assert!((cp - 0.99426).abs() < 5e-4, "{cp}");
    }

    #[test]
    fn observation_noise_variance() {
        let truth = vec![0.0; 100_000];
        let key = StreamKey::new(0, 3, Lane::Observation).node(1);
        let obs = node_observe(&truth, (1.0f64 / 100.0).sqrt(), 10.0, key);
        let var = obs.iter().map(|x| x * x).sum::<f64>() / obs.len() as f64;
        assert!((var * 100.0 - 1.0).abs() < 0.05, "{var}");
        assert_eq!(node_observe(&truth[..10], 0.0, 1.0, key), vec![0.0; 10]);
    }

    #[test]
    fn nodes_are_independent() {
        let truth = vec![0.0; 100_000];
        let key = |node| StreamKey::new(0, 3, Lane::Observation).node(node);
        let a = node_observe(&truth, 1.0, 10.0, key(0));
        assert_eq!(a, node_observe(&truth, 1.0, 10.0, key(0)));
        let b = node_observe(&truth, 1.0, 10.0, key(1));
        let r = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>()
            / (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|x| x * x).sum::<f64>()).sqrt();
        assert!(r.abs() < 0.01, "{r}");
    }

    #[test]
    fn lossless_channel_gives_zero_kl() {
        // Mean-centering can push a clamped truth coordinate past L; keep the
        // truth well inside the range so only quantization error remains.
        let cfg = SimConfig { truth_scale: 0.1, ..exact(3, 20) };
        let out = run_fpld(&cfg, 0).unwrap();
        assert_eq!(out.clipped, 0);
        assert!(out.kl < 1e-11, "{}", out.kl);
    }

    #[test]
    fn payloads_follow_budget_law() {
        let cfg = SimConfig { k: 3, bits: 5, m: 7, v: 11, ..SimConfig::default() };
        let out = run_fpld(&cfg, 2).unwrap();
        assert_eq!(out.payloads.len(), 3);
        for p in &out.payloads {
            assert_eq!(p.len(), HEADER_LEN + (7usize * 11 * 5).div_ceil(8));
        }
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = SimConfig { k: 2, bits: 3, ..SimConfig::default() };
        assert_eq!(run_fpld(&cfg, 9).unwrap(), run_fpld(&cfg, 9).unwrap());
    }

    #[test]
    fn single_round_refinement_is_vanilla() {
        let cfg = SimConfig { k: 3, bits: 3, mode: Mode::SequentialRefinement, rounds: 1, ..SimConfig::default() };
        let a = run_sequential(&cfg, 4).unwrap();
        let b = run_fpld(&SimConfig { mode: Mode::Vanilla, ..cfg }, 4).unwrap();
        assert_eq!(a.kl, b.kl);
        assert_eq!(a.payloads, b.payloads);
    }

    #[test]
    fn second_order_law_single_seed() {
        let cfg = exact(1, 4);
        let out = run_fpld(&cfg, 0).unwrap();
        let truth = gen_truth(&cfg, 0);
        let step: f64 = 2.0 / 16.0;
        let tr = truth.probs.iter().map(|p| hessian_trace(p)).sum::<f64>() / cfg.m as f64;
        let pred = step * step / 12.0 / 2.0 * tr;
        assert!((out.kl / pred - 1.0).abs() < 0.3, "{} vs {pred}", out.kl);
    }
}
