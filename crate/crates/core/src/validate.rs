//! Fast invariant suite behind `fpld validate`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::adaptive::{suboptimality_ratio, transfer_bound};
use crate::alloc::{kkt_oracle, waterfill_clipped};
use crate::quant::{quantize_with_dither, DitherStream, QuantizerSpec};
use crate::softmax::{cumulant_kl_exact, hessian_trace, kl, softmax};
use crate::wire::{pack, unpack, PayloadHeader};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Samples per (clip, bits) cell in the dither checks.
    pub dither_samples: usize,
    /// Constant added to every reconstruction before the dither checks.
    /// A fault-injection hook: any nonzero value should make them fail.
    pub inject_bias: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { seed: 0, dither_samples: 200_000, inject_bias: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    /// Worst-case measured statistic.
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {:<28} statistic={:.4e} threshold={:.4e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            self.threshold,
            self.detail
        )
    }
}

fn result(name: &str, statistic: f64, threshold: f64, passed: bool, detail: String) -> PropertyResult {
    PropertyResult { name: name.into(), statistic, threshold, passed, detail }
}

/// Asymptotic Kolmogorov p-value for the one-sample statistic `d` over `n` points.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS statistic of `xs` against Uniform(lo, hi).
pub fn ks_uniform(xs: &mut [f64], lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Error statistics of the dithered channel for one (clip, bits) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DitherStats {
    pub mean: f64,
    pub stderr: f64,
    /// Variance relative to `step^2 / 12`.
    pub var_ratio: f64,
    pub ks_p: f64,
}

/// Inputs are drawn uniformly from `[-clip + step/2, clip - step/2]`, where
/// neither the input clamp nor the index clamp can engage.
pub fn dither_channel_stats(clip: f64, bits: u8, samples: usize, seed: u64, bias: f64) -> Result<DitherStats> {
    let spec = QuantizerSpec::new(clip, bits)?;
    let step = spec.step();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunk = 4096;
    let mut errs = Vec::with_capacity(samples);
    let stream = DitherStream::new(seed, bits as u16, clip.to_bits() as u16);
    let mut probe = 0u32;
    while errs.len() < samples {
        let n = chunk.min(samples - errs.len());
        let half = clip - step / 2.0;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-half..=half)).collect();
        let q = quantize_with_dither(&spec, &xs, &stream.dither(probe, step, n))?;
        errs.extend(q.reconstruction.iter().zip(&xs).map(|(r, x)| r + bias - x));
        probe += 1;
    }
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let d = ks_uniform(&mut errs, -step / 2.0, step / 2.0);
    Ok(DitherStats {
        mean,
        stderr: (var / n).sqrt(),
        var_ratio: var / (step * step / 12.0),
        ks_p: ks_p_value(d, samples),
    })
}

fn check_dither(opts: &ValidateOptions) -> Result<Vec<PropertyResult>> {
    let mut worst_z: (f64, String) = (0.0, String::new());
    let mut worst_var: (f64, String) = (0.0, String::new());
    let mut worst_p: (f64, String) = (1.0, String::new());
    for (ci, &clip) in [1.0, 4.0].iter().enumerate() {
        for (bi, &bits) in [1u8, 2, 4, 8].iter().enumerate() {
            let seed = opts.seed.wrapping_add((ci * 4 + bi) as u64);
            let s = dither_channel_stats(clip, bits, opts.dither_samples, seed, opts.inject_bias)?;
            let cell = format!("L={clip} bits={bits}");
            let z = (s.mean / s.stderr).abs();
            if z >= worst_z.0 {
                worst_z = (z, cell.clone());
            }
            let dv = (s.var_ratio - 1.0).abs();
            if dv >= worst_var.0 {
                worst_var = (dv, cell.clone());
            }
            if s.ks_p <= worst_p.0 {
                worst_p = (s.ks_p, cell);
            }
        }
    }
    Ok(vec![
        result("dither-unbiased", worst_z.0, 4.0, worst_z.0 < 4.0, format!("|mean|/stderr, worst at {}", worst_z.1)),
        result(
            "dither-variance",
            worst_var.0,
            0.01,
            worst_var.0 < 0.01,
            format!("|var/(step^2/12) - 1|, worst at {}", worst_var.1),
        ),
        result("dither-uniform-ks", worst_p.0, 1e-3, worst_p.0 > 1e-3, format!("KS p-value, worst at {}", worst_p.1)),
    ])
}

fn check_cumulant(rng: &mut ChaCha8Rng) -> Result<PropertyResult> {
    let mut worst: f64 = 0.0;
    for i in 0..3000 {
        let v = [2, 16, 256][i % 3];
        let logits: Vec<f64> = (0..v).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        // the kl(softmax) path loses ~eps/sqrt(kl) to rounding in the two
        // softmaxes, so the comparison is only tight away from tiny kl
        let shifted: Vec<f64> = logits.iter().map(|l| l + rng.sample::<f64, _>(StandardNormal)).collect();
        let eta: Vec<f64> = shifted.iter().zip(&logits).map(|(s, l)| s - l).collect();
        let direct = kl(&softmax(&logits), &softmax(&shifted))?;
        if direct < 1e-2 {
            continue;
        }
        let cum = cumulant_kl_exact(&logits, &eta)?;
        worst = worst.max((cum - direct).abs() / direct);
    }
    Ok(result(
        "cumulant-identity",
        worst,
        1e-12,
        worst <= 1e-12,
        "max relative gap to kl(softmax), pairs with kl >= 1e-2".into(),
    ))
}

fn check_trace(rng: &mut ChaCha8Rng) -> PropertyResult {
    let mut worst: f64 = f64::INFINITY;
    for _ in 0..20_000 {
        let v = rng.gen_range(2..64);
        let mut p: Vec<f64> = (0..v).map(|_| -rng.gen::<f64>().ln()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        let max = p.iter().copied().fold(0.0, f64::max);
        let tr = hessian_trace(&p);
        worst = worst.min((tr - (1.0 - max)).min(1.0 - tr));
    }
    result("trace-bounds", worst, 0.0, worst >= -1e-12, "min slack of 1-max(p) <= tr <= 1".into())
}

fn check_allocation(rng: &mut ChaCha8Rng) -> Result<PropertyResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.gen_range(1..=64);
        let v = [16, 256][rng.gen_range(0..2)];
        let w: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.gen_range(-3.0..3.0))).collect();
        let b_tot = rng.gen_range(0.5..16.0) * (k * v) as f64;
        let cap = if rng.gen_bool(0.5) { Some(b_tot / k as f64 * rng.gen_range(1.0..3.0)) } else { None };
        let a = waterfill_clipped(&w, b_tot, v, cap)?;
        let o = kkt_oracle(&w, b_tot, v, cap)?;
        worst = a.b.iter().zip(&o.b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    Ok(result("waterfill-vs-kkt", worst, 1e-6, worst <= 1e-6, "max |B_i - B_i^kkt| in bits".into()))
}

fn check_transfer(rng: &mut ChaCha8Rng) -> Result<PropertyResult> {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..2000 {
        let k = rng.gen_range(2..=16);
        let eta = rng.gen_range(0.0..=0.5);
        let w: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.gen_range(-2.0..2.0))).collect();
        let w_hat: Vec<f64> = w.iter().map(|x| x * (1.0 + eta * rng.gen_range(-1.0..=1.0))).collect();
        let v = 256;
        let b_tot = 64.0 * (k * v) as f64;
        let r = suboptimality_ratio(&w, &w_hat, b_tot, v, None)?;
        worst = worst.max(r - transfer_bound(eta));
    }
    Ok(result("transfer-bound", worst, 0.0, worst <= 1e-12, "max ratio - (1 + 2 eta + 4 eta^2)".into()))
}

fn check_wire(rng: &mut ChaCha8Rng) -> Result<PropertyResult> {
    let mut failures = 0;
    for _ in 0..2000 {
        let bits = rng.gen_range(1..=32u8);
        let header = PayloadHeader {
            node_id: rng.gen(),
            round: rng.gen(),
            probe_count: rng.gen_range(1..8),
            vocab: rng.gen_range(1..40),
            bits_per_coord: bits,
            clip: rng.gen_range(0.1..10.0),
            dither_seed: rng.gen(),
        };
        let max = if bits == 32 { u32::MAX } else { (1u32 << bits) - 1 };
        let indices: Vec<u32> = (0..header.index_count()).map(|_| rng.gen_range(0..=max)).collect();
        let bytes = pack(&header, &indices)?;
        let ok = unpack(&bytes).map(|(h, i)| h == header && i == indices).unwrap_or(false)
            && (bytes.len() - crate::wire::HEADER_LEN) as u64 * 8 - header.body_bits() < 8;
        failures += (!ok) as usize;
    }
    Ok(result("wire-round-trip", failures as f64, 0.0, failures == 0, "failed round trips out of 2000".into()))
}

/// Run every property; the caller decides what to do with failures.
pub fn run_validation(opts: &ValidateOptions) -> Result<Vec<PropertyResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let mut out = check_dither(opts)?;
    out.push(check_cumulant(&mut rng)?);
    out.push(check_trace(&mut rng));
    out.push(check_allocation(&mut rng)?);
    out.push(check_transfer(&mut rng)?);
    out.push(check_wire(&mut rng)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_p_value_reference_points() {
        // Kolmogorov distribution: P(K > 1.3581) = 0.05, P(K > 1.9495) = 0.001
        let n = 1_000_000;
        let d = |lambda: f64| lambda / (n as f64).sqrt();
        assert!((ks_p_value(d(1.3581), n) - 0.05).abs() < 5e-4);
        assert!((ks_p_value(d(1.9495), n) - 0.001).abs() < 5e-5);
        assert_eq!(ks_p_value(0.0, n), 1.0);
    }

    #[test]
    fn clean_suite_passes() {
        for r in run_validation(&ValidateOptions::default()).unwrap() {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn injected_bias_is_caught() {
        let opts = ValidateOptions { dither_samples: 50_000, inject_bias: 1e-3, ..ValidateOptions::default() };
        let res = run_validation(&opts).unwrap();
        let unbiased = res.iter().find(|r| r.name == "dither-unbiased").unwrap();
        assert!(!unbiased.passed, "{unbiased}");
    }
}
