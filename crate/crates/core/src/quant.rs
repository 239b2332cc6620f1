//! Subtractively dithered uniform scalar quantization of clipped logits.
//!
//! A [`QuantizerSpec`] partitions `[-clip, clip]` into `2^bits` equal cells of
//! width `step = 2 * clip / 2^bits`. The encoder adds a dither `u` drawn
//! uniformly from `[-step/2, step/2]`, picks the cell of `y + u`, and the
//! decoder returns the cell midpoint minus the same `u`. Both sides regenerate
//! `u` from a [`DitherStream`], so the dither costs no uplink bits.
//!
//! For `y` inside `(-clip + step/2, clip - step/2)` the reconstruction error
//! is exactly uniform on `[-step/2, step/2]` and independent of `y`. Inputs
//! outside that band can land beyond the outer cells; they clamp to the
//! extreme index.

use rand::Rng;

use crate::error::{invalid, FpldError, Result};
use crate::rng::{Lane, StreamKey};

/// Largest supported width of one index.
pub const MAX_BITS_PER_COORD: u8 = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    clip: f64,
    bits_per_coord: u8,
    step: f64,
}

impl QuantizerSpec {
    pub fn new(clip: f64, bits_per_coord: u8) -> Result<Self> {
        if !(clip > 0.0) || !clip.is_finite() {
            return Err(invalid(format!("clip must be positive and finite, got {clip}")));
        }
        if bits_per_coord > MAX_BITS_PER_COORD {
            return Err(invalid(format!("bits_per_coord {bits_per_coord} exceeds {MAX_BITS_PER_COORD}")));
        }
        // exact in binary floating point: a power-of-two scaling
        let step = 2.0 * clip * (-(bits_per_coord as f64)).exp2();
        Ok(Self { clip, bits_per_coord, step })
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn bits_per_coord(&self) -> u8 {
        self.bits_per_coord
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of cells, `2^bits`.
    pub fn levels(&self) -> u64 {
        1u64 << self.bits_per_coord
    }

    pub fn max_index(&self) -> u32 {
        (self.levels() - 1) as u32
    }

    /// Largest possible reconstruction magnitude, `clip * (1 + 2^-bits)`.
    pub fn post_quantization_range(&self) -> f64 {
        self.clip + 0.5 * self.step
    }

    fn check_dither(&self, u: f64) -> Result<()> {
        if u.is_finite() && u.abs() <= 0.5 * self.step {
            Ok(())
        } else {
            Err(FpldError::InvalidDither { dither: u, step: self.step })
        }
    }

    /// Clamp `x` to `[-clip, clip]`, returning whether clipping was active.
    #[inline]
    pub fn clamp(&self, x: f64) -> (f64, bool) {
        if x > self.clip {
            (self.clip, true)
        } else if x < -self.clip {
            (-self.clip, true)
        } else {
            (x, false)
        }
    }

    #[inline]
    fn index_of(&self, y: f64, u: f64) -> u32 {
        let cell = ((y + u + self.clip) / self.step).floor();
        if cell <= 0.0 {
            0
        } else if cell >= self.max_index() as f64 {
            self.max_index()
        } else {
            cell as u32
        }
    }

    #[inline]
    fn reconstruct(&self, index: u32, u: f64) -> f64 {
        -self.clip + (index as f64 + 0.5) * self.step - u
    }

    pub fn encode(&self, x: f64, u: f64) -> Result<u32> {
        if !x.is_finite() {
            return Err(FpldError::InvalidInput(format!("non-finite logit {x}")));
        }
        self.check_dither(u)?;
        Ok(self.index_of(self.clamp(x).0, u))
    }

    pub fn decode(&self, index: u32, u: f64) -> Result<f64> {
        if index > self.max_index() {
            return Err(FpldError::Protocol(format!("index {index} out of range for {} bits", self.bits_per_coord)));
        }
        self.check_dither(u)?;
        Ok(self.reconstruct(index, u))
    }
}

/// Finite length-V vector of pre-softmax scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FpldError::InvalidInput(format!("logit {i} is not finite: {}", values[i])));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for LogitVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Shared public randomness for one (node, round): the probe index selects
/// the stream, the coordinate is the position in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DitherStream {
    pub seed: u64,
    pub node: u16,
    pub round: u16,
}

impl DitherStream {
    pub fn new(seed: u64, node: u16, round: u16) -> Self {
        Self { seed, node, round }
    }

    fn key(&self, probe: u32) -> StreamKey {
        StreamKey::new(0, self.seed, Lane::Dither).node(self.node as u32).round(self.round as u32).probe(probe)
    }

    /// Fill `out` with i.i.d. uniform dither on `[-step/2, step/2)`.
    pub fn fill(&self, probe: u32, step: f64, out: &mut [f64]) {
        let mut rng = self.key(probe).rng();
        for u in out.iter_mut() {
            *u = (rng.gen::<f64>() - 0.5) * step;
        }
    }

    pub fn dither(&self, probe: u32, step: f64, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        self.fill(probe, step, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    pub indices: Vec<u32>,
    pub reconstruction: Vec<f64>,
    /// Coordinates where the input clamp to `[-clip, clip]` was active.
    pub clipped: usize,
}

impl QuantizedVector {
    pub fn payload_bits(&self, spec: &QuantizerSpec) -> u64 {
        self.indices.len() as u64 * spec.bits_per_coord() as u64
    }
}

/// Quantize one vector with explicit per-coordinate dither.
pub fn quantize_with_dither(spec: &QuantizerSpec, values: &[f64], dither: &[f64]) -> Result<QuantizedVector> {
    if values.len() != dither.len() {
        return Err(invalid("dither length does not match vector length"));
    }
    let mut indices = Vec::with_capacity(values.len());
    let mut reconstruction = Vec::with_capacity(values.len());
    let mut clipped = 0;
    for (&x, &u) in values.iter().zip(dither) {
        if !x.is_finite() {
            return Err(FpldError::InvalidInput(format!("non-finite logit {x}")));
        }
        spec.check_dither(u)?;
        let (y, was_clipped) = spec.clamp(x);
        clipped += was_clipped as usize;
        let index = spec.index_of(y, u);
        indices.push(index);
        reconstruction.push(spec.reconstruct(index, u));
    }
    Ok(QuantizedVector { indices, reconstruction, clipped })
}

/// Quantize one probe vector with dither regenerated from `stream`.
pub fn quantize_vector(
    spec: &QuantizerSpec,
    values: &[f64],
    stream: &DitherStream,
    probe: u32,
) -> Result<QuantizedVector> {
    let dither = stream.dither(probe, spec.step(), values.len());
    quantize_with_dither(spec, values, &dither)
}

/// Decoder side of [`quantize_with_dither`].
pub fn dequantize_with_dither(spec: &QuantizerSpec, indices: &[u32], dither: &[f64]) -> Result<Vec<f64>> {
    if indices.len() != dither.len() {
        return Err(invalid("dither length does not match index count"));
    }
    indices.iter().zip(dither).map(|(&i, &u)| spec.decode(i, u)).collect()
}

pub fn dequantize_vector(spec: &QuantizerSpec, indices: &[u32], stream: &DitherStream, probe: u32) -> Result<Vec<f64>> {
    let dither = stream.dither(probe, spec.step(), indices.len());
    dequantize_with_dither(spec, indices, &dither)
}

/// How the per-round quantizer of a multi-round residual encoder is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RefinementSchedule {
    /// Round 1 is the dithered quantizer at `clip`; round `t >= 2` splits the
    /// previous cell into `2^bits` sub-cells without fresh dither, i.e. clip
    /// `clip * 2^(-(t-1) bits)`. After `T` rounds this is exactly a dithered
    /// `T*bits`-bit quantizer.
    #[default]
    Nested,
    /// Fresh dither every round at clip `slack * clip * 2^(-(t-1) bits)` for
    /// `t >= 2`. The slack absorbs the dither overshoot of the previous round.
    Rescaled { slack: f64 },
    /// Fresh dither every round at the full clip: the non-rescaled re-send,
    /// whose error variance does not improve with `T`.
    Fixed,
}

impl RefinementSchedule {
    /// Rescaled schedule with the default slack `1 + 2^-bits`.
    pub fn rescaled_default(bits: u8) -> Self {
        Self::Rescaled { slack: 1.0 + (-(bits as f64)).exp2() }
    }

    /// Quantizer used in round `round` (1-based).
    pub fn round_spec(&self, clip: f64, bits: u8, round: usize) -> Result<QuantizerSpec> {
        if round == 0 {
            return Err(invalid("rounds are numbered from 1"));
        }
        let shrink = (-(((round - 1) * bits as usize) as f64)).exp2();
        let clip_t = match *self {
            Self::Fixed => clip,
            _ if round == 1 => clip,
            Self::Nested => clip * shrink,
            Self::Rescaled { slack } => {
                if !(slack >= 1.0) {
                    return Err(invalid(format!("refinement slack must be >= 1, got {slack}")));
                }
                slack * clip * shrink
            }
        };
        QuantizerSpec::new(clip_t, bits)
    }

    pub fn round_is_dithered(&self, round: usize) -> bool {
        !matches!(self, Self::Nested) || round == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementRound {
    pub spec: QuantizerSpec,
    pub indices: Vec<u32>,
    /// Cumulative reconstruction after this round.
    pub reconstruction: Vec<f64>,
}

/// Encode `values` over `rounds` rounds, each round quantizing the residual
/// left by the previous cumulative reconstruction (which starts at zero).
///
/// `stream_for_round` supplies the dither stream of each round; it is not
/// consulted for rounds the schedule leaves undithered.
pub fn refine_sequential(
    clip: f64,
    bits: u8,
    values: &[f64],
    rounds: usize,
    schedule: RefinementSchedule,
    probe: u32,
    stream_for_round: impl Fn(usize) -> DitherStream,
) -> Result<Vec<RefinementRound>> {
    if rounds < 1 {
        return Err(invalid("refinement needs at least one round"));
    }
    let mut cumulative = vec![0.0; values.len()];
    let mut out = Vec::with_capacity(rounds);
    let mut residual = vec![0.0; values.len()];
    for t in 1..=rounds {
        let spec = schedule.round_spec(clip, bits, t)?;
        for ((r, &v), &c) in residual.iter_mut().zip(values).zip(&cumulative) {
            *r = v - c;
        }
        let q = if schedule.round_is_dithered(t) {
            quantize_vector(&spec, &residual, &stream_for_round(t), probe)?
        } else {
            quantize_with_dither(&spec, &residual, &vec![0.0; residual.len()])?
        };
        for (c, r) in cumulative.iter_mut().zip(&q.reconstruction) {
            *c += r;
        }
        out.push(RefinementRound { spec, indices: q.indices, reconstruction: cumulative.clone() });
    }
    Ok(out)
}
