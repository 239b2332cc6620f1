//! Keyed, counter-based random streams.
//!
//! Every random draw in the simulator is addressed by a [`StreamKey`]: the
//! experiment id, the seed, and the (node, round, probe) coordinates of the
//! draw, plus a [`Lane`] naming what the randomness is for. The key is mixed
//! into a ChaCha8 seed, so each stream is a pure function of its key and the
//! order in which work units execute cannot change any value. Coordinate `v`
//! of a vector is the `v`-th draw of its stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct lanes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Lane {
    Dither = 1,
    Truth = 2,
    Observation = 3,
    DitherSeed = 4,
    Test = 0xfff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub experiment: u64,
    pub seed: u64,
    pub node: u32,
    pub round: u32,
    pub probe: u32,
    pub lane: Lane,
}

impl StreamKey {
    pub fn new(experiment: u64, seed: u64, lane: Lane) -> Self {
        Self { experiment, seed, node: 0, round: 0, probe: 0, lane }
    }

    pub fn node(mut self, node: u32) -> Self {
        self.node = node;
        self
    }

    pub fn round(mut self, round: u32) -> Self {
        self.round = round;
        self
    }

    pub fn probe(mut self, probe: u32) -> Self {
        self.probe = probe;
        self
    }

    /// 256-bit ChaCha seed derived from the full key.
    pub fn seed_bytes(&self) -> [u8; 32] {
        let words = [
            self.experiment,
            self.seed,
            ((self.node as u64) << 32) | self.round as u64,
            ((self.probe as u64) << 32) | self.lane as u32 as u64,
        ];
        let mut state = 0x243f_6a88_85a3_08d3_u64;
        let mut out = [0u8; 32];
        for (chunk, _) in out.chunks_exact_mut(8).zip(0..4) {
            for w in words {
                state = splitmix64(state ^ w);
            }
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        out
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.seed_bytes())
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
