use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quant::{RefinementSchedule, MAX_BITS_PER_COORD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One payload per node.
    #[default]
    Vanilla,
    /// `T` rounds of residual refinement with a shrinking range.
    SequentialRefinement,
    /// `T` rounds of residual re-sending at the full clip.
    FixedResend,
}

/// One simulated deployment. Field names follow the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub experiment_id: u64,
    #[serde(rename = "V")]
    pub v: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// Samples per node: observation noise has variance `1/n`.
    pub n: f64,
    /// Nodes see the truth without estimation noise.
    pub exact_logits: bool,
    pub m: usize,
    #[serde(rename = "T")]
    pub rounds: usize,
    #[serde(rename = "T0")]
    pub t0: usize,
    pub seeds: Vec<u64>,
    /// Clip level of the truth and of every node without its own.
    #[serde(rename = "L")]
    pub clip: f64,
    #[serde(rename = "L_list", skip_serializing_if = "Option::is_none")]
    pub node_clips: Option<Vec<f64>>,
    pub bits: u8,
    #[serde(rename = "bits_list", skip_serializing_if = "Option::is_none")]
    pub node_bits: Option<Vec<u8>>,
    pub mode: Mode,
    pub refinement: RefinementSchedule,
    pub truth_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            experiment_id: 0,
            v: 256,
            k: 4,
            n: 30_000.0,
            exact_logits: false,
            m: 64,
            rounds: 1,
            t0: 1,
            seeds: (0..30).collect(),
            clip: 1.0,
            node_clips: None,
            bits: 4,
            node_bits: None,
            mode: Mode::Vanilla,
            refinement: RefinementSchedule::Nested,
            truth_scale: 0.25,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.v < 2 {
            return Err(invalid(format!("V must be at least 2, got {}", self.v)));
        }
        if self.k < 1 || self.k > u16::MAX as usize + 1 {
            return Err(invalid(format!("K must lie in [1, 65536], got {}", self.k)));
        }
        if self.v > u32::MAX as usize || self.m > u32::MAX as usize {
            return Err(invalid("V and m must fit in 32 bits"));
        }
        if self.m < 1 {
            return Err(invalid("m must be at least 1"));
        }
        if !(self.n >= 1.0) {
            return Err(invalid(format!("n must be at least 1, got {}", self.n)));
        }
        if self.rounds < 1 || self.rounds > u16::MAX as usize {
            return Err(invalid(format!("T must lie in [1, 65535], got {}", self.rounds)));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must be non-empty"));
        }
        if !(self.clip > 0.0) || !self.clip.is_finite() {
            return Err(invalid(format!("L must be positive, got {}", self.clip)));
        }
        if !(self.truth_scale >= 0.0) || !self.truth_scale.is_finite() {
            return Err(invalid(format!("truth_scale must be non-negative, got {}", self.truth_scale)));
        }
        if self.bits > MAX_BITS_PER_COORD {
            return Err(invalid(format!("bits must be at most {MAX_BITS_PER_COORD}")));
        }
        if let Some(ls) = &self.node_clips {
            if ls.len() != self.k {
                return Err(invalid(format!("L_list has {} entries for K = {}", ls.len(), self.k)));
            }
            if ls.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                return Err(invalid("L_list entries must be positive"));
            }
        }
        if let Some(bs) = &self.node_bits {
            if bs.len() != self.k {
                return Err(invalid(format!("bits_list has {} entries for K = {}", bs.len(), self.k)));
            }
            if bs.iter().any(|&b| b > MAX_BITS_PER_COORD) {
                return Err(invalid(format!("bits_list entries must be at most {MAX_BITS_PER_COORD}")));
            }
        }
        if let RefinementSchedule::Rescaled { slack } = self.refinement {
            if !(slack >= 1.0) {
                return Err(invalid(format!("refinement slack must be >= 1, got {slack}")));
            }
        }
        Ok(())
    }

    pub fn node_clip(&self, node: usize) -> f64 {
        self.node_clips.as_ref().map_or(self.clip, |ls| ls[node])
    }

    pub fn node_bits(&self, node: usize) -> u8 {
        self.node_bits.as_ref().map_or(self.bits, |bs| bs[node])
    }

    pub fn node_clip_list(&self) -> Vec<f64> {
        (0..self.k).map(|i| self.node_clip(i)).collect()
    }

    /// Standard deviation of the observation noise; 0 with exact logits.
    pub fn noise_sd(&self) -> f64 {
        if self.exact_logits || self.n.is_infinite() {
            0.0
        } else {
            self.n.recip().sqrt()
        }
    }

    /// Samples per node as seen by the bounds (`inf` with exact logits).
    pub fn effective_n(&self) -> f64 {
        if self.exact_logits {
            f64::INFINITY
        } else {
            self.n
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SimConfig { v: 1, ..SimConfig::default() },
            SimConfig { k: 0, ..SimConfig::default() },
            SimConfig { n: 0.5, ..SimConfig::default() },
            SimConfig { m: 0, ..SimConfig::default() },
            SimConfig { seeds: vec![], ..SimConfig::default() },
            SimConfig { node_clips: Some(vec![1.0]), ..SimConfig::default() },
            SimConfig { node_bits: Some(vec![1, 2, 3, 40]), ..SimConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SimConfig {
            node_clips: Some(vec![1.0, 1.0, 4.0, 4.0]),
            mode: Mode::SequentialRefinement,
            refinement: RefinementSchedule::Rescaled { slack: 1.25 },
            ..SimConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<SimConfig>(&text).unwrap(), cfg);
        let partial: SimConfig = toml::from_str("K = 8\nL_list = [1, 2, 3, 4, 5, 6, 7, 8.5]").unwrap();
        assert_eq!(partial.k, 8);
        assert!(toml::from_str::<SimConfig>("bogus = 1").is_err());
    }
}
