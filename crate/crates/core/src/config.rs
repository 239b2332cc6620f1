//! Experiment configuration files and run manifests.
//!
//! A configuration file is TOML with optional `[sim]`, `[fig1]`, `[fig2]`,
//! `[adaptive]` and `[bounds]` tables. `[sim]` keys override the defaults of
//! whichever experiment is run. Every run writes a manifest in the same
//! format plus a `[run]` table, so a manifest can be fed back as a config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::BoundParams;
use crate::error::{FpldError, Result};
use crate::sim::{AdaptiveConfig, Fig1Config, Fig2Config, SimConfig};

/// Provenance of one run. Ignored when a manifest is read back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub subcommand: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    pub output_dir: String,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim: Option<toml::Table>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fig1: Option<Fig1Config>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fig2: Option<Fig2Config>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<AdaptiveConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundParams>,
}

fn parse_err(what: &str, e: impl std::fmt::Display) -> FpldError {
    FpldError::InvalidInput(format!("{what}: {e}"))
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| parse_err("config", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FpldError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| parse_err(&path.display().to_string(), e))
    }

    /// `base` with the `[sim]` keys of this file applied on top.
    pub fn resolve_sim(&self, base: SimConfig) -> Result<SimConfig> {
        let Some(over) = &self.sim else {
            return Ok(base);
        };
        let mut table = toml::Table::try_from(&base).map_err(|e| parse_err("sim", e))?;
        for (k, v) in over {
            table.insert(k.clone(), v.clone());
        }
        let cfg: SimConfig = table.try_into().map_err(|e| parse_err("[sim]", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| parse_err("manifest", e))
    }

    /// Manifest of a run: the resolved simulation plus the experiment table.
    pub fn manifest(run: RunInfo, sim: &SimConfig) -> Result<Self> {
        Ok(Self {
            run: Some(run),
            sim: Some(toml::Table::try_from(sim).map_err(|e| parse_err("sim", e))?),
            ..Self::default()
        })
    }
}

/// A bare `[sim]` table (no section header) layered over the defaults.
pub fn sim_from_toml(text: &str) -> Result<SimConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| parse_err("sim config", e))?;
    ConfigFile { sim: Some(table), ..ConfigFile::default() }.resolve_sim(SimConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::RefinementSchedule;
    use crate::sim::Mode;

    #[test]
    fn sim_keys_layer_over_the_base() {
        let file = ConfigFile::parse("[sim]\nV = 64\nbits = 6\nseeds = [4, 5]\n").unwrap();
        let cfg = file.resolve_sim(Fig2Config::default_sim()).unwrap();
        assert_eq!(cfg.v, 64);
        assert_eq!(cfg.bits, 6);
        assert_eq!(cfg.seeds, vec![4, 5]);
        // untouched keys keep the base value, here the fig2 clip list
        assert_eq!(cfg.node_clips, Some(vec![1.0, 1.0, 4.0, 4.0]));
        // K = 8 no longer matches the inherited clip list
        let bad = ConfigFile::parse("[sim]\nK = 8\n").unwrap();
        assert!(bad.resolve_sim(Fig2Config::default_sim()).is_err());
    }

    #[test]
    fn bare_sim_table() {
        let cfg = sim_from_toml("K = 2\nm = 8").unwrap();
        assert_eq!((cfg.k, cfg.m, cfg.v), (2, 8, 256));
        assert!(sim_from_toml("K = 0").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse("[sim]\nbogus = 1\n").unwrap().resolve_sim(SimConfig::default()).is_err());
        assert!(ConfigFile::parse("[fig1]\nbogus = 1\n").is_err());
        assert!(ConfigFile::parse("[nope]\n").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let sim = SimConfig {
            mode: Mode::SequentialRefinement,
            rounds: 3,
            refinement: RefinementSchedule::Rescaled { slack: 1.25 },
            exact_logits: true,
            n: f64::INFINITY,
            ..SimConfig::default()
        };
        let run = RunInfo {
            subcommand: "fig1".into(),
            config_path: None,
            output_dir: "out".into(),
            tool_version: "0.1.0".into(),
            timestamp: 1,
        };
        let mut m = ConfigFile::manifest(run, &sim).unwrap();
        m.fig1 = Some(Fig1Config::default());
        m.bounds = Some(BoundParams { b_list: Some(vec![1.0, 2.0]), ..BoundParams::default() });
        let text = m.to_toml().unwrap();
        let back = ConfigFile::parse(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.resolve_sim(SimConfig { k: 99, ..SimConfig::default() }).unwrap(), sim);
    }
}
