//! Run configuration: TOML file (or a manifest's `config`), then the global
//! seed, then command-line flags.

use std::fs;
use std::path::Path;

use seqlearn_core::downstream::{FaultConfig, PowerConfig, ReliabilityTuneConfig};
use seqlearn_core::model::TrainConfig;
use seqlearn_core::supervise::LabelConfig;
use seqlearn_core::SimConfig;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub n: usize,
    pub feedback_prob: Option<f64>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection { n: 50, feedback_prob: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReliabilitySection {
    pub fault: FaultConfig,
    pub tune: ReliabilityTuneConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides every section seed when set.
    pub seed: Option<u64>,
    pub generate: GenerateSection,
    pub simulate: SimConfig,
    pub label: LabelConfig,
    pub train: TrainConfig,
    pub power: PowerConfig,
    pub reliability: ReliabilitySection,
}

impl RunConfig {
    /// Reads TOML, or the `config` member of a JSON run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let inner = v.get("config").cloned().unwrap_or(v);
            serde_json::from_value(inner).map_err(|e| usage(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
        };
        parsed
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        let Some(s) = seed.or(self.seed) else { return };
        self.seed = Some(s);
        self.simulate.seed = s;
        self.label.seed = s;
        self.label.sim.seed = s;
        self.train.seed = s;
        self.train.model.param_seed = s;
        self.train.model.embed_seed = s;
        self.reliability.fault.seed = s;
        self.reliability.tune.seed = s;
        self.reliability.tune.head_seed = s;
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
