use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::attack::CraftConfig;
use crate::dataset::SynthParams;
use crate::extractor::{Arch, TrainConfig, DEFAULT_EMBEDDING_DIM};
use crate::metrics::{Metric, DEFAULT_PAIR_BUDGET};

/// Settings shared by every subcommand. Loaded from `--config` (JSON, any
/// subset of fields) and then overridden by explicit flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; when set it replaces the seed of every stochastic stage.
    pub rng_seed: Option<u64>,
    pub synth: SynthParams,
    /// Fraction of identities assigned to the train gallery.
    pub train_fraction: f64,
    pub arch: Arch,
    pub embedding_dim: usize,
    /// `None` picks the per-architecture defaults.
    pub train: Option<TrainConfig>,
    pub craft: CraftConfig,
    pub metric: Metric,
    pub pair_budget: usize,
    pub hist_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rng_seed: None,
            synth: SynthParams::default(),
            train_fraction: 2.0 / 3.0,
            arch: Arch::TinyCnn,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            train: None,
            craft: CraftConfig::default(),
            metric: Metric::Euclidean,
            pair_budget: DEFAULT_PAIR_BUDGET,
            hist_bins: 50,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Training settings for the configured architecture, with the global
    /// seed applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut train = self.train.clone().unwrap_or_else(|| TrainConfig::for_arch(self.arch));
        if let Some(seed) = self.rng_seed {
            train.rng_seed = seed;
        }
        train
    }

    /// Pushes the global seed into the synth and craft stages; training
    /// picks it up in [`RunConfig::train_config`].
    pub fn propagate_seed(&mut self) {
        if let Some(seed) = self.rng_seed {
            self.synth.rng_seed = seed;
            self.craft.rng_seed = seed;
        }
    }

    /// Seed for stages without their own config section (split, pair
    /// sampling, weight initialization).
    pub fn stage_seed(&self) -> u64 {
        self.rng_seed.unwrap_or(0)
    }
}
