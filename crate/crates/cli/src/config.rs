use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use taxnov_core::dataio::synth::SynthSpec;
use taxnov_core::gzsl::SemanticMapConfig;
use taxnov_core::{FlattenConfig, TopDownConfig};

/// Settings shared by every subcommand, read from `--config` and mirrored
/// into each output directory as `config.toml`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every seed below when set.
    pub seed: Option<u64>,
    /// Curve resolution for `eval`: evenly spaced biases, or every
    /// breakpoint when unset.
    pub bias_points: Option<usize>,
    pub topdown: TopDownConfig,
    pub flatten: FlattenConfig,
    /// Replaces `flatten` for `train tdloo` when present.
    pub tdloo: Option<FlattenConfig>,
    pub synth: SynthSpec,
    pub semantic_map: SemanticMapConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Applies `seed` (from the command line or the file) to every seeded part.
    pub fn with_seed(mut self, seed: Option<u64>) -> RunConfig {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.topdown.sgd.seed = s;
            self.flatten.sgd.seed = s;
            if let Some(f) = &mut self.tdloo {
                f.sgd.seed = s;
            }
            self.synth.seed = s;
            self.semantic_map.seed = s;
        }
        self
    }

    pub fn tdloo_config(&self) -> &FlattenConfig {
        self.tdloo.as_ref().unwrap_or(&self.flatten)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing config")
    }
}
