//! Run configuration file (TOML).
//!
//! ```toml
//! version = 1
//!
//! [model]
//! variant = "L1"
//! embedding_size = 96
//! hidden = "96x0+29x1"
//! feat_blocks = 2
//! output_blocks = 1
//! output_scalars = 64
//! mlp_layers = 2
//! mlp_neurons = 64
//! residual = true
//! elements = ["H", "C", "N", "O", "F"]
//! targets = ["U0"]
//!
//! [radial]
//! num_basis = 84
//! r_max_angstrom = 11.1
//! hidden_layers = 2
//! hidden_neurons = 100
//!
//! [conv]
//! self_interaction = true
//! lf_max = 1
//!
//! [train]
//! lr_init = 6.53e-3
//! batch_size = 16
//! max_epochs = 200
//! # beta1, beta2, eps, plateau_factor, plateau_patience, lr_min,
//! # early_stop_patience, seed
//!
//! [data]
//! # n_train, n_val default to the 109000 : 1000 : rest proportions
//! split_seed = 0
//! # exclude = "uncharacterized.txt"
//!
//! [search]
//! lr = [1e-6, 0.3]
//! # batch_size, components, conv_blocks, num_basis, r_max_angstrom,
//! # mlp_layers, mlp_neurons, output_scalars, output_blocks
//! ```
//!
//! Every section and key is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conv::ConvConfig;
use crate::error::{Error, Result};
use crate::experiments::SearchSpace;
use crate::model::ModelConfig;
use crate::radial::RadialConfig;
use crate::train::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub split_seed: u64,
    /// File of QM9 indices to drop.
    pub exclude: Option<PathBuf>,
}

impl DataConfig {
    /// Train and validation sizes for a dataset of `len` molecules.
    pub fn split_sizes(&self, len: usize) -> (usize, usize) {
        const TOTAL: f64 = 133_885.0;
        let n_val = self.n_val.unwrap_or_else(|| ((len as f64 * 1_000.0 / TOTAL).round() as usize).max(1).min(len));
        let n_train = self
            .n_train
            .unwrap_or_else(|| ((len as f64 * 109_000.0 / TOTAL).round() as usize).min(len.saturating_sub(n_val)));
        (n_train, n_val)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub model: ModelConfig,
    pub radial: RadialConfig,
    pub conv: ConvConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub search: SearchSpace,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            model: ModelConfig::default(),
            radial: RadialConfig::default(),
            conv: ConvConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            search: SearchSpace::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Model settings with the radial and convolution sections attached.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.radial = self.radial.clone();
        m.conv = self.conv.clone();
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("version = 1").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.lr_init, 6.53e-3);
        assert_eq!(c.radial.num_basis, 84);
        assert!(c.conv.self_interaction);
    }

    #[test]
    fn sections_override_and_round_trip() {
        let text = r#"
version = 1
[model]
variant = "L0"
hidden = "12x0"
targets = ["p2"]
elements = ["+", "-"]
[radial]
num_basis = 25
r_max_angstrom = 5.0
[conv]
lf_max = 0
[train]
max_epochs = 3
[search]
lr = [1e-4, 1e-2]
"#;
        let c = RunConfig::from_toml(text).unwrap();
        let m = c.model_config();
        assert_eq!(m.radial.num_basis, 25);
        assert_eq!(m.conv.lf_max, 0);
        assert_eq!(m.hidden.to_string(), "12x0");
        assert_eq!(c.search.lr, (1e-4, 1e-2));
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn bad_version_and_unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("version = 2").is_err());
        assert!(RunConfig::from_toml("version = 1\n[radial]\nbases = 3").is_err());
    }

    #[test]
    fn default_split_follows_dataset_proportions() {
        let d = DataConfig::default();
        let (t, v) = d.split_sizes(133_885);
        assert_eq!((t, v), (109_000, 1_000));
        let (t, v) = d.split_sizes(500);
        assert_eq!((t, v), (407, 4));
    }
}
