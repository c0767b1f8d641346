use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Variant;
use crate::encoder::HashEncoderConfig;
use crate::model::Structure;
use crate::training::{TrainConfig, BUILTIN_LEARNING_RATE, EXTERNAL_LEARNING_RATE};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Train the hashed n-gram encoder jointly with the model.
    #[default]
    Builtin,
    /// Use frozen vectors from an embedding store.
    External,
}

/// Training run description. Relative paths resolve against the directory
/// holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub domain_map: PathBuf,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub checkpoint_out: PathBuf,
    pub reports_out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<HashEncoderConfig>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub warmup_proportion: Option<f64>,
    #[serde(default)]
    pub max_epochs: Option<usize>,
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub structure: Option<Structure>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data);
        fix(&mut self.domain_map);
        fix(&mut self.checkpoint_out);
        fix(&mut self.reports_out);
        if let Some(e) = &mut self.embeddings {
            fix(e);
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, &self.embeddings, &self.encoder) {
            (Mode::External, None, _) => Err(Error::Config("external mode needs an embeddings path".into())),
            (Mode::External, _, Some(_)) => Err(Error::Config("encoder settings only apply in builtin mode".into())),
            (Mode::Builtin, Some(_), _) => Err(Error::Config("embeddings are only read in external mode".into())),
            (Mode::Builtin, None, Some(enc)) => enc.validate(),
            _ => Ok(()),
        }?;
        self.train_config(Variant::Custom).validate()
    }

    pub fn encoder_config(&self) -> HashEncoderConfig {
        self.encoder.clone().unwrap_or_default()
    }

    /// Fill unset training fields with the defaults for this mode and
    /// dataset variant.
    pub fn train_config(&self, variant: Variant) -> TrainConfig {
        let d = TrainConfig::default();
        let lr = match self.mode {
            Mode::Builtin => BUILTIN_LEARNING_RATE,
            Mode::External => EXTERNAL_LEARNING_RATE,
        };
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(lr),
            warmup_proportion: self.warmup_proportion.unwrap_or(d.warmup_proportion),
            max_epochs: self.max_epochs.unwrap_or(variant.default_max_epochs()),
            patience: self.patience.unwrap_or(d.patience),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            seed: self.seed.unwrap_or(d.seed),
            structure: self.structure.unwrap_or(d.structure),
        }
    }
}
