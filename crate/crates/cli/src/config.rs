//! Run configuration: one JSON document, defaults for every field, unknown
//! keys rejected. Command-line flags override file values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use weaksupcon_core::mildata::{standard_benchmark, SyntheticSpec};
use weaksupcon_core::milmodels::{MilKind, MilModelSpec, MilTrainConfig};
use weaksupcon_core::representation::{PretrainConfig, PretrainMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: SyntheticSpec,
    pub pretrain: PretrainConfig,
    pub mil: MilModelSpec,
    pub mil_train: MilTrainConfig,
    /// First training seed; repeat `r` uses `seed + r`.
    pub seed: u64,
    pub repeats: u32,
    /// Neighborhood threshold for the densest-anchor search.
    pub anchor_threshold: f64,
    /// Decision threshold for accuracy metrics.
    pub decision_threshold: f64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: standard_benchmark(),
            pretrain: PretrainConfig::default(),
            mil: MilModelSpec::default(),
            mil_train: MilTrainConfig::default(),
            seed: 7,
            repeats: 3,
            anchor_threshold: 0.999,
            decision_threshold: 0.5,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    pub mode: Option<PretrainMode>,
    pub mil_kind: Option<MilKind>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(a) = o.alpha {
            self.pretrain.loss.alpha = a;
        }
        if let Some(t) = o.tau {
            self.pretrain.loss.tau = t;
        }
        if let Some(m) = o.mode {
            self.pretrain.mode = m;
        }
        if let Some(k) = o.mil_kind {
            self.mil.kind = k;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.pretrain.validate()?;
        self.mil.validate()?;
        if self.pretrain.encoder.input_dim() != self.data.d {
            bail!(
                "encoder input width {} does not match data dimension {}",
                self.pretrain.encoder.input_dim(),
                self.data.d
            );
        }
        if self.mil.input_dim != self.pretrain.encoder.embedding_dim() {
            bail!(
                "mil.input_dim {} does not match encoder embedding width {}",
                self.mil.input_dim,
                self.pretrain.encoder.embedding_dim()
            );
        }
        if self.repeats == 0 {
            bail!("repeats must be >= 1");
        }
        if !(self.mil_train.learning_rate >= 0.0) {
            bail!("mil_train.learning_rate must be >= 0");
        }
        Ok(())
    }

    /// Training seeds for the configured repeats.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|r| self.seed + r).collect()
    }

    /// Pretraining config for one seed.
    pub fn pretrain_for(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            seed,
            ..self.pretrain.clone()
        }
    }

    pub fn mil_train_for(&self, seed: u64) -> MilTrainConfig {
        MilTrainConfig {
            seed,
            ..self.mil_train.clone()
        }
    }

    /// sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
