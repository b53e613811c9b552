//! JSON checkpoints of trained models.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::LayerStack;
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::features::FeatureScaler;

pub const CHECKPOINT_FORMAT: &str = "odflow-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// SHA-256 of the architecture, model and training configuration.
    pub config_hash: String,
    pub train_config: TrainConfig,
    pub scaler: FeatureScaler,
    pub model: LayerStack,
}

pub fn config_hash(model: &LayerStack, train: &TrainConfig) -> String {
    let payload = serde_json::to_vec(&(model.arch, model.config, model.input_width, model.node_width, train))
        .expect("configuration serializes");
    Sha256::digest(&payload).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(model: LayerStack, scaler: FeatureScaler, train_config: TrainConfig) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config_hash: config_hash(&model, &train_config),
            train_config,
            scaler,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format `{}`", ck.format)));
        }
        if ck.config_hash != config_hash(&ck.model, &ck.train_config) {
            return Err(Error::Config("checkpoint configuration hash does not match its contents".into()));
        }
        Ok(ck)
    }
}
