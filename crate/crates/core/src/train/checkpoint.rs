use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::model::{Model, ModelConfig};
use crate::tensor::{AdamState, ParameterSet};
use crate::util::fingerprint;

pub const CHECKPOINT_MAGIC: &str = "GAMCK1";

/// Named flat parameters, their shapes and optimizer moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub participant: Option<String>,
    pub model: ModelConfig,
    pub model_fingerprint: String,
    /// Fingerprint of the preprocessing config the model was trained on.
    pub data_fingerprint: String,
    pub layout: Vec<(String, Vec<usize>)>,
    pub params: Vec<f64>,
    pub optimizer: Option<AdamState>,
    pub step: usize,
    pub valid_rmse: f64,
}

impl Checkpoint {
    pub fn new(
        model: &Model,
        participant: Option<&str>,
        data_fingerprint: &str,
        optimizer: Option<AdamState>,
        step: usize,
        valid_rmse: f64,
    ) -> Self {
        Self {
            magic: CHECKPOINT_MAGIC.into(),
            participant: participant.map(str::to_string),
            model_fingerprint: fingerprint(&model.config),
            model: model.config.clone(),
            data_fingerprint: data_fingerprint.to_string(),
            layout: model.params.layout(),
            params: model.params.flat_view(),
            optimizer,
            step,
            valid_rmse,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::zeros(self.model.clone())?;
        if model.params.layout() != self.layout {
            return Err(TrainError::Format("checkpoint layout does not match its model config".into()));
        }
        model.params.load_flat(&self.params)?;
        Ok(model)
    }

    pub fn parameter_set(&self) -> Result<ParameterSet> {
        Ok(self.to_model()?.params)
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self).map_err(|e| TrainError::Format(e.to_string()))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(r).map_err(|e| TrainError::Format(e.to_string()))?;
        if ck.magic != CHECKPOINT_MAGIC {
            return Err(TrainError::Format(format!(
                "expected magic {CHECKPOINT_MAGIC}, found {}",
                ck.magic
            )));
        }
        if ck.model_fingerprint != fingerprint(&ck.model) {
            return Err(TrainError::Format("model fingerprint does not match its config".into()));
        }
        if ck.optimizer.as_ref().is_some_and(|s| s.m.len() != ck.params.len()) {
            return Err(TrainError::Format("optimizer moments do not match parameter count".into()));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig {
            variant: Variant::GamTa,
            hidden: 4,
            embed_dim: 2,
            gat_dim: 3,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, 3).unwrap();
        let ck = Checkpoint::new(&model, Some("p1"), "abc", Some(AdamState::zeros(model.params.flat_len())), 7, 12.5);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), model);
    }

    #[test]
    fn tampered_files_rejected() {
        let model = Model::new(ModelConfig { hidden: 3, ..ModelConfig::default() }, 1).unwrap();
        let ck = Checkpoint::new(&model, None, "abc", None, 0, 1.0);
        let json = serde_json::to_string(&ck).unwrap();
        assert!(Checkpoint::read_from(json.replace("GAMCK1", "GAMCK2").as_bytes()).is_err());
        assert!(Checkpoint::read_from(json.replace("\"hidden\":3", "\"hidden\":4").as_bytes()).is_err());
    }
}
