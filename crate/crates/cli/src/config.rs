use std::path::{Path, PathBuf};

use gam_core::fedsim::FlConfig;
use gam_core::ingest::IngestConfig;
use gam_core::model::{ModelConfig, Variant};
use gam_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::synth::SynthSpec;
use crate::CliError;

/// How federated clients are executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Serial,
    #[default]
    Concurrent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Directory of `<pid>-training.csv` / `<pid>-testing.csv` event files.
    pub events: PathBuf,
    /// Processed dataset file.
    pub dataset: PathBuf,
    /// Run directory for checkpoints, reports and logs.
    pub run: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            events: "data/events".into(),
            dataset: "data/dataset.json".into(),
            run: "runs/latest".into(),
        }
    }
}

/// Everything a command needs, loaded from TOML with flag overrides.
///
/// `seed` is the single base seed; it replaces `train.seed` and `synth.seed`
/// when the config is resolved.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for evaluation and clients; 0 uses every core.
    pub workers: usize,
    pub scheduler: SchedulerKind,
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fl: FlConfig,
    pub synth: SynthSpec,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub horizon: Option<usize>,
    pub history: Option<usize>,
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        if self.seed > i64::MAX as u64 {
            return Err(CliError::Config(format!("seed {} does not fit a TOML integer", self.seed)));
        }
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    /// Applies overrides and propagates shared values into each section.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(v) = o.variant {
            self.model.variant = v;
        }
        if let Some(w) = o.horizon {
            if w != 6 && w != 12 {
                return Err(CliError::Config(format!("horizon must be 6 or 12, got {w}")));
            }
            self.ingest.horizon = w;
        }
        if let Some(t) = o.history {
            self.ingest.history = t;
        }
        if let Some(n) = o.workers {
            self.workers = n;
        }
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
        self.ingest.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.sync_model(&self.ingest.clone())?;
        Ok(self)
    }

    /// Copies the dimensions fixed by preprocessing into the model section.
    pub fn sync_model(&mut self, ingest: &IngestConfig) -> Result<(), CliError> {
        self.model.n_attributes = ingest.attributes.len();
        self.model.glucose_index = ingest.glucose_index().map_err(|e| CliError::Config(e.to_string()))?;
        self.model.history = ingest.history;
        self.model.horizon = ingest.horizon;
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}
