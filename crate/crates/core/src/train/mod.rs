//! Loss, metrics, checkpoints and the pooled two-stage training procedure.
//!
//! Stage 1 trains one model on the union of all participants' training
//! windows and keeps the parameters with the lowest mean validation RMSE.
//! Stage 2 clones that model per participant and fine-tunes it on the
//! participant's own windows at a lower learning rate, again keeping the
//! best checkpoint by the participant's validation RMSE.

mod checkpoint;
mod metrics;
mod stage;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use metrics::{compute_metrics, MetricsReport, ParticipantMetrics, MARD_GUARD};
pub use stage::{draw_batch, run_stage, CurvePoint, StageConfig, StageResult, Trainer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ParticipantData, RegularSample};
use crate::model::{Model, ModelConfig};
use crate::tensor::TensorError;
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint file: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub t_global: usize,
    pub t_person: usize,
    pub t_eval1: usize,
    pub t_eval2: usize,
    pub batch_size: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t_global: 10_000,
            t_person: 800,
            t_eval1: 1_000,
            t_eval2: 160,
            batch_size: 128,
            lr_stage1: 1e-3,
            lr_stage2: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_eval1 == 0 || self.t_eval2 == 0 {
            return Err(TrainError::Config("evaluation intervals must be at least 1".into()));
        }
        if self.t_global > 0 && self.t_eval1 > self.t_global {
            return Err(TrainError::Config(format!(
                "t_eval1 {} exceeds t_global {}",
                self.t_eval1, self.t_global
            )));
        }
        if self.t_person > 0 && self.t_eval2 > self.t_person {
            return Err(TrainError::Config(format!(
                "t_eval2 {} exceeds t_person {}",
                self.t_eval2, self.t_person
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.lr_stage1 > 0.0 && self.lr_stage2 > 0.0 && self.lr_stage2 < self.lr_stage1) {
            return Err(TrainError::Config(format!(
                "learning rates must satisfy 0 < lr_stage2 < lr_stage1, got {} and {}",
                self.lr_stage2, self.lr_stage1
            )));
        }
        Ok(())
    }

    pub fn stage1(&self) -> StageConfig {
        StageConfig {
            steps: self.t_global,
            eval_every: self.t_eval1,
            batch_size: self.batch_size,
            lr: self.lr_stage1,
        }
    }

    pub fn stage2(&self) -> StageConfig {
        StageConfig {
            steps: self.t_person,
            eval_every: self.t_eval2,
            batch_size: self.batch_size,
            lr: self.lr_stage2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn of(self, p: &ParticipantData) -> &[RegularSample] {
        match self {
            Split::Train => &p.train,
            Split::Valid => &p.valid,
            Split::Test => &p.test,
        }
    }
}

/// Scores one participant's split in mg/dL.
pub fn evaluate_participant(model: &Model, p: &ParticipantData, split: Split, glucose: usize) -> Result<ParticipantMetrics> {
    let samples = split.of(p);
    let preds = model.predict(samples)?;
    let (mean, std) = p.glucose_stats(glucose);
    let pairs: Vec<(f64, f64)> = samples
        .iter()
        .zip(preds)
        .map(|(s, z)| (s.y * std + mean, z * std + mean))
        .collect();
    compute_metrics(&p.id, &pairs)
}

/// Scores every participant with one parameter set.
pub fn evaluate(model: &Model, data: &[ParticipantData], split: Split, glucose: usize, fingerprint: &str) -> Result<MetricsReport> {
    evaluate_each(data, split, glucose, fingerprint, |_| model)
}

/// Scores every participant with the parameter set `pick` returns for it.
pub fn evaluate_each<'m>(
    data: &[ParticipantData],
    split: Split,
    glucose: usize,
    fingerprint: &str,
    pick: impl Fn(&ParticipantData) -> &'m Model + Sync,
) -> Result<MetricsReport> {
    let rows = data
        .par_iter()
        .map(|p| evaluate_participant(pick(p), p, split, glucose))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::new(split.as_str(), rows, fingerprint))
}

/// Mean validation RMSE (mg/dL) across participants.
pub fn mean_valid_rmse(model: &Model, data: &[ParticipantData], glucose: usize) -> Result<f64> {
    Ok(evaluate(model, data, Split::Valid, glucose, "")?.mean_rmse)
}

pub(crate) fn check_participants(data: &[ParticipantData]) -> Result<()> {
    if data.is_empty() {
        return Err(TrainError::Config("no participants".into()));
    }
    if let Some(p) = data.iter().find(|p| p.valid.is_empty()) {
        return Err(TrainError::Config(format!("participant {} has no validation samples", p.id)));
    }
    if let Some(p) = data.iter().find(|p| p.train.is_empty()) {
        return Err(TrainError::Config(format!("participant {} has no training samples", p.id)));
    }
    Ok(())
}

/// Seed of the parameter initialization stream.
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, "init")
}

#[derive(Clone, Debug)]
pub struct PersonalResult {
    pub participant: String,
    pub stage: StageResult,
}

#[derive(Clone, Debug)]
pub struct PooledOutcome {
    pub global: StageResult,
    pub personal: Vec<PersonalResult>,
}

impl PooledOutcome {
    pub fn personal_model(&self, id: &str) -> Option<&Model> {
        self.personal.iter().find(|p| p.participant == id).map(|p| &p.stage.best)
    }
}

/// Both stages of pooled training.
pub fn train_pooled(data: &[ParticipantData], model: &ModelConfig, cfg: &TrainConfig, glucose: usize) -> Result<PooledOutcome> {
    cfg.validate()?;
    check_participants(data)?;
    let start = Model::new(model.clone(), init_seed(cfg.seed))?;
    let pool: Vec<&RegularSample> = data.iter().flat_map(|p| p.train.iter()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let global = run_stage(start, &pool, &cfg.stage1(), &mut rng, |m| mean_valid_rmse(m, data, glucose))?;
    let personal = fine_tune_all(&global.best, data, cfg, glucose)?;
    Ok(PooledOutcome { global, personal })
}

/// Stage 2 for every participant, starting from `start`.
pub fn fine_tune_all(start: &Model, data: &[ParticipantData], cfg: &TrainConfig, glucose: usize) -> Result<Vec<PersonalResult>> {
    data.par_iter()
        .map(|p| {
            let stage = fine_tune(start, p, &cfg.stage2(), derive_seed(cfg.seed, &format!("stage2/{}", p.id)), glucose)?;
            Ok(PersonalResult {
                participant: p.id.clone(),
                stage,
            })
        })
        .collect()
}

/// Fine-tunes a clone of `start` on one participant with a fresh optimizer.
pub fn fine_tune(start: &Model, p: &ParticipantData, stage: &StageConfig, seed: u64, glucose: usize) -> Result<StageResult> {
    let pool: Vec<&RegularSample> = p.train.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let only = std::slice::from_ref(p);
    run_stage(start.clone(), &pool, stage, &mut rng, |m| mean_valid_rmse(m, only, glucose))
}

/// Training curve as CSV.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,train_loss,valid_mean_rmse\n");
    for c in curve {
        out.push_str(&format!("{},{},{}\n", c.step, c.train_loss, c.valid_rmse));
    }
    out
}
