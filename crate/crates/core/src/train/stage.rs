use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Result, TrainError};
use crate::ingest::RegularSample;
use crate::model::Model;
use crate::tensor::{Adam, AdamConfig, AdamState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageConfig {
    pub steps: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean batch loss since the previous evaluation; NaN at step 0.
    pub train_loss: f64,
    pub valid_rmse: f64,
}

#[derive(Clone, Debug)]
pub struct StageResult {
    pub best: Model,
    pub best_step: usize,
    pub best_rmse: f64,
    /// `(step, rmse)` each time a new best was recorded; RMSE strictly falls.
    pub improvements: Vec<(usize, f64)>,
    pub curve: Vec<CurvePoint>,
    /// Batch loss of every step.
    pub losses: Vec<f64>,
    pub last: Model,
    /// Optimizer moments when `best` was recorded.
    pub best_optimizer: AdamState,
    /// Optimizer moments after the last step.
    pub optimizer: AdamState,
}

/// `batch` windows drawn uniformly with replacement.
pub fn draw_batch<'a>(pool: &[&'a RegularSample], batch: usize, rng: &mut ChaCha8Rng) -> Vec<&'a RegularSample> {
    (0..batch).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

/// A model with its optimizer.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
}

impl Trainer {
    /// Fresh Adam moments at learning rate `lr`.
    pub fn new(model: Model, lr: f64) -> Self {
        let adam = Adam::new(AdamConfig::with_lr(lr), &model.params);
        Self { model, adam }
    }

    /// One batch step; returns the batch loss before the update.
    pub fn step(&mut self, pool: &[&RegularSample], batch: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        if pool.is_empty() {
            return Err(TrainError::Data("empty training pool".into()));
        }
        let b = draw_batch(pool, batch, rng);
        self.model.params.zero_grads();
        let loss = self.model.loss_and_grad(&b)?;
        self.adam.step(&mut self.model.params)?;
        Ok(loss)
    }
}

/// `steps` batch steps with evaluation every `eval_every` steps, starting
/// from a baseline evaluation of `start`. A checkpoint is taken whenever the
/// validation RMSE is strictly lower than the best so far.
pub fn run_stage(
    start: Model,
    pool: &[&RegularSample],
    stage: &StageConfig,
    rng: &mut ChaCha8Rng,
    mut validate: impl FnMut(&Model) -> Result<f64>,
) -> Result<StageResult> {
    if stage.eval_every == 0 {
        return Err(TrainError::Config("evaluation interval must be at least 1".into()));
    }
    let baseline = validate(&start)?;
    let mut best = start.clone();
    let mut best_step = 0;
    let mut best_rmse = baseline;
    let mut improvements = vec![(0, baseline)];
    let mut curve = vec![CurvePoint {
        step: 0,
        train_loss: f64::NAN,
        valid_rmse: baseline,
    }];
    let mut trainer = Trainer::new(start, stage.lr);
    let mut best_optimizer = trainer.adam.state().clone();
    let mut losses = Vec::with_capacity(stage.steps);
    let mut window = Vec::new();
    for step in 1..=stage.steps {
        let loss = trainer.step(pool, stage.batch_size, rng)?;
        losses.push(loss);
        window.push(loss);
        if step % stage.eval_every == 0 {
            let rmse = validate(&trainer.model)?;
            curve.push(CurvePoint {
                step,
                train_loss: window.iter().sum::<f64>() / window.len() as f64,
                valid_rmse: rmse,
            });
            window.clear();
            if rmse < best_rmse {
                best_rmse = rmse;
                best_step = step;
                best = trainer.model.clone();
                best_optimizer = trainer.adam.state().clone();
                improvements.push((step, rmse));
            }
        }
    }
    Ok(StageResult {
        best,
        best_step,
        best_rmse,
        improvements,
        curve,
        losses,
        best_optimizer,
        optimizer: trainer.adam.state().clone(),
        last: trainer.model,
    })
}
