use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Direction, FlConfig, RoundMessage};
use crate::ingest::{ParticipantData, RegularSample};
use crate::model::Model;
use crate::train::{evaluate_participant, Result, Split, Trainer, TrainError};

/// The client side of the protocol. Implementations receive and return
/// parameter snapshots and report validation RMSE; nothing else crosses.
pub trait Client {
    fn id(&self) -> &str;

    /// Overwrites local parameters with the broadcast, trains locally and
    /// returns the resulting snapshot.
    fn train_round(&mut self, msg: &RoundMessage) -> Result<RoundMessage>;

    /// Validation RMSE (mg/dL) of the broadcast parameters on local data.
    fn validate(&mut self, msg: &RoundMessage) -> Result<f64>;
}

/// An in-process client owning one participant's data.
pub struct LocalClient {
    data: ParticipantData,
    model: Model,
    lr: f64,
    local_steps: usize,
    batch_size: usize,
    glucose: usize,
    rng: ChaCha8Rng,
}

impl LocalClient {
    pub fn new(data: ParticipantData, template: &Model, fl: &FlConfig, batch_size: usize, seed: u64, glucose: usize) -> Self {
        Self {
            data,
            model: template.clone(),
            lr: fl.client_lr,
            local_steps: fl.t_client,
            batch_size,
            glucose,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn load(&mut self, msg: &RoundMessage) -> Result<()> {
        if msg.direction != Direction::ServerToClient || msg.participant != self.data.id {
            return Err(TrainError::Data(format!(
                "client {} received a message addressed to {}",
                self.data.id, msg.participant
            )));
        }
        self.model.params.load_flat(&msg.payload)?;
        Ok(())
    }

    /// Local training from the broadcast parameters with fresh moments.
    pub fn client_round(&mut self, global: &[f64]) -> Result<Vec<f64>> {
        self.model.params.load_flat(global)?;
        if self.local_steps == 0 {
            return Ok(global.to_vec());
        }
        if self.data.train.is_empty() {
            return Err(TrainError::Data(format!("client {} has no training samples", self.data.id)));
        }
        let pool: Vec<&RegularSample> = self.data.train.iter().collect();
        let mut trainer = Trainer::new(self.model.clone(), self.lr);
        for _ in 0..self.local_steps {
            trainer.step(&pool, self.batch_size, &mut self.rng)?;
        }
        self.model = trainer.model;
        Ok(self.model.params.flat_view())
    }
}

impl Client for LocalClient {
    fn id(&self) -> &str {
        &self.data.id
    }

    fn train_round(&mut self, msg: &RoundMessage) -> Result<RoundMessage> {
        self.load(msg)?;
        let payload = self.client_round(&msg.payload)?;
        Ok(RoundMessage {
            direction: Direction::ClientToServer,
            round: msg.round,
            participant: self.data.id.clone(),
            payload: payload.into(),
        })
    }

    fn validate(&mut self, msg: &RoundMessage) -> Result<f64> {
        self.load(msg)?;
        Ok(evaluate_participant(&self.model, &self.data, Split::Valid, self.glucose)?.rmse)
    }
}
