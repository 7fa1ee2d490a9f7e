//! Federated averaging simulation.
//!
//! Each participant is a client holding its own windows. Every round the
//! server broadcasts the global parameters, each client overwrites its local
//! copy, runs `T_client` local Adam steps with fresh moments and sends its
//! parameters back, and the server replaces the global parameters with the
//! unweighted mean. Every `T_eval1` rounds the clients score the global
//! parameters on their validation windows and the server keeps the best
//! global snapshot by mean RMSE. Personalized fine-tuning then runs exactly
//! as in pooled training.
//!
//! Clients and server exchange only [`RoundMessage`]s and validation
//! metrics; training windows never leave a client.

mod client;

pub use client::{Client, LocalClient};

use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ParticipantData;
use crate::model::{Model, ModelConfig};
use crate::train::{check_participants, fine_tune_all, init_seed, PersonalResult, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("client {participant} failed in round {round}: {source}")]
    Client {
        participant: String,
        round: usize,
        #[source]
        source: TrainError,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub type Result<T> = std::result::Result<T, FedError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlConfig {
    /// Rounds.
    pub t_total: usize,
    /// Local steps per round.
    pub t_client: usize,
    /// Validate every this many rounds.
    pub t_eval1: usize,
    pub client_lr: f64,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            t_total: 50,
            t_client: 80,
            t_eval1: 2,
            client_lr: 1e-3,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_total == 0 || self.t_eval1 == 0 {
            return Err(FedError::Config("t_total and t_eval1 must be at least 1".into()));
        }
        if self.t_eval1 > self.t_total {
            return Err(FedError::Config(format!(
                "t_eval1 {} exceeds t_total {}",
                self.t_eval1, self.t_total
            )));
        }
        if self.client_lr.is_nan() || self.client_lr <= 0.0 {
            return Err(FedError::Config("client learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ServerToClient,
    ClientToServer,
}

/// The only object that crosses the client boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMessage {
    pub direction: Direction,
    pub round: usize,
    pub participant: String,
    pub payload: Arc<[f64]>,
}

/// How clients are run within a round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    #[default]
    Serial,
    /// On a thread pool of the given size (0 = rayon default).
    Concurrent(usize),
}

/// Elementwise unweighted mean, summed in participant-id order.
pub fn server_aggregate(snapshots: &[(&str, &[f64])]) -> Result<Vec<f64>> {
    let first = snapshots
        .first()
        .ok_or_else(|| FedError::Protocol("no client snapshots to aggregate".into()))?;
    let len = first.1.len();
    if let Some((id, s)) = snapshots.iter().find(|(_, s)| s.len() != len) {
        return Err(FedError::Protocol(format!(
            "snapshot from {id} has {} values, expected {len}",
            s.len()
        )));
    }
    let mut order: Vec<&(&str, &[f64])> = snapshots.iter().collect();
    order.sort_by(|a, b| a.0.cmp(b.0));
    let mut sum = order[0].1.to_vec();
    for (_, s) in &order[1..] {
        for (acc, v) in sum.iter_mut().zip(s.iter()) {
            *acc += v;
        }
    }
    let p = snapshots.len() as f64;
    if snapshots.len() > 1 {
        for v in &mut sum {
            *v /= p;
        }
    }
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// NaN on rounds without validation.
    pub mean_valid_rmse: f64,
    /// Sum of client training times.
    pub wallclock_serial_s: f64,
    /// Slowest client, i.e. the round time with every client in parallel.
    pub wallclock_parallel_s: f64,
}

/// Result of the federated rounds.
#[derive(Clone, Debug)]
pub struct GlobalOutcome {
    pub best: Model,
    pub best_round: usize,
    pub best_rmse: f64,
    /// `(round, rmse)` whenever a new best global snapshot was kept.
    pub improvements: Vec<(usize, f64)>,
    /// Global parameters after the last round.
    pub last: Model,
    pub rounds: Vec<RoundLog>,
}

#[derive(Clone, Debug)]
pub struct FederatedOutcome {
    pub global: GlobalOutcome,
    pub personal: Vec<PersonalResult>,
}

impl FederatedOutcome {
    pub fn personal_model(&self, id: &str) -> Option<&Model> {
        self.personal.iter().find(|p| p.participant == id).map(|p| &p.stage.best)
    }
}

/// Per-client seed rule: base seed plus participant index.
pub fn client_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

struct Pool(Option<rayon::ThreadPool>);

impl Pool {
    fn new(s: Scheduler) -> Result<Self> {
        match s {
            Scheduler::Serial => Ok(Pool(None)),
            Scheduler::Concurrent(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map(|p| Pool(Some(p)))
                .map_err(|e| FedError::Config(format!("thread pool: {e}"))),
        }
    }

    /// Applies `f` to every client; results come back in client order.
    fn map<C, R>(&self, clients: &mut [C], f: impl Fn(&mut C) -> R + Sync + Send) -> Vec<R>
    where
        C: Send,
        R: Send,
    {
        match &self.0 {
            None => clients.iter_mut().map(f).collect(),
            Some(pool) => pool.install(|| clients.par_iter_mut().map(f).collect()),
        }
    }
}

/// Synchronous rounds over the given clients.
pub fn run_rounds<C: Client + Send>(
    clients: &mut [C],
    start: Model,
    fl: &FlConfig,
    scheduler: Scheduler,
) -> Result<GlobalOutcome> {
    fl.validate()?;
    if clients.is_empty() {
        return Err(FedError::Config("no clients".into()));
    }
    let pool = Pool::new(scheduler)?;
    let mut global: Arc<[f64]> = start.params.flat_view().into();
    let config = start.config.clone();

    let validate = |clients: &mut [C], round: usize, payload: &Arc<[f64]>| -> Result<f64> {
        let scores = pool.map(clients, |c| {
            let msg = RoundMessage {
                direction: Direction::ServerToClient,
                round,
                participant: c.id().to_string(),
                payload: payload.clone(),
            };
            c.validate(&msg).map_err(|source| FedError::Client {
                participant: c.id().to_string(),
                round,
                source,
            })
        });
        let scores = scores.into_iter().collect::<Result<Vec<f64>>>()?;
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    };

    let baseline = validate(clients, 0, &global)?;
    let mut best: Arc<[f64]> = global.clone();
    let mut best_round = 0;
    let mut best_rmse = baseline;
    let mut improvements = vec![(0, baseline)];
    let mut rounds = vec![RoundLog {
        round: 0,
        mean_valid_rmse: baseline,
        wallclock_serial_s: 0.0,
        wallclock_parallel_s: 0.0,
    }];

    for round in 1..=fl.t_total {
        let replies = pool.map(clients, |c| {
            let msg = RoundMessage {
                direction: Direction::ServerToClient,
                round,
                participant: c.id().to_string(),
                payload: global.clone(),
            };
            let started = std::time::Instant::now();
            let reply = c.train_round(&msg).map_err(|source| FedError::Client {
                participant: c.id().to_string(),
                round,
                source,
            });
            (reply, started.elapsed())
        });
        let mut msgs = Vec::with_capacity(replies.len());
        let mut serial = Duration::ZERO;
        let mut parallel = Duration::ZERO;
        for (reply, took) in replies {
            let msg = reply?;
            if msg.round != round || msg.direction != Direction::ClientToServer {
                return Err(FedError::Protocol(format!(
                    "client {} answered round {} with a {:?} message for round {}",
                    msg.participant, round, msg.direction, msg.round
                )));
            }
            serial += took;
            parallel = parallel.max(took);
            msgs.push(msg);
        }
        let snapshots: Vec<(&str, &[f64])> = msgs.iter().map(|m| (m.participant.as_str(), &m.payload[..])).collect();
        global = server_aggregate(&snapshots)?.into();

        let mut log = RoundLog {
            round,
            mean_valid_rmse: f64::NAN,
            wallclock_serial_s: serial.as_secs_f64(),
            wallclock_parallel_s: parallel.as_secs_f64(),
        };
        if round % fl.t_eval1 == 0 {
            let rmse = validate(clients, round, &global)?;
            log.mean_valid_rmse = rmse;
            if rmse < best_rmse {
                best_rmse = rmse;
                best_round = round;
                best = global.clone();
                improvements.push((round, rmse));
            }
        }
        rounds.push(log);
    }
    let to_model = |flat: &[f64]| -> Result<Model> {
        let mut m = Model::zeros(config.clone()).map_err(TrainError::from)?;
        m.params.load_flat(flat).map_err(TrainError::from)?;
        Ok(m)
    };
    Ok(GlobalOutcome {
        best: to_model(&best)?,
        best_round,
        best_rmse,
        improvements,
        last: to_model(&global)?,
        rounds,
    })
}

/// Federated stage 1 followed by personalized fine-tuning.
pub fn run_federated(
    data: &[ParticipantData],
    model: &ModelConfig,
    fl: &FlConfig,
    train: &TrainConfig,
    glucose: usize,
    scheduler: Scheduler,
) -> Result<FederatedOutcome> {
    train.validate()?;
    check_participants(data)?;
    let mut sorted: Vec<&ParticipantData> = data.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let start = Model::new(model.clone(), init_seed(train.seed)).map_err(TrainError::from)?;
    let mut clients: Vec<LocalClient> = sorted
        .iter()
        .enumerate()
        .map(|(i, p)| LocalClient::new((*p).clone(), &start, fl, train.batch_size, client_seed(train.seed, i), glucose))
        .collect();
    let global = run_rounds(&mut clients, start, fl, scheduler)?;
    let personal = fine_tune_all(&global.best, data, train, glucose)?;
    Ok(FederatedOutcome { global, personal })
}

/// Round log as CSV.
pub fn round_log_csv(rounds: &[RoundLog]) -> String {
    let mut out = String::from("round,mean_valid_RMSE,wallclock_serial_s,wallclock_parallel_s\n");
    for r in rounds {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.round, r.mean_valid_rmse, r.wallclock_serial_s, r.wallclock_parallel_s
        ));
    }
    out
}
