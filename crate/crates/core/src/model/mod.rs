//! The graph attentive memory forecaster and its baselines.
//!
//! All variants run sample-batched on a [`Tape`]. For a batch of `B`
//! windows the GAM graph is:
//!
//! 1. per-attribute affine embedding of every observed cell, `[B·T, N, E]`;
//! 2. `L` graph attention layers per time step over the observed nodes;
//! 3. node-major flattening to `[B, T, N·E′]`;
//! 4. a GRU over the `T` steps from a zero state;
//! 5. an affine head on the last hidden state (or on the time-aware
//!    attention summary of all hidden states).
//!
//! Padded cells are zeroed before they enter the graph, so predictions
//! depend on observed cells only.

mod config;
mod init;
pub mod layers;
mod snapshot;

pub use config::{GatActivation, ModelConfig, Variant};
pub use snapshot::{AttentionRecord, Edge, GraphSnapshot};

use crate::ingest::RegularSample;
use crate::tensor::{ParameterSet, Result, Tape, Tensor, TensorError, Var};
use layers::{GatHead, GruParams, LstmParams, TimeAwareParams};

const SECONDS_PER_DAY: i64 = 86_400;

/// A model configuration with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterSet,
}

/// Tape handles produced by one batched forward pass.
#[derive(Debug)]
pub struct Forward {
    /// Predictions in normalized units, `[B]`.
    pub pred: Var,
    /// Per layer, per head: attention `[B·T, N, N]` (GAM variants only).
    pub attention: Vec<Vec<Var>>,
    /// Time-aware weights `[B, T]` (`gam_ta` only).
    pub beta: Option<Var>,
}

/// Parameters registered on a tape, addressable by name.
pub struct Bound<'a> {
    params: &'a ParameterSet,
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    pub fn new(params: &'a ParameterSet, tape: &mut Tape, requires_grad: bool) -> Self {
        let vars = params.register(tape, requires_grad);
        Self { params, vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| TensorError::Contract(format!("missing parameter `{name}`")))
    }
}

impl Model {
    /// Seeded initialization: uniform ±sqrt(6/(fan_in+fan_out)) for weight
    /// matrices, zeros for biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init::build(&config, Some(seed))?;
        Ok(Self { config, params })
    }

    /// All parameters zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = init::build(&config, None)?;
        Ok(Self { config, params })
    }

    pub fn with_params(config: ModelConfig, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        let expected = init::build(&config, None)?.layout();
        if params.layout() != expected {
            return Err(TensorError::Contract(
                "parameter layout does not match the model configuration".into(),
            ));
        }
        Ok(Self { config, params })
    }

    fn check_sample(&self, s: &RegularSample) -> Result<()> {
        let c = &self.config;
        if s.n_attributes != c.n_attributes
            || s.history != c.history
            || s.x.len() != c.n_attributes * c.history
            || s.mask.len() != s.x.len()
        {
            return Err(TensorError::Contract(format!(
                "sample of {}×{} does not match model N={} T={}",
                s.n_attributes, s.history, c.n_attributes, c.history
            )));
        }
        Ok(())
    }

    /// Batched forward pass over already-registered parameters.
    pub fn forward_batch(&self, tape: &mut Tape, p: &Bound, batch: &[&RegularSample]) -> Result<Forward> {
        if batch.is_empty() {
            return Err(TensorError::Contract("empty batch".into()));
        }
        for s in batch {
            self.check_sample(s)?;
        }
        match self.config.variant {
            Variant::Gam | Variant::GamTa => self.forward_gam(tape, p, batch),
            Variant::Lstm => self.forward_lstm(tape, p, batch),
            Variant::GruGlucoseOnly => self.forward_gru_glucose(tape, p, batch),
        }
    }

    fn forward_gam(&self, tape: &mut Tape, p: &Bound, batch: &[&RegularSample]) -> Result<Forward> {
        let c = &self.config;
        let (b, t, n) = (batch.len(), c.history, c.n_attributes);
        let rows = b * t;
        let mut x = vec![0.0; rows * n];
        let mut act = vec![0.0; rows * n];
        let mut adj = vec![false; rows * n * n];
        for (bi, s) in batch.iter().enumerate() {
            for ti in 0..t {
                let r = bi * t + ti;
                for ni in 0..n {
                    let k = s.idx(ni, ti);
                    if s.mask[k] {
                        x[r * n + ni] = s.x[k];
                        act[r * n + ni] = 1.0;
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        adj[(r * n + i) * n + j] = s.mask[s.idx(i, ti)] && s.mask[s.idx(j, ti)];
                    }
                }
            }
        }
        let x = tape.constant(Tensor::new(vec![rows, n, 1], x)?);
        let act = tape.constant(Tensor::new(vec![rows, n, 1], act)?);

        let mut h_nodes = layers::embed(tape, x, act, p.get("embed.w")?, p.get("embed.b")?)?;
        let mut attention = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let heads = (0..c.heads)
                .map(|m| GatHead::bind(p, l, m))
                .collect::<Result<Vec<_>>>()?;
            let (out, alphas) = layers::gat_layer(tape, h_nodes, act, &adj, &heads, c.gat_activation, c.leaky_slope)?;
            h_nodes = out;
            attention.push(alphas);
        }
        let flat = tape.reshape(h_nodes, &[rows, n * c.gat_dim])?;
        let gru = GruParams::bind(p, "gru")?;
        let hs = layers::gru_sequence(tape, flat, b, t, &gru)?;

        let (summary, beta) = if c.variant == Variant::GamTa {
            let mut d = Vec::with_capacity(rows);
            let mut d_target = Vec::with_capacity(b);
            for s in batch {
                d.extend((0..t).map(|ti| day_fraction(s.time_of(ti))));
                d_target.push(day_fraction(s.target_time()));
            }
            let d = tape.constant(Tensor::new(vec![b, t, 1], d)?);
            let d_target = tape.constant(Tensor::new(vec![b, 1, 1], d_target)?);
            let ta = TimeAwareParams::bind(p)?;
            let (h, beta) = layers::time_aware_head(tape, &hs, d, d_target, &ta)?;
            (h, Some(beta))
        } else {
            (*hs.last().expect("history ≥ 1"), None)
        };
        let pred = self.head(tape, p, summary, b)?;
        Ok(Forward { pred, attention, beta })
    }

    fn forward_lstm(&self, tape: &mut Tape, p: &Bound, batch: &[&RegularSample]) -> Result<Forward> {
        let c = &self.config;
        let (b, t, n) = (batch.len(), c.history, c.n_attributes);
        let x = tape.constant(Tensor::new(vec![b * t, n], masked_rows(batch, t, 0..n))?);
        let lstm = LstmParams::bind(p)?;
        let hs = layers::lstm_sequence(tape, x, b, t, &lstm)?;
        let pred = self.head(tape, p, *hs.last().expect("history ≥ 1"), b)?;
        Ok(Forward {
            pred,
            attention: Vec::new(),
            beta: None,
        })
    }

    fn forward_gru_glucose(&self, tape: &mut Tape, p: &Bound, batch: &[&RegularSample]) -> Result<Forward> {
        let c = &self.config;
        let (b, t, g) = (batch.len(), c.history, c.glucose_index);
        let x = tape.constant(Tensor::new(vec![b * t, 1], masked_rows(batch, t, g..g + 1))?);
        let gru = GruParams::bind(p, "gru")?;
        let hs = layers::gru_sequence(tape, x, b, t, &gru)?;
        let pred = self.head(tape, p, *hs.last().expect("history ≥ 1"), b)?;
        Ok(Forward {
            pred,
            attention: Vec::new(),
            beta: None,
        })
    }

    fn head(&self, tape: &mut Tape, p: &Bound, h: Var, b: usize) -> Result<Var> {
        let y = tape.matmul(h, p.get("out.w")?)?;
        let y = tape.add(y, p.get("out.b")?)?;
        tape.reshape(y, &[b])
    }

    /// Predictions in normalized units, evaluated in chunks without
    /// gradient bookkeeping.
    pub fn predict(&self, samples: &[RegularSample]) -> Result<Vec<f64>> {
        const CHUNK: usize = 256;
        let mut out = Vec::with_capacity(samples.len());
        let mut tape = Tape::new();
        for chunk in samples.chunks(CHUNK) {
            tape.clear();
            let bound = Bound::new(&self.params, &mut tape, false);
            let refs: Vec<&RegularSample> = chunk.iter().collect();
            let f = self.forward_batch(&mut tape, &bound, &refs)?;
            out.extend_from_slice(tape.value(f.pred).data());
        }
        Ok(out)
    }

    /// Single-sample forward with per-step graph snapshots (empty for the
    /// non-graph variants) and, for `gam_ta`, the time-aware weights.
    pub fn forward(&self, sample: &RegularSample) -> Result<(f64, Vec<GraphSnapshot>, Option<Vec<f64>>)> {
        let mut tape = Tape::new();
        let bound = Bound::new(&self.params, &mut tape, false);
        let f = self.forward_batch(&mut tape, &bound, &[sample])?;
        let y = tape.value(f.pred).data()[0];
        let snaps = snapshot::extract(&tape, &f, sample, &self.config);
        let beta = f.beta.map(|v| tape.value(v).data().to_vec());
        Ok((y, snaps, beta))
    }

    /// Mean squared error over the batch; gradients are added to the
    /// parameters' accumulators.
    pub fn loss_and_grad(&mut self, batch: &[&RegularSample]) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = Bound::new(&self.params, &mut tape, true);
        let f = self.forward_batch(&mut tape, &bound, batch)?;
        let y: Vec<f64> = batch.iter().map(|s| s.y).collect();
        let y = tape.constant(Tensor::vector(y));
        let loss = layers::mse(&mut tape, f.pred, y)?;
        let value = tape.value(loss).item()?;
        let vars = bound.vars().to_vec();
        let grads = tape.backward(loss)?;
        self.params.accumulate(&grads, &vars)?;
        Ok(value)
    }

    /// Batch MSE without gradients.
    pub fn loss(&self, batch: &[&RegularSample]) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = Bound::new(&self.params, &mut tape, false);
        let f = self.forward_batch(&mut tape, &bound, batch)?;
        let y: Vec<f64> = batch.iter().map(|s| s.y).collect();
        let y = tape.constant(Tensor::vector(y));
        let loss = layers::mse(&mut tape, f.pred, y)?;
        tape.value(loss).item()
    }
}

/// Masked values of the attribute range as `[B·T, |range|]` rows.
fn masked_rows(batch: &[&RegularSample], t: usize, attrs: std::ops::Range<usize>) -> Vec<f64> {
    let width = attrs.len();
    let mut x = vec![0.0; batch.len() * t * width];
    for (bi, s) in batch.iter().enumerate() {
        for ti in 0..t {
            for (k, ni) in attrs.clone().enumerate() {
                let i = s.idx(ni, ti);
                if s.mask[i] {
                    x[(bi * t + ti) * width + k] = s.x[i];
                }
            }
        }
    }
    x
}

/// Seconds since midnight UTC as a fraction of the day.
pub fn day_fraction(ts: i64) -> f64 {
    ts.rem_euclid(SECONDS_PER_DAY) as f64 / SECONDS_PER_DAY as f64
}
