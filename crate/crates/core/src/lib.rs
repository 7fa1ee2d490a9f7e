//! Forecasting engine for regularized multivariate time series built around
//! a graph attentive memory model: per-attribute embeddings, a dynamic graph
//! attention network over the attributes observed at each step, a GRU over
//! time, and an affine forecast head.
//!
//! Modules, bottom-up:
//! - [`tensor`]: dense f64 tensors, reverse-mode tape, Adam.
//! - [`ingest`]: event parsing, 5-minute regularization, normalization, windowing.
//! - [`model`]: GAM forward pass, LSTM/GRU baselines, time-aware head.
//! - [`train`]: loss, metrics, pooled two-step training.
//! - [`fedsim`]: federated averaging simulation with personalized fine-tuning.

pub mod fedsim;
pub mod ingest;
pub mod model;
pub mod tensor;
pub mod train;
pub mod util;
