//! Event ingestion and regularization.
//!
//! Raw per-participant records arrive irregularly (CGM every ~5 minutes,
//! meals and boluses whenever they happen, sleep and exercise as intervals).
//! This module turns them into a fixed 5-minute grid with an observation
//! mask, normalizes observed cells with training-split statistics (leaving
//! padding at exactly zero), and cuts sliding windows whose targets are
//! always real glucose readings.

mod basal;
mod dataset;
mod grid;
mod normalize;
mod parse;
mod window;

pub use basal::merge_basal;
pub use dataset::{build_participant, IngestStats, ParticipantData, ProcessedDataset, DATASET_MAGIC};
pub use grid::{regularize, split_train_valid, GridSeries, RegularizeStats, GRID_STEP_SECONDS};
pub use normalize::{apply_normalizer, fit_normalizer, NormStats};
pub use parse::{parse_events, parse_timestamp, EventFormat, ParseOptions, TEMP_BASAL};
pub use window::{window_samples, RegularSample};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot normalize attributes {attributes:?}: {reason}")]
    Normalization {
        attributes: Vec<String>,
        reason: String,
    },
    #[error("dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// One raw observation. Interval attributes carry `end_timestamp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub attribute: String,
    /// Epoch seconds.
    pub timestamp: i64,
    pub value: f64,
    pub end_timestamp: Option<i64>,
}

/// All records of one participant, ordered by timestamp.
///
/// `attribute_catalog` fixes the row order of the regularized grid. Every
/// record names a catalog attribute, except `temp_basal` records which are
/// kept for [`merge_basal`] when the catalog contains `basal`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventStream {
    pub participant_id: String,
    pub events: Vec<EventRecord>,
    pub attribute_catalog: Vec<String>,
    /// Records dropped at parse time because their attribute is not in the
    /// catalog (non-strict mode only).
    pub dropped_unknown: usize,
}

/// How an attribute's records are mapped onto grid cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Snap to the containing cell; several values in one cell are averaged.
    /// A record with an end timestamp is spread like an interval.
    Point,
    /// Every cell overlapped by `[timestamp, end_timestamp)` gets the value.
    Interval,
    /// The value holds from its cell until superseded (or until its own end
    /// timestamp, if present).
    Stepwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub policy: Policy,
}

impl AttributeSpec {
    pub fn new(name: &str, policy: Policy) -> Self {
        Self {
            name: name.to_string(),
            policy,
        }
    }
}

/// Preprocessing options shared by every participant in a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub attributes: Vec<AttributeSpec>,
    /// Name of the forecast target attribute; must be in `attributes`.
    pub glucose: String,
    pub strict: bool,
    /// History length T in grid steps.
    pub history: usize,
    /// Prediction horizon W in grid steps.
    pub horizon: usize,
    pub valid_ratio: f64,
    /// Prefix each test grid with the tail of the validation grid so test
    /// windows can start right at the beginning of the test period.
    pub test_warm_start: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            attributes: vec![
                AttributeSpec::new("glucose_level", Policy::Point),
                AttributeSpec::new("meal", Policy::Point),
                AttributeSpec::new("bolus", Policy::Point),
                AttributeSpec::new("finger_stick", Policy::Point),
                AttributeSpec::new("sleep", Policy::Interval),
                AttributeSpec::new("exercise", Policy::Interval),
            ],
            glucose: "glucose_level".into(),
            strict: false,
            history: 12,
            horizon: 6,
            valid_ratio: 0.8,
            test_warm_start: false,
        }
    }
}

impl IngestConfig {
    pub fn catalog(&self) -> Vec<String> {
        self.attributes.iter().map(|a| a.name.clone()).collect()
    }

    pub fn glucose_index(&self) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == self.glucose)
            .ok_or_else(|| {
                IngestError::Config(format!(
                    "target attribute `{}` is not in the catalog",
                    self.glucose
                ))
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(IngestError::Config("empty attribute catalog".into()));
        }
        let mut names: Vec<&str> = self.attributes.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(IngestError::Config(format!("duplicate attribute `{}`", w[0])));
        }
        self.glucose_index()?;
        if self.history == 0 || self.horizon == 0 {
            return Err(IngestError::Config("history and horizon must be at least 1".into()));
        }
        if !(self.valid_ratio > 0.0 && self.valid_ratio < 1.0) {
            return Err(IngestError::Config(format!(
                "train/valid ratio must lie in (0, 1), got {}",
                self.valid_ratio
            )));
        }
        Ok(())
    }

    pub(crate) fn policy_of(&self, name: &str) -> Option<Policy> {
        self.attributes.iter().find(|a| a.name == name).map(|a| a.policy)
    }
}
