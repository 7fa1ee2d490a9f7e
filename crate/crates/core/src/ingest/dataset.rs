use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{
    apply_normalizer, fit_normalizer, merge_basal, regularize, split_train_valid, window_samples, EventStream,
    GridSeries, IngestConfig, IngestError, NormStats, RegularSample, RegularizeStats, Result, GRID_STEP_SECONDS,
};
use crate::util::fingerprint;

pub const DATASET_MAGIC: &str = "GAMDS1";

/// Counters collected while building one participant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub dropped_unknown: usize,
    pub train_grid: RegularizeStats,
    pub test_grid: RegularizeStats,
    pub grid_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipantData {
    pub id: String,
    pub stats: NormStats,
    pub train: Vec<RegularSample>,
    pub valid: Vec<RegularSample>,
    pub test: Vec<RegularSample>,
    pub ingest: IngestStats,
}

impl ParticipantData {
    pub fn glucose_stats(&self, glucose: usize) -> (f64, f64) {
        (self.stats.mean[glucose], self.stats.std[glucose])
    }
}

/// Windowed, normalized samples for every participant plus the
/// configuration they were built with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessedDataset {
    pub magic: String,
    pub config: IngestConfig,
    pub fingerprint: String,
    pub participants: Vec<ParticipantData>,
}

impl ProcessedDataset {
    pub fn new(config: IngestConfig, mut participants: Vec<ParticipantData>) -> Self {
        participants.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            magic: DATASET_MAGIC.into(),
            fingerprint: fingerprint(&config),
            config,
            participants,
        }
    }

    pub fn n_attributes(&self) -> usize {
        self.config.attributes.len()
    }

    pub fn glucose_index(&self) -> usize {
        self.config.glucose_index().expect("validated at build time")
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self).map_err(|e| IngestError::Format(e.to_string()))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let ds: ProcessedDataset = serde_json::from_reader(r).map_err(|e| IngestError::Format(e.to_string()))?;
        if ds.magic != DATASET_MAGIC {
            return Err(IngestError::Format(format!(
                "expected magic {DATASET_MAGIC}, found {}",
                ds.magic
            )));
        }
        if ds.fingerprint != fingerprint(&ds.config) {
            return Err(IngestError::Format("config fingerprint does not match contents".into()));
        }
        Ok(ds)
    }
}

fn span_of(stream: &EventStream) -> Option<(i64, i64)> {
    let first = stream.events.iter().map(|e| e.timestamp).min()?;
    let last = stream
        .events
        .iter()
        .map(|e| e.end_timestamp.unwrap_or(e.timestamp).max(e.timestamp))
        .max()?;
    Some((first, last))
}

fn grid_over(first: i64, last: i64) -> (i64, usize) {
    let start = first.div_euclid(GRID_STEP_SECONDS) * GRID_STEP_SECONDS;
    let len = (last - start).div_euclid(GRID_STEP_SECONDS) + 1;
    (start, len as usize)
}

/// Regularizes, splits, normalizes and windows one participant.
///
/// The training stream is split chronologically into train and validation;
/// the optional test stream is normalized with the training statistics.
pub fn build_participant(train: EventStream, test: Option<EventStream>, config: &IngestConfig) -> Result<ParticipantData> {
    config.validate()?;
    let glucose = config.glucose_index()?;
    let (t, w) = (config.history, config.horizon);
    let id = train.participant_id.clone();
    let mut ingest = IngestStats {
        dropped_unknown: train.dropped_unknown + test.as_ref().map_or(0, |s| s.dropped_unknown),
        ..IngestStats::default()
    };

    let train = merge_basal(train)?;
    let (first, last) = span_of(&train)
        .ok_or_else(|| IngestError::Validation(format!("participant {id} has no training events")))?;
    let (start, len) = grid_over(first, last);
    let (grid, st) = regularize(&train, config, start, len)?;
    ingest.train_grid = st;
    ingest.grid_cells = len;
    let (train_grid, valid_grid) = split_train_valid(&grid, config.valid_ratio, t + w)?;
    let stats = fit_normalizer(&train_grid, &format!("{id}/train"))?;
    let train_z = apply_normalizer(&train_grid, &stats)?;
    let valid_z = apply_normalizer(&valid_grid, &stats)?;

    let test_samples = match test {
        None => Vec::new(),
        Some(test) => {
            if test.participant_id != id {
                return Err(IngestError::Validation(format!(
                    "test stream belongs to {}, expected {id}",
                    test.participant_id
                )));
            }
            let test = merge_basal(test)?;
            match span_of(&test) {
                None => Vec::new(),
                Some((tfirst, tlast)) => {
                    let test_grid = if config.test_warm_start {
                        warm_test_grid(&valid_grid, &test, tfirst, tlast, config, &mut ingest)?
                    } else {
                        let (ts, tl) = grid_over(tfirst, tlast);
                        let (g, st) = regularize(&test, config, ts, tl)?;
                        ingest.test_grid = st;
                        g
                    };
                    window_samples(&apply_normalizer(&test_grid, &stats)?, t, w, glucose)
                }
            }
        }
    };

    let train_samples = window_samples(&train_z, t, w, glucose);
    let valid_samples = window_samples(&valid_z, t, w, glucose);
    if valid_samples.is_empty() {
        return Err(IngestError::Validation(format!(
            "participant {id} has no validation window with an observed target"
        )));
    }
    Ok(ParticipantData {
        id,
        stats,
        train: train_samples,
        valid: valid_samples,
        test: test_samples,
        ingest,
    })
}

/// Test grid prefixed with the last `T+W-1` validation cells, so the first
/// test window targets the first test cell.
fn warm_test_grid(
    valid: &GridSeries,
    test: &EventStream,
    tfirst: i64,
    tlast: i64,
    config: &IngestConfig,
    ingest: &mut IngestStats,
) -> Result<GridSeries> {
    let prefix_len = config.history + config.horizon - 1;
    let start = valid.end_time();
    if tfirst < start {
        return Err(IngestError::Validation(format!(
            "warm start needs test events after the training period ends at {start}"
        )));
    }
    let (_, len) = grid_over(start, tlast);
    let (g, st) = regularize(test, config, start, len)?;
    ingest.test_grid = st;
    let prefix = valid.slice_time(valid.len.saturating_sub(prefix_len), valid.len);
    g.after(&prefix)
}
