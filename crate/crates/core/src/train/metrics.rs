use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

/// Targets below this (mg/dL) are left out of MARD.
pub const MARD_GUARD: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipantMetrics {
    pub participant: String,
    pub rmse: f64,
    /// Percent.
    pub mard: f64,
    pub mae: f64,
    pub samples: usize,
    /// Pairs left out of MARD because the target was below the guard.
    pub mard_excluded: usize,
}

/// RMSE, MARD and MAE over `(y, ŷ)` pairs in mg/dL.
pub fn compute_metrics(participant: &str, pairs: &[(f64, f64)]) -> Result<ParticipantMetrics> {
    if pairs.is_empty() {
        return Err(TrainError::Data(format!("no samples to score for {participant}")));
    }
    let n = pairs.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut rel = 0.0;
    let mut rel_n = 0usize;
    for &(y, yhat) in pairs {
        let e = yhat - y;
        sq += e * e;
        abs += e.abs();
        if y >= MARD_GUARD {
            rel += e.abs() / y;
            rel_n += 1;
        }
    }
    Ok(ParticipantMetrics {
        participant: participant.to_string(),
        rmse: (sq / n).sqrt(),
        mard: if rel_n > 0 { rel / rel_n as f64 * 100.0 } else { f64::NAN },
        mae: abs / n,
        samples: pairs.len(),
        mard_excluded: pairs.len() - rel_n,
    })
}

/// Per-participant rows plus unweighted means across participants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub participants: Vec<ParticipantMetrics>,
    pub mean_rmse: f64,
    pub mean_mard: f64,
    pub mean_mae: f64,
    pub total_samples: usize,
    pub fingerprint: String,
}

impl MetricsReport {
    pub fn new(split: &str, mut participants: Vec<ParticipantMetrics>, fingerprint: &str) -> Self {
        participants.sort_by(|a, b| a.participant.cmp(&b.participant));
        let mean = |f: fn(&ParticipantMetrics) -> f64| {
            if participants.is_empty() {
                f64::NAN
            } else {
                participants.iter().map(f).sum::<f64>() / participants.len() as f64
            }
        };
        Self {
            split: split.to_string(),
            mean_rmse: mean(|p| p.rmse),
            mean_mard: mean(|p| p.mard),
            mean_mae: mean(|p| p.mae),
            total_samples: participants.iter().map(|p| p.samples).sum(),
            fingerprint: fingerprint.to_string(),
            participants,
        }
    }

    /// Largest absolute difference between corresponding numbers of two
    /// reports over the same participants; `None` if they are not comparable.
    pub fn max_abs_diff(&self, other: &MetricsReport) -> Option<f64> {
        if self.participants.len() != other.participants.len() {
            return None;
        }
        let mut worst = 0.0f64;
        let mut cmp = |a: f64, b: f64| {
            let d = if a.is_nan() && b.is_nan() { 0.0 } else { (a - b).abs() };
            worst = worst.max(if d.is_nan() { f64::INFINITY } else { d });
        };
        cmp(self.mean_rmse, other.mean_rmse);
        cmp(self.mean_mard, other.mean_mard);
        cmp(self.mean_mae, other.mean_mae);
        for (a, b) in self.participants.iter().zip(&other.participants) {
            if a.participant != b.participant || a.samples != b.samples {
                return None;
            }
            cmp(a.rmse, b.rmse);
            cmp(a.mard, b.mard);
            cmp(a.mae, b.mae);
        }
        Some(worst)
    }
}
