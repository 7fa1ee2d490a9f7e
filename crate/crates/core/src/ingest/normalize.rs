use serde::{Deserialize, Serialize};

use super::{GridSeries, IngestError, Result};

/// Per-attribute standardization statistics fitted on a training grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub attributes: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub computed_on: String,
}

impl NormStats {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }

    pub fn normalize(&self, n: usize, v: f64) -> f64 {
        (v - self.mean[n]) / self.std[n]
    }

    pub fn denormalize(&self, n: usize, z: f64) -> f64 {
        z * self.std[n] + self.mean[n]
    }
}

/// Mean and population standard deviation over observed cells only.
pub fn fit_normalizer(train: &GridSeries, tag: &str) -> Result<NormStats> {
    let mut mean = Vec::with_capacity(train.n_attributes());
    let mut std = Vec::with_capacity(train.n_attributes());
    let mut empty = Vec::new();
    let mut constant = Vec::new();
    for (n, name) in train.attributes.iter().enumerate() {
        let observed: Vec<f64> = (0..train.len)
            .filter(|&t| train.observed(n, t))
            .map(|t| train.value(n, t))
            .collect();
        if observed.is_empty() {
            empty.push(name.clone());
            mean.push(0.0);
            std.push(0.0);
            continue;
        }
        let count = observed.len() as f64;
        let m = observed.iter().sum::<f64>() / count;
        let var = observed.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
        let s = var.sqrt();
        if s.is_nan() || s <= 1e-12 * m.abs().max(1.0) {
            constant.push(name.clone());
        }
        mean.push(m);
        std.push(s);
    }
    if !empty.is_empty() {
        return Err(IngestError::Normalization {
            attributes: empty,
            reason: "no observed cells in the training split".into(),
        });
    }
    if !constant.is_empty() {
        return Err(IngestError::Normalization {
            attributes: constant,
            reason: "zero variance in the training split".into(),
        });
    }
    Ok(NormStats {
        attributes: train.attributes.clone(),
        mean,
        std,
        computed_on: tag.to_string(),
    })
}

/// Standardizes observed cells and writes exactly 0 into every padded cell.
pub fn apply_normalizer(grid: &GridSeries, stats: &NormStats) -> Result<GridSeries> {
    let columns = grid
        .attributes
        .iter()
        .map(|a| {
            stats.index_of(a).ok_or_else(|| IngestError::Normalization {
                attributes: vec![a.clone()],
                reason: "no statistics for this attribute".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = grid.clone();
    for (n, &k) in columns.iter().enumerate() {
        for t in 0..grid.len {
            let i = grid.idx(n, t);
            out.values[i] = if grid.mask[i] {
                stats.normalize(k, grid.values[i])
            } else {
                0.0
            };
        }
    }
    Ok(out)
}
