use serde::{Deserialize, Serialize};

use super::GridSeries;

/// A history window and its forecast target.
///
/// `x` and `mask` are `n_attributes × history`, attribute-major: cell `(n, t)`
/// is at `n * history + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularSample {
    pub participant_id: String,
    pub n_attributes: usize,
    pub history: usize,
    pub horizon: usize,
    pub x: Vec<f64>,
    pub mask: Vec<bool>,
    /// Normalized glucose at the horizon.
    pub y: f64,
    /// Start time of the last history cell.
    pub window_end_time: i64,
}

impl RegularSample {
    #[inline]
    pub fn idx(&self, n: usize, t: usize) -> usize {
        n * self.history + t
    }

    /// Start time of history cell `t`.
    pub fn time_of(&self, t: usize) -> i64 {
        self.window_end_time - (self.history - 1 - t) as i64 * super::GRID_STEP_SECONDS
    }

    /// Start time of the target cell.
    pub fn target_time(&self) -> i64 {
        self.window_end_time + self.horizon as i64 * super::GRID_STEP_SECONDS
    }
}

/// Stride-1 sliding windows over a normalized grid.
///
/// The window starting at cell `s` covers history cells `s..s+T` and targets
/// glucose cell `s+T+W-1`, so the target sits `W` steps after the last
/// history cell. Windows whose target is unobserved are skipped.
pub fn window_samples(grid: &GridSeries, history: usize, horizon: usize, glucose: usize) -> Vec<RegularSample> {
    let span = history + horizon;
    if history == 0 || horizon == 0 || span > grid.len {
        return Vec::new();
    }
    let n_attr = grid.n_attributes();
    let mut out = Vec::new();
    for s in 0..=grid.len - span {
        let target = s + span - 1;
        if !grid.observed(glucose, target) {
            continue;
        }
        let mut x = Vec::with_capacity(n_attr * history);
        let mut mask = Vec::with_capacity(n_attr * history);
        for n in 0..n_attr {
            let r = grid.idx(n, s)..grid.idx(n, s + history);
            x.extend_from_slice(&grid.values[r.clone()]);
            mask.extend_from_slice(&grid.mask[r]);
        }
        out.push(RegularSample {
            participant_id: grid.participant_id.clone(),
            n_attributes: n_attr,
            history,
            horizon,
            x,
            mask,
            y: grid.value(glucose, target),
            window_end_time: grid.time_of(s + history - 1),
        });
    }
    out
}
