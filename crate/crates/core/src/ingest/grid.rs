use serde::{Deserialize, Serialize};

use super::{EventRecord, EventStream, IngestConfig, IngestError, Policy, Result};

pub const GRID_STEP_SECONDS: i64 = 300;

/// A fixed 5-minute grid over `attributes × len` cells with an observation
/// mask. Cell `(n, t)` lives at `n * len + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSeries {
    pub participant_id: String,
    pub attributes: Vec<String>,
    /// Epoch seconds of the start of cell 0.
    pub grid_start: i64,
    pub step: i64,
    pub len: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl GridSeries {
    pub fn empty(participant_id: &str, attributes: Vec<String>, grid_start: i64, len: usize) -> Self {
        let cells = attributes.len() * len;
        Self {
            participant_id: participant_id.to_string(),
            attributes,
            grid_start,
            step: GRID_STEP_SECONDS,
            len,
            values: vec![0.0; cells],
            mask: vec![false; cells],
        }
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    #[inline]
    pub fn idx(&self, n: usize, t: usize) -> usize {
        n * self.len + t
    }

    pub fn value(&self, n: usize, t: usize) -> f64 {
        self.values[self.idx(n, t)]
    }

    pub fn observed(&self, n: usize, t: usize) -> bool {
        self.mask[self.idx(n, t)]
    }

    pub fn time_of(&self, t: usize) -> i64 {
        self.grid_start + t as i64 * self.step
    }

    /// Exclusive end time of the grid.
    pub fn end_time(&self) -> i64 {
        self.time_of(self.len)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }

    /// Cells `[from, to)` as a new grid.
    pub fn slice_time(&self, from: usize, to: usize) -> GridSeries {
        let to = to.min(self.len);
        let from = from.min(to);
        let len = to - from;
        let mut out = GridSeries::empty(
            &self.participant_id,
            self.attributes.clone(),
            self.time_of(from),
            len,
        );
        for n in 0..self.n_attributes() {
            let src = self.idx(n, from)..self.idx(n, to);
            let dst = out.idx(n, 0)..out.idx(n, len);
            out.values[dst.clone()].copy_from_slice(&self.values[src.clone()]);
            out.mask[dst].copy_from_slice(&self.mask[src]);
        }
        out
    }

    /// `prefix` followed by `self`; `prefix` must end where `self` starts.
    pub fn after(&self, prefix: &GridSeries) -> Result<GridSeries> {
        if prefix.attributes != self.attributes || prefix.end_time() != self.grid_start {
            return Err(IngestError::Validation(format!(
                "prefix grid ending at {} cannot precede grid starting at {}",
                prefix.end_time(),
                self.grid_start
            )));
        }
        let len = prefix.len + self.len;
        let mut out = GridSeries::empty(&self.participant_id, self.attributes.clone(), prefix.grid_start, len);
        for n in 0..self.n_attributes() {
            for (t, src) in [(0, prefix), (prefix.len, self)] {
                let s = src.idx(n, 0)..src.idx(n, src.len);
                let d = out.idx(n, t)..out.idx(n, t + src.len);
                out.values[d.clone()].copy_from_slice(&src.values[s.clone()]);
                out.mask[d].copy_from_slice(&src.mask[s]);
            }
        }
        Ok(out)
    }
}

/// Counts of records that did not land on the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegularizeStats {
    pub dropped_before_grid: usize,
    pub dropped_after_grid: usize,
}

fn cell_of(ts: i64, grid_start: i64) -> i64 {
    (ts - grid_start).div_euclid(GRID_STEP_SECONDS)
}

/// Inclusive range of cells overlapped by `[start, end)`.
fn covered_cells(start: i64, end: i64, grid_start: i64) -> (i64, i64) {
    let first = cell_of(start, grid_start);
    let last = if end > start {
        (end - grid_start + GRID_STEP_SECONDS - 1).div_euclid(GRID_STEP_SECONDS) - 1
    } else {
        first
    };
    (first, last)
}

/// Places events onto a `grid_len`-cell grid starting at `grid_start`.
///
/// Values are in native units; unobserved cells hold 0 with mask false.
/// Point records before `grid_start` (or at/after the grid end) are dropped
/// and counted; intervals are clipped to the grid.
pub fn regularize(
    events: &EventStream,
    config: &IngestConfig,
    grid_start: i64,
    grid_len: usize,
) -> Result<(GridSeries, RegularizeStats)> {
    if grid_len == 0 {
        return Err(IngestError::Config("grid length must be positive".into()));
    }
    let catalog = config.catalog();
    let mut grid = GridSeries::empty(&events.participant_id, catalog.clone(), grid_start, grid_len);
    let mut stats = RegularizeStats::default();
    let mut sums = vec![0.0; grid.values.len()];
    let mut counts = vec![0u32; grid.values.len()];
    let len = grid_len as i64;

    for (n, name) in catalog.iter().enumerate() {
        let policy = config.policy_of(name).unwrap_or(Policy::Point);
        let records: Vec<&EventRecord> = events.events.iter().filter(|e| &e.attribute == name).collect();
        if policy == Policy::Stepwise {
            fill_stepwise(&mut grid, n, &records, &mut stats);
            continue;
        }
        for r in records {
            let (first, last) = match r.end_timestamp {
                Some(end) => covered_cells(r.timestamp, end, grid_start),
                None => {
                    let c = cell_of(r.timestamp, grid_start);
                    (c, c)
                }
            };
            if last < 0 {
                stats.dropped_before_grid += 1;
                continue;
            }
            if first >= len {
                stats.dropped_after_grid += 1;
                continue;
            }
            for c in first.max(0)..=last.min(len - 1) {
                let i = n * grid_len + c as usize;
                sums[i] += r.value;
                counts[i] += 1;
            }
        }
    }
    for i in 0..grid.values.len() {
        if counts[i] > 0 {
            grid.values[i] = if counts[i] == 1 { sums[i] } else { sums[i] / counts[i] as f64 };
            grid.mask[i] = true;
        }
    }
    Ok((grid, stats))
}

/// Each cell takes the latest record starting before the cell ends, unless
/// that record's own end timestamp has passed by the cell start.
fn fill_stepwise(grid: &mut GridSeries, n: usize, records: &[&EventRecord], stats: &mut RegularizeStats) {
    let mut in_grid = Vec::with_capacity(records.len());
    for r in records {
        if r.timestamp < grid.grid_start {
            stats.dropped_before_grid += 1;
        } else if r.timestamp >= grid.end_time() {
            stats.dropped_after_grid += 1;
        } else {
            in_grid.push(*r);
        }
    }
    let mut k = 0;
    let mut current: Option<&EventRecord> = None;
    for t in 0..grid.len {
        let cell_start = grid.time_of(t);
        let cell_end = cell_start + grid.step;
        while k < in_grid.len() && in_grid[k].timestamp < cell_end {
            current = Some(in_grid[k]);
            k += 1;
        }
        if let Some(r) = current {
            if r.end_timestamp.is_none_or(|end| cell_start < end) {
                let i = grid.idx(n, t);
                grid.values[i] = r.value;
                grid.mask[i] = true;
            }
        }
    }
}

/// Chronological split: the first `ratio` of cells train, the rest validate.
/// Each side must hold at least `min_len` cells (one full window).
pub fn split_train_valid(grid: &GridSeries, ratio: f64, min_len: usize) -> Result<(GridSeries, GridSeries)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(IngestError::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let cut = (grid.len as f64 * ratio).floor() as usize;
    if cut < min_len || grid.len - cut < min_len {
        return Err(IngestError::Validation(format!(
            "grid of {} cells split at {cut} leaves a side shorter than one window ({min_len} cells)",
            grid.len
        )));
    }
    Ok((grid.slice_time(0, cut), grid.slice_time(cut, grid.len)))
}
