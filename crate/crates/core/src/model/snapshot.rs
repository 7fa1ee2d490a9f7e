use serde::{Deserialize, Serialize};

use super::{Forward, ModelConfig};
use crate::ingest::RegularSample;
use crate::tensor::Tape;

/// A message from node `src` to node `dst` with weight `alpha` (`α^{dst,src}`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub alpha: f64,
}

/// The attention graph at one history step of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub t: usize,
    pub active: Vec<usize>,
    /// `adjacency[i][j]` iff nodes `i` and `j` are both active.
    pub adjacency: Vec<Vec<bool>>,
    /// `attention[layer][head]`: one edge per active pair.
    pub attention: Vec<Vec<Vec<Edge>>>,
}

impl GraphSnapshot {
    /// Sum of incoming weights of `dst` for one layer and head.
    pub fn row_sum(&self, layer: usize, head: usize, dst: usize) -> f64 {
        self.attention[layer][head]
            .iter()
            .filter(|e| e.dst == dst)
            .map(|e| e.alpha)
            .sum()
    }
}

/// One attention export line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub participant: String,
    pub window_end_time: i64,
    pub t: usize,
    pub layer: usize,
    pub head: usize,
    pub edges: Vec<Edge>,
}

impl AttentionRecord {
    /// One record per (step, layer, head).
    pub fn from_snapshots(sample: &RegularSample, snaps: &[GraphSnapshot]) -> Vec<AttentionRecord> {
        let mut out = Vec::new();
        for s in snaps {
            for (layer, heads) in s.attention.iter().enumerate() {
                for (head, edges) in heads.iter().enumerate() {
                    out.push(AttentionRecord {
                        participant: sample.participant_id.clone(),
                        window_end_time: sample.window_end_time,
                        t: s.t,
                        layer,
                        head,
                        edges: edges.clone(),
                    });
                }
            }
        }
        out
    }
}

/// Snapshots for batch element 0 of a GAM forward pass.
pub(super) fn extract(tape: &Tape, f: &Forward, sample: &RegularSample, c: &ModelConfig) -> Vec<GraphSnapshot> {
    if f.attention.is_empty() {
        return Vec::new();
    }
    let n = c.n_attributes;
    (0..c.history)
        .map(|t| {
            let active: Vec<usize> = (0..n).filter(|&i| sample.mask[sample.idx(i, t)]).collect();
            let is_active = |i: usize| sample.mask[sample.idx(i, t)];
            let adjacency = (0..n)
                .map(|i| (0..n).map(|j| is_active(i) && is_active(j)).collect())
                .collect();
            let attention = f
                .attention
                .iter()
                .map(|heads| {
                    heads
                        .iter()
                        .map(|&alpha| {
                            let a = tape.value(alpha).data();
                            let base = t * n * n;
                            let mut edges = Vec::with_capacity(active.len() * active.len());
                            for &i in &active {
                                for &j in &active {
                                    edges.push(Edge {
                                        src: j,
                                        dst: i,
                                        alpha: a[base + i * n + j],
                                    });
                                }
                            }
                            edges
                        })
                        .collect()
                })
                .collect();
            GraphSnapshot {
                t,
                active,
                adjacency,
                attention,
            }
        })
        .collect()
}
