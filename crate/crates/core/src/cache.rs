//! The realised compressed KV cache and its memory accounting.

use serde::{Deserialize, Serialize};

use crate::budget::BudgetPlan;
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::trace::AttentionTrace;

/// An averaged key/value pair standing in for a span of middle tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensationEntry {
    pub span: [usize; 2],
    pub key: Vec<f64>,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadCache {
    /// Retained key rows, copied verbatim from the trace.
    pub keys: Matrix,
    pub values: Matrix,
    /// Original position of each retained row, strictly increasing.
    pub positions: Vec<usize>,
    pub synthetic: Vec<CompensationEntry>,
}

impl HeadCache {
    pub fn slots(&self) -> usize {
        self.positions.len() + self.synthetic.len()
    }

    /// Keys and values with synthetic entries appended after real rows.
    pub fn attention_operands(&self) -> (Matrix, Matrix) {
        if self.synthetic.is_empty() {
            return (self.keys.clone(), self.values.clone());
        }
        let d = self.keys.cols();
        let rows = self.slots();
        let mut k = self.keys.as_slice().to_vec();
        let mut v = self.values.as_slice().to_vec();
        for e in &self.synthetic {
            k.extend_from_slice(&e.key);
            v.extend_from_slice(&e.value);
        }
        (
            Matrix::new(rows, d, k).expect("synthetic rows share head_dim"),
            Matrix::new(rows, d, v).expect("synthetic rows share head_dim"),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedCache {
    pub seq_len: usize,
    pub head_dim: usize,
    pub layers: Vec<Vec<HeadCache>>,
}

/// Copies the rows each plan retains out of `trace` and materialises any
/// compensation groups.
pub fn build_compressed_cache(trace: &AttentionTrace, plans: &[BudgetPlan]) -> Result<CompressedCache> {
    let (n_layers, n_heads, seq_len) = (trace.num_layers(), trace.num_heads(), trace.seq_len());
    if plans.len() != n_layers {
        return Err(Error::Consistency(format!(
            "{} plans for {n_layers} layers",
            plans.len()
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (r, plan) in plans.iter().enumerate() {
        if plan.layer != r || plan.per_head_retained.len() != n_heads {
            return Err(Error::Consistency(format!(
                "plan for layer {} with {} heads does not match layer {r} with {n_heads} heads",
                plan.layer,
                plan.per_head_retained.len()
            )));
        }
        let mut heads = Vec::with_capacity(n_heads);
        for (h, inputs) in trace.layer(r).iter().enumerate() {
            let positions = &plan.per_head_retained[h];
            if positions.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Consistency(format!(
                    "layer {r} head {h}: retained positions are not strictly increasing"
                )));
            }
            if let Some(&bad) = positions.iter().find(|&&p| p >= seq_len) {
                return Err(Error::Consistency(format!(
                    "layer {r} head {h}: position {bad} outside sequence of length {seq_len}"
                )));
            }
            let mut synthetic = Vec::new();
            for &[start, end] in plan.compensation_groups.get(h).map_or(&[][..], Vec::as_slice) {
                if start >= end || end > seq_len {
                    return Err(Error::Consistency(format!(
                        "layer {r} head {h}: bad compensation span [{start}, {end})"
                    )));
                }
                synthetic.push(CompensationEntry {
                    span: [start, end],
                    key: inputs.k().row_mean(start..end),
                    value: inputs.v().row_mean(start..end),
                });
            }
            heads.push(HeadCache {
                keys: inputs.k().select_rows(positions)?,
                values: inputs.v().select_rows(positions)?,
                positions: positions.clone(),
                synthetic,
            });
        }
        layers.push(heads);
    }
    Ok(CompressedCache {
        seq_len,
        head_dim: trace.head_dim(),
        layers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    pub tokens_retained: usize,
    /// K and V stored as `f32`: `tokens · 2 · d · 4`.
    pub bytes: u64,
    pub ratio_vs_full: f64,
}

pub fn memory_footprint(cache: &CompressedCache) -> MemoryFootprint {
    let tokens_retained: usize = cache.layers.iter().flatten().map(HeadCache::slots).sum();
    let full = cache.layers.iter().map(Vec::len).sum::<usize>() * cache.seq_len;
    MemoryFootprint {
        tokens_retained,
        bytes: tokens_retained as u64 * 2 * cache.head_dim as u64 * 4,
        ratio_vs_full: if full == 0 {
            0.0
        } else {
            tokens_retained as f64 / full as f64
        },
    }
}
