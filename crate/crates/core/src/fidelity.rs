//! Decode-time fidelity of a compressed cache against the full cache.
//!
//! Each selected query row acts as a decoding probe that attends to the whole
//! cached prompt: once over all `N` keys, once over the retained (and any
//! synthetic) keys with the softmax renormalised over that set. The two
//! attention outputs are compared by L2 distance and cosine similarity.

use serde::{Deserialize, Serialize};

use crate::cache::CompressedCache;
use crate::error::{param, Error, Result};
use crate::tensor::{attention_output, dot, masked_softmax, norm, sub, AttentionInputs, Matrix};
use crate::trace::AttentionTrace;

/// Which query rows probe the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeQueries {
    pub count: usize,
    /// Rows skipped at the end of the sequence; a positive value evaluates
    /// earlier, held-out queries instead of the final ones.
    #[serde(default)]
    pub skip_last: usize,
}

impl DecodeQueries {
    pub fn last(count: usize) -> Self {
        Self { count, skip_last: 0 }
    }

    fn rows(&self, seq_len: usize) -> Result<std::ops::Range<usize>> {
        if self.count == 0 {
            return Err(param("decode query count must be at least 1"));
        }
        if self.count + self.skip_last > seq_len {
            return Err(param(format!(
                "{} decode queries (skipping {}) exceed sequence length {seq_len}",
                self.count, self.skip_last
            )));
        }
        let end = seq_len - self.skip_last;
        Ok(end - self.count..end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadFidelity {
    pub l2_error: f64,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityMetrics {
    pub per_head: Vec<Vec<HeadFidelity>>,
    pub mean_l2_error: f64,
    pub mean_cosine: f64,
}

/// Cosine similarity; two zero vectors count as identical, one zero vector
/// as orthogonal.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => dot(a, b) / (na * nb),
    }
}

/// Attention outputs of the probe rows against an arbitrary key/value set.
fn probe_outputs(inputs: &AttentionInputs, rows: std::ops::Range<usize>, keys: &Matrix, values: &Matrix) -> Result<Matrix> {
    let weights = masked_softmax(inputs.q(), rows, keys, |_, _| true);
    attention_output(&weights, values)
}

pub fn head_fidelity(
    inputs: &AttentionInputs,
    keys: &Matrix,
    values: &Matrix,
    queries: DecodeQueries,
) -> Result<HeadFidelity> {
    let rows = queries.rows(inputs.seq_len())?;
    let full = probe_outputs(inputs, rows.clone(), inputs.k(), inputs.v())?;
    let compressed = probe_outputs(inputs, rows, keys, values)?;
    let count = full.rows() as f64;
    let (mut l2, mut cos) = (0.0, 0.0);
    for i in 0..full.rows() {
        l2 += norm(&sub(full.row(i), compressed.row(i)));
        cos += cosine_similarity(full.row(i), compressed.row(i));
    }
    Ok(HeadFidelity {
        l2_error: l2 / count,
        cosine: cos / count,
    })
}

/// Per-head and overall fidelity of `cache` for `trace`.
pub fn fidelity_eval(trace: &AttentionTrace, cache: &CompressedCache, queries: DecodeQueries) -> Result<FidelityMetrics> {
    if cache.layers.len() != trace.num_layers() || cache.seq_len != trace.seq_len() {
        return Err(Error::Consistency("cache does not belong to this trace".into()));
    }
    queries.rows(trace.seq_len())?;
    let mut per_head = Vec::with_capacity(trace.num_layers());
    for (r, (layer, cached)) in trace.layers().iter().zip(&cache.layers).enumerate() {
        if cached.len() != layer.len() {
            return Err(Error::Consistency(format!("cache layer {r} has {} heads", cached.len())));
        }
        let heads = layer
            .iter()
            .zip(cached)
            .enumerate()
            .map(|(h, (inputs, head))| {
                let (k, v) = head.attention_operands();
                head_fidelity(inputs, &k, &v, queries).map_err(|e| e.in_head(r, h))
            })
            .collect::<Result<Vec<_>>>()?;
        per_head.push(heads);
    }
    let all: Vec<&HeadFidelity> = per_head.iter().flatten().collect();
    let count = all.len() as f64;
    Ok(FidelityMetrics {
        mean_l2_error: all.iter().map(|f| f.l2_error).sum::<f64>() / count,
        mean_cosine: all.iter().map(|f| f.cosine).sum::<f64>() / count,
        per_head,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::{apply_policy, PolicyKind, PolicyParams};
    use crate::cache::build_compressed_cache;
    use crate::trace::{gen_synthetic_trace, SyntheticProfile, TraceShape};

    #[test]
    fn full_policy_is_exact() {
        let t = gen_synthetic_trace(&SyntheticProfile::uniform(8), TraceShape::new(2, 3, 24, 4)).unwrap();
        let p = PolicyParams {
            budget_ratio: 1.0,
            sinks: 2,
            recents: 2,
            window: 4,
            kernel: 3,
        };
        let plans: Vec<_> = (0..2)
            .map(|r| apply_policy(r, t.layer(r), &[], PolicyKind::Full, &p).unwrap())
            .collect();
        let cache = build_compressed_cache(&t, &plans).unwrap();
        let m = fidelity_eval(&t, &cache, DecodeQueries::last(4)).unwrap();
        assert_eq!(m.mean_l2_error, 0.0);
        assert!((m.mean_cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn query_selection_bounds() {
        assert_eq!(DecodeQueries::last(3).rows(10).unwrap(), 7..10);
        assert_eq!(DecodeQueries { count: 3, skip_last: 2 }.rows(10).unwrap(), 5..8);
        assert!(DecodeQueries::last(11).rows(10).is_err());
        assert!(DecodeQueries::last(0).rows(10).is_err());
    }

    #[test]
    fn empty_cache_yields_zero_output() {
        let m = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let inputs = AttentionInputs::new(m.clone(), m.clone(), m).unwrap();
        let f = head_fidelity(&inputs, &Matrix::zeros(0, 2), &Matrix::zeros(0, 2), DecodeQueries::last(1)).unwrap();
        assert_eq!(f.cosine, 0.0);
        assert!(f.l2_error > 0.0);
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine_similarity(&[0.0], &[0.0]), 1.0);
        assert_eq!(cosine_similarity(&[0.0], &[1.0]), 0.0);
        assert!((cosine_similarity(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
    }
}
