//! Semantic vectors and heterogeneous-head classification.
//!
//! A head's semantic vector is its value states weighted by how much
//! attention each position receives on average. Heads whose vectors sit far
//! from the layer mean are "heterogeneous" and keep their whole cache.

use serde::{Deserialize, Serialize};

use crate::error::{dim, param, Error, Result};
use crate::tensor::{attention_weights, norm, sub, AttentionInputs, CausalMask, Matrix};

/// Column-averaged attention over the last `window_len` query rows, plus the
/// top-`t` selection once [`WindowScores::select_top`] has run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScores {
    pub window_len: usize,
    pub column_means: Vec<f64>,
    pub top_t: usize,
    pub selected: Vec<usize>,
}

impl WindowScores {
    /// Fills `selected` with the `min(t, N)` highest-scoring positions
    /// (ascending index order).
    pub fn select_top(mut self, t: usize) -> Self {
        self.top_t = t;
        self.selected = top_indices(&self.column_means, t);
        self
    }

    /// Total column score of the selected positions.
    pub fn selected_mass(&self) -> f64 {
        self.selected.iter().map(|&i| self.column_means[i]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VectorSource {
    Exact,
    Approximated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticVector {
    pub values: Vec<f64>,
    pub source: VectorSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadClass {
    Heterogeneous,
    NonHeterogeneous,
}

impl HeadClass {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadClass::Heterogeneous => "heterogeneous",
            HeadClass::NonHeterogeneous => "non-heterogeneous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadProfile {
    pub layer: usize,
    pub head: usize,
    pub semantic: SemanticVector,
    pub distance_to_center: f64,
    pub class: HeadClass,
}

/// Per-layer heterogeneous-head counts, interpolated linearly from
/// `round(n·β)` at the bottom layer to `m` at the top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneitySchedule {
    pub beta: f64,
    pub top_m: usize,
    pub per_layer_counts: Vec<usize>,
}

/// Exact semantic vector: column means of the full causal attention matrix
/// applied to V.
pub fn semantic_vector_full(inputs: &AttentionInputs) -> Result<SemanticVector> {
    let n = inputs.seq_len();
    let a = attention_weights(inputs, &CausalMask::full(n), None)?;
    let means = a.row_mean(0..n);
    Ok(SemanticVector {
        values: inputs.v().left_mul(&means)?,
        source: VectorSource::Exact,
    })
}

/// Column means of the masked attention of the last `window_len` queries.
pub fn window_column_scores(inputs: &AttentionInputs, window_len: usize) -> Result<WindowScores> {
    let n = inputs.seq_len();
    if window_len == 0 || window_len > n {
        return Err(param(format!("window length {window_len} must be in 1..={n}")));
    }
    let rows = n - window_len..n;
    let a = attention_weights(inputs, &CausalMask::for_rows(rows.clone(), n), Some(rows))?;
    Ok(WindowScores {
        window_len,
        column_means: a.row_mean(0..window_len),
        top_t: 0,
        selected: Vec::new(),
    })
}

/// Approximate semantic vector `Σ_{i∈I} C[i]·V[i]` over the top-`t` window
/// scores. Weights are the raw column means, not renormalised.
pub fn approx_semantic_vector(scores: &WindowScores, values: &Matrix, t: usize) -> Result<SemanticVector> {
    if t == 0 {
        return Err(param("top-t must be at least 1"));
    }
    if scores.column_means.len() != values.rows() {
        return Err(dim(format!(
            "{} column scores for {} value rows",
            scores.column_means.len(),
            values.rows()
        )));
    }
    let mut out = vec![0.0; values.cols()];
    for i in top_indices(&scores.column_means, t) {
        let w = scores.column_means[i];
        for (o, &x) in out.iter_mut().zip(values.row(i)) {
            *o += w * x;
        }
    }
    Ok(SemanticVector {
        values: out,
        source: VectorSource::Approximated,
    })
}

/// Indices of the `min(t, len)` largest scores, ties to the lower index,
/// returned in ascending index order.
pub fn top_indices(scores: &[f64], t: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(t.min(scores.len()));
    order.sort_unstable();
    order
}

/// Layer semantic centre and each head's Euclidean distance to it.
pub fn head_distances(vectors: &[SemanticVector]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = vectors.first().ok_or(Error::EmptyInput("no semantic vectors"))?;
    let d = first.values.len();
    if let Some(bad) = vectors.iter().position(|v| v.values.len() != d) {
        return Err(dim(format!("semantic vector {bad} does not have dimension {d}")));
    }
    let mut center = vec![0.0; d];
    for v in vectors {
        for (c, &x) in center.iter_mut().zip(&v.values) {
            *c += x;
        }
    }
    let n = vectors.len() as f64;
    center.iter_mut().for_each(|c| *c /= n);
    let distances = vectors.iter().map(|v| norm(&sub(&v.values, &center))).collect();
    Ok((center, distances))
}

/// Linear schedule `f(r) = nβ − (nβ − m)·r/(R − 1)`, rounded half away from
/// zero and clamped to `[0, n]`. A single-layer model gets `m`.
pub fn heterogeneous_schedule(n: usize, beta: f64, m: usize, layers: usize) -> Result<HeterogeneitySchedule> {
    if layers == 0 {
        return Err(param("layer count must be at least 1"));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(param(format!("beta must be in (0, 1], got {beta}")));
    }
    if m > n {
        return Err(param(format!("top-layer count m={m} exceeds head count {n}")));
    }
    let bottom = n as f64 * beta;
    let per_layer_counts = if layers == 1 {
        vec![m]
    } else {
        let span = (layers - 1) as f64;
        (0..layers)
            .map(|r| {
                // Weighted form keeps both endpoints exact.
                let r = r as f64;
                let f = (bottom * (span - r) + m as f64 * r) / span;
                (f.round().max(0.0) as usize).min(n)
            })
            .collect()
    };
    Ok(HeterogeneitySchedule {
        beta,
        top_m: m,
        per_layer_counts,
    })
}

/// Marks `f_r` heads heterogeneous: the `f_r − 1` farthest from the centre
/// plus the single closest remaining head. Ties go to the lower index.
pub fn classify_heads(distances: &[f64], f_r: usize) -> Result<Vec<HeadClass>> {
    let n = distances.len();
    if f_r == 0 || f_r > n {
        return Err(param(format!("heterogeneous count {f_r} must be in 1..={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| distances[b].total_cmp(&distances[a]).then(a.cmp(&b)));
    let mut classes = vec![HeadClass::NonHeterogeneous; n];
    for &h in &order[..f_r - 1] {
        classes[h] = HeadClass::Heterogeneous;
    }
    let closest = order[f_r - 1..]
        .iter()
        .copied()
        .min_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)))
        .expect("at least one head remains");
    classes[closest] = HeadClass::Heterogeneous;
    Ok(classes)
}

/// Result of profiling one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProfile {
    pub layer: usize,
    pub center: Vec<f64>,
    pub heterogeneous_count: usize,
    pub heads: Vec<HeadProfile>,
}

impl LayerProfile {
    pub fn classes(&self) -> Vec<HeadClass> {
        self.heads.iter().map(|h| h.class).collect()
    }

    pub fn heterogeneous_heads(&self) -> Vec<usize> {
        self.heads
            .iter()
            .filter(|h| h.class == HeadClass::Heterogeneous)
            .map(|h| h.head)
            .collect()
    }
}

/// Windowed, top-`t` semantic vectors for every head of a layer, their
/// distances, and a classification with `f_r` heterogeneous heads
/// (`f_r = 0` marks every head non-heterogeneous).
pub fn profile_layer(
    layer: usize,
    heads: &[AttentionInputs],
    window_len: usize,
    top_t: usize,
    f_r: usize,
) -> Result<LayerProfile> {
    let vectors = heads
        .iter()
        .enumerate()
        .map(|(h, inputs)| {
            let l = window_len.min(inputs.seq_len());
            window_column_scores(inputs, l)
                .and_then(|s| approx_semantic_vector(&s, inputs.v(), top_t))
                .map_err(|e| e.in_head(layer, h))
        })
        .collect::<Result<Vec<_>>>()?;
    let (center, distances) = head_distances(&vectors).map_err(|e| e.in_layer(layer))?;
    let classes = if f_r == 0 {
        vec![HeadClass::NonHeterogeneous; heads.len()]
    } else {
        classify_heads(&distances, f_r).map_err(|e| e.in_layer(layer))?
    };
    let heads = vectors
        .into_iter()
        .zip(distances)
        .zip(classes)
        .enumerate()
        .map(|(head, ((semantic, distance_to_center), class))| HeadProfile {
            layer,
            head,
            semantic,
            distance_to_center,
            class,
        })
        .collect();
    Ok(LayerProfile {
        layer,
        center,
        heterogeneous_count: f_r,
        heads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(q: Vec<f64>, k: Vec<f64>, v: Vec<f64>, n: usize, d: usize) -> AttentionInputs {
        AttentionInputs::new(
            Matrix::new(n, d, q).unwrap(),
            Matrix::new(n, d, k).unwrap(),
            Matrix::new(n, d, v).unwrap(),
        )
        .unwrap()
    }

    fn sv(values: Vec<f64>) -> SemanticVector {
        SemanticVector {
            values,
            source: VectorSource::Exact,
        }
    }

    #[test]
    fn single_token_vector_is_its_value() {
        let x = inputs(vec![0.2, 0.1], vec![1.0, -1.0], vec![3.0, 4.0], 1, 2);
        assert_eq!(semantic_vector_full(&x).unwrap().values, vec![3.0, 4.0]);
    }

    #[test]
    fn zero_queries_weight_first_token_three_quarters() {
        let x = inputs(vec![0.0; 4], vec![1.0, 2.0, -3.0, 0.5], vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let v = semantic_vector_full(&x).unwrap().values;
        assert!((v[0] - 0.75).abs() < 1e-15);
        assert!((v[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn window_of_one_is_last_attention_row() {
        let x = inputs(
            vec![0.1, 0.5, -0.3, 0.2, 0.9, -0.4],
            vec![0.3, -0.1, 0.7, 0.2, -0.5, 0.8],
            vec![1.0; 6],
            3,
            2,
        );
        let full = attention_weights(&x, &CausalMask::full(3), None).unwrap();
        let w = window_column_scores(&x, 1).unwrap();
        assert_eq!(w.column_means, full.row(2));
        assert!(window_column_scores(&x, 0).is_err());
        assert!(window_column_scores(&x, 4).is_err());
    }

    #[test]
    fn top_indices_break_ties_low() {
        assert_eq!(top_indices(&[0.2, 0.5, 0.5, 0.1], 2), vec![1, 2]);
        assert_eq!(top_indices(&[0.3, 0.3, 0.3], 1), vec![0]);
        assert_eq!(top_indices(&[0.3, 0.1], 9), vec![0, 1]);
    }

    #[test]
    fn top_one_uses_argmax_only() {
        let scores = WindowScores {
            window_len: 1,
            column_means: vec![0.1, 0.6, 0.3],
            top_t: 0,
            selected: vec![],
        };
        let v = Matrix::new(3, 1, vec![10.0, 20.0, 30.0]).unwrap();
        let out = approx_semantic_vector(&scores, &v, 1).unwrap();
        assert_eq!(out.values, vec![0.6 * 20.0]);
        assert_eq!(out.source, VectorSource::Approximated);
        assert!(approx_semantic_vector(&scores, &v, 0).is_err());
        let filled = scores.select_top(2);
        assert_eq!(filled.selected, vec![1, 2]);
        assert!((filled.selected_mass() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn equal_vectors_have_zero_distance() {
        let (c, d) = head_distances(&[sv(vec![1.0, 2.0]), sv(vec![1.0, 2.0])]).unwrap();
        assert_eq!(c, vec![1.0, 2.0]);
        assert_eq!(d, vec![0.0, 0.0]);
        assert!(head_distances(&[]).is_err());
        assert!(head_distances(&[sv(vec![1.0]), sv(vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn symmetric_pair_has_equal_distances() {
        let (_, d) = head_distances(&[sv(vec![2.0, 1.0]), sv(vec![0.0, 1.0]), sv(vec![1.0, 1.0])]).unwrap();
        assert_eq!(d[0], d[1]);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn schedule_endpoints_and_interior() {
        let s = heterogeneous_schedule(32, 0.25, 4, 32).unwrap();
        assert_eq!(s.per_layer_counts[0], 8);
        assert_eq!(s.per_layer_counts[31], 4);
        assert_eq!(s.per_layer_counts[15], 6);
        let s = heterogeneous_schedule(32, 0.3, 1, 32).unwrap();
        assert_eq!(s.per_layer_counts[0], 10);
        assert_eq!(s.per_layer_counts[31], 1);
    }

    #[test]
    fn schedule_degenerate_and_invalid() {
        assert_eq!(heterogeneous_schedule(8, 0.5, 2, 1).unwrap().per_layer_counts, vec![2]);
        assert!(heterogeneous_schedule(8, 0.0, 2, 4).is_err());
        assert!(heterogeneous_schedule(8, 1.5, 2, 4).is_err());
        assert!(heterogeneous_schedule(8, 0.5, 9, 4).is_err());
        assert!(heterogeneous_schedule(8, 0.5, 2, 0).is_err());
    }

    #[test]
    fn classify_two_farthest_plus_closest() {
        let classes = classify_heads(&[5.0, 4.0, 3.0, 1.0, 0.5, 0.2], 3).unwrap();
        let het: Vec<usize> = (0..6).filter(|&i| classes[i] == HeadClass::Heterogeneous).collect();
        assert_eq!(het, vec![0, 1, 5]);
    }

    #[test]
    fn classify_edge_counts() {
        let d = [1.0, 2.0, 3.0];
        assert!(classify_heads(&d, 3).unwrap().iter().all(|c| *c == HeadClass::Heterogeneous));
        let one = classify_heads(&d, 1).unwrap();
        assert_eq!(one[0], HeadClass::Heterogeneous);
        assert_eq!(one.iter().filter(|c| **c == HeadClass::Heterogeneous).count(), 1);
        assert!(classify_heads(&d, 0).is_err());
        assert!(classify_heads(&d, 4).is_err());
    }

    #[test]
    fn classify_ties_prefer_lower_index() {
        let classes = classify_heads(&[1.0, 1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(
            classes,
            vec![
                HeadClass::Heterogeneous,
                HeadClass::Heterogeneous,
                HeadClass::NonHeterogeneous,
                HeadClass::NonHeterogeneous
            ]
        );
    }
}
