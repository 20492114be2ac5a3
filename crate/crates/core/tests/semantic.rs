use headcache::rng::SampleStream;
use headcache::semantic::{
    approx_semantic_vector, classify_heads, head_distances, heterogeneous_schedule, profile_layer,
    semantic_vector_full, top_indices, window_column_scores, HeadClass, SemanticVector, VectorSource,
};
use headcache::tensor::{norm, sub, AttentionInputs, Matrix};
use headcache::trace::{gen_synthetic_trace, SyntheticProfile, TraceShape};
use proptest::prelude::*;

fn head(seed: u64, n: usize, d: usize) -> AttentionInputs {
    let t = gen_synthetic_trace(&SyntheticProfile::uniform(seed), TraceShape::new(1, 1, n, d)).unwrap();
    t.layer(0)[0].clone()
}

/// Direct evaluation of `colmean(A)·V` with explicit exponentials.
fn oracle_semantic(x: &AttentionInputs) -> Vec<f64> {
    let (n, d) = (x.seq_len(), x.head_dim());
    let mut colmean = vec![0.0; n];
    for i in 0..n {
        let scores: Vec<f64> = (0..=i)
            .map(|j| (0..d).map(|c| x.q().get(i, c) * x.k().get(j, c)).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - top).exp()).sum();
        for (j, s) in scores.iter().enumerate() {
            colmean[j] += (s - top).exp() / z / n as f64;
        }
    }
    (0..d).map(|c| (0..n).map(|j| colmean[j] * x.v().get(j, c)).sum()).collect()
}

fn vector(values: Vec<f64>) -> SemanticVector {
    SemanticVector {
        values,
        source: VectorSource::Exact,
    }
}

#[test]
fn full_vector_matches_direct_formula() {
    for seed in 0..4 {
        let x = head(seed, 40, 6);
        let got = semantic_vector_full(&x).unwrap();
        let want = oracle_semantic(&x);
        assert!(norm(&sub(&got.values, &want)) <= 1e-12 * norm(&want));
    }
}

#[test]
fn whole_window_scores_are_full_column_means() {
    let x = head(11, 33, 4);
    let scores = window_column_scores(&x, 33).unwrap();
    let full = semantic_vector_full(&x).unwrap();
    let approx = approx_semantic_vector(&scores, x.v(), 33).unwrap();
    assert!(norm(&sub(&approx.values, &full.values)) <= 1e-12 * norm(&full.values));
    assert!((scores.column_means.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn approximation_error_shrinks_with_t() {
    let x = head(42, 512, 16);
    let exact = semantic_vector_full(&x).unwrap();
    let scores = window_column_scores(&x, 512).unwrap();
    let errors: Vec<f64> = [16, 64, 256, 512]
        .iter()
        .map(|&t| {
            let approx = approx_semantic_vector(&scores, x.v(), t).unwrap();
            norm(&sub(&approx.values, &exact.values)) / norm(&exact.values)
        })
        .collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0] || w[1] == 0.0), "{errors:?}");
    assert!(errors[3] <= 1e-9);
}

#[test]
fn window_length_out_of_range_is_rejected() {
    let x = head(1, 8, 2);
    assert!(window_column_scores(&x, 0).is_err());
    assert!(window_column_scores(&x, 9).is_err());
}

#[test]
fn needle_is_the_top_column() {
    let shape = TraceShape::new(1, 4, 64, 8);
    let t = gen_synthetic_trace(&SyntheticProfile::needle(3, 7, 8.0), shape).unwrap();
    for x in t.layer(0) {
        let scores = window_column_scores(x, 16).unwrap().select_top(1);
        assert_eq!(scores.selected, vec![7]);
    }
}

#[test]
fn top_indices_prefers_lower_index_on_ties() {
    assert_eq!(top_indices(&[0.5, 0.9, 0.5, 0.9, 0.1], 3), vec![0, 1, 3]);
    assert_eq!(top_indices(&[1.0, 2.0], 5), vec![0, 1]);
}

#[test]
fn zero_noise_clusters_classify_planted_heads() {
    let shape = TraceShape::new(2, 12, 96, 8);
    for planted in [1, 3] {
        for seed in 0..5 {
            let profile = SyntheticProfile::clustered(seed, planted, 0.0);
            let t = gen_synthetic_trace(&profile, shape).unwrap();
            for r in 0..2 {
                let layer = profile_layer(r, t.layer(r), 16, 32, planted + 1).unwrap();
                let het = layer.heterogeneous_heads();
                let truth = profile.planted_heads(12, r);
                assert_eq!(het.len(), planted + 1);
                assert!(truth.iter().all(|h| het.contains(h)), "{het:?} ⊉ {truth:?}");
            }
        }
    }
}

#[test]
fn zero_heads_requested_marks_everything_non_heterogeneous() {
    let t = gen_synthetic_trace(&SyntheticProfile::uniform(0), TraceShape::new(1, 3, 8, 2)).unwrap();
    let layer = profile_layer(0, t.layer(0), 4, 4, 0).unwrap();
    assert!(layer.classes().iter().all(|&c| c == HeadClass::NonHeterogeneous));
}

#[test]
fn constant_values_give_constant_vectors() {
    let n = 10;
    let mut s = SampleStream::new(2, 0);
    let q = Matrix::new(n, 3, s.normals(3 * n)).unwrap();
    let k = Matrix::new(n, 3, s.normals(3 * n)).unwrap();
    let v = Matrix::from_rows(&vec![[2.0, -1.0, 0.5]; n]).unwrap();
    let x = AttentionInputs::new(q, k, v).unwrap();
    let sv = semantic_vector_full(&x).unwrap();
    for (a, b) in sv.values.iter().zip([2.0, -1.0, 0.5]) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn random_vectors(seed: u64, n: usize, d: usize) -> Vec<SemanticVector> {
    let mut s = SampleStream::new(seed, 0);
    (0..n).map(|_| vector(s.normals(d))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selected_mass_grows_with_t(seed in 0u64..5_000, n in 2usize..40, l in 1usize..40) {
        let x = head(seed, n, 3);
        let scores = window_column_scores(&x, l.min(n)).unwrap();
        let mut last = 0.0;
        for t in 1..=n {
            let mass = scores.clone().select_top(t).selected_mass();
            prop_assert!(mass >= last - 1e-15);
            last = mass;
        }
        prop_assert!((last - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classification_ignores_translation(seed in 0u64..5_000, n in 2usize..12, f in 1usize..12, shift in -50.0f64..50.0) {
        let f = f.min(n);
        let vs = random_vectors(seed, n, 4);
        let moved: Vec<_> = vs.iter().map(|v| vector(v.values.iter().map(|x| x + shift).collect())).collect();
        let (_, d1) = head_distances(&vs).unwrap();
        let (_, d2) = head_distances(&moved).unwrap();
        for (a, b) in d1.iter().zip(&d2) {
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
        }
        prop_assert_eq!(classify_heads(&d1, f).unwrap().iter().filter(|c| **c == HeadClass::Heterogeneous).count(), f);
    }

    #[test]
    fn classification_follows_head_permutation(seed in 0u64..5_000, n in 3usize..12, f in 1usize..12) {
        let f = f.min(n);
        let vs = random_vectors(seed, n, 4);
        let mut order: Vec<usize> = (0..n).collect();
        order.rotate_left(seed as usize % n);
        let permuted: Vec<_> = order.iter().map(|&i| vs[i].clone()).collect();
        let (_, d1) = head_distances(&vs).unwrap();
        // Tied distances are broken by head index, which relabelling changes.
        let mut sorted = d1.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[1] - w[0] > 1e-9 * (1.0 + w[1])));
        let (_, d2) = head_distances(&permuted).unwrap();
        let c1 = classify_heads(&d1, f).unwrap();
        let c2 = classify_heads(&d2, f).unwrap();
        for (new, &old) in order.iter().enumerate() {
            prop_assert_eq!(c2[new], c1[old]);
        }
    }

    #[test]
    fn schedule_is_monotone_from_beta_n_to_m(n in 1usize..64, beta in 0.0f64..1.0, m in 0usize..64, layers in 1usize..48) {
        let m = m.min(n);
        let s = heterogeneous_schedule(n, beta, m, layers).unwrap();
        prop_assert_eq!(s.per_layer_counts.len(), layers);
        prop_assert_eq!(*s.per_layer_counts.last().unwrap(), m);
        let start = s.per_layer_counts[0] as f64;
        if layers > 1 {
            prop_assert!((start - n as f64 * beta).abs() <= 0.5 + 1e-9);
        }
        let rising = (n as f64 * beta) <= m as f64;
        let ordered = |w: &[usize]| if rising { w[0] <= w[1] } else { w[0] >= w[1] };
        let monotone = s.per_layer_counts.windows(2).all(ordered);
        prop_assert!(monotone);
        prop_assert!(s.per_layer_counts.iter().all(|&c| c <= n));
    }
}
