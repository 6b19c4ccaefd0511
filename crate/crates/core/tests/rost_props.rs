//! Property tests for the structural algebra: Schur positivity on random
//! Gram matrices, monotone maps on random hierarchical matrices,
//! factorization partitions, and histogram normalization.

use proptest::prelude::*;

use rostlab_core::pointproc::MassPartition;
use rostlab_core::rost::{
    apply_monotone, overlap_histogram, q_factorize, schur_power, ultrametric_check,
    MonotoneMap, OverlapMatrix, Rost,
};

/// A random overlap matrix as a normalized Gram matrix of random vectors.
fn gram_overlap(n: usize) -> impl Strategy<Value = OverlapMatrix> {
    proptest::collection::vec(
        proptest::collection::vec(-1.0f64..1.0, n),
        n,
    )
    .prop_filter_map("vectors must have positive norm", move |vecs| {
        let mut unit = Vec::with_capacity(n);
        for v in &vecs {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-6 {
                return None;
            }
            unit.push(v.iter().map(|x| x / norm).collect::<Vec<f64>>());
        }
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    rows[i][j] = 1.0;
                } else {
                    rows[i][j] = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                }
            }
        }
        OverlapMatrix::from_rows(rows).ok()
    })
}

/// A random hierarchical (ultrametric) matrix from nested random labels.
fn hierarchical_overlap() -> impl Strategy<Value = OverlapMatrix> {
    (
        2usize..20,
        1usize..4,
        proptest::collection::vec(0.01f64..0.2, 3),
        any::<u64>(),
    )
        .prop_map(|(n, k, gaps, seed)| {
            // Strictly increasing levels in (0, 1).
            let mut q_levels = Vec::with_capacity(k);
            let mut acc = 0.05;
            for g in gaps.iter().take(k) {
                acc += g;
                q_levels.push(acc);
            }
            // Nested labels: each deeper level refines the previous one.
            let mut state = seed | 1;
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                state
            };
            let mut labels: Vec<Vec<u64>> = vec![vec![0; n]];
            for _ in 0..k {
                let prev = labels.last().unwrap().clone();
                labels.push(prev.iter().map(|p| p * 3 + next() % 3).collect());
            }
            let mut rows = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        rows[i][j] = 1.0;
                        continue;
                    }
                    let mut depth = 0;
                    for (l, level) in labels.iter().enumerate().skip(1) {
                        if level[i] == level[j] {
                            depth = l;
                        } else {
                            break;
                        }
                    }
                    rows[i][j] = if depth == 0 { q_levels[0] / 2.0 } else { q_levels[depth - 1] };
                }
            }
            // Depth-0 pairs share a value below every level.
            OverlapMatrix::from_rows(rows).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schur_powers_stay_positive_semidefinite(q in gram_overlap(8), r in 1u32..=8) {
        let powered = schur_power(&q, r).unwrap();
        let min_eig = powered.min_eigenvalue();
        prop_assert!(min_eig >= -1e-8 * 8.0, "min eigenvalue {min_eig} at r={r}");
    }

    #[test]
    fn monotone_maps_preserve_ultrametricity(q in hierarchical_overlap(), gamma in prop_oneof![Just(0.5f64), Just(2.0), Just(3.0)]) {
        prop_assert!(ultrametric_check(&q, 0.0).ok);
        let mapped = apply_monotone(&q, MonotoneMap::Pow(gamma)).unwrap();
        prop_assert!(ultrametric_check(&mapped, 1e-12).ok);
    }

    #[test]
    fn factorization_partitions_the_indices(
        sizes in proptest::collection::vec(2usize..5, 1..4),
        seed in any::<u64>(),
    ) {
        // Disjoint groups with distinct within-group values, zero across.
        let n: usize = sizes.iter().sum();
        let mut rows = vec![vec![0.0; n]; n];
        let mut start = 0;
        for (g, &size) in sizes.iter().enumerate() {
            let value = 0.3 + 0.1 * g as f64;
            for (i, row) in rows.iter_mut().enumerate().take(start + size).skip(start) {
                for (j, cell) in row.iter_mut().enumerate().take(start + size).skip(start) {
                    *cell = if i == j { 1.0 } else { value };
                }
            }
            start += size;
        }
        let q = OverlapMatrix::from_rows(rows).unwrap();
        let raw: Vec<f64> = (0..n).map(|i| 1.0 + ((seed >> (i % 32)) & 7) as f64).collect();
        let mut sorted = raw.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let xi = MassPartition::proper(sorted).unwrap();
        let f = q_factorize(&Rost::new(xi, q).unwrap(), 0.0).unwrap();

        let mut seen: Vec<usize> = f.factors.iter().flat_map(|x| x.indices.clone()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        prop_assert!(f.rounds <= f.state_count + 1);
        let total_share: f64 = f.factors.iter().map(|x| x.mass_share).sum();
        prop_assert!((total_share - 1.0).abs() < 1e-9);
        if sizes.len() == 1 {
            prop_assert_eq!(f.factors.len(), 1);
        }
    }

    #[test]
    fn histogram_masses_are_a_probability_vector(q in gram_overlap(6)) {
        let xi = MassPartition::proper(vec![0.3, 0.25, 0.2, 0.1, 0.1, 0.05]).unwrap();
        let rost = Rost::new(xi, q).unwrap();
        let hist = overlap_histogram(&rost, 1e-9).unwrap();
        let total: f64 = hist.iter().map(|(_, m)| m).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for w in hist.windows(2) {
            prop_assert!(w[0].0 < w[1].0);
        }
    }

    #[test]
    fn csv_round_trip_is_lossless(q in gram_overlap(5)) {
        let text = q.to_csv_string();
        let back = OverlapMatrix::from_csv_str(&text).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                prop_assert!((back.get(i, j) - q.get(i, j)).abs() < 1e-12);
            }
        }
    }
}
