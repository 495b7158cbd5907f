use gsi_core::diffusion::ou_moments;
use gsi_core::inference::{quantile_rank, split_sizes};
use gsi_core::nnet::{init_network, numerical_gradient, NetworkArch};
use gsi_core::scores::{lcs_len, rouge_l_dissimilarity};
use gsi_core::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[test]
fn backprop_matches_central_differences() {
    let mut rng = seeding::rng(11);
    let mut worst = 0.0f64;
    for probe in 0..20u64 {
        let arch = NetworkArch::new(rng.random_range(1..5), rng.random_range(1..3), rng.random_range(2..7), rng.random_range(0..3));
        let mut params = init_network(arch, probe).unwrap();
        // Random biases keep pre-activations away from the ReLU kink at zero.
        for b in params.biases.iter_mut() {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let batch = rng.random_range(1..5);
        let input = Array2::from_shape_fn((batch, arch.input_dim), |_| rng.random_range(-2.0..2.0));
        let weights = Array2::from_shape_fn((batch, arch.output_dim), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = params.forward_batch(input.view(), None).unwrap();
        let (grads, _) = params.backward(&cache, weights.view()).unwrap();
        let numeric = numerical_gradient(&params, input.view(), |out| (out * &weights).sum(), 1e-5).unwrap();
        for (a, n) in grads.tensors().zip(numeric.tensors()) {
            worst = worst.max(max_rel_error(a, n));
        }
    }
    assert!(worst <= 1e-4, "max relative gradient error {worst:e}");
}

#[test]
fn ou_identity_holds() {
    for i in 0..=1000 {
        let tau = 0.015 + (5.0 - 0.015) * i as f64 / 1000.0;
        let (mu, s2) = ou_moments(tau).unwrap();
        assert!((mu * mu + s2 - 1.0).abs() <= 1e-12);
    }
}

fn is_subsequence(sub: &[u8], s: &[u8]) -> bool {
    let mut it = s.iter();
    sub.iter().all(|c| it.any(|x| x == c))
}

fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
            is_subsequence(&sub, b).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

fn all_sequences(max_len: usize, alphabet: u8) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for t in 0..alphabet {
                let mut v: Vec<u8> = s.clone();
                v.push(t);
                next.push(v);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn lcs_matches_exhaustive_enumeration() {
    let seqs = all_sequences(6, 3);
    assert_eq!(seqs.len(), 1093);
    for a in &seqs {
        for b in &seqs {
            assert_eq!(lcs_len(a, b), brute_lcs(a, b), "{a:?} vs {b:?}");
        }
    }
}

proptest! {
    #[test]
    fn rouge_dissimilarity_is_bounded_and_symmetric(a in prop::collection::vec(0u8..4, 0..8), b in prop::collection::vec(0u8..4, 0..8)) {
        let ta: scores::TokenSeq = a.iter().map(|t| t.to_string()).collect();
        let tb: scores::TokenSeq = b.iter().map(|t| t.to_string()).collect();
        let d = rouge_l_dissimilarity(&ta, &tb);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - rouge_l_dissimilarity(&tb, &ta)).abs() < 1e-12);
    }

    #[test]
    fn quantile_scales_with_draws(draws in prop::collection::vec(0.0f64..10.0, 1..200), alpha in 0.01f64..0.99, k in 0.1f64..10.0) {
        let q = empirical_upper_quantile(&draws, alpha).unwrap();
        let scaled: Vec<f64> = draws.iter().map(|d| d * k).collect();
        prop_assert!((empirical_upper_quantile(&scaled, alpha).unwrap() - k * q).abs() <= 1e-12 * (1.0 + k * q));
    }

    #[test]
    fn quantile_is_monotone_in_level(draws in prop::collection::vec(-5.0f64..5.0, 1..200), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(empirical_upper_quantile(&draws, lo).unwrap() >= empirical_upper_quantile(&draws, hi).unwrap());
    }

    #[test]
    fn rejection_matches_set_exclusion(draws in prop::collection::vec(0.0f64..1.0, 1..300), c in 0.0f64..1.0, alpha in 0.005f64..0.995) {
        let sorted = SortedDraws::new(draws.clone()).unwrap();
        let by_rank = sorted.rejects(c, alpha).unwrap();
        let outside = c < empirical_upper_quantile(&draws, alpha).unwrap();
        prop_assert_eq!(by_rank, outside);
        // Away from the exact boundary the float comparison agrees as well.
        let tail = tail_probability(&draws, c).unwrap();
        if (tail - alpha).abs() * draws.len() as f64 > 1e-6 {
            prop_assert_eq!(by_rank, tail > alpha);
        }
    }

    #[test]
    fn quantile_rank_is_in_range(alpha in 0.0001f64..0.9999, m in 1usize..5000) {
        let k = quantile_rank(alpha, m);
        prop_assert!(k >= 1 && k <= m);
        prop_assert!(k as f64 >= (1.0 - alpha) * m as f64 - 1e-9);
    }

    #[test]
    fn bh_rejections_grow_with_level(p in prop::collection::vec(0.0f64..=1.0, 1..60), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = bh_select(&p, lo).unwrap();
        let large = bh_select(&p, hi).unwrap();
        prop_assert!(small.rejected.iter().all(|i| large.rejected.contains(i)));
        // Every rejected p-value is at most the BH cutoff.
        let cut = hi * large.k_hat as f64 / p.len() as f64;
        prop_assert!(large.rejected.iter().all(|&i| p[i] <= cut + 1e-15 || large.k_hat == 0));
    }

    #[test]
    fn conformal_pvalue_is_in_range(v in prop::collection::vec(0.0f64..1.0, 1..50), t in 0.0f64..1.0, seed in 0u64..1000) {
        let labels: Vec<u8> = (0..v.len()).map(|i| (seeding::mix(seed, i as u64) % 2) as u8).collect();
        let p = conformal_pvalue(&v, &labels, t).unwrap();
        prop_assert!(p >= 1.0 / (v.len() + 1) as f64 && p <= 1.0);
    }

    #[test]
    fn split_is_an_exact_partition(n in 4usize..400, w in prop::array::uniform4(1u32..10), seed in any::<u64>()) {
        let total: f64 = w.iter().map(|&x| x as f64).sum();
        let ratios = SplitRatios {
            train: w[0] as f64 / total,
            calibration: w[1] as f64 / total,
            validation: w[2] as f64 / total,
            test: 1.0 - (w[0] + w[1] + w[2]) as f64 / total,
        };
        let split = split_dataset(n, &ratios, seed).unwrap();
        split.check_partition(n).unwrap();
        let sizes = split_sizes(n, &ratios).unwrap();
        prop_assert_eq!(sizes, [split.train.len(), split.calibration.len(), split.validation.len(), split.test.len()]);
        for (s, r) in sizes.iter().zip([ratios.train, ratios.calibration, ratios.validation, ratios.test]) {
            prop_assert!((*s as f64 - r * n as f64).abs() < 4.0);
        }
    }

    #[test]
    fn kmeans_matches_exhaustive_partitions(pts in prop::collection::vec(prop::array::uniform2(-5.0f64..5.0), 3..8), g in 1usize..4) {
        let points: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
        prop_assume!(g <= points.len());
        let fit = metrics::kmeans(&points, g, 7, 200).unwrap();
        let best = exhaustive_wcss(&points, g);
        prop_assert!(fit.wcss <= best + 1e-9 * (1.0 + best), "kmeans {} vs optimum {}", fit.wcss, best);
    }
}

fn exhaustive_wcss(points: &[Vec<f64>], g: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    loop {
        let mut sums = vec![[0.0f64; 2]; g];
        let mut counts = vec![0usize; g];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l][0] += p[0];
            sums[l][1] += p[1];
        }
        if counts.iter().all(|&c| c > 0) {
            let w: f64 = points
                .iter()
                .zip(&labels)
                .map(|(p, &l)| {
                    let c = [sums[l][0] / counts[l] as f64, sums[l][1] / counts[l] as f64];
                    (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)
                })
                .sum();
            best = best.min(w);
        }
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < g {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

#[test]
fn kmeans_six_point_fixture() {
    let pts = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![5.0, 5.0],
        vec![6.0, 5.0],
        vec![5.0, 7.0],
    ];
    let fit = metrics::kmeans(&pts, 2, 1, 10).unwrap();
    let expected = exhaustive_wcss(&pts, 2);
    // Two triangles with WCSS 4/3 and 10/3.
    assert!((fit.wcss - expected).abs() < 1e-12);
    assert!((expected - (4.0 / 3.0 + 10.0 / 3.0)).abs() < 1e-12);
}
