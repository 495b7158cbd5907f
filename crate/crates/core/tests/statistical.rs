use gsi_core::inference::SortedDraws;
use gsi_core::metrics::dkw_bound;
use gsi_core::*;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

fn mc_se(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

#[test]
fn quantile_coverage_concentrates_as_dkw_predicts() {
    let law = Normal::new(0.0, 1.0).unwrap();
    let alpha = 0.1;
    let reps = 500;
    for (m, eps) in [(1000usize, 0.05), (4000, 0.03)] {
        let mut rng = seeding::rng(seeding::mix(21, m as u64));
        let mut exceed = 0;
        for _ in 0..reps {
            let draws: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect();
            let q = empirical_upper_quantile(&draws, alpha).unwrap();
            let coverage = 2.0 * law.cdf(q) - 1.0;
            if (coverage - (1.0 - alpha)).abs() > eps {
                exceed += 1;
            }
        }
        let bound = dkw_bound(m, eps).unwrap();
        let rate = exceed as f64 / reps as f64;
        assert!(rate <= bound + 3.0 * mc_se(bound, reps), "m={m}: rate {rate} vs bound {bound}");
    }
}

#[test]
fn half_normal_oracle_radius() {
    struct HalfNormal;
    impl ScoreGenerator for HalfNormal {
        fn score_fn(&self) -> ScoreFnSpec {
            ScoreFnSpec::abs_residual()
        }
        fn condition_dim(&self) -> usize {
            1
        }
        fn sample(&self, _: &[f64], m: usize, seed: u64) -> Result<Vec<f64>> {
            let mut rng = seeding::rng(seed);
            Ok((0..m).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect())
        }
    }
    let pi = prediction_interval(&[0.0], &HalfNormal, 0.0, 0.1, 100_000, 3).unwrap();
    assert!((pi.radius - 1.6449).abs() <= 0.02, "radius {}", pi.radius);
    let wide = prediction_interval(&[0.0], &HalfNormal, 0.0, 0.05, 100_000, 3).unwrap();
    assert!(wide.radius >= pi.radius);
}

#[test]
fn uniform_quantile_and_tail_concentrate() {
    let mut rng = seeding::rng(5);
    let u: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let q = empirical_upper_quantile(&u, 0.1).unwrap();
    assert!((0.88..=0.92).contains(&q));
    let u: Vec<f64> = (0..100_000).map(|_| rng.random()).collect();
    let t = tail_probability(&u, 0.7).unwrap();
    assert!((0.29..=0.31).contains(&t));
}

/// Exchangeable statistics; label-0 items are nulls.
fn simulate_pvalue(rng: &mut impl Rng, n_val: usize, null_frac: f64) -> (f64, bool) {
    let draw = |rng: &mut dyn rand::RngCore| {
        let null = rng.random::<f64>() < null_frac;
        let v: f64 = if null { rng.random() } else { rng.random::<f64>().powf(0.3) };
        (v, u8::from(!null))
    };
    let (stats, labels): (Vec<f64>, Vec<u8>) = (0..n_val).map(|_| draw(rng)).unzip();
    let (v, z) = draw(rng);
    (conformal_pvalue(&stats, &labels, v).unwrap(), z == 0)
}

#[test]
fn conformal_pvalues_are_super_uniform() {
    let sims = 2000;
    let n_val = 60;
    for null_frac in [1.0, 0.6] {
        let mut rng = seeding::rng(seeding::mix(8, (null_frac * 10.0) as u64));
        let results: Vec<(f64, bool)> = (0..sims).map(|_| simulate_pvalue(&mut rng, n_val, null_frac)).collect();
        for t in [0.05, 0.1, 0.2] {
            let rate = results.iter().filter(|(p, null)| *null && *p <= t).count() as f64 / sims as f64;
            assert!(rate <= t + 2.0 / (n_val + 1) as f64, "null share {null_frac}, t={t}: {rate}");
        }
    }
}

#[test]
fn bh_controls_fdr_on_independent_pvalues() {
    let trials = 1000;
    let (n, n0) = (50, 35);
    let mut rng = seeding::rng(13);
    for alpha in [0.05, 0.1, 0.2] {
        let mut fdp = Vec::with_capacity(trials);
        for _ in 0..trials {
            let p: Vec<f64> = (0..n)
                .map(|i| if i < n0 { rng.random() } else { rng.random::<f64>() * 1e-3 })
                .collect();
            let sel = bh_select(&p, alpha).unwrap();
            let truth: Vec<bool> = (0..n).map(|i| i >= n0).collect();
            fdp.push(metrics::fdr_and_power(&sel.rejected, &truth).unwrap().0);
        }
        let mean = fdp.iter().sum::<f64>() / trials as f64;
        let sd = (fdp.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
        let limit = alpha * n0 as f64 / n as f64 + 3.0 * sd / (trials as f64).sqrt();
        assert!(mean <= limit, "alpha {alpha}: FDR {mean} > {limit}");
    }
}

#[test]
fn sorted_draws_agree_with_free_functions() {
    let mut rng = seeding::rng(2);
    let d: Vec<f64> = (0..333).map(|_| rng.random::<f64>()).collect();
    let s = SortedDraws::new(d.clone()).unwrap();
    for c in [0.0, 0.25, 0.5, 0.99] {
        assert_eq!(s.tail(c), tail_probability(&d, c).unwrap());
    }
    for a in [0.01, 0.1, 0.5] {
        assert_eq!(s.upper_quantile(a).unwrap(), empirical_upper_quantile(&d, a).unwrap());
    }
}
