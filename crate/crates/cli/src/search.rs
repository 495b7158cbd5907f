//! Random hyperparameter search for the diffusion generator.

use gsi_core::diffusion::DiffTrainConfig;
use gsi_core::{seeding, GsiError, Result};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Ranges trial configurations are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub batch_sizes: Vec<usize>,
    /// Learning rate bounds, sampled log-uniformly.
    pub lr: [f64; 2],
    pub tau_min: [f64; 2],
    /// Inclusive bounds on the number of reverse-time steps.
    pub num_steps: [usize; 2],
    pub dropout_p: [f64; 2],
    pub hidden_dims: Vec<usize>,
    pub num_res_blocks: Vec<usize>,
    /// Epoch counts to choose from; empty keeps the base (or budget) epochs.
    pub epochs: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            batch_sizes: vec![32, 64, 128],
            lr: [1e-5, 1e-4],
            tau_min: [0.01, 0.02],
            num_steps: [300, 1000],
            dropout_p: [0.0, 0.05],
            hidden_dims: vec![32, 64, 128],
            num_res_blocks: vec![1, 2, 3],
            epochs: Vec::new(),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let empty = |what: &str| Err(GsiError::Config(format!("search space: empty {what}")));
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return empty("or zero batch size choice");
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return empty("or zero hidden width choice");
        }
        if self.num_res_blocks.is_empty() {
            return empty("residual block choice");
        }
        if !(self.lr[0] > 0.0 && self.lr[0] <= self.lr[1] && self.lr[1].is_finite()) {
            return empty("learning rate range");
        }
        if !(self.tau_min[0] > 0.0 && self.tau_min[0] <= self.tau_min[1]) {
            return empty("tau_min range");
        }
        if !(self.num_steps[0] >= 2 && self.num_steps[0] <= self.num_steps[1]) {
            return empty("num_steps range");
        }
        if !(self.dropout_p[0] >= 0.0 && self.dropout_p[0] <= self.dropout_p[1] && self.dropout_p[1] < 1.0) {
            return empty("dropout range");
        }
        Ok(())
    }

    fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    }

    /// Draws one configuration on top of `base`.
    pub fn sample<R: Rng>(&self, base: &DiffTrainConfig, rng: &mut R) -> DiffTrainConfig {
        let mut cfg = base.clone();
        cfg.batch_size = *self.batch_sizes.choose(rng).expect("validated non-empty");
        cfg.lr = Self::uniform(rng, [self.lr[0].ln(), self.lr[1].ln()]).exp();
        cfg.schedule.tau_min = Self::uniform(rng, self.tau_min);
        cfg.schedule.num_steps = rng.random_range(self.num_steps[0]..=self.num_steps[1]);
        cfg.dropout_p = Self::uniform(rng, self.dropout_p);
        cfg.hidden_dim = *self.hidden_dims.choose(rng).expect("validated non-empty");
        cfg.num_res_blocks = *self.num_res_blocks.choose(rng).expect("validated non-empty");
        if let Some(&e) = self.epochs.choose(rng) {
            cfg.epochs = e;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: DiffTrainConfig,
    /// Validation denoising MSE; infinite when training diverged.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best_index: usize,
    pub best: DiffTrainConfig,
    pub trials: Vec<Trial>,
}

/// Samples `trials` configurations and keeps the one with the smallest
/// objective; ties go to the earlier trial. A trial whose training diverges
/// scores `+∞`; any other error aborts the search.
pub fn random_search<F>(
    space: &SearchSpace,
    base: &DiffTrainConfig,
    trials: usize,
    budget_epochs: Option<usize>,
    seed: u64,
    mut objective: F,
) -> Result<SearchOutcome>
where
    F: FnMut(&DiffTrainConfig) -> Result<f64>,
{
    if trials == 0 {
        return Err(GsiError::Config("random search needs at least one trial".into()));
    }
    space.validate()?;
    let mut rng = seeding::rng(seed);
    let mut records = Vec::with_capacity(trials);
    let mut best: Option<(usize, f64)> = None;
    for t in 0..trials {
        let mut cfg = space.sample(base, &mut rng);
        if let Some(e) = budget_epochs {
            if space.epochs.is_empty() {
                cfg.epochs = e;
            }
        }
        cfg.seed = seeding::mix(seed, t as u64);
        let value = match objective(&cfg) {
            Ok(v) if v.is_nan() => f64::INFINITY,
            Ok(v) => v,
            Err(GsiError::Training { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|(_, b)| value < b) {
            best = Some((t, value));
        }
        records.push(Trial { config: cfg, objective: value });
    }
    let (best_index, _) = best.expect("at least one trial");
    Ok(SearchOutcome {
        best_index,
        best: records[best_index].config.clone(),
        trials: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_trial_is_returned() {
        let out = random_search(&SearchSpace::default(), &DiffTrainConfig::default(), 1, None, 3, |_| Ok(0.5)).unwrap();
        assert_eq!(out.best_index, 0);
        assert_eq!(out.best, out.trials[0].config);
    }

    #[test]
    fn trials_stay_in_the_space() {
        let space = SearchSpace::default();
        let out = random_search(&space, &DiffTrainConfig::default(), 200, Some(3), 1, |c| Ok(c.lr)).unwrap();
        for t in &out.trials {
            let c = &t.config;
            assert!(space.batch_sizes.contains(&c.batch_size));
            assert!(c.lr >= 1e-5 && c.lr <= 1e-4);
            assert!((0.01..=0.02).contains(&c.schedule.tau_min));
            assert!((300..=1000).contains(&c.schedule.num_steps));
            assert!((0.0..=0.05).contains(&c.dropout_p));
            assert_eq!(c.epochs, 3);
        }
        let min = out.trials.iter().map(|t| t.config.lr).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best.lr, min);
    }

    #[test]
    fn log_uniform_lr_median() {
        let space = SearchSpace::default();
        let mut rng = seeding::rng(9);
        let mut lrs: Vec<f64> = (0..4001).map(|_| space.sample(&DiffTrainConfig::default(), &mut rng).lr).collect();
        lrs.sort_by(f64::total_cmp);
        // Median of a log-uniform on [1e-5, 1e-4] is sqrt(1e-9).
        let median = lrs[2000];
        assert!((median.ln() - (1e-9f64).sqrt().ln()).abs() < 0.1, "{median}");
    }

    #[test]
    fn ties_go_to_the_earlier_trial() {
        let out = random_search(&SearchSpace::default(), &DiffTrainConfig::default(), 5, None, 2, |_| Ok(1.0)).unwrap();
        assert_eq!(out.best_index, 0);
    }

    #[test]
    fn same_seed_same_sequence() {
        let run = |seed| random_search(&SearchSpace::default(), &DiffTrainConfig::default(), 8, None, seed, |_| Ok(0.0)).unwrap();
        assert_eq!(run(4), run(4));
        assert_ne!(run(4).trials, run(5).trials);
    }

    #[test]
    fn empty_space_is_config_error() {
        let space = SearchSpace {
            batch_sizes: vec![],
            ..SearchSpace::default()
        };
        let err = random_search(&space, &DiffTrainConfig::default(), 3, None, 0, |_| Ok(0.0)).unwrap_err();
        assert!(matches!(err, GsiError::Config(_)));
        let inverted = SearchSpace {
            lr: [1e-3, 1e-4],
            ..SearchSpace::default()
        };
        assert!(random_search(&inverted, &DiffTrainConfig::default(), 3, None, 0, |_| Ok(0.0)).is_err());
        assert!(random_search(&SearchSpace::default(), &DiffTrainConfig::default(), 0, None, 0, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn diverged_trials_lose() {
        let mut n = 0;
        let out = random_search(&SearchSpace::default(), &DiffTrainConfig::default(), 3, None, 0, |_| {
            n += 1;
            if n == 1 {
                Err(GsiError::Training { epoch: 0, msg: "nan".into() })
            } else {
                Ok(2.0)
            }
        })
        .unwrap();
        assert_eq!(out.best_index, 1);
        assert_eq!(out.trials[0].objective, f64::INFINITY);
    }
}
