//! Conditional affine-Gaussian generator: `s | x = μ(x) + σ(x) ε`.
//!
//! Two residual networks output `μ(x)` and `log σ(x)` on standardized data
//! and are fitted by maximum likelihood.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{epoch_lr, ScoreSet, Standardization};
use crate::error::{GsiError, Result};
use crate::generator::ScoreGenerator;
use crate::nnet::{init_network, AdamState, NetworkArch, NetworkParams};
use crate::scores::ScoreFnSpec;
use crate::seeding;

/// Bounds applied to the `log σ` head (standardized units).
pub const LOG_SIGMA_MIN: f64 = -6.0;
pub const LOG_SIGMA_MAX: f64 = 3.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CFlowTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden_dim: usize,
    pub num_res_blocks: usize,
    pub dropout_p: f64,
    /// Anneal the learning rate from `lr` to zero along a half cosine.
    pub cosine_decay: bool,
    pub seed: u64,
}

impl Default for CFlowTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr: 1e-3,
            hidden_dim: 32,
            num_res_blocks: 1,
            dropout_p: 0.0,
            cosine_decay: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CFlowModel {
    pub mu_net: NetworkParams,
    pub logsigma_net: NetworkParams,
    pub standardization: Standardization,
    pub score_fn: ScoreFnSpec,
    pub config: CFlowTrainConfig,
}

/// Minimizes the per-sample Gaussian negative log-likelihood with Adam.
pub fn train_cflow(data: &ScoreSet, score_fn: ScoreFnSpec, config: &CFlowTrainConfig) -> Result<CFlowModel> {
    score_fn.validate()?;
    if config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(GsiError::Config("cflow needs a positive batch size and learning rate".into()));
    }
    let standardization = Standardization::fit(data);
    let width = standardization.encoded_dim();
    let arch = NetworkArch::new(width, 1, config.hidden_dim, config.num_res_blocks).with_dropout(config.dropout_p);
    let mut mu_net = init_network(arch, seeding::stage(config.seed, "init/mu"))?;
    let mut logsigma_net = init_network(arch, seeding::stage(config.seed, "init/logsigma"))?;
    let mut adam_mu = AdamState::new(&mu_net, config.lr);
    let mut adam_ls = AdamState::new(&logsigma_net, config.lr);

    let x_all = standardization.condition_matrix(data)?;
    let s_all: Vec<f64> = data.scores().iter().map(|&s| standardization.score(s)).collect();
    let mut rng = seeding::rng(seeding::stage(config.seed, "train"));
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        let lr = epoch_lr(config.lr, config.cosine_decay, epoch, config.epochs);
        adam_mu.lr = lr;
        adam_ls.lr = lr;
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let b = batch.len() as f64;
            let x_b = x_all.select(Axis(0), batch);
            let (mu, mu_cache) = mu_net.forward_batch(x_b.view(), Some(&mut rng))?;
            let (raw_ls, ls_cache) = logsigma_net.forward_batch(x_b.view(), Some(&mut rng))?;
            let mut g_mu = Array2::zeros((batch.len(), 1));
            let mut g_ls = Array2::zeros((batch.len(), 1));
            let mut loss = 0.0;
            for (k, &i) in batch.iter().enumerate() {
                let raw = raw_ls[[k, 0]];
                let ls = raw.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
                let sigma = ls.exp();
                let z = (s_all[i] - mu[[k, 0]]) / sigma;
                loss += 0.5 * z * z + ls + HALF_LN_2PI;
                g_mu[[k, 0]] = -z / sigma / b;
                if (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&raw) {
                    g_ls[[k, 0]] = (1.0 - z * z) / b;
                }
            }
            if !loss.is_finite() {
                return Err(GsiError::Training {
                    epoch,
                    msg: "non-finite negative log-likelihood".into(),
                });
            }
            let (gm, _) = mu_net.backward(&mu_cache, g_mu.view())?;
            let (gl, _) = logsigma_net.backward(&ls_cache, g_ls.view())?;
            let wrap = |e: GsiError| GsiError::Training {
                epoch,
                msg: e.to_string(),
            };
            adam_mu.adam_step(&mut mu_net, &gm).map_err(wrap)?;
            adam_ls.adam_step(&mut logsigma_net, &gl).map_err(wrap)?;
        }
    }

    Ok(CFlowModel {
        mu_net,
        logsigma_net,
        standardization,
        score_fn,
        config: config.clone(),
    })
}

impl CFlowModel {
    /// `(μ(x), log σ(x))` in standardized units.
    fn heads(&self, condition: &[f64]) -> Result<(f64, f64)> {
        let x = self.standardization.condition(condition)?;
        let x = Array2::from_shape_vec((1, x.len()), x).map_err(|e| GsiError::Shape(e.to_string()))?;
        let mu = self.mu_net.predict_batch(x.view())?[[0, 0]];
        let ls = self.logsigma_net.predict_batch(x.view())?[[0, 0]].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        Ok((mu, ls))
    }

    /// Conditional mean and standard deviation in raw score units (before clamping).
    pub fn location_scale(&self, condition: &[f64]) -> Result<(f64, f64)> {
        let (mu, ls) = self.heads(condition)?;
        let st = &self.standardization;
        Ok((st.unscale_score(mu), st.std_s * ls.exp()))
    }

    /// Gaussian log-density of `s` in raw units.
    pub fn cflow_logpdf(&self, condition: &[f64], s: f64) -> Result<f64> {
        let (mu, ls) = self.heads(condition)?;
        let st = &self.standardization;
        let z = (st.score(s) - mu) / ls.exp();
        Ok(-0.5 * z * z - ls - HALF_LN_2PI - st.std_s.ln())
    }
}

impl ScoreGenerator for CFlowModel {
    fn score_fn(&self) -> ScoreFnSpec {
        self.score_fn
    }

    fn condition_dim(&self) -> usize {
        self.standardization.cond_dim()
    }

    fn sample(&self, condition: &[f64], m: usize, seed: u64) -> Result<Vec<f64>> {
        if m == 0 {
            return Err(GsiError::Domain("number of draws must be >= 1".into()));
        }
        let (mu, sigma) = self.location_scale(condition)?;
        let mut rng = seeding::rng(seed);
        Ok((0..m)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                self.score_fn.clamp(mu + sigma * e)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model() -> CFlowModel {
        let data = ScoreSet::new(
            (0..64).map(|i| vec![i as f64 / 64.0]).collect(),
            (0..64).map(|i| (i % 7) as f64).collect(),
        )
        .unwrap();
        let cfg = CFlowTrainConfig {
            epochs: 2,
            batch_size: 16,
            ..Default::default()
        };
        train_cflow(&data, ScoreFnSpec::unbounded(), &cfg).unwrap()
    }

    #[test]
    fn logpdf_at_mode() {
        let m = toy_model();
        let (mu, sigma) = m.location_scale(&[0.3]).unwrap();
        let lp = m.cflow_logpdf(&[0.3], mu).unwrap();
        assert!((lp - (-sigma.ln() - HALF_LN_2PI)).abs() < 1e-10);
        let l1 = m.cflow_logpdf(&[0.3], mu + sigma).unwrap();
        let l2 = m.cflow_logpdf(&[0.3], mu + 2.0 * sigma).unwrap();
        assert!(l2 < l1 && l1 < lp);
    }

    #[test]
    fn degenerate_sigma_collapses_to_mean() {
        let mut m = toy_model();
        let last = m.logsigma_net.biases.len() - 1;
        m.logsigma_net.biases[last][0] = -100.0;
        let n = m.logsigma_net.weights.len();
        m.logsigma_net.weights[n - 1].fill(0.0);
        let (mu, _) = m.location_scale(&[0.5]).unwrap();
        let draws = m.sample(&[0.5], 200, 4).unwrap();
        let tol = 5.0 * m.standardization.std_s * LOG_SIGMA_MIN.exp();
        assert!(draws.iter().all(|d| (d - mu).abs() < tol));
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = toy_model();
        assert_eq!(m.sample(&[0.1], 10, 5).unwrap(), m.sample(&[0.1], 10, 5).unwrap());
        assert!(matches!(m.sample(&[0.1], 0, 5), Err(GsiError::Domain(_))));
    }
}
