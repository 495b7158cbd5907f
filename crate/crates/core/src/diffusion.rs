//! Conditional scalar diffusion generator.
//!
//! Scores are diffused with the Ornstein–Uhlenbeck process `dZ = -Z dτ + √2 dW`,
//! whose transition from `Z(0)` is `N(μ_τ Z(0), σ_τ²)` with `μ_τ = e^{-τ}` and
//! `σ_τ² = 1 - e^{-2τ}`. A network `ε̂(s_τ, x, τ)` is trained to recover the
//! injected noise; the implied score `-ε̂ / σ_τ` drives a reverse-time
//! Euler–Maruyama sampler started from `N(0, 1)`.
//!
//! The network has three parts: a condition encoder `x ↦ h_cond`, a time
//! embedder `t ↦ h_t` (with `t` rescaled to `[0, 1]`) and a residual denoiser
//! on the concatenation `(s_τ, h_cond, h_t)`.

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GsiError, Result};
use crate::generator::ScoreGenerator;
use crate::nnet::{init_network, take_cols, AdamState, NetworkArch, NetworkParams};
use crate::scores::ScoreFnSpec;
use crate::seeding;

/// Closed-form OU moments `(μ_τ, σ_τ²)`.
pub fn ou_moments(tau: f64) -> Result<(f64, f64)> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(GsiError::Domain(format!("diffusion time must be finite and >= 0, got {tau}")));
    }
    let mu = (-tau).exp();
    // 1 - e^{-2τ} without cancellation for small τ.
    let sigma2 = -(-2.0 * tau).exp_m1();
    Ok((mu, sigma2))
}

/// Forward perturbation `μ_τ s0 + σ_τ noise`.
pub fn perturb(s0: f64, tau: f64, noise: f64) -> Result<f64> {
    let (mu, sigma2) = ou_moments(tau)?;
    Ok(mu * s0 + sigma2.sqrt() * noise)
}

/// Diffusion time window and discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OuSchedule {
    /// Early-stopping time `τ̲`.
    pub tau_min: f64,
    /// Terminal time `τ̄`.
    pub tau_max: f64,
    /// Reverse-time Euler–Maruyama steps.
    pub num_steps: usize,
    /// After the last step, replace each draw by the posterior-mean estimate
    /// `(V − σ_τ̲ ε̂) / μ_τ̲`, removing the noise still present at `τ̲`.
    pub final_denoise: bool,
}

impl Default for OuSchedule {
    fn default() -> Self {
        Self {
            tau_min: 0.015,
            tau_max: 5.0,
            num_steps: 500,
            final_denoise: false,
        }
    }
}

impl OuSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min > 0.0 && self.tau_min < self.tau_max && self.tau_max.is_finite()) {
            return Err(GsiError::Config(format!(
                "schedule needs 0 < tau_min < tau_max, got ({}, {})",
                self.tau_min, self.tau_max
            )));
        }
        if self.num_steps < 2 {
            return Err(GsiError::Config(format!("num_steps must be >= 2, got {}", self.num_steps)));
        }
        if (-self.tau_max).exp() >= 0.05 {
            return Err(GsiError::Config(format!(
                "tau_max = {} leaves mu(tau_max) >= 0.05; the terminal law is not close to N(0, 1)",
                self.tau_max
            )));
        }
        Ok(())
    }

    /// Maps `τ ∈ [τ̲, τ̄]` to the time-embedder input in `[0, 1]`.
    pub fn normalized_time(&self, tau: f64) -> f64 {
        (tau - self.tau_min) / (self.tau_max - self.tau_min)
    }
}

/// Calibration pairs `(x_i, s_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    conditions: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(conditions: Vec<Vec<f64>>, scores: Vec<f64>) -> Result<Self> {
        if conditions.len() != scores.len() {
            return Err(GsiError::Data(format!(
                "{} conditions but {} scores",
                conditions.len(),
                scores.len()
            )));
        }
        if scores.len() < 2 {
            return Err(GsiError::Data(format!("score set needs at least 2 items, got {}", scores.len())));
        }
        let d = conditions[0].len();
        for (i, (c, s)) in conditions.iter().zip(&scores).enumerate() {
            if c.len() != d {
                return Err(GsiError::Data(format!("condition {i} has dimension {}, expected {d}", c.len())));
            }
            if !s.is_finite() || !c.iter().all(|v| v.is_finite()) {
                return Err(GsiError::Data(format!("item {i} is not finite")));
            }
        }
        Ok(Self { conditions, scores })
    }

    pub fn conditions(&self) -> &[Vec<f64>] {
        &self.conditions
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn cond_dim(&self) -> usize {
        self.conditions[0].len()
    }
}

/// Affine standardization of scores and conditions, fitted on the score set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean_s: f64,
    pub std_s: f64,
    pub mean_x: Vec<f64>,
    pub std_x: Vec<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // Constant columns keep unit scale.
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl Standardization {
    pub fn fit(data: &ScoreSet) -> Self {
        let (mean_s, std_s) = mean_std(data.scores.iter().copied());
        let d = data.cond_dim();
        let (mean_x, std_x) = (0..d)
            .map(|j| mean_std(data.conditions.iter().map(move |c| c[j])))
            .unzip();
        Self {
            mean_s,
            std_s,
            mean_x,
            std_x,
        }
    }

    pub fn cond_dim(&self) -> usize {
        self.mean_x.len()
    }

    /// Width of the encoded condition; an empty condition becomes one zero feature.
    pub fn encoded_dim(&self) -> usize {
        self.cond_dim().max(1)
    }

    pub fn condition(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cond_dim() {
            return Err(GsiError::Shape(format!(
                "condition has dimension {}, model was trained on {}",
                x.len(),
                self.cond_dim()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(GsiError::Numeric("non-finite condition".into()));
        }
        if x.is_empty() {
            return Ok(vec![0.0]);
        }
        Ok(x.iter()
            .zip(self.mean_x.iter().zip(&self.std_x))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn score(&self, s: f64) -> f64 {
        (s - self.mean_s) / self.std_s
    }

    pub fn unscale_score(&self, z: f64) -> f64 {
        self.mean_s + self.std_s * z
    }

    pub(crate) fn condition_matrix(&self, data: &ScoreSet) -> Result<Array2<f64>> {
        let w = self.encoded_dim();
        let mut m = Array2::zeros((data.len(), w));
        for (i, c) in data.conditions.iter().enumerate() {
            let z = self.condition(c)?;
            m.row_mut(i).assign(&Array1::from(z));
        }
        Ok(m)
    }
}

/// Training hyperparameters for [`train_diffusion`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden_dim: usize,
    pub num_res_blocks: usize,
    pub time_embed_dim: usize,
    pub cond_hidden_dim: usize,
    pub dropout_p: f64,
    /// Anneal the learning rate from `lr` to zero along a half cosine.
    pub cosine_decay: bool,
    pub schedule: OuSchedule,
    pub seed: u64,
}

impl Default for DiffTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            lr: 1e-3,
            hidden_dim: 64,
            num_res_blocks: 2,
            time_embed_dim: 16,
            cond_hidden_dim: 32,
            dropout_p: 0.0,
            cosine_decay: true,
            schedule: OuSchedule::default(),
            seed: 0,
        }
    }
}

impl DiffTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(GsiError::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(GsiError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.hidden_dim == 0 || self.time_embed_dim == 0 || self.cond_hidden_dim == 0 {
            return Err(GsiError::Config("network widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(GsiError::Config(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p)));
        }
        Ok(())
    }
}

/// A trained conditional score generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionModel {
    pub denoiser: NetworkParams,
    pub cond_encoder: NetworkParams,
    pub time_embedder: NetworkParams,
    pub schedule: OuSchedule,
    pub standardization: Standardization,
    pub score_fn: ScoreFnSpec,
    pub config: DiffTrainConfig,
}

struct DiffusionNets {
    denoiser: NetworkParams,
    cond_encoder: NetworkParams,
    time_embedder: NetworkParams,
}

fn build_nets(config: &DiffTrainConfig, cond_width: usize) -> Result<DiffusionNets> {
    let enc_arch = NetworkArch::new(cond_width, config.cond_hidden_dim, config.cond_hidden_dim, 0);
    let time_arch = NetworkArch::new(1, config.time_embed_dim, config.time_embed_dim, 0);
    let den_arch = NetworkArch::new(
        1 + config.cond_hidden_dim + config.time_embed_dim,
        1,
        config.hidden_dim,
        config.num_res_blocks,
    )
    .with_dropout(config.dropout_p);
    Ok(DiffusionNets {
        cond_encoder: init_network(enc_arch, seeding::stage(config.seed, "init/cond"))?,
        time_embedder: init_network(time_arch, seeding::stage(config.seed, "init/time"))?,
        denoiser: init_network(den_arch, seeding::stage(config.seed, "init/denoiser"))?,
    })
}

/// Fits the noise-prediction network by minimizing `‖ε - ε̂(s_τ, x, τ)‖²`
/// with `τ ~ U[τ̲, τ̄]` and `ε ~ N(0, 1)` drawn per example.
pub fn train_diffusion(data: &ScoreSet, score_fn: ScoreFnSpec, config: &DiffTrainConfig) -> Result<DiffusionModel> {
    config.validate()?;
    score_fn.validate()?;
    if data.len() < config.batch_size {
        return Err(GsiError::Config(format!(
            "score set has {} items, fewer than batch_size {}",
            data.len(),
            config.batch_size
        )));
    }
    let standardization = Standardization::fit(data);
    let x_all = standardization.condition_matrix(data)?;
    let s_all: Vec<f64> = data.scores.iter().map(|&s| standardization.score(s)).collect();
    let mut nets = build_nets(config, standardization.encoded_dim())?;

    let mut adam_den = AdamState::new(&nets.denoiser, config.lr);
    let mut adam_enc = AdamState::new(&nets.cond_encoder, config.lr);
    let mut adam_time = AdamState::new(&nets.time_embedder, config.lr);
    let mut rng = seeding::rng(seeding::stage(config.seed, "train"));
    let sched = config.schedule;
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        let lr = epoch_lr(config.lr, config.cosine_decay, epoch, config.epochs);
        adam_den.lr = lr;
        adam_enc.lr = lr;
        adam_time.lr = lr;
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let b = batch.len();
            let mut noisy = Array1::zeros(b);
            let mut eps = Array2::zeros((b, 1));
            let mut t_in = Array2::zeros((b, 1));
            for (k, &i) in batch.iter().enumerate() {
                let tau = rng.random_range(sched.tau_min..sched.tau_max);
                let e: f64 = rng.sample(StandardNormal);
                noisy[k] = perturb(s_all[i], tau, e)?;
                eps[[k, 0]] = e;
                t_in[[k, 0]] = sched.normalized_time(tau);
            }
            let x_b = x_all.select(Axis(0), batch);
            let (h_cond, enc_cache) = nets.cond_encoder.forward_batch(x_b.view(), None)?;
            let (h_t, time_cache) = nets.time_embedder.forward_batch(t_in.view(), None)?;
            let inp = concat_input(&noisy, &h_cond, &h_t);
            let (pred, den_cache) = nets.denoiser.forward_batch(inp.view(), Some(&mut rng))?;

            let diff = &pred - &eps;
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / b as f64;
            if !loss.is_finite() {
                return Err(GsiError::Training {
                    epoch,
                    msg: "non-finite denoising loss".into(),
                });
            }
            let g_out = diff * (2.0 / b as f64);
            let (g_den, d_inp) = nets.denoiser.backward(&den_cache, g_out.view())?;
            let ch = config.cond_hidden_dim;
            let d_cond = take_cols(&d_inp, 1, ch);
            let d_time = take_cols(&d_inp, 1 + ch, config.time_embed_dim);
            let (g_enc, _) = nets.cond_encoder.backward(&enc_cache, d_cond.view())?;
            let (g_time, _) = nets.time_embedder.backward(&time_cache, d_time.view())?;

            let wrap = |e: GsiError| GsiError::Training {
                epoch,
                msg: e.to_string(),
            };
            adam_den.adam_step(&mut nets.denoiser, &g_den).map_err(wrap)?;
            adam_enc.adam_step(&mut nets.cond_encoder, &g_enc).map_err(wrap)?;
            adam_time.adam_step(&mut nets.time_embedder, &g_time).map_err(wrap)?;
        }
    }

    Ok(DiffusionModel {
        denoiser: nets.denoiser,
        cond_encoder: nets.cond_encoder,
        time_embedder: nets.time_embedder,
        schedule: config.schedule,
        standardization,
        score_fn,
        config: config.clone(),
    })
}

/// Learning rate for `epoch`; the cosine schedule is evaluated at the
/// epoch midpoint so the last epoch still moves.
pub(crate) fn epoch_lr(base: f64, cosine: bool, epoch: usize, epochs: usize) -> f64 {
    if !cosine || epochs == 0 {
        return base;
    }
    let t = (epoch as f64 + 0.5) / epochs as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
}

fn concat_input(noisy: &Array1<f64>, h_cond: &Array2<f64>, h_t: &Array2<f64>) -> Array2<f64> {
    let b = noisy.len();
    let (ch, te) = (h_cond.ncols(), h_t.ncols());
    let mut inp = Array2::zeros((b, 1 + ch + te));
    inp.column_mut(0).assign(noisy);
    inp.slice_mut(s![.., 1..1 + ch]).assign(h_cond);
    inp.slice_mut(s![.., 1 + ch..]).assign(h_t);
    inp
}

impl DiffusionModel {
    /// Untrained model with all network weights zero, so `ε̂ ≡ 0`.
    pub fn zeroed(cond_dim: usize, score_fn: ScoreFnSpec, config: &DiffTrainConfig) -> Result<Self> {
        config.validate()?;
        let mut nets = build_nets(config, cond_dim.max(1))?;
        for net in [&mut nets.denoiser, &mut nets.cond_encoder, &mut nets.time_embedder] {
            for t in net.tensors_mut() {
                t.fill(0.0);
            }
        }
        Ok(Self {
            denoiser: nets.denoiser,
            cond_encoder: nets.cond_encoder,
            time_embedder: nets.time_embedder,
            schedule: config.schedule,
            standardization: Standardization {
                mean_s: 0.0,
                std_s: 1.0,
                mean_x: vec![0.0; cond_dim],
                std_x: vec![1.0; cond_dim],
            },
            score_fn,
            config: config.clone(),
        })
    }

    fn encode_condition(&self, condition: &[f64]) -> Result<Array1<f64>> {
        let x = self.standardization.condition(condition)?;
        let x = Array2::from_shape_vec((1, x.len()), x).map_err(|e| GsiError::Shape(e.to_string()))?;
        Ok(self.cond_encoder.predict_batch(x.view())?.row(0).to_owned())
    }

    fn embed_time(&self, tau: f64) -> Result<Array1<f64>> {
        let t = Array2::from_elem((1, 1), self.schedule.normalized_time(tau));
        Ok(self.time_embedder.predict_batch(t.view())?.row(0).to_owned())
    }

    fn check_tau(&self, tau: f64) -> Result<()> {
        let sc = &self.schedule;
        // Allow rounding slack from the reverse-time grid.
        let slack = 1e-9 * sc.tau_max;
        if !(tau >= sc.tau_min - slack && tau <= sc.tau_max + slack) {
            return Err(GsiError::Domain(format!(
                "tau = {tau} outside the trained window [{}, {}]",
                sc.tau_min, sc.tau_max
            )));
        }
        Ok(())
    }

    /// Predicted noise `ε̂` for a standardized noisy score at time `tau`.
    /// `condition` is given in raw units.
    pub fn denoiser_eval(&self, s_noisy: f64, condition: &[f64], tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        if !s_noisy.is_finite() {
            return Err(GsiError::Numeric("non-finite noisy score".into()));
        }
        let h_cond = self.encode_condition(condition)?;
        let h_t = self.embed_time(tau)?;
        let noisy = Array1::from_elem(1, s_noisy);
        let inp = concat_input(&noisy, &h_cond.insert_axis(Axis(0)), &h_t.insert_axis(Axis(0)));
        Ok(self.denoiser.predict_batch(inp.view())?[[0, 0]])
    }

    /// Implied score `∇ log p_τ(s) ≈ -ε̂ / σ_τ` in standardized units.
    pub fn implied_score(&self, s_noisy: f64, condition: &[f64], tau: f64) -> Result<f64> {
        let (_, sigma2) = ou_moments(tau)?;
        Ok(-self.denoiser_eval(s_noisy, condition, tau)? / sigma2.sqrt())
    }

    /// Reverse-time Euler–Maruyama draws in standardized units (before
    /// de-standardization and clamping).
    pub fn sample_standardized(&self, condition: &[f64], m: usize, seed: u64) -> Result<Vec<f64>> {
        if m == 0 {
            return Err(GsiError::Domain("number of draws must be >= 1".into()));
        }
        let sc = self.schedule;
        let h_cond = self.encode_condition(condition)?;
        let (ch, te) = (h_cond.len(), self.time_embedder.arch.output_dim);
        let mut rng = seeding::rng(seed);

        let mut v: Array1<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut inp = Array2::zeros((m, 1 + ch + te));
        inp.slice_mut(s![.., 1..1 + ch]).assign(&h_cond.broadcast((m, ch)).expect("broadcast"));

        let k_steps = sc.num_steps;
        let h = (sc.tau_max - sc.tau_min) / k_steps as f64;
        let noise_scale = (2.0 * h).sqrt();
        for k in 0..k_steps {
            // Reverse time τ_k = k h corresponds to diffusion time τ̄ - τ_k.
            let t = sc.tau_max - k as f64 * h;
            let (_, sigma2) = ou_moments(t)?;
            let sigma = sigma2.sqrt();
            let h_t = self.embed_time(t)?;
            inp.slice_mut(s![.., 1 + ch..]).assign(&h_t.broadcast((m, te)).expect("broadcast"));
            inp.column_mut(0).assign(&v);
            let eps_hat = self.denoiser.predict_batch(inp.view())?;
            let last = k + 1 == k_steps;
            for (i, vi) in v.iter_mut().enumerate() {
                let score = -eps_hat[[i, 0]] / sigma;
                let mut next = *vi + h * (*vi + 2.0 * score);
                if !last {
                    next += noise_scale * rng.sample::<f64, _>(StandardNormal);
                }
                *vi = next;
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(GsiError::Numeric(format!("sampler diverged at step {k}")));
            }
        }
        if sc.final_denoise {
            let (mu, sigma2) = ou_moments(sc.tau_min)?;
            let h_t = self.embed_time(sc.tau_min)?;
            inp.slice_mut(s![.., 1 + ch..]).assign(&h_t.broadcast((m, te)).expect("broadcast"));
            inp.column_mut(0).assign(&v);
            let eps_hat = self.denoiser.predict_batch(inp.view())?;
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = (*vi - sigma2.sqrt() * eps_hat[[i, 0]]) / mu;
            }
        }
        Ok(v.to_vec())
    }

    /// Mean squared noise-prediction error on held-out pairs, with `τ` and
    /// `ε` drawn from a seeded stream.
    pub fn denoising_mse(&self, data: &ScoreSet, seed: u64) -> Result<f64> {
        if data.cond_dim() != self.standardization.cond_dim() {
            return Err(GsiError::Shape("validation conditions do not match the model".into()));
        }
        let sc = self.schedule;
        let mut rng = seeding::rng(seed);
        let x = self.standardization.condition_matrix(data)?;
        let n = data.len();
        let mut noisy = Array1::zeros(n);
        let mut eps = Array1::zeros(n);
        let mut t_in = Array2::zeros((n, 1));
        for i in 0..n {
            let tau = rng.random_range(sc.tau_min..sc.tau_max);
            let e: f64 = rng.sample(StandardNormal);
            noisy[i] = perturb(self.standardization.score(data.scores[i]), tau, e)?;
            eps[i] = e;
            t_in[[i, 0]] = sc.normalized_time(tau);
        }
        let h_cond = self.cond_encoder.predict_batch(x.view())?;
        let h_t = self.time_embedder.predict_batch(t_in.view())?;
        let pred = self.denoiser.predict_batch(concat_input(&noisy, &h_cond, &h_t).view())?;
        Ok(pred.column(0).iter().zip(&eps).map(|(p, e)| (p - e).powi(2)).sum::<f64>() / n as f64)
    }
}

impl ScoreGenerator for DiffusionModel {
    fn score_fn(&self) -> ScoreFnSpec {
        self.score_fn
    }

    fn condition_dim(&self) -> usize {
        self.standardization.cond_dim()
    }

    fn sample(&self, condition: &[f64], m: usize, seed: u64) -> Result<Vec<f64>> {
        let draws = self.sample_standardized(condition, m, seed)?;
        Ok(draws
            .into_iter()
            .map(|z| self.score_fn.clamp(self.standardization.unscale_score(z)))
            .collect())
    }
}
