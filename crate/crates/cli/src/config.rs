//! Experiment configuration.
//!
//! Configs are TOML files with one section per pipeline stage. Every field
//! except `task` has a default, so a minimal intervals config is just
//!
//! ```toml
//! task = "intervals"
//! [data]
//! table = "data.csv"
//! target = "y"
//! ```

use std::path::{Path, PathBuf};

use gsi_core::diffusion::DiffTrainConfig;
use gsi_core::inference::default_alpha_grid;
use gsi_core::scores::{ScoreFnSpec, ScoreKind};
use gsi_core::{CFlowTrainConfig, GbtConfig, GsiError, Result, SplitRatios};
use serde::{Deserialize, Serialize};

use crate::search::SearchSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Intervals,
    Test,
    Select,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Intervals => "intervals",
            Task::Test => "test",
            Task::Select => "select",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub score: ScoreSection,
    #[serde(default)]
    pub predictor: PredictorSection,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub search: SearchSection,
}

/// Input files. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Tabular dataset for the intervals task.
    pub table: Option<PathBuf>,
    pub target: String,
    /// Row id column; `id` is used when present and this is unset.
    pub id_column: Option<String>,
    /// `id,yhat` file for the external predictor.
    pub predictions: Option<PathBuf>,
    /// Embedding record files for the test and select tasks.
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            table: None,
            target: "y".into(),
            id_column: None,
            predictions: None,
            train: None,
            validation: None,
            test: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub calibration: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitSection {
    /// 85:15 train/test, the training part halved into predictor and
    /// calibration data, and a fifth of the calibration half held out for
    /// level calibration.
    fn default() -> Self {
        Self {
            train: 0.425,
            calibration: 0.34,
            validation: 0.085,
            test: 0.15,
        }
    }
}

impl SplitSection {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train,
            calibration: self.calibration,
            validation: self.validation,
            test: self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    /// Defaults to `abs_residual` for intervals and `rouge_l_dissim` otherwise.
    pub kind: Option<ScoreKind>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    #[default]
    Gbt,
    External,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub kind: PredictorKind,
    pub gbt: GbtConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Diffusion,
    Cflow,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub kind: GeneratorKind,
    /// A saved model to use instead of training one.
    pub model: Option<PathBuf>,
    pub diffusion: DiffTrainConfig,
    pub cflow: CFlowTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    /// Nominal level for the intervals task.
    pub alpha: f64,
    /// Monte Carlo draws per point.
    pub m: usize,
    /// Hallucination threshold for the test and select tasks.
    pub c: Option<f64>,
    /// Candidate levels for calibration; `k/200` for `k = 1..199` when unset.
    pub grid: Option<Vec<f64>>,
    /// Calibrate the level on the validation split.
    pub calibrate: bool,
    /// Nominal Type-I levels for the test task.
    pub levels: Vec<f64>,
    /// FDR targets for the select task.
    pub targets: Vec<f64>,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            m: 1000,
            c: None,
            grid: None,
            calibrate: true,
            levels: vec![0.05, 0.1, 0.2],
            targets: vec![0.05, 0.1, 0.2, 0.3, 0.5],
        }
    }
}

impl InferenceSection {
    pub fn grid(&self) -> Vec<f64> {
        self.grid.clone().unwrap_or_else(default_alpha_grid)
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Number of k-means subgroups for worst-case coverage.
    pub groups: usize,
    pub kmeans_restarts: usize,
    /// Split-conformal baseline row in the intervals report.
    pub baseline: bool,
    /// Evaluate test points in a seeded random order.
    pub permute_order: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            groups: 10,
            kmeans_restarts: 10,
            baseline: true,
            permute_order: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    /// Zero disables the search.
    pub trials: usize,
    /// Epochs per trial; the base config's epochs when unset.
    pub budget_epochs: Option<usize>,
    /// Fraction of generator training data held out to score trials.
    pub holdout: f64,
    pub space: SearchSpace,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            trials: 0,
            budget_epochs: None,
            holdout: 0.2,
            space: SearchSpace::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| GsiError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GsiError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GsiError::Serde(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.data.table);
        fix(&mut self.data.predictions);
        fix(&mut self.data.train);
        fix(&mut self.data.validation);
        fix(&mut self.data.test);
        fix(&mut self.generator.model);
    }

    pub fn threshold(&self) -> f64 {
        self.inference.c.unwrap_or(DEFAULT_THRESHOLD)
    }

    pub fn score_spec(&self) -> Result<ScoreFnSpec> {
        let default_kind = match self.task {
            Task::Intervals => ScoreKind::AbsResidual,
            Task::Test | Task::Select => ScoreKind::RougeLDissim,
        };
        let kind = self.score.kind.unwrap_or(default_kind);
        let base = match kind {
            ScoreKind::AbsResidual => ScoreFnSpec::abs_residual(),
            ScoreKind::CosineDissim => ScoreFnSpec::cosine_dissim(),
            ScoreKind::RougeLDissim => ScoreFnSpec::rouge_l_dissim(),
            ScoreKind::Precomputed => ScoreFnSpec::unbounded(),
        };
        let spec = ScoreFnSpec {
            lo: self.score.lo.unwrap_or(base.lo),
            hi: self.score.hi.unwrap_or(base.hi),
            ..base
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let inf = &self.inference;
        let level = |name: &str, a: f64| {
            if a > 0.0 && a < 1.0 {
                Ok(())
            } else {
                Err(GsiError::Config(format!("{name} must lie in (0, 1), got {a}")))
            }
        };
        level("inference.alpha", inf.alpha)?;
        if inf.m == 0 {
            return Err(GsiError::Config("inference.m must be >= 1".into()));
        }
        if let Some(grid) = &inf.grid {
            if grid.is_empty() {
                return Err(GsiError::Config("inference.grid is empty".into()));
            }
            for &a in grid {
                level("inference.grid entry", a)?;
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GsiError::Config("inference.grid must be strictly increasing".into()));
            }
        }
        if let Some(c) = inf.c {
            if !c.is_finite() {
                return Err(GsiError::Config(format!("inference.c must be finite, got {c}")));
            }
        }
        self.split.ratios().validate()?;
        let spec = self.score_spec()?;
        let need = |p: &Option<PathBuf>, name: &str| {
            p.as_ref()
                .map(|_| ())
                .ok_or_else(|| GsiError::Config(format!("task `{}` needs data.{name}", self.task.name())))
        };
        match self.task {
            Task::Intervals => {
                need(&self.data.table, "table")?;
                if spec.kind != ScoreKind::AbsResidual {
                    return Err(GsiError::Config("the intervals task uses the abs_residual score".into()));
                }
                if self.predictor.kind == PredictorKind::External {
                    need(&self.data.predictions, "predictions")?;
                }
                if self.eval.groups == 0 || self.eval.kmeans_restarts == 0 {
                    return Err(GsiError::Config("eval.groups and eval.kmeans_restarts must be >= 1".into()));
                }
            }
            Task::Test => {
                need(&self.data.train, "train")?;
                need(&self.data.validation, "validation")?;
                need(&self.data.test, "test")?;
                if inf.levels.is_empty() {
                    return Err(GsiError::Config("inference.levels is empty".into()));
                }
                for &a in &inf.levels {
                    level("inference.levels entry", a)?;
                }
            }
            Task::Select => {
                need(&self.data.train, "train")?;
                need(&self.data.validation, "validation")?;
                need(&self.data.test, "test")?;
                if inf.targets.is_empty() {
                    return Err(GsiError::Config("inference.targets is empty".into()));
                }
                for &a in &inf.targets {
                    level("inference.targets entry", a)?;
                }
            }
        }
        if self.search.trials > 0 {
            if self.generator.kind != GeneratorKind::Diffusion {
                return Err(GsiError::Config("hyperparameter search is defined for the diffusion generator".into()));
            }
            if !(self.search.holdout > 0.0 && self.search.holdout < 1.0) {
                return Err(GsiError::Config(format!(
                    "search.holdout must lie in (0, 1), got {}",
                    self.search.holdout
                )));
            }
            self.search.space.validate()?;
        }
        Ok(())
    }

    /// Fails when a configured input file is missing.
    pub fn check_paths(&self) -> Result<()> {
        let paths = [
            &self.data.table,
            &self.data.predictions,
            &self.data.train,
            &self.data.validation,
            &self.data.test,
            &self.generator.model,
        ];
        for p in paths.into_iter().flatten() {
            if !p.exists() {
                return Err(GsiError::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_intervals_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml("task = \"intervals\"\n[data]\ntable = \"d.csv\"\n").unwrap();
        assert_eq!(cfg.inference.m, 1000);
        assert_eq!(cfg.inference.alpha, 0.1);
        assert_eq!(cfg.eval.groups, 10);
        assert_eq!(cfg.score_spec().unwrap(), ScoreFnSpec::abs_residual());
        assert_eq!(cfg.split.ratios().validate().unwrap(), ());
    }

    #[test]
    fn partial_generator_sections_keep_struct_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "task = \"intervals\"\n[data]\ntable = \"d.csv\"\n[generator.diffusion]\nepochs = 3\n[generator.cflow]\nlr = 0.01\n",
        )
        .unwrap();
        let d = &cfg.generator.diffusion;
        assert_eq!(d.epochs, 3);
        assert_eq!(*d, DiffTrainConfig { epochs: 3, ..Default::default() });
        assert!(d.cosine_decay);
        assert_eq!(cfg.generator.cflow, CFlowTrainConfig { lr: 0.01, ..Default::default() });
    }

    #[test]
    fn test_task_defaults_threshold() {
        let cfg = ExperimentConfig::from_toml(
            "task = \"test\"\n[data]\ntrain = \"a\"\nvalidation = \"b\"\ntest = \"c\"\n",
        )
        .unwrap();
        assert_eq!(cfg.threshold(), 0.7);
        assert_eq!(cfg.score_spec().unwrap(), ScoreFnSpec::rouge_l_dissim());
    }

    #[test]
    fn missing_required_paths_are_config_errors() {
        let err = ExperimentConfig::from_toml("task = \"select\"\n").unwrap_err();
        assert!(matches!(err, GsiError::Config(_)), "{err}");
        let err = ExperimentConfig::from_toml("task = \"intervals\"\n").unwrap_err();
        assert!(err.to_string().contains("data.table"));
    }

    #[test]
    fn bad_levels_are_rejected() {
        for body in ["[inference]\nalpha = 1.5", "[inference]\nm = 0", "[inference]\ngrid = [0.2, 0.1]"] {
            let text = format!("task = \"intervals\"\n{body}\n[data]\ntable = \"d.csv\"\n");
            assert!(ExperimentConfig::from_toml(&text).is_err(), "{body}");
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = ExperimentConfig::from_toml("task = \"intervals\"\n[data]\ntable = \"d\"\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn partial_generator_section_keeps_other_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "task = \"intervals\"\n[data]\ntable = \"d\"\n[generator.diffusion]\nepochs = 7\n[generator.diffusion.schedule]\nnum_steps = 300\n",
        )
        .unwrap();
        let d = &cfg.generator.diffusion;
        assert_eq!(d.epochs, 7);
        assert_eq!(d.schedule.num_steps, 300);
        assert_eq!(d.batch_size, DiffTrainConfig::default().batch_size);
        assert_eq!(d.schedule.tau_min, 0.015);
    }

    #[test]
    fn unbounded_score_range_from_toml() {
        let cfg = ExperimentConfig::from_toml(
            "task = \"test\"\n[data]\ntrain = \"a\"\nvalidation = \"b\"\ntest = \"c\"\n[score]\nkind = \"precomputed\"\nlo = -inf\n",
        )
        .unwrap();
        let spec = cfg.score_spec().unwrap();
        assert_eq!(spec.lo, f64::NEG_INFINITY);
        assert_eq!(spec.hi, f64::INFINITY);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::from_toml("task = \"intervals\"\nseed = 5\n[data]\ntable = \"d.csv\"\n").unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }
}
