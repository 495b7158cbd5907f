//! Generative score inference.
//!
//! Learn the conditional distribution of a nonconformity score `s(y, ŷ)`
//! given covariates `x` with a conditional generator, then turn Monte Carlo
//! draws from it into prediction sets, calibrated hypothesis tests and
//! FDR-controlled selections.

pub mod cflow;
pub mod diffusion;
pub mod error;
pub mod generator;
pub mod inference;
pub mod metrics;
pub mod nnet;
pub mod predictor;
pub mod scores;
pub mod seeding;

pub use cflow::{train_cflow, CFlowModel, CFlowTrainConfig};
pub use diffusion::{train_diffusion, DiffTrainConfig, DiffusionModel, OuSchedule, ScoreSet};
pub use error::{GsiError, Result};
pub use generator::{GeneratorModel, ScoreGenerator};
pub use inference::{
    bh_select, calibrate_alpha, conformal_pvalue, empirical_upper_quantile, hypothesis_test, prediction_interval,
    split_dataset, tail_probability, CalibrationMode, CalibrationResult, PredictionInterval, SelectionResult,
    SortedDraws, SplitIndices, SplitRatios, TestDecision,
};
pub use metrics::{MetricsSummary, SubgroupReport};
pub use predictor::{gbt_predict, load_predictions, train_gbt, GbtConfig, GbtModel, PredictionTable};
pub use scores::{ScoreFnSpec, ScoreKind};
