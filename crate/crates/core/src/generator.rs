//! The conditional score generator interface and the on-disk model envelope.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cflow::CFlowModel;
use crate::diffusion::DiffusionModel;
use crate::error::{GsiError, Result};
use crate::scores::ScoreFnSpec;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Anything that can draw scores from an estimate of `P(s | x)`.
pub trait ScoreGenerator {
    fn score_fn(&self) -> ScoreFnSpec;
    fn condition_dim(&self) -> usize;
    /// `m` draws in raw score units, clamped to the score range.
    /// The same `(condition, m, seed)` always yields the same draws.
    fn sample(&self, condition: &[f64], m: usize, seed: u64) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum GeneratorModel {
    Diffusion(DiffusionModel),
    Cflow(CFlowModel),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    #[serde(flatten)]
    generator: GeneratorModel,
}

impl GeneratorModel {
    pub fn kind(&self) -> &'static str {
        match self {
            GeneratorModel::Diffusion(_) => "diffusion",
            GeneratorModel::Cflow(_) => "cflow",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let env = Envelope {
            format_version: MODEL_FORMAT_VERSION,
            generator: self.clone(),
        };
        serde_json::to_string(&env).map_err(|e| GsiError::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(text).map_err(|e| GsiError::Serde(e.to_string()))?;
        if env.format_version != MODEL_FORMAT_VERSION {
            return Err(GsiError::Serde(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                env.format_version
            )));
        }
        Ok(env.generator)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| GsiError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GsiError::io(path, e))?;
        Self::from_json(&text)
    }
}

impl ScoreGenerator for GeneratorModel {
    fn score_fn(&self) -> ScoreFnSpec {
        match self {
            GeneratorModel::Diffusion(m) => m.score_fn(),
            GeneratorModel::Cflow(m) => m.score_fn(),
        }
    }

    fn condition_dim(&self) -> usize {
        match self {
            GeneratorModel::Diffusion(m) => m.condition_dim(),
            GeneratorModel::Cflow(m) => m.condition_dim(),
        }
    }

    fn sample(&self, condition: &[f64], m: usize, seed: u64) -> Result<Vec<f64>> {
        match self {
            GeneratorModel::Diffusion(g) => g.sample(condition, m, seed),
            GeneratorModel::Cflow(g) => g.sample(condition, m, seed),
        }
    }
}
