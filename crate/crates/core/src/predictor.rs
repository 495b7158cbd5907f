//! Base predictors `f̂`: a small gradient-boosted regression-tree ensemble
//! and a loader for predictions computed elsewhere.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{GsiError, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    /// Row fraction drawn without replacement for each tree.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            num_trees: 200,
            max_depth: 4,
            learning_rate: 0.1,
            min_leaf: 5,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(GsiError::Config("min_leaf must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GsiError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(GsiError::Config(format!("subsample must lie in (0, 1], got {}", self.subsample)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A binary regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    /// Mean of the training targets.
    pub base_score: f64,
    pub num_features: usize,
    pub max_depth: usize,
}

impl GbtModel {
    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.max_feature().is_some_and(|f| f >= self.num_features) {
                return Err(GsiError::Contract(format!("tree {t} splits on a feature beyond {}", self.num_features)));
            }
            if tree.depth() > self.max_depth {
                return Err(GsiError::Contract(format!("tree {t} deeper than {}", self.max_depth)));
            }
        }
        Ok(())
    }
}

struct SplitCandidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn best_split(x: &[Vec<f64>], resid: &[f64], rows: &[usize], min_leaf: usize) -> Option<SplitCandidate> {
    let n = rows.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&r| resid[r]).sum();
    let base = total * total / n as f64;
    let mut best: Option<SplitCandidate> = None;
    let mut sorted = rows.to_vec();
    for f in 0..x[rows[0]].len() {
        sorted.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += resid[sorted[k]];
            let (lo, hi) = (x[sorted[k]][f], x[sorted[k + 1]][f]);
            let n_left = k + 1;
            if lo == hi || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / (n - n_left) as f64 - base;
            if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate {
                    feature: f,
                    threshold: 0.5 * (lo + hi),
                    gain,
                });
            }
        }
    }
    best
}

fn grow(x: &[Vec<f64>], resid: &[f64], rows: &[usize], depth: usize, cfg: &GbtConfig, nodes: &mut Vec<TreeNode>) -> usize {
    let id = nodes.len();
    let mean = rows.iter().map(|&r| resid[r]).sum::<f64>() / rows.len() as f64;
    nodes.push(TreeNode::Leaf { value: mean });
    if depth >= cfg.max_depth {
        return id;
    }
    let Some(split) = best_split(x, resid, rows, cfg.min_leaf) else {
        return id;
    };
    let (l_rows, r_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| x[r][split.feature] < split.threshold);
    let left = grow(x, resid, &l_rows, depth + 1, cfg, nodes);
    let right = grow(x, resid, &r_rows, depth + 1, cfg, nodes);
    nodes[id] = TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    id
}

/// Squared-error gradient boosting with exact greedy splits.
pub fn train_gbt(x: &[Vec<f64>], y: &[f64], config: &GbtConfig) -> Result<GbtModel> {
    config.validate()?;
    if x.is_empty() {
        return Err(GsiError::Data("cannot fit a predictor on empty data".into()));
    }
    if x.len() != y.len() {
        return Err(GsiError::Shape(format!("{} feature rows but {} targets", x.len(), y.len())));
    }
    if x.len() < 2 * config.min_leaf {
        return Err(GsiError::Data(format!(
            "{} rows is fewer than twice min_leaf ({})",
            x.len(),
            config.min_leaf
        )));
    }
    let d = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(GsiError::Shape(format!("row {i} has {} features, expected {d}", row.len())));
        }
        if !row.iter().all(|v| v.is_finite()) || !y[i].is_finite() {
            return Err(GsiError::Data(format!("row {i} contains a non-finite value")));
        }
    }

    let n = x.len();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![base_score; n];
    let mut trees = Vec::with_capacity(config.num_trees);
    let mut rng = seeding::rng(seeding::stage(config.seed, "gbt/subsample"));
    let take = ((config.subsample * n as f64).round() as usize).clamp(2 * config.min_leaf, n);

    for _ in 0..config.num_trees {
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        if resid.iter().all(|r| r.abs() <= 1e-12 * (1.0 + base_score.abs())) {
            break;
        }
        let mut rows: Vec<usize> = if take < n {
            index::sample(&mut rng, n, take).into_vec()
        } else {
            (0..n).collect()
        };
        rows.sort_unstable();
        let mut nodes = Vec::new();
        grow(x, &resid, &rows, 0, config, &mut nodes);
        let tree = RegressionTree { nodes };
        for (f, row) in fitted.iter_mut().zip(x) {
            *f += config.learning_rate * tree.predict(row);
        }
        trees.push(tree);
    }

    Ok(GbtModel {
        trees,
        learning_rate: config.learning_rate,
        base_score,
        num_features: d,
        max_depth: config.max_depth,
    })
}

/// `base_score + lr · Σ tree(x)`.
pub fn gbt_predict(model: &GbtModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.num_features {
        return Err(GsiError::Shape(format!(
            "predictor expects {} features, got {}",
            model.num_features,
            x.len()
        )));
    }
    Ok(model.base_score + model.learning_rate * model.trees.iter().map(|t| t.predict(x)).sum::<f64>())
}

/// Predictions keyed by record id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionTable {
    values: BTreeMap<String, f64>,
}

impl PredictionTable {
    pub fn insert(&mut self, id: impl Into<String>, yhat: f64) -> Result<()> {
        let id = id.into();
        if !yhat.is_finite() {
            return Err(GsiError::Data(format!("prediction for id {id} is not finite")));
        }
        if self.values.contains_key(&id) {
            return Err(GsiError::Data(format!("duplicate prediction id {id}")));
        }
        self.values.insert(id, yhat);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.values.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<f64> {
        self.get(id).ok_or_else(|| GsiError::Data(format!("no prediction for id {id}")))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Reads a delimited `id,yhat` file.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<PredictionTable> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| GsiError::Parse {
                line: 1,
                msg: format!("missing `{name}` column in {}", path.display()),
            })
    };
    let (id_col, y_col) = (col("id")?, col("yhat")?);
    let mut table = PredictionTable::default();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(id_col).unwrap_or_default();
        let raw = rec.get(y_col).unwrap_or_default();
        let yhat: f64 = raw.parse().map_err(|_| GsiError::Parse {
            line,
            msg: format!("yhat `{raw}` is not a number"),
        })?;
        if !yhat.is_finite() {
            return Err(GsiError::Parse {
                line,
                msg: format!("yhat `{raw}` is not finite"),
            });
        }
        table.insert(id, yhat)?;
    }
    Ok(table)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> GsiError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GsiError::io(path, io),
        other => GsiError::Parse {
            line,
            msg: format!("{}: {other:?}", path.display()),
        },
    }
}
