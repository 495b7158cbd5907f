//! The inference pipeline built on a trained score generator: sample
//! splitting, score sets, Monte Carlo quantile prediction sets, validation
//! calibration of the working level, tail-probability tests, conformal
//! p-values and Benjamini–Hochberg selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffusion::ScoreSet;
use crate::error::{GsiError, Result};
use crate::generator::ScoreGenerator;
use crate::predictor::PredictionTable;
use crate::scores::{abs_residual, cosine_dissimilarity, rouge_l_dissimilarity_multi, ScoreFnSpec, ScoreKind, TokenSeq};
use crate::seeding;

const RATIO_TOL: f64 = 1e-9;
const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub calibration: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    fn as_array(&self) -> [f64; 4] {
        [self.train, self.calibration, self.validation, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.as_array();
        if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(GsiError::Config(format!("split ratios must be non-negative, got {r:?}")));
        }
        let total: f64 = r.iter().sum();
        if (total - 1.0).abs() > RATIO_TOL {
            return Err(GsiError::Config(format!("split ratios sum to {total}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Share of the generator-fitting rows (train + calibration) used for calibration.
    pub fn rho(&self) -> f64 {
        let fit = self.train.len() + self.calibration.len();
        if fit == 0 {
            0.0
        } else {
            self.calibration.len() as f64 / fit as f64
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.calibration.len() + self.validation.len() + self.test.len()
    }

    /// Checks that the parts are disjoint and cover `0..n`.
    pub fn check_partition(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.calibration).chain(&self.validation).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(GsiError::Contract(format!("split index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(GsiError::Contract("split does not cover every row".into()));
        }
        Ok(())
    }
}

/// Part sizes: floors of `n·r`, then leftover rows to the largest fractional
/// parts (ties to the earlier part), never to a zero-ratio part.
pub fn split_sizes(n: usize, ratios: &SplitRatios) -> Result<[usize; 4]> {
    ratios.validate()?;
    let r = ratios.as_array();
    let nonzero = r.iter().filter(|v| **v > 0.0).count();
    if n < nonzero {
        return Err(GsiError::Config(format!("{n} rows cannot fill {nonzero} non-empty parts")));
    }
    let exact: Vec<f64> = r.iter().map(|v| v * n as f64).collect();
    let mut sizes = [0usize; 4];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..4).filter(|&i| r[i] > 0.0).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Random partition of `0..n` into train/calibration/validation/test.
pub fn split_dataset(n: usize, ratios: &SplitRatios, seed: u64) -> Result<SplitIndices> {
    let sizes = split_sizes(n, ratios)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeding::rng(seed));
    let mut parts = Vec::with_capacity(4);
    let mut start = 0;
    for s in sizes {
        parts.push(perm[start..start + s].to_vec());
        start += s;
    }
    let test = parts.pop().unwrap_or_default();
    let validation = parts.pop().unwrap_or_default();
    let calibration = parts.pop().unwrap_or_default();
    let train = parts.pop().unwrap_or_default();
    let split = SplitIndices {
        train,
        calibration,
        validation,
        test,
    };
    split.check_partition(n)?;
    Ok(split)
}

/// The quantities a score function compares.
#[derive(Debug, Clone, Copy)]
pub enum Payload<'a> {
    Scalar { y: f64, yhat: f64 },
    Embedding { reference: &'a [f64], output: &'a [f64] },
    Text { references: &'a [TokenSeq], candidate: &'a TokenSeq },
    Score(f64),
}

/// Applies `spec` to one payload; the payload must match the score kind.
pub fn score_payload(spec: &ScoreFnSpec, payload: Payload<'_>) -> Result<f64> {
    let s = match (spec.kind, payload) {
        (ScoreKind::AbsResidual, Payload::Scalar { y, yhat }) => abs_residual(y, yhat)?,
        (ScoreKind::CosineDissim, Payload::Embedding { reference, output }) => cosine_dissimilarity(reference, output)?,
        (ScoreKind::RougeLDissim, Payload::Text { references, candidate }) => {
            rouge_l_dissimilarity_multi(references, candidate)
        }
        (_, Payload::Score(s)) => s,
        (kind, _) => {
            return Err(GsiError::Config(format!("payload does not fit the {kind:?} score")));
        }
    };
    if !s.is_finite() || !spec.contains(s) {
        return Err(GsiError::Data(format!("score {s} outside [{}, {}]", spec.lo, spec.hi)));
    }
    Ok(s)
}

pub fn build_score_set(conditions: Vec<Vec<f64>>, payloads: &[Payload<'_>], spec: &ScoreFnSpec) -> Result<ScoreSet> {
    if conditions.len() != payloads.len() {
        return Err(GsiError::Shape(format!(
            "{} conditions but {} payloads",
            conditions.len(),
            payloads.len()
        )));
    }
    let scores = payloads.iter().map(|p| score_payload(spec, *p)).collect::<Result<Vec<_>>>()?;
    ScoreSet::new(conditions, scores)
}

/// Absolute-residual score set with predictions looked up by id.
pub fn build_residual_set(
    conditions: Vec<Vec<f64>>,
    ids: &[String],
    y: &[f64],
    predictions: &PredictionTable,
) -> Result<ScoreSet> {
    if ids.len() != y.len() {
        return Err(GsiError::Shape(format!("{} ids but {} targets", ids.len(), y.len())));
    }
    let payloads = ids
        .iter()
        .zip(y)
        .map(|(id, &y)| Ok(Payload::Scalar { y, yhat: predictions.require(id)? }))
        .collect::<Result<Vec<_>>>()?;
    build_score_set(conditions, &payloads, &ScoreFnSpec::abs_residual())
}

fn check_level(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GsiError::Domain(format!("level must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// `⌈(1−α)m⌉` clamped to `[1, m]`; products within 1e-9 of an integer are
/// snapped so that e.g. `(1−0.1)·1000` gives 900.
pub fn quantile_rank(alpha: f64, m: usize) -> usize {
    let x = (1.0 - alpha) * m as f64;
    let r = x.round();
    let k = if (x - r).abs() <= SNAP_TOL { r } else { x.ceil() };
    (k.max(1.0) as usize).min(m)
}

/// Draws sorted once so that quantiles and tail probabilities at many levels
/// come from the same sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedDraws {
    values: Vec<f64>,
}

impl SortedDraws {
    pub fn new(mut draws: Vec<f64>) -> Result<Self> {
        if draws.is_empty() {
            return Err(GsiError::Domain("no draws".into()));
        }
        if draws.iter().any(|d| d.is_nan()) {
            return Err(GsiError::Numeric("NaN draw".into()));
        }
        draws.sort_by(f64::total_cmp);
        Ok(Self { values: draws })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn upper_quantile(&self, alpha: f64) -> Result<f64> {
        check_level(alpha)?;
        Ok(self.values[quantile_rank(alpha, self.len()) - 1])
    }

    pub fn count_above(&self, c: f64) -> usize {
        self.len() - self.values.partition_point(|&v| v <= c)
    }

    pub fn count_at_least(&self, c: f64) -> usize {
        self.len() - self.values.partition_point(|&v| v < c)
    }

    pub fn tail(&self, c: f64) -> f64 {
        self.count_above(c) as f64 / self.len() as f64
    }

    pub fn tail_at_least(&self, c: f64) -> f64 {
        self.count_at_least(c) as f64 / self.len() as f64
    }

    /// `c` lies above the level-`alpha` quantile, i.e. outside the prediction set.
    /// Equivalent to `tail(c) > alpha` under the rank rule.
    pub fn rejects(&self, c: f64, alpha: f64) -> Result<bool> {
        check_level(alpha)?;
        let k = quantile_rank(alpha, self.len());
        Ok(self.count_above(c) > self.len() - k)
    }
}

/// Order statistic of rank `⌈(1−α)m⌉`.
pub fn empirical_upper_quantile(draws: &[f64], alpha: f64) -> Result<f64> {
    SortedDraws::new(draws.to_vec())?.upper_quantile(alpha)
}

/// Fraction of draws strictly above `c`.
pub fn tail_probability(draws: &[f64], c: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(GsiError::Domain("no draws".into()));
    }
    Ok(draws.iter().filter(|&&d| d > c).count() as f64 / draws.len() as f64)
}

/// Fraction of draws at or above `c`.
pub fn tail_probability_at_least(draws: &[f64], c: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(GsiError::Domain("no draws".into()));
    }
    Ok(draws.iter().filter(|&&d| d >= c).count() as f64 / draws.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub center: f64,
    pub radius: f64,
    pub alpha: f64,
    pub m: usize,
}

impl PredictionInterval {
    pub fn contains(&self, y: f64) -> bool {
        (y - self.center).abs() <= self.radius
    }

    pub fn length(&self) -> f64 {
        2.0 * self.radius
    }
}

fn require_residual_generator<G: ScoreGenerator + ?Sized>(generator: &G) -> Result<()> {
    if generator.score_fn().kind != ScoreKind::AbsResidual {
        return Err(GsiError::Config(format!(
            "prediction intervals need an absolute-residual generator, got {:?}",
            generator.score_fn().kind
        )));
    }
    Ok(())
}

pub fn interval_from_draws(draws: &SortedDraws, yhat: f64, alpha: f64) -> Result<PredictionInterval> {
    Ok(PredictionInterval {
        center: yhat,
        radius: draws.upper_quantile(alpha)?.max(0.0),
        alpha,
        m: draws.len(),
    })
}

/// `{y : |y − ŷ| ≤ q_{1−α,m}(x)}`.
pub fn prediction_interval<G: ScoreGenerator + ?Sized>(
    x_new: &[f64],
    generator: &G,
    yhat: f64,
    alpha: f64,
    m: usize,
    seed: u64,
) -> Result<PredictionInterval> {
    require_residual_generator(generator)?;
    check_level(alpha)?;
    let draws = SortedDraws::new(generator.sample(x_new, m, seed)?)?;
    interval_from_draws(&draws, yhat, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Keep the validation rejection rate of label-0 items at or below the nominal level.
    Type1,
    /// Keep validation interval coverage at or above one minus the nominal level.
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub mode: CalibrationMode,
    pub nominal: f64,
    pub grid: Vec<f64>,
    /// Validation Type-I error or coverage at each grid level.
    pub criterion: Vec<f64>,
    pub alpha_star: f64,
    /// No grid level met the target; `alpha_star` is the most conservative level.
    pub fallback: bool,
}

/// `{0.005, 0.010, …, 0.995}`.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..200).map(|k| k as f64 / 200.0).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(GsiError::Config("empty level grid".into()));
    }
    for &a in grid {
        check_level(a).map_err(|e| GsiError::Config(e.to_string()))?;
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GsiError::Config("level grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Type-I calibration from per-item draws.
///
/// At level `a` an item is flagged when its tail probability above `c`
/// exceeds `a`. The validation Type-I error (flag rate among label-0 items)
/// can only fall as `a` grows, so the qualifying levels form an upper range
/// of the grid; the selected level is its lower end, the most powerful level
/// whose error stays within `nominal`. If nothing qualifies the largest grid
/// level is used and the result is flagged.
pub fn calibrate_type1(draws: &[SortedDraws], labels: &[u8], c: f64, nominal: f64, grid: &[f64]) -> Result<CalibrationResult> {
    check_level(nominal)?;
    check_grid(grid)?;
    if draws.len() != labels.len() {
        return Err(GsiError::Shape(format!("{} draw sets but {} labels", draws.len(), labels.len())));
    }
    let nulls: Vec<&SortedDraws> = draws.iter().zip(labels).filter(|(_, &z)| z == 0).map(|(d, _)| d).collect();
    if nulls.is_empty() {
        return Err(GsiError::Calibration("no label-0 validation items; Type-I error is undefined".into()));
    }
    let criterion = grid
        .iter()
        .map(|&a| {
            let mut flagged = 0usize;
            for d in &nulls {
                if d.rejects(c, a)? {
                    flagged += 1;
                }
            }
            Ok(flagged as f64 / nulls.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let pick = criterion.iter().position(|&e| e <= nominal);
    Ok(CalibrationResult {
        mode: CalibrationMode::Type1,
        nominal,
        alpha_star: pick.map_or(grid[grid.len() - 1], |i| grid[i]),
        fallback: pick.is_none(),
        grid: grid.to_vec(),
        criterion,
    })
}

/// Coverage calibration: the largest grid level whose validation intervals
/// cover at least `1 − nominal`; the smallest grid level (flagged) otherwise.
pub fn calibrate_coverage(
    draws: &[SortedDraws],
    y: &[f64],
    yhat: &[f64],
    nominal: f64,
    grid: &[f64],
) -> Result<CalibrationResult> {
    check_level(nominal)?;
    check_grid(grid)?;
    if draws.len() != y.len() || y.len() != yhat.len() {
        return Err(GsiError::Shape("validation draws, targets and predictions differ in length".into()));
    }
    if draws.is_empty() {
        return Err(GsiError::Calibration("empty validation set".into()));
    }
    let criterion = grid
        .iter()
        .map(|&a| {
            let mut covered = 0usize;
            for ((d, &yi), &fi) in draws.iter().zip(y).zip(yhat) {
                if interval_from_draws(d, fi, a)?.contains(yi) {
                    covered += 1;
                }
            }
            Ok(covered as f64 / draws.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let pick = criterion.iter().rposition(|&cov| cov >= 1.0 - nominal - 1e-12);
    Ok(CalibrationResult {
        mode: CalibrationMode::Coverage,
        nominal,
        alpha_star: pick.map_or(grid[0], |i| grid[i]),
        fallback: pick.is_none(),
        grid: grid.to_vec(),
        criterion,
    })
}

/// One validation item for [`calibrate_alpha`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRecord {
    /// Stable index used to derive the item's sampling seed.
    pub index: u64,
    pub condition: Vec<f64>,
    pub y: Option<f64>,
    pub yhat: Option<f64>,
    pub z: Option<u8>,
}

/// `m` draws for every record, each from its own seed stream.
pub fn draw_per_record<G: ScoreGenerator + ?Sized>(
    generator: &G,
    conditions: &[(u64, &[f64])],
    m: usize,
    seed: u64,
) -> Result<Vec<SortedDraws>> {
    conditions
        .iter()
        .map(|(idx, x)| SortedDraws::new(generator.sample(x, m, seeding::mix(seed, *idx))?))
        .collect()
}

/// Samples each record once and evaluates every grid level on the shared draws.
/// Type-I mode needs the threshold `c` and labels; coverage mode needs `y`
/// and `yhat` on every record.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_alpha<G: ScoreGenerator + ?Sized>(
    records: &[ValidationRecord],
    generator: &G,
    nominal: f64,
    mode: CalibrationMode,
    c: Option<f64>,
    grid: &[f64],
    m: usize,
    seed: u64,
) -> Result<CalibrationResult> {
    if records.is_empty() {
        return Err(GsiError::Calibration("empty validation set".into()));
    }
    check_grid(grid)?;
    let conds: Vec<(u64, &[f64])> = records.iter().map(|r| (r.index, r.condition.as_slice())).collect();
    match mode {
        CalibrationMode::Type1 => {
            let c = c.ok_or_else(|| GsiError::Config("Type-I calibration needs a threshold c".into()))?;
            let labels = records
                .iter()
                .map(|r| r.z.ok_or_else(|| GsiError::Calibration(format!("record {} has no label", r.index))))
                .collect::<Result<Vec<u8>>>()?;
            if !labels.contains(&0) {
                return Err(GsiError::Calibration("no label-0 validation items; Type-I error is undefined".into()));
            }
            let draws = draw_per_record(generator, &conds, m, seed)?;
            calibrate_type1(&draws, &labels, c, nominal, grid)
        }
        CalibrationMode::Coverage => {
            require_residual_generator(generator)?;
            let mut y = Vec::with_capacity(records.len());
            let mut yhat = Vec::with_capacity(records.len());
            for r in records {
                match (r.y, r.yhat) {
                    (Some(a), Some(b)) => {
                        y.push(a);
                        yhat.push(b);
                    }
                    _ => {
                        return Err(GsiError::Calibration(format!("record {} lacks y or yhat", r.index)));
                    }
                }
            }
            let draws = draw_per_record(generator, &conds, m, seed)?;
            calibrate_coverage(&draws, &y, &yhat, nominal, grid)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    pub tail_prob: f64,
    pub threshold_c: f64,
    pub alpha_used: f64,
    pub reject: bool,
}

pub fn decide(draws: &SortedDraws, c: f64, alpha_star: f64) -> Result<TestDecision> {
    Ok(TestDecision {
        tail_prob: draws.tail(c),
        threshold_c: c,
        alpha_used: alpha_star,
        reject: draws.rejects(c, alpha_star)?,
    })
}

/// Tests `H₀: s ≤ c` at `x_new`: reject when the estimated `P(s > c | x)`
/// exceeds `alpha_star`.
pub fn hypothesis_test<G: ScoreGenerator + ?Sized>(
    x_new: &[f64],
    c: f64,
    alpha_star: f64,
    generator: &G,
    m: usize,
    seed: u64,
) -> Result<TestDecision> {
    let draws = SortedDraws::new(generator.sample(x_new, m, seed)?)?;
    decide(&draws, c, alpha_star)
}

/// `(1 + #{i : zᵢ = 0, vᵢ ≥ v}) / (n_val + 1)`.
///
/// Large statistics are evidence against the null, so the p-value is small
/// when few label-0 validation items reach the test item's statistic.
pub fn conformal_pvalue(val_stats: &[f64], val_labels: &[u8], test_stat: f64) -> Result<f64> {
    if val_stats.is_empty() {
        return Err(GsiError::Domain("conformal p-value needs validation items".into()));
    }
    if val_stats.len() != val_labels.len() {
        return Err(GsiError::Shape(format!(
            "{} validation statistics but {} labels",
            val_stats.len(),
            val_labels.len()
        )));
    }
    let count = val_stats
        .iter()
        .zip(val_labels)
        .filter(|(&v, &z)| z == 0 && v >= test_stat)
        .count();
    Ok((1 + count) as f64 / (val_stats.len() + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub pvalues: Vec<f64>,
    pub alpha: f64,
    pub k_hat: usize,
    /// Rejected positions in ascending p-value order (ties by position).
    pub rejected: Vec<usize>,
}

/// Benjamini–Hochberg step-up at level `alpha`.
pub fn bh_select(pvalues: &[f64], alpha: f64) -> Result<SelectionResult> {
    if pvalues.is_empty() {
        return Err(GsiError::Domain("no p-values".into()));
    }
    check_level(alpha)?;
    if let Some(p) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(GsiError::Data(format!("p-value {p} outside [0, 1]")));
    }
    let n = pvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    let k_hat = (1..=n)
        .rev()
        .find(|&k| pvalues[order[k - 1]] <= alpha * k as f64 / n as f64)
        .unwrap_or(0);
    Ok(SelectionResult {
        pvalues: pvalues.to_vec(),
        alpha,
        k_hat,
        rejected: order[..k_hat].to_vec(),
    })
}

/// Split-conformal radius: the `⌈(n+1)(1−α)⌉`-th smallest calibration score,
/// or infinity when that rank exceeds `n`.
pub fn split_conformal_radius(cal_scores: &[f64], alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    if cal_scores.is_empty() {
        return Err(GsiError::Domain("no calibration scores".into()));
    }
    let n = cal_scores.len();
    let k = quantile_rank(alpha, n + 1);
    if k > n {
        return Ok(f64::INFINITY);
    }
    let mut s = cal_scores.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s[k - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(f64);

    impl ScoreGenerator for Constant {
        fn score_fn(&self) -> ScoreFnSpec {
            ScoreFnSpec::abs_residual()
        }
        fn condition_dim(&self) -> usize {
            1
        }
        fn sample(&self, _: &[f64], m: usize, _: u64) -> Result<Vec<f64>> {
            Ok(vec![self.0; m])
        }
    }

    fn ratios(a: f64, b: f64, c: f64, d: f64) -> SplitRatios {
        SplitRatios {
            train: a,
            calibration: b,
            validation: c,
            test: d,
        }
    }

    #[test]
    fn split_sizes_follow_rounding_rule() {
        assert_eq!(split_sizes(100, &ratios(0.85 * 0.5, 0.85 * 0.5, 0.0, 0.15)).unwrap(), [43, 42, 0, 15]);
        assert_eq!(split_sizes(4, &ratios(0.25, 0.25, 0.25, 0.25)).unwrap(), [1, 1, 1, 1]);
        assert!(matches!(split_sizes(10, &ratios(0.5, 0.5, 0.1, 0.0)), Err(GsiError::Config(_))));
        let a = split_dataset(100, &ratios(0.425, 0.425, 0.0, 0.15), 9).unwrap();
        assert_eq!(a, split_dataset(100, &ratios(0.425, 0.425, 0.0, 0.15), 9).unwrap());
        assert_eq!((a.train.len(), a.calibration.len(), a.test.len()), (43, 42, 15));
        assert!((a.rho() - 42.0 / 85.0).abs() < 1e-15);
    }

    #[test]
    fn residual_sets() {
        let spec = ScoreFnSpec::abs_residual();
        let payloads: Vec<Payload> = [(1.0, 0.0), (2.0, 2.0), (0.0, -1.0)]
            .iter()
            .map(|&(y, yhat)| Payload::Scalar { y, yhat })
            .collect();
        let set = build_score_set(vec![vec![0.0]; 3], &payloads, &spec).unwrap();
        assert_eq!(set.scores(), &[1.0, 0.0, 1.0]);
        let u = [0.3, -0.4];
        let emb = [Payload::Embedding { reference: &u, output: &u }; 2];
        let set = build_score_set(vec![vec![1.0]; 2], &emb, &ScoreFnSpec::cosine_dissim()).unwrap();
        assert!(set.scores().iter().all(|s| s.abs() < 1e-15));
        assert!(matches!(build_score_set(vec![vec![1.0]; 2], &emb, &spec), Err(GsiError::Config(_))));

        let mut table = PredictionTable::default();
        table.insert("a", 1.0).unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(
            build_residual_set(vec![vec![0.0]; 2], &ids, &[1.0, 2.0], &table),
            Err(GsiError::Data(_))
        ));
    }

    #[test]
    fn quantile_fixtures() {
        let draws: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(empirical_upper_quantile(&draws, 0.2).unwrap(), 0.8);
        assert_eq!(empirical_upper_quantile(&[0.7; 5], 0.33).unwrap(), 0.7);
        assert_eq!(quantile_rank(0.1, 1000), 900);
        assert_eq!(quantile_rank(0.999, 10), 1);
        assert!(matches!(empirical_upper_quantile(&[], 0.1), Err(GsiError::Domain(_))));
    }

    #[test]
    fn tail_fixtures() {
        assert_eq!(tail_probability(&[0.1, 0.5], 0.5).unwrap(), 0.0);
        assert_eq!(tail_probability(&[0.2, 0.8], 0.5).unwrap(), 0.5);
        assert_eq!(tail_probability_at_least(&[0.1, 0.5], 0.5).unwrap(), 0.5);
        assert!(matches!(tail_probability(&[], 0.5), Err(GsiError::Domain(_))));
    }

    #[test]
    fn degenerate_generators() {
        let pi = prediction_interval(&[0.0], &Constant(0.0), 3.0, 0.1, 50, 1).unwrap();
        assert!(pi.contains(3.0) && !pi.contains(3.0 + 1e-12));
        let c = 0.7;
        assert!(hypothesis_test(&[0.0], c, 0.05, &Constant(c + 1.0), 100, 1).unwrap().reject);
        assert!(!hypothesis_test(&[0.0], c, 0.999, &Constant(0.0), 100, 1).unwrap().reject);
    }

    #[test]
    fn reported_tail_exceeding_level_rejects() {
        // 117 of 1000 draws above c, tested at 0.078.
        let draws: Vec<f64> = (0..1000).map(|i| if i < 117 { 1.0 } else { 0.0 }).collect();
        let d = decide(&SortedDraws::new(draws).unwrap(), 0.7, 0.078).unwrap();
        assert!((d.tail_prob - 0.117).abs() < 1e-15);
        assert!(d.reject);
    }

    #[test]
    fn type1_calibration_cases() {
        let grid = default_alpha_grid();
        let quiet: Vec<SortedDraws> = (0..5).map(|_| SortedDraws::new(vec![0.0; 10]).unwrap()).collect();
        let r = calibrate_type1(&quiet, &[0, 0, 0, 1, 1], 0.5, 0.1, &grid).unwrap();
        assert!(r.criterion.iter().all(|&e| e == 0.0));
        assert_eq!(r.alpha_star, grid[0]);
        let r = calibrate_type1(&quiet, &[0, 0, 0, 1, 1], 0.5, 0.1, &[0.1]).unwrap();
        assert_eq!(r.alpha_star, 0.1);
        assert!(matches!(
            calibrate_type1(&quiet, &[1; 5], 0.5, 0.1, &grid),
            Err(GsiError::Calibration(_))
        ));
        let loud: Vec<SortedDraws> = (0..3).map(|_| SortedDraws::new(vec![1.0; 10]).unwrap()).collect();
        let r = calibrate_type1(&loud, &[0, 0, 0], 0.5, 0.1, &grid).unwrap();
        assert!(r.fallback);
        assert_eq!(r.alpha_star, *grid.last().unwrap());
    }

    #[test]
    fn coverage_calibration_prefers_short_intervals() {
        let draws: Vec<SortedDraws> = (0..10)
            .map(|_| SortedDraws::new((1..=100).map(|i| i as f64 / 100.0).collect()).unwrap())
            .collect();
        // Residuals 0.055, 0.155, ..., 0.955.
        let y: Vec<f64> = (0..10).map(|i| 0.055 + i as f64 / 10.0).collect();
        let r = calibrate_coverage(&draws, &y, &[0.0; 10], 0.2, &default_alpha_grid()).unwrap();
        // Covering 8 of 10 needs radius >= 0.755, i.e. a rank of at least 76.
        assert!((r.alpha_star - 0.245).abs() < 1e-12, "{}", r.alpha_star);
        assert!(!r.fallback);
    }

    #[test]
    fn conformal_pvalue_fixtures() {
        let v = [0.9, 0.4, 0.7, 0.2];
        assert_eq!(conformal_pvalue(&v, &[0, 0, 1, 0], 0.5).unwrap(), 0.4);
        assert_eq!(conformal_pvalue(&v, &[0, 0, 1, 0], 0.95).unwrap(), 0.2);
        assert_eq!(conformal_pvalue(&v, &[1; 4], 0.0).unwrap(), 0.2);
        assert!(matches!(conformal_pvalue(&[], &[], 0.5), Err(GsiError::Domain(_))));
    }

    #[test]
    fn bh_fixtures() {
        let r = bh_select(&[0.01, 0.02, 0.30, 0.50], 0.1).unwrap();
        assert_eq!(r.k_hat, 2);
        assert_eq!(r.rejected, vec![0, 1]);
        assert_eq!(bh_select(&[1.0; 5], 0.1).unwrap().k_hat, 0);
        let r = bh_select(&[0.01, 0.002, 0.02], 0.1).unwrap();
        assert_eq!(r.rejected, vec![1, 0, 2]);
        assert!(matches!(bh_select(&[1.2], 0.1), Err(GsiError::Data(_))));
    }

    #[test]
    fn split_conformal_ranks() {
        let s: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(split_conformal_radius(&s, 0.1).unwrap(), 9.0);
        assert_eq!(split_conformal_radius(&s, 0.2).unwrap(), 8.0);
        assert!(split_conformal_radius(&s[..5], 0.1).unwrap().is_infinite());
    }
}
