//! The three experiment pipelines.
//!
//! Every random stage takes its seed from `seeding::stage(base, label)`, and
//! every per-point draw from `seeding::mix(stage_seed, point_index)`, so
//! results do not depend on evaluation order and changing one stage (say
//! `m`) leaves the split and the trained generator untouched.

use std::time::Instant;

use gsi_core::diffusion::{train_diffusion, ScoreSet};
use gsi_core::generator::{GeneratorModel, ScoreGenerator};
use gsi_core::inference::{calibrate_coverage, calibrate_type1, interval_from_draws, split_conformal_radius};
use gsi_core::metrics::{average_length, fdr_and_power, marginal_coverage, type1_and_power, worst_subgroup_coverage};
use gsi_core::predictor::{gbt_predict, load_predictions, train_gbt};
use gsi_core::scores::ScoreFnSpec;
use gsi_core::{
    bh_select, conformal_pvalue, seeding, split_dataset, train_cflow, CalibrationResult, GsiError, MetricsSummary,
    PredictionInterval, Result, SelectionResult, SortedDraws, SplitIndices,
};
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::config::{ExperimentConfig, GeneratorKind, PredictorKind, Task};
use crate::io::{load_embedding_records, load_table, RecordSet, Table};
use crate::report::{Report, ResultTable};
use crate::search::{random_search, SearchOutcome};

/// A pipeline failure tagged with the stage it happened in.
#[derive(Debug, Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: GsiError,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait InStage<T> {
    fn stage(self, stage: &'static str) -> StageResult<T>;
}

impl<T> InStage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Stage seeds derived from the base seed, recorded as they are handed out.
#[derive(Debug, Clone)]
pub struct Seeds {
    base: u64,
    used: Vec<(String, u64)>,
}

impl Seeds {
    pub fn new(base: u64) -> Self {
        Self { base, used: Vec::new() }
    }

    pub fn get(&mut self, label: &str) -> u64 {
        let s = seeding::stage(self.base, label);
        if !self.used.iter().any(|(l, _)| l == label) {
            self.used.push((label.to_string(), s));
        }
        s
    }

    pub fn resolved(&self) -> Vec<(String, u64)> {
        let mut v = vec![("base".to_string(), self.base)];
        v.extend(self.used.iter().cloned());
        v
    }
}

#[derive(Debug, Default, Clone)]
pub struct Timings(pub Vec<(String, f64)>);

impl Timings {
    pub fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.push((label.to_string(), start.elapsed().as_secs_f64()));
        out
    }
}

/// Draws `m` scores at every condition. Point `i` uses seed
/// `mix(seed, indices[i])`; `order_seed` shuffles the evaluation order,
/// which must not change the result.
pub fn draw_all<G: ScoreGenerator + ?Sized>(
    generator: &G,
    conditions: &[Vec<f64>],
    indices: &[u64],
    m: usize,
    seed: u64,
    order_seed: Option<u64>,
) -> Result<Vec<SortedDraws>> {
    if conditions.len() != indices.len() {
        return Err(GsiError::Shape("conditions and indices differ in length".into()));
    }
    let mut order: Vec<usize> = (0..conditions.len()).collect();
    if let Some(s) = order_seed {
        order.shuffle(&mut seeding::rng(s));
    }
    let mut out: Vec<Option<SortedDraws>> = (0..conditions.len()).map(|_| None).collect();
    for i in order {
        let draws = generator.sample(&conditions[i], m, seeding::mix(seed, indices[i]))?;
        out[i] = Some(SortedDraws::new(draws)?);
    }
    Ok(out.into_iter().map(|d| d.expect("every point drawn")).collect())
}

fn subset(data: &ScoreSet, idx: &[usize]) -> Result<ScoreSet> {
    ScoreSet::new(
        idx.iter().map(|&i| data.conditions()[i].clone()).collect(),
        idx.iter().map(|&i| data.scores()[i]).collect(),
    )
}

/// Loads the configured generator or trains one on `data`, running the
/// random search first when it is enabled.
pub fn obtain_generator(
    cfg: &ExperimentConfig,
    data: &ScoreSet,
    spec: ScoreFnSpec,
    seeds: &mut Seeds,
    timings: &mut Timings,
) -> StageResult<(GeneratorModel, Option<SearchOutcome>)> {
    if let Some(path) = &cfg.generator.model {
        let g = GeneratorModel::load(path).stage("load_generator")?;
        if g.score_fn().kind != spec.kind {
            return Err(GsiError::Config(format!(
                "model {} was trained for {:?} scores, the experiment uses {:?}",
                path.display(),
                g.score_fn().kind,
                spec.kind
            )))
            .stage("load_generator");
        }
        if g.condition_dim() != data.cond_dim() {
            return Err(GsiError::Config(format!(
                "model {} expects {} covariates, the data has {}",
                path.display(),
                g.condition_dim(),
                data.cond_dim()
            )))
            .stage("load_generator");
        }
        return Ok((g, None));
    }
    match cfg.generator.kind {
        GeneratorKind::Diffusion => {
            let mut dc = cfg.generator.diffusion.clone();
            let mut outcome = None;
            if cfg.search.trials > 0 {
                let search_seed = seeds.get("search");
                let found = timings
                    .time("search", || search_generator(cfg, data, spec, search_seed))
                    .stage("search")?;
                dc = found.best.clone();
                if cfg.search.space.epochs.is_empty() {
                    dc.epochs = cfg.generator.diffusion.epochs;
                }
                outcome = Some(found);
            }
            dc.seed = seeds.get("generator");
            let model = timings
                .time("train_generator", || train_diffusion(data, spec, &dc))
                .stage("train_generator")?;
            Ok((GeneratorModel::Diffusion(model), outcome))
        }
        GeneratorKind::Cflow => {
            let mut cc = cfg.generator.cflow.clone();
            cc.seed = seeds.get("generator");
            let model = timings
                .time("train_generator", || train_cflow(data, spec, &cc))
                .stage("train_generator")?;
            Ok((GeneratorModel::Cflow(model), None))
        }
    }
}

/// Random search scored by denoising MSE on a held-out part of `data`.
pub fn search_generator(cfg: &ExperimentConfig, data: &ScoreSet, spec: ScoreFnSpec, seed: u64) -> Result<SearchOutcome> {
    let n = data.len();
    let n_hold = ((n as f64) * cfg.search.holdout).round() as usize;
    if n_hold == 0 || n_hold >= n {
        return Err(GsiError::Config(format!(
            "search holdout of {} leaves no data on one side ({n} items)",
            cfg.search.holdout
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeding::rng(seeding::mix(seed, 0)));
    let holdout = subset(data, &idx[..n_hold])?;
    let fit = subset(data, &idx[n_hold..])?;
    let mse_seed = seeding::mix(seed, 1);
    random_search(
        &cfg.search.space,
        &cfg.generator.diffusion,
        cfg.search.trials,
        cfg.search.budget_epochs,
        seeding::mix(seed, 2),
        |c| train_diffusion(&fit, spec, c)?.denoising_mse(&holdout, mse_seed),
    )
}

fn base_report(cfg: &ExperimentConfig) -> StageResult<Report> {
    let config = cfg.to_toml().stage("config")?;
    Ok(Report {
        meta: vec![
            ("task".into(), cfg.task.name().into()),
            ("generator".into(), generator_label(cfg)),
            ("config".into(), config),
        ],
        ..Report::default()
    })
}

fn generator_label(cfg: &ExperimentConfig) -> String {
    match (&cfg.generator.model, cfg.generator.kind) {
        (Some(p), _) => format!("file:{}", p.display()),
        (None, GeneratorKind::Diffusion) => "diffusion".into(),
        (None, GeneratorKind::Cflow) => "cflow".into(),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> StageResult<Report> {
    match cfg.task {
        Task::Intervals => run_intervals(cfg).map(|o| o.report),
        Task::Test => run_test(cfg).map(|o| o.report),
        Task::Select => run_select(cfg).map(|o| o.report),
    }
}


// Intervals

pub fn load_intervals_table(cfg: &ExperimentConfig) -> Result<Table> {
    let path = cfg
        .data
        .table
        .as_ref()
        .ok_or_else(|| GsiError::Config("data.table is not set".into()))?;
    load_table(path, &cfg.data.target, cfg.data.id_column.as_deref())
}

pub fn split_table(cfg: &ExperimentConfig, n: usize, seeds: &mut Seeds) -> Result<SplitIndices> {
    split_dataset(n, &cfg.split.ratios(), seeds.get("split"))
}

/// Predictions for every row: GBT fitted on the train split, or the
/// external predictions file. Rows the pipeline never uses may be NaN.
pub fn fit_predictor(cfg: &ExperimentConfig, table: &Table, split: &SplitIndices, seeds: &mut Seeds) -> Result<Vec<f64>> {
    match cfg.predictor.kind {
        PredictorKind::Gbt => {
            if split.train.is_empty() {
                return Err(GsiError::Config("the gbt predictor needs a non-empty train split".into()));
            }
            let mut gc = cfg.predictor.gbt.clone();
            gc.seed = seeds.get("predictor");
            let y: Vec<f64> = split.train.iter().map(|&i| table.y[i]).collect();
            let model = train_gbt(&table.rows(&split.train), &y, &gc)?;
            table.x.iter().map(|x| gbt_predict(&model, x)).collect()
        }
        PredictorKind::External => {
            let path = cfg
                .data
                .predictions
                .as_ref()
                .ok_or_else(|| GsiError::Config("data.predictions is not set".into()))?;
            let preds = load_predictions(path)?;
            let mut yhat: Vec<f64> = table.ids.iter().map(|id| preds.get(id).unwrap_or(f64::NAN)).collect();
            for &i in split.calibration.iter().chain(&split.validation).chain(&split.test) {
                yhat[i] = preds.require(&table.ids[i])?;
            }
            Ok(yhat)
        }
    }
}

pub fn residual_set(table: &Table, rows: &[usize], yhat: &[f64]) -> Result<ScoreSet> {
    ScoreSet::new(
        table.rows(rows),
        rows.iter().map(|&i| (table.y[i] - yhat[i]).abs()).collect(),
    )
}

#[derive(Debug, Clone)]
pub struct IntervalsOutcome {
    pub report: Report,
    pub table: Table,
    pub split: SplitIndices,
    pub yhat: Vec<f64>,
    pub generator: GeneratorModel,
    pub calibration: Option<CalibrationResult>,
    pub alpha_star: f64,
    /// Intervals for `split.test`, in that order.
    pub intervals: Vec<PredictionInterval>,
    pub summary: MetricsSummary,
    pub baseline: Option<MetricsSummary>,
}

fn summarize(
    cfg: &ExperimentConfig,
    table: &Table,
    split: &SplitIndices,
    intervals: &[PredictionInterval],
    kmeans_seed: u64,
) -> Result<MetricsSummary> {
    let y: Vec<f64> = split.test.iter().map(|&i| table.y[i]).collect();
    let reference = if split.train.is_empty() { &split.calibration } else { &split.train };
    let sub = worst_subgroup_coverage(
        &table.rows(reference),
        &table.rows(&split.test),
        intervals,
        &y,
        cfg.eval.groups,
        kmeans_seed,
        cfg.eval.kmeans_restarts,
    )?;
    Ok(MetricsSummary {
        c_marg: marginal_coverage(intervals, &y)?,
        l_avg: average_length(intervals)?,
        c_g: sub.c_g,
    })
}

pub fn run_intervals(cfg: &ExperimentConfig) -> StageResult<IntervalsOutcome> {
    cfg.validate().stage("config")?;
    cfg.check_paths().stage("config")?;
    let mut seeds = Seeds::new(cfg.seed);
    let mut timings = Timings::default();
    let mut report = base_report(cfg)?;
    let spec = cfg.score_spec().stage("config")?;

    let table = timings.time("load", || load_intervals_table(cfg)).stage("load")?;
    let split = split_table(cfg, table.len(), &mut seeds).stage("split")?;
    if split.calibration.is_empty() || split.test.is_empty() {
        return Err(GsiError::Config("calibration and test splits must be non-empty".into())).stage("split");
    }
    let yhat = timings
        .time("predictor", || fit_predictor(cfg, &table, &split, &mut seeds))
        .stage("predictor")?;
    let cal = residual_set(&table, &split.calibration, &yhat).stage("scores")?;
    let (generator, search) = obtain_generator(cfg, &cal, spec, &mut seeds, &mut timings)?;

    let grid = cfg.inference.grid();
    let m = cfg.inference.m;
    let alpha = cfg.inference.alpha;
    let calibration = if cfg.inference.calibrate && !split.validation.is_empty() {
        let seed = seeds.get("calibrate");
        let result = timings
            .time("calibrate", || {
                let idx: Vec<u64> = split.validation.iter().map(|&i| i as u64).collect();
                let draws = draw_all(&generator, &table.rows(&split.validation), &idx, m, seed, None)?;
                let y: Vec<f64> = split.validation.iter().map(|&i| table.y[i]).collect();
                let f: Vec<f64> = split.validation.iter().map(|&i| yhat[i]).collect();
                calibrate_coverage(&draws, &y, &f, alpha, &grid)
            })
            .stage("calibrate")?;
        Some(result)
    } else {
        None
    };
    let alpha_star = calibration.as_ref().map_or(alpha, |c| c.alpha_star);

    let eval_seed = seeds.get("evaluate");
    let order_seed = cfg.eval.permute_order.then(|| seeds.get("order"));
    let intervals = timings
        .time("intervals", || {
            let idx: Vec<u64> = split.test.iter().map(|&i| i as u64).collect();
            let draws = draw_all(&generator, &table.rows(&split.test), &idx, m, eval_seed, order_seed)?;
            draws
                .iter()
                .zip(&split.test)
                .map(|(d, &i)| interval_from_draws(d, yhat[i], alpha_star))
                .collect::<Result<Vec<_>>>()
        })
        .stage("intervals")?;

    let kmeans_seed = seeds.get("kmeans");
    let summary = timings
        .time("evaluate", || summarize(cfg, &table, &split, &intervals, kmeans_seed))
        .stage("evaluate")?;
    let baseline = if cfg.eval.baseline {
        let b = (|| {
            let radius = split_conformal_radius(cal.scores(), alpha)?;
            let cp: Vec<PredictionInterval> = split
                .test
                .iter()
                .map(|&i| PredictionInterval {
                    center: yhat[i],
                    radius,
                    alpha,
                    m: cal.len(),
                })
                .collect();
            summarize(cfg, &table, &split, &cp, kmeans_seed)
        })()
        .stage("baseline")?;
        Some(b)
    } else {
        None
    };

    let mut t = ResultTable::new(&["C_marg", "L_avg", "C_G"]);
    t.push("gsi", vec![summary.c_marg, summary.l_avg, summary.c_g]);
    if let Some(b) = &baseline {
        t.push("split_conformal", vec![b.c_marg, b.l_avg, b.c_g]);
    }
    report.table = t;
    report.scalars = vec![
        ("alpha".into(), alpha),
        ("alpha_star".into(), alpha_star),
        (
            "calibration_fallback".into(),
            f64::from(u8::from(calibration.as_ref().is_some_and(|c| c.fallback))),
        ),
        ("rho".into(), split.rho()),
        ("n_train".into(), split.train.len() as f64),
        ("n_calibration".into(), split.calibration.len() as f64),
        ("n_validation".into(), split.validation.len() as f64),
        ("n_test".into(), split.test.len() as f64),
        ("m".into(), m as f64),
    ];
    if let Some(s) = &search {
        report.scalars.push(("search_best_trial".into(), s.best_index as f64));
        report.scalars.push(("search_best_mse".into(), s.trials[s.best_index].objective));
    }
    report.seeds = seeds.resolved();
    report.timings = timings.0;
    Ok(IntervalsOutcome {
        report,
        table,
        split,
        yhat,
        generator,
        calibration,
        alpha_star,
        intervals,
        summary,
        baseline,
    })
}


// Test and select

/// Generator training, validation and test records for the test/select tasks.
#[derive(Debug, Clone)]
pub struct RecordData {
    pub train: RecordSet,
    pub validation: RecordSet,
    pub test: RecordSet,
}

pub fn load_record_data(cfg: &ExperimentConfig) -> Result<RecordData> {
    let get = |p: &Option<std::path::PathBuf>, name: &str| {
        p.as_ref()
            .ok_or_else(|| GsiError::Config(format!("data.{name} is not set")))
            .and_then(load_embedding_records)
    };
    let data = RecordData {
        train: get(&cfg.data.train, "train")?,
        validation: get(&cfg.data.validation, "validation")?,
        test: get(&cfg.data.test, "test")?,
    };
    if data.validation.dim != data.train.dim || data.test.dim != data.train.dim {
        return Err(GsiError::Shape(format!(
            "embedding dimensions differ: train {}, validation {}, test {}",
            data.train.dim, data.validation.dim, data.test.dim
        )));
    }
    Ok(data)
}

/// Scores of the generator training records.
pub fn record_score_set(set: &RecordSet, spec: &ScoreFnSpec) -> Result<ScoreSet> {
    let scores = set
        .records
        .iter()
        .map(|r| {
            let s = r
                .score
                .ok_or_else(|| GsiError::Data(format!("training record `{}` has no score", r.id)))?;
            if !spec.contains(s) {
                return Err(GsiError::Data(format!(
                    "training record `{}` has score {s} outside [{}, {}]",
                    r.id, spec.lo, spec.hi
                )));
            }
            Ok(s)
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreSet::new(set.embeddings(), scores)
}

/// 1 for a bad item. Taken from `z` when present, otherwise derived from the
/// score: `s > c` in the test task and `s ≥ c` in the select task.
pub fn bad_labels(set: &RecordSet, c: f64, task: Task) -> Result<Vec<u8>> {
    set.records
        .iter()
        .map(|r| match (r.z, r.score) {
            (Some(z), _) => Ok(z),
            (None, Some(s)) => Ok(u8::from(if task == Task::Select { s >= c } else { s > c })),
            (None, None) => Err(GsiError::Data(format!("record `{}` has neither a label nor a score", r.id))),
        })
        .collect()
}

fn positions(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestRow {
    pub nominal: f64,
    pub calibration: Option<CalibrationResult>,
    pub alpha_star: f64,
    pub type1: f64,
    pub power: f64,
    pub rejections: Vec<bool>,
}

#[allow(clippy::too_many_arguments)]
/// Calibrates a level per nominal value on the validation draws and applies
/// it to the test draws. Labels: 0 = acceptable output (null), 1 = hallucination.
pub fn test_curve(
    val_draws: &[SortedDraws],
    val_labels: &[u8],
    test_draws: &[SortedDraws],
    test_labels: &[u8],
    c: f64,
    levels: &[f64],
    grid: &[f64],
    calibrate: bool,
) -> Result<Vec<TestRow>> {
    levels
        .iter()
        .map(|&nominal| {
            let calibration = if calibrate {
                Some(calibrate_type1(val_draws, val_labels, c, nominal, grid)?)
            } else {
                None
            };
            let alpha_star = calibration.as_ref().map_or(nominal, |r| r.alpha_star);
            let rejections = test_draws.iter().map(|d| d.rejects(c, alpha_star)).collect::<Result<Vec<bool>>>()?;
            let (type1, power) = type1_and_power(&rejections, test_labels)?;
            Ok(TestRow {
                nominal,
                calibration,
                alpha_star,
                type1,
                power,
                rejections,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub report: Report,
    pub data: RecordData,
    pub generator: GeneratorModel,
    pub rows: Vec<TestRow>,
    pub test_draws: Vec<SortedDraws>,
}

pub fn run_test(cfg: &ExperimentConfig) -> StageResult<TestOutcome> {
    cfg.validate().stage("config")?;
    cfg.check_paths().stage("config")?;
    let mut seeds = Seeds::new(cfg.seed);
    let mut timings = Timings::default();
    let mut report = base_report(cfg)?;
    let spec = cfg.score_spec().stage("config")?;
    let c = cfg.threshold();
    let m = cfg.inference.m;

    let data = timings.time("load", || load_record_data(cfg)).stage("load")?;
    let train = record_score_set(&data.train, &spec).stage("scores")?;
    let val_labels = bad_labels(&data.validation, c, Task::Test).stage("labels")?;
    let test_labels = bad_labels(&data.test, c, Task::Test).stage("labels")?;
    let (generator, _) = obtain_generator(cfg, &train, spec, &mut seeds, &mut timings)?;

    let cal_seed = seeds.get("calibrate");
    let val_draws = timings
        .time("calibrate", || {
            draw_all(&generator, &data.validation.embeddings(), &positions(data.validation.len()), m, cal_seed, None)
        })
        .stage("calibrate")?;
    let eval_seed = seeds.get("evaluate");
    let order_seed = cfg.eval.permute_order.then(|| seeds.get("order"));
    let test_draws = timings
        .time("test", || {
            draw_all(&generator, &data.test.embeddings(), &positions(data.test.len()), m, eval_seed, order_seed)
        })
        .stage("test")?;
    let rows = timings
        .time("evaluate", || {
            test_curve(
                &val_draws,
                &val_labels,
                &test_draws,
                &test_labels,
                c,
                &cfg.inference.levels,
                &cfg.inference.grid(),
                cfg.inference.calibrate,
            )
        })
        .stage("evaluate")?;

    let mut t = ResultTable::new(&["nominal", "alpha_star", "fallback", "type1", "power"]);
    for r in &rows {
        let fallback = r.calibration.as_ref().is_some_and(|c| c.fallback);
        t.push(
            format!("level_{}", r.nominal),
            vec![r.nominal, r.alpha_star, f64::from(u8::from(fallback)), r.type1, r.power],
        );
    }
    report.table = t;
    report.scalars = vec![
        ("c".into(), c),
        ("m".into(), m as f64),
        ("n_train".into(), data.train.len() as f64),
        ("n_validation".into(), data.validation.len() as f64),
        ("n_test".into(), data.test.len() as f64),
    ];
    report.seeds = seeds.resolved();
    report.timings = timings.0;
    Ok(TestOutcome {
        report,
        data,
        generator,
        rows,
        test_draws,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectRow {
    pub target: f64,
    pub fdr: f64,
    pub power: f64,
    pub selection: SelectionResult,
}

/// Statistic `V = 1 − P̂(s ≥ c | x)`; large values favour a good item.
pub fn selection_statistic(draws: &SortedDraws, c: f64) -> f64 {
    1.0 - draws.tail_at_least(c)
}

/// Conformal p-values against the bad validation items, then BH at each
/// target. `*_bad` labels: 1 = bad item (the null), 0 = good item.
pub fn select_curve(
    val_stats: &[f64],
    val_bad: &[u8],
    test_stats: &[f64],
    test_bad: &[u8],
    targets: &[f64],
) -> Result<(Vec<f64>, Vec<SelectRow>)> {
    if test_stats.len() != test_bad.len() {
        return Err(GsiError::Shape("test statistics and labels differ in length".into()));
    }
    // The p-value counts label-0 items, which here must be the null (bad) ones.
    let null_coded: Vec<u8> = val_bad.iter().map(|&z| 1 - z).collect();
    let pvalues = test_stats
        .iter()
        .map(|&v| conformal_pvalue(val_stats, &null_coded, v))
        .collect::<Result<Vec<f64>>>()?;
    let good: Vec<bool> = test_bad.iter().map(|&z| z == 0).collect();
    let rows = targets
        .iter()
        .map(|&target| {
            let selection = bh_select(&pvalues, target)?;
            let (fdr, power) = fdr_and_power(&selection.rejected, &good)?;
            Ok(SelectRow {
                target,
                fdr,
                power,
                selection,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((pvalues, rows))
}

#[derive(Debug, Clone)]
pub struct SelectOutcome {
    pub report: Report,
    pub data: RecordData,
    pub generator: GeneratorModel,
    pub pvalues: Vec<f64>,
    pub rows: Vec<SelectRow>,
}

pub fn run_select(cfg: &ExperimentConfig) -> StageResult<SelectOutcome> {
    cfg.validate().stage("config")?;
    cfg.check_paths().stage("config")?;
    let mut seeds = Seeds::new(cfg.seed);
    let mut timings = Timings::default();
    let mut report = base_report(cfg)?;
    let spec = cfg.score_spec().stage("config")?;
    let c = cfg.threshold();
    let m = cfg.inference.m;

    let data = timings.time("load", || load_record_data(cfg)).stage("load")?;
    let train = record_score_set(&data.train, &spec).stage("scores")?;
    let val_bad = bad_labels(&data.validation, c, Task::Select).stage("labels")?;
    let test_bad = bad_labels(&data.test, c, Task::Select).stage("labels")?;
    let (generator, _) = obtain_generator(cfg, &train, spec, &mut seeds, &mut timings)?;

    let cal_seed = seeds.get("calibrate");
    let val_stats: Vec<f64> = timings
        .time("calibrate", || {
            draw_all(&generator, &data.validation.embeddings(), &positions(data.validation.len()), m, cal_seed, None)
        })
        .stage("calibrate")?
        .iter()
        .map(|d| selection_statistic(d, c))
        .collect();
    let eval_seed = seeds.get("evaluate");
    let order_seed = cfg.eval.permute_order.then(|| seeds.get("order"));
    let test_stats: Vec<f64> = timings
        .time("select", || {
            draw_all(&generator, &data.test.embeddings(), &positions(data.test.len()), m, eval_seed, order_seed)
        })
        .stage("select")?
        .iter()
        .map(|d| selection_statistic(d, c))
        .collect();
    let (pvalues, rows) = timings
        .time("evaluate", || select_curve(&val_stats, &val_bad, &test_stats, &test_bad, &cfg.inference.targets))
        .stage("evaluate")?;

    let mut t = ResultTable::new(&["target", "fdr", "power", "selected"]);
    for r in &rows {
        t.push(
            format!("target_{}", r.target),
            vec![r.target, r.fdr, r.power, r.selection.rejected.len() as f64],
        );
    }
    report.table = t;
    report.scalars = vec![
        ("c".into(), c),
        ("m".into(), m as f64),
        ("n_train".into(), data.train.len() as f64),
        ("n_validation".into(), data.validation.len() as f64),
        ("n_test".into(), data.test.len() as f64),
    ];
    report.seeds = seeds.resolved();
    report.timings = timings.0;
    Ok(SelectOutcome {
        report,
        data,
        generator,
        pvalues,
        rows,
    })
}
