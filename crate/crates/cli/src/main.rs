//! `gsi`: run generative score inference experiments from a TOML config.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gsi_cli::config::{ExperimentConfig, Task};
use gsi_cli::io::{fmt_f64, write_embedding_records, write_rows, EmbeddingRecord, RecordSet};
use gsi_cli::pipeline::{
    bad_labels, fit_predictor, load_intervals_table, load_record_data, obtain_generator, record_score_set,
    residual_set, run_intervals, run_select, run_test, search_generator, split_table, Seeds, Timings,
};
use gsi_cli::report::{write_report, ReportFormat};
use gsi_cli::run_experiment;
use gsi_core::diffusion::ScoreSet;

#[derive(Parser)]
#[command(name = "gsi", version, about = "Generative score inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value_t = Format::Machine)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Human,
    Machine,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train/calibration/validation/test assignment of every row.
    Split(Common),
    /// Fit the base predictor and write `id,yhat` for every row.
    TrainPredictor(Common),
    /// Write the generator training scores as an `id,score,e0..` file.
    Scores(Common),
    /// Train the conditional score generator and save it as JSON.
    TrainGenerator(Common),
    /// Write the validation-set level calibration as JSON.
    Calibrate(Common),
    /// Write per-point prediction intervals for the test split.
    Intervals(Common),
    /// Write per-point test decisions at each calibrated level.
    Test(Common),
    /// Write conformal p-values and BH selections for each target.
    Select(Common),
    /// Evaluate a saved generator (`generator.model`) and write the report.
    Evaluate(ReportArgs),
    /// Random hyperparameter search for the diffusion generator; writes JSON.
    Search(Common),
    /// Run the configured task end to end and write the report.
    Run(ReportArgs),
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading config {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn require_task(cfg: &ExperimentConfig, task: Task, command: &str) -> Result<()> {
    if cfg.task != task {
        bail!("`{command}` needs task = \"{}\", the config has \"{}\"", task.name(), cfg.task.name());
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// The generator's training scores for the configured task.
fn training_scores(cfg: &ExperimentConfig, seeds: &mut Seeds) -> Result<(ScoreSet, Vec<String>)> {
    match cfg.task {
        Task::Intervals => {
            let table = load_intervals_table(cfg)?;
            let split = split_table(cfg, table.len(), seeds)?;
            let yhat = fit_predictor(cfg, &table, &split, seeds)?;
            let ids = split.calibration.iter().map(|&i| table.ids[i].clone()).collect();
            Ok((residual_set(&table, &split.calibration, &yhat)?, ids))
        }
        Task::Test | Task::Select => {
            let data = load_record_data(cfg)?;
            let set = record_score_set(&data.train, &cfg.score_spec()?)?;
            Ok((set, data.train.records.iter().map(|r| r.id.clone()).collect()))
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Split(common) => {
            let cfg = load_config(&common)?;
            require_task(&cfg, Task::Intervals, "split")?;
            let table = load_intervals_table(&cfg)?;
            let split = split_table(&cfg, table.len(), &mut Seeds::new(cfg.seed))?;
            let mut part = vec![""; table.len()];
            for (name, idx) in [
                ("train", &split.train),
                ("calibration", &split.calibration),
                ("validation", &split.validation),
                ("test", &split.test),
            ] {
                for &i in idx {
                    part[i] = name;
                }
            }
            let rows = table.ids.iter().zip(part).map(|(id, p)| vec![id.clone(), p.to_string()]);
            write_rows(&common.out, &["id", "part"], rows)?;
        }
        Command::TrainPredictor(common) => {
            let cfg = load_config(&common)?;
            require_task(&cfg, Task::Intervals, "train-predictor")?;
            let mut seeds = Seeds::new(cfg.seed);
            let table = load_intervals_table(&cfg)?;
            let split = split_table(&cfg, table.len(), &mut seeds)?;
            let yhat = fit_predictor(&cfg, &table, &split, &mut seeds)?;
            let rows = table
                .ids
                .iter()
                .zip(&yhat)
                .filter(|(_, v)| v.is_finite())
                .map(|(id, &v)| vec![id.clone(), fmt_f64(v)]);
            write_rows(&common.out, &["id", "yhat"], rows)?;
        }
        Command::Scores(common) => {
            let cfg = load_config(&common)?;
            let (set, ids) = training_scores(&cfg, &mut Seeds::new(cfg.seed))?;
            let records = ids
                .into_iter()
                .zip(set.conditions().iter().zip(set.scores()))
                .map(|(id, (x, &s))| EmbeddingRecord {
                    id,
                    z: None,
                    score: Some(s),
                    embedding: x.clone(),
                })
                .collect();
            let out = RecordSet {
                records,
                dim: set.cond_dim(),
                has_z: false,
                has_score: true,
            };
            write_embedding_records(&common.out, &out)?;
        }
        Command::TrainGenerator(common) => {
            let cfg = load_config(&common)?;
            let mut seeds = Seeds::new(cfg.seed);
            let (set, _) = training_scores(&cfg, &mut seeds)?;
            let (model, _) = obtain_generator(&cfg, &set, cfg.score_spec()?, &mut seeds, &mut Timings::default())?;
            model.save(&common.out)?;
        }
        Command::Calibrate(common) => {
            let cfg = load_config(&common)?;
            match cfg.task {
                Task::Intervals => {
                    let out = run_intervals(&cfg)?;
                    let Some(cal) = out.calibration else {
                        bail!("no calibration ran: inference.calibrate is off or the validation split is empty");
                    };
                    write_json(&common.out, &cal)?;
                }
                Task::Test => {
                    let out = run_test(&cfg)?;
                    let cals: Vec<_> = out.rows.into_iter().filter_map(|r| r.calibration).collect();
                    if cals.is_empty() {
                        bail!("no calibration ran: inference.calibrate is off");
                    }
                    write_json(&common.out, &cals)?;
                }
                Task::Select => bail!("the select task calibrates through conformal p-values; use `select`"),
            }
        }
        Command::Intervals(common) => {
            let cfg = load_config(&common)?;
            require_task(&cfg, Task::Intervals, "intervals")?;
            let out = run_intervals(&cfg)?;
            let rows = out.split.test.iter().zip(&out.intervals).map(|(&i, pi)| {
                let y = out.table.y[i];
                vec![
                    out.table.ids[i].clone(),
                    fmt_f64(pi.center),
                    fmt_f64(pi.radius),
                    fmt_f64(pi.center - pi.radius),
                    fmt_f64(pi.center + pi.radius),
                    fmt_f64(y),
                    u8::from(pi.contains(y)).to_string(),
                ]
            });
            write_rows(&common.out, &["id", "center", "radius", "lo", "hi", "y", "covered"], rows)?;
        }
        Command::Test(common) => {
            let cfg = load_config(&common)?;
            require_task(&cfg, Task::Test, "test")?;
            let out = run_test(&cfg)?;
            let c = cfg.threshold();
            let labels = bad_labels(&out.data.test, c, Task::Test)?;
            let mut rows = Vec::new();
            for r in &out.rows {
                for (k, rec) in out.data.test.records.iter().enumerate() {
                    rows.push(vec![
                        fmt_f64(r.nominal),
                        fmt_f64(r.alpha_star),
                        rec.id.clone(),
                        fmt_f64(out.test_draws[k].tail(c)),
                        u8::from(r.rejections[k]).to_string(),
                        labels[k].to_string(),
                    ]);
                }
            }
            write_rows(&common.out, &["nominal", "alpha_star", "id", "tail_prob", "reject", "z"], rows)?;
        }
        Command::Select(common) => {
            let cfg = load_config(&common)?;
            require_task(&cfg, Task::Select, "select")?;
            let out = run_select(&cfg)?;
            let labels = bad_labels(&out.data.test, cfg.threshold(), Task::Select)?;
            let mut rows = Vec::new();
            for r in &out.rows {
                let mut selected = vec![false; out.pvalues.len()];
                for &i in &r.selection.rejected {
                    selected[i] = true;
                }
                for (k, rec) in out.data.test.records.iter().enumerate() {
                    rows.push(vec![
                        fmt_f64(r.target),
                        rec.id.clone(),
                        fmt_f64(out.pvalues[k]),
                        u8::from(selected[k]).to_string(),
                        labels[k].to_string(),
                    ]);
                }
            }
            write_rows(&common.out, &["target", "id", "pvalue", "selected", "z"], rows)?;
        }
        Command::Evaluate(args) => {
            let cfg = load_config(&args.common)?;
            if cfg.generator.model.is_none() {
                bail!("`evaluate` needs generator.model pointing at a saved generator");
            }
            emit(&run_experiment(&cfg)?, &args)?;
        }
        Command::Search(common) => {
            let mut cfg = load_config(&common)?;
            if cfg.search.trials == 0 {
                cfg.search.trials = 10;
            }
            cfg.validate()?;
            let mut seeds = Seeds::new(cfg.seed);
            let (set, _) = training_scores(&cfg, &mut seeds)?;
            let outcome = search_generator(&cfg, &set, cfg.score_spec()?, seeds.get("search"))?;
            write_json(&common.out, &outcome)?;
        }
        Command::Run(args) => {
            let cfg = load_config(&args.common)?;
            emit(&run_experiment(&cfg)?, &args)?;
        }
    }
    Ok(())
}

fn emit(report: &gsi_cli::Report, args: &ReportArgs) -> Result<()> {
    let format = match args.format {
        Format::Human => ReportFormat::Human,
        Format::Machine => ReportFormat::Machine,
    };
    write_report(report, &args.common.out, format)?;
    print!("{}", report.to_human_string());
    Ok(())
}
