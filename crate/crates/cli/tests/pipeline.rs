use std::path::Path;

use gsi_cli::config::ExperimentConfig;
use gsi_cli::pipeline::{draw_all, run_intervals, run_select, run_test, search_generator};
use gsi_cli::search::SearchSpace;
use gsi_core::diffusion::ScoreSet;
use gsi_core::scores::ScoreFnSpec;
use gsi_core::{seeding, GsiError};
use rand::Rng;
use rand_distr::StandardNormal;

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn tabular(dir: &Path, n: usize, seed: u64) {
    let mut rng = seeding::rng(seed);
    let mut text = String::from("id,a,b,y\n");
    let mut preds = String::from("id,yhat\n");
    for i in 0..n {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let e: f64 = rng.sample(StandardNormal);
        text.push_str(&format!("r{i},{a},{b},{}\n", a - b + (0.1 + a) * e));
        preds.push_str(&format!("r{i},{}\n", a - b));
    }
    write(dir, "table.csv", &text);
    write(dir, "preds.csv", &preds);
}

fn records(dir: &Path, seed: u64) {
    let mut rng = seeding::rng(seed);
    for (name, n) in [("train", 600), ("validation", 300), ("test", 200)] {
        let mut text = String::from("id,score,e0,e1\n");
        for i in 0..n {
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let e: f64 = rng.sample(StandardNormal);
            let s = (0.3 + 0.5 * u + 0.1 * e).clamp(0.0, 1.0);
            text.push_str(&format!("{name}{i},{s},{u},{v}\n"));
        }
        write(dir, &format!("{name}.csv"), &text);
    }
}

fn config(dir: &Path, text: &str) -> ExperimentConfig {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

const SMALL_INTERVALS: &str = r#"
task = "intervals"
seed = 4
[data]
table = "table.csv"
[predictor.gbt]
num_trees = 20
[generator.diffusion]
epochs = 10
hidden_dim = 16
num_res_blocks = 1
batch_size = 32
[generator.diffusion.schedule]
num_steps = 40
[eval]
groups = 3
"#;

#[test]
fn changing_m_keeps_split_and_generator() {
    let dir = tempfile::tempdir().unwrap();
    tabular(dir.path(), 300, 1);
    let a = run_intervals(&config(dir.path(), &format!("{SMALL_INTERVALS}[inference]\nm = 50\n"))).unwrap();
    let b = run_intervals(&config(dir.path(), &format!("{SMALL_INTERVALS}[inference]\nm = 80\n"))).unwrap();
    assert_eq!(a.split, b.split);
    assert_eq!(a.yhat, b.yhat);
    assert_eq!(a.generator, b.generator);
    assert_ne!(a.intervals, b.intervals);
    assert_eq!(a.intervals[0].m, 50);
}

#[test]
fn intervals_report_has_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    tabular(dir.path(), 300, 2);
    let out = run_intervals(&config(dir.path(), SMALL_INTERVALS)).unwrap();
    let r = &out.report;
    assert_eq!(r.meta("task"), Some("intervals"));
    assert_eq!(r.table.columns, ["C_marg", "L_avg", "C_G"]);
    assert_eq!(r.table.rows.len(), 2);
    let c = r.table.get("gsi", "C_marg").unwrap();
    assert!((0.0..=1.0).contains(&c));
    assert!(r.table.get("gsi", "C_G").unwrap() <= c + 1e-12);
    assert_eq!(r.scalar("n_test"), Some(out.split.test.len() as f64));
    let cal = out.calibration.as_ref().expect("validation split is non-empty by default");
    assert_eq!(r.scalar("alpha_star"), Some(cal.alpha_star));
    assert!(r.seeds.iter().any(|(k, _)| k == "generator"));
    assert!(r.timings.iter().any(|(k, _)| k == "train_generator"));
}

#[test]
fn missing_external_prediction_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    tabular(dir.path(), 120, 3);
    write(dir.path(), "preds.csv", "id,yhat\nr0,0.5\n");
    let cfg = config(
        dir.path(),
        &format!("{SMALL_INTERVALS}[predictor]\nkind = \"external\"\n").replace("[data]\n", "[data]\npredictions = \"preds.csv\"\n"),
    );
    let err = run_intervals(&cfg).unwrap_err();
    assert_eq!(err.stage, "predictor");
    assert!(err.to_string().contains("predictor"), "{err}");
}

#[test]
fn missing_input_file_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_intervals(&config(dir.path(), SMALL_INTERVALS)).unwrap_err();
    assert_eq!(err.stage, "config");
    assert!(matches!(err.source, GsiError::Config(_)));
}

const RECORDS: &str = r#"
seed = 2
[data]
train = "train.csv"
validation = "validation.csv"
test = "test.csv"
[generator]
kind = "cflow"
[generator.cflow]
epochs = 20
[inference]
c = 0.6
m = 300
"#;

#[test]
fn test_task_derives_labels_from_scores() {
    let dir = tempfile::tempdir().unwrap();
    records(dir.path(), 5);
    let out = run_test(&config(dir.path(), &format!("task = \"test\"\n{RECORDS}"))).unwrap();
    assert_eq!(out.rows.len(), 3);
    for r in &out.rows {
        assert!((0.0..=1.0).contains(&r.type1) && (0.0..=1.0).contains(&r.power));
        assert!(r.calibration.is_some());
    }
    assert_eq!(out.report.table.columns, ["nominal", "alpha_star", "fallback", "type1", "power"]);
    // Covariate u drives the score up, so hallucinations get larger tail estimates.
    let last = out.rows.last().unwrap();
    assert!(last.power > last.type1);
}

#[test]
fn select_task_reports_every_target() {
    let dir = tempfile::tempdir().unwrap();
    records(dir.path(), 6);
    let out = run_select(&config(dir.path(), &format!("task = \"select\"\n{RECORDS}"))).unwrap();
    assert_eq!(out.rows.len(), 5);
    let n_val = out.data.validation.len() as f64;
    assert!(out.pvalues.iter().all(|&p| p >= 1.0 / (n_val + 1.0) && p <= 1.0));
    let sizes: Vec<usize> = out.rows.iter().map(|r| r.selection.rejected.len()).collect();
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]), "{sizes:?}");
    assert!(out.rows.iter().all(|r| (0.0..=1.0).contains(&r.fdr)));
}

#[test]
fn mismatched_embedding_dims_fail_in_load() {
    let dir = tempfile::tempdir().unwrap();
    records(dir.path(), 7);
    write(dir.path(), "test.csv", "id,score,e0\na,0.5,1\n");
    let err = run_test(&config(dir.path(), &format!("task = \"test\"\n{RECORDS}"))).unwrap_err();
    assert_eq!(err.stage, "load");
}

#[test]
fn evaluation_order_does_not_change_draws() {
    let mut rng = seeding::rng(1);
    let (xs, ss): (Vec<Vec<f64>>, Vec<f64>) = (0..300)
        .map(|_| {
            let x: f64 = rng.random();
            (vec![x], x + rng.random::<f64>())
        })
        .unzip();
    let data = ScoreSet::new(xs.clone(), ss).unwrap();
    let model = gsi_core::train_cflow(&data, ScoreFnSpec::abs_residual(), &Default::default()).unwrap();
    let idx: Vec<u64> = (0..50).map(|i| 1000 + i).collect();
    let a = draw_all(&model, &xs[..50], &idx, 64, 9, None).unwrap();
    let b = draw_all(&model, &xs[..50], &idx, 64, 9, Some(123)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn search_prefers_trained_over_untrained() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeding::rng(3);
    let (xs, ss): (Vec<Vec<f64>>, Vec<f64>) = (0..600)
        .map(|_| {
            let x: f64 = rng.random();
            let e: f64 = rng.sample(StandardNormal);
            (vec![x], 2.0 * x + 0.2 * e)
        })
        .unzip();
    let data = ScoreSet::new(xs, ss).unwrap();
    let mut cfg = config(dir.path(), "task = \"intervals\"\n[data]\ntable = \"unused.csv\"\n");
    cfg.search.trials = 6;
    cfg.search.space = SearchSpace {
        batch_sizes: vec![32],
        lr: [1e-3, 1e-3],
        num_steps: [300, 300],
        hidden_dims: vec![16],
        num_res_blocks: vec![1],
        epochs: vec![0, 40],
        ..SearchSpace::default()
    };
    let out = search_generator(&cfg, &data, ScoreFnSpec::unbounded(), 11).unwrap();
    let epochs: Vec<usize> = out.trials.iter().map(|t| t.config.epochs).collect();
    assert!(epochs.contains(&0) && epochs.contains(&40), "{epochs:?}");
    assert_eq!(out.best.epochs, 40);
    for t in out.trials.iter().filter(|t| t.config.epochs == 0) {
        // An untrained denoiser is no better than predicting zero noise.
        assert!(t.objective > 0.5, "{}", t.objective);
        assert!(t.objective > out.trials[out.best_index].objective);
    }
}
