//! Implementations of the pipeline subcommands. Every stage reads the
//! previous stage's documented files and writes its own; identical inputs
//! and seed produce byte-identical outputs.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use adhere_core::derive_seed;
use adhere_core::explain::{expected_gradients, HybridLogit};
use adhere_core::features::{attach_static, build_daily_samples, build_weekly_samples, Task};
use adhere_core::harness::{
    emit_report, load_reports, run_nested_cv, split_subject_kfold, CVReport, GridSpec,
    NestedCvSettings,
};
use adhere_core::ingest::{exclude_burn_in, group_by_subject, label_daily, label_weekly, IntervalWindow};
use adhere_core::model::{train, ModelArtifact, ModelConfig};
use adhere_core::preprocess::{FitParams, PreprocessPlan};
use adhere_core::storage;
use adhere_core::synthcohort::{generate, CohortSpec};

pub fn events_path(out_dir: &Path) -> PathBuf {
    out_dir.join("events.csv")
}

pub fn surveys_path(out_dir: &Path) -> PathBuf {
    out_dir.join("surveys.csv")
}

pub fn ground_truth_path(out_dir: &Path) -> PathBuf {
    out_dir.join("ground_truth.json")
}

pub fn day_labels_path(out_dir: &Path) -> PathBuf {
    out_dir.join("day_labels.csv")
}

pub fn week_labels_path(out_dir: &Path) -> PathBuf {
    out_dir.join("week_labels.csv")
}

pub fn subjects_path(out_dir: &Path) -> PathBuf {
    out_dir.join("subjects.csv")
}

pub fn samples_path(out_dir: &Path, task: Task) -> PathBuf {
    out_dir.join(format!("{task}_samples.csv"))
}

pub fn model_path(out_dir: &Path, task: Task) -> PathBuf {
    out_dir.join(format!("model_{task}.json"))
}

pub fn plan_path(out_dir: &Path, task: Task) -> PathBuf {
    out_dir.join(format!("plan_{task}.json"))
}

pub fn report_dir_default(out_dir: &Path, task: Task) -> PathBuf {
    out_dir.join(format!("report_{task}"))
}

pub fn attributions_base(out_dir: &Path, task: Task) -> PathBuf {
    out_dir.join(format!("attributions_{task}"))
}

pub struct SimulateParams {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub spec: CohortSpec,
}

pub fn simulate(p: &SimulateParams) -> Result<()> {
    let cohort = generate(&p.spec, p.seed)?;
    std::fs::create_dir_all(&p.out_dir)?;
    storage::write_events_csv(&cohort.events, File::create(events_path(&p.out_dir))?)?;
    storage::write_surveys_csv(&cohort.surveys, File::create(surveys_path(&p.out_dir))?)?;
    storage::write_ground_truth(&cohort.truth, &ground_truth_path(&p.out_dir))?;
    println!(
        "simulated {} subjects × {} days: {} events → {}",
        p.spec.n_subjects,
        p.spec.n_days,
        cohort.events.len(),
        p.out_dir.display()
    );
    Ok(())
}

pub struct LabelParams {
    pub events: PathBuf,
    pub out_dir: PathBuf,
    pub burn_in_days: u32,
    pub window: IntervalWindow,
    pub weekly_threshold: f64,
}

pub fn label(p: &LabelParams) -> Result<()> {
    let events = storage::read_events(&p.events)?;
    let series = exclude_burn_in(&group_by_subject(&events), p.burn_in_days);
    let day_labels = label_daily(&series, p.window);
    let week_labels = label_weekly(&day_labels, p.weekly_threshold);

    std::fs::create_dir_all(&p.out_dir)?;
    storage::write_day_labels_csv(&day_labels, File::create(day_labels_path(&p.out_dir))?)?;
    storage::write_week_labels_csv(&week_labels, File::create(week_labels_path(&p.out_dir))?)?;
    storage::write_subjects_csv(&series, File::create(subjects_path(&p.out_dir))?)?;

    let empty = series.iter().filter(|s| s.timestamps.is_empty()).count();
    println!(
        "labeled {} day(s) and {} week(s) across {} subject(s); {} subject(s) emptied by burn-in",
        day_labels.len(),
        week_labels.len(),
        series.len(),
        empty
    );
    Ok(())
}

pub struct FeaturizeParams {
    pub out_dir: PathBuf,
    pub surveys: PathBuf,
    pub daily_lags: usize,
    pub weekly_lags: usize,
}

pub fn featurize(p: &FeaturizeParams) -> Result<()> {
    let day_path = day_labels_path(&p.out_dir);
    let week_path = week_labels_path(&p.out_dir);
    storage::require_file(&day_path)?;
    storage::require_file(&week_path)?;
    let subj_path = subjects_path(&p.out_dir);
    storage::require_file(&subj_path)?;

    let day_labels = storage::read_day_labels_csv(File::open(&day_path)?)?;
    let week_labels = storage::read_week_labels_csv(File::open(&week_path)?)?;
    let anchors = storage::read_subject_anchors_csv(File::open(&subj_path)?)?;
    let surveys = storage::read_surveys(&p.surveys)?;

    for (task, set) in [
        (Task::Daily, build_daily_samples(&day_labels, p.daily_lags)),
        (Task::Weekly, build_weekly_samples(&week_labels, p.weekly_lags)),
    ] {
        let (set, report) = attach_static(set, &surveys, &anchors)?;
        let path = samples_path(&p.out_dir, task);
        storage::write_samples(&set, &path)?;
        println!(
            "{task}: {} samples ({} features) → {}; dropped {} sample(s) from {} subject(s) without survey coverage",
            set.samples.len(),
            set.names.flat_names().len(),
            path.display(),
            report.dropped_samples,
            report.dropped_subjects.len()
        );
    }
    Ok(())
}

pub struct EvaluateParams {
    pub out_dir: PathBuf,
    pub task: Task,
    pub k: usize,
    pub seed: u64,
    pub grid: Option<PathBuf>,
    pub report_dir: PathBuf,
    pub availability_threshold: f64,
    pub top_k: usize,
    pub smote_k: usize,
}

fn load_grid(path: Option<&Path>) -> Result<Vec<ModelConfig>> {
    let spec = match path {
        Some(p) => {
            storage::require_file(p)?;
            serde_json::from_str::<GridSpec>(&std::fs::read_to_string(p)?)
                .with_context(|| format!("invalid grid file {}", p.display()))?
        }
        None => GridSpec::default(),
    };
    let grid = spec.expand();
    if grid.is_empty() {
        bail!("the hyperparameter grid is empty");
    }
    Ok(grid)
}

pub fn evaluate(p: &EvaluateParams) -> Result<()> {
    let set = storage::read_samples(&samples_path(&p.out_dir, p.task))?;
    let grid = load_grid(p.grid.as_deref())?;
    let mut settings = NestedCvSettings::new(p.seed);
    settings.k = p.k;
    settings.fit = FitParams {
        availability_threshold: p.availability_threshold,
        top_k: p.top_k,
        smote_k: p.smote_k,
        seed: p.seed,
        ..FitParams::default()
    };

    let outcome = run_nested_cv(&set, &grid, &settings)?;
    emit_report(&outcome.reports, &p.report_dir)?;

    for r in &outcome.reports {
        println!(
            "{} {}: accuracy {} | precision {} | recall {} | specificity {} ({} folds, {} aborted)",
            r.task,
            r.model,
            adhere_core::harness::format_percent(r.mean.accuracy, r.std.accuracy),
            adhere_core::harness::format_percent(r.mean.precision, r.std.precision),
            adhere_core::harness::format_percent(r.mean.recall, r.std.recall),
            adhere_core::harness::format_percent(r.mean.specificity, r.std.specificity),
            r.folds.len(),
            r.aborted_folds.len(),
        );
    }
    println!("report files → {}", p.report_dir.display());
    Ok(())
}

pub struct TrainFinalParams {
    pub out_dir: PathBuf,
    pub task: Task,
    pub seed: u64,
    pub config: ModelConfig,
    pub availability_threshold: f64,
    pub top_k: usize,
    pub smote_k: usize,
}

pub fn train_final(p: &TrainFinalParams) -> Result<()> {
    let set = storage::read_samples(&samples_path(&p.out_dir, p.task))?;
    let subjects = set.subjects();

    // 80/20 subject split; the 20% slice drives early stopping only.
    let split = split_subject_kfold(&subjects, 5, derive_seed(p.seed, &[0xf1]))?;
    let val_subjects = &split.folds[0].test;
    let all_rows: Vec<usize> = (0..set.samples.len()).collect();
    let (train_rows, val_rows): (Vec<usize>, Vec<usize>) = all_rows
        .iter()
        .partition(|&&i| !val_subjects.contains(&set.samples[i].subject_id));

    let fit = FitParams {
        availability_threshold: p.availability_threshold,
        top_k: p.top_k,
        smote_k: p.smote_k,
        seed: derive_seed(p.seed, &[0xf2]),
        fold_id: 0,
        ..FitParams::default()
    };
    let plan = PreprocessPlan::fit(&set, &all_rows, &fit)?;
    let layout = plan.layout(&set.names);

    let mut train_matrix = plan.transform(&set, &train_rows)?;
    train_matrix.apply_smote(p.smote_k, derive_seed(p.seed, &[0xf3]))?;
    let val_matrix = plan.transform(&set, &val_rows)?;

    let to_samples = |m: &adhere_core::preprocess::ModelMatrix| {
        m.rows
            .iter()
            .zip(&m.labels)
            .map(|(row, label)| {
                let (dynamic, stat) = layout.split_row(row);
                adhere_core::model::TrainSample { dynamic, stat, label: *label }
            })
            .collect::<Vec<_>>()
    };
    let config = ModelConfig { seed: derive_seed(p.seed, &[0xf4]), ..p.config };
    let (params, history) = train(
        &config,
        layout.channels.len(),
        layout.static_names.len(),
        &to_samples(&train_matrix),
        &to_samples(&val_matrix),
    )?;

    std::fs::create_dir_all(&p.out_dir)?;
    let artifact = ModelArtifact::new(p.task, config, layout, params);
    artifact.save(&model_path(&p.out_dir, p.task))?;
    std::fs::write(plan_path(&p.out_dir, p.task), plan.to_json()?)?;
    println!(
        "trained {} model on {} rows ({} validation): best epoch {} of {} ({:?}) → {}",
        p.task,
        train_matrix.rows.len(),
        val_matrix.rows.len(),
        history.best_epoch + 1,
        history.val_loss.len(),
        history.stop_reason,
        model_path(&p.out_dir, p.task).display()
    );
    Ok(())
}

pub struct ExplainParams {
    pub out_dir: PathBuf,
    pub task: Task,
    pub seed: u64,
    pub n_baselines: usize,
    pub noise_sigma: Option<f64>,
    pub max_samples: usize,
    pub top_k: usize,
}

#[derive(Serialize)]
struct AttributionRun<'a> {
    task: Task,
    n_samples: usize,
    n_baselines: usize,
    seed: u64,
    noise_sigma: f64,
    mean_completeness_residual: f64,
    features: &'a [adhere_core::explain::FeatureImportance],
}

pub fn explain(p: &ExplainParams) -> Result<()> {
    let artifact = ModelArtifact::load(&model_path(&p.out_dir, p.task))?;
    let plan_file = plan_path(&p.out_dir, p.task);
    storage::require_file(&plan_file)?;
    let plan = PreprocessPlan::from_json(&std::fs::read_to_string(&plan_file)?)?;
    let set = storage::read_samples(&samples_path(&p.out_dir, p.task))?;

    let all_rows: Vec<usize> = (0..set.samples.len()).collect();
    let matrix = plan.transform(&set, &all_rows)?;
    if matrix.feature_names != artifact.layout.flat_names() {
        bail!("the preprocessing plan does not match the model's feature layout");
    }

    // deterministic subsample of attributed rows when capped
    let attributed: Vec<usize> = if p.max_samples > 0 {
        adhere_core::seeded_subsample(matrix.rows.len(), p.max_samples, derive_seed(p.seed, &[0xa7]))
    } else {
        (0..matrix.rows.len()).collect()
    };

    let model = HybridLogit::from_artifact(&artifact);
    let noise = p.noise_sigma.map(|sigma| adhere_core::explain::NoiseSpec {
        sigma,
        seed: derive_seed(p.seed, &[0xa8]),
    });
    let attributions: Vec<adhere_core::explain::Attribution> = attributed
        .par_iter()
        .map(|&i| {
            expected_gradients(
                &model,
                &matrix.rows[i],
                &matrix.rows,
                p.n_baselines,
                derive_seed(p.seed, &[0xa9, i as u64]),
                noise,
            )
        })
        .collect::<adhere_core::Result<Vec<_>>>()?;

    let summary = adhere_core::explain::summarize(&matrix.feature_names, &attributions)?;
    let base = attributions_base(&p.out_dir, p.task);
    let csv_path = base.with_extension("csv");
    summary.write_csv(File::create(&csv_path)?)?;
    let mean_residual =
        attributions.iter().map(|a| a.residual).sum::<f64>() / attributions.len() as f64;
    let run = AttributionRun {
        task: p.task,
        n_samples: summary.n_samples,
        n_baselines: p.n_baselines,
        seed: p.seed,
        noise_sigma: p.noise_sigma.unwrap_or(0.0),
        mean_completeness_residual: mean_residual,
        features: &summary.features,
    };
    std::fs::write(base.with_extension("json"), serde_json::to_string_pretty(&run)?)?;
    std::fs::write(base.with_extension("svg"), summary.to_svg(p.top_k))?;

    println!(
        "attributed {} samples over {} features (mean completeness residual {:.3e})",
        summary.n_samples,
        matrix.feature_names.len(),
        mean_residual
    );
    for f in summary.top(p.top_k.min(5)) {
        println!("  #{} {}  mean|attr| {:.5}  mean {:+.5}", f.rank, f.feature, f.mean_abs, f.mean_signed);
    }
    println!("attribution files → {}.{{csv,json,svg}}", base.display());
    Ok(())
}

pub struct ReportParams {
    pub out_dir: PathBuf,
    pub top_k: usize,
}

pub fn report(p: &ReportParams) -> Result<()> {
    let mut text = String::new();
    text.push_str("Adherence pipeline summary\n");
    text.push_str("==========================\n");

    let mut found_any = false;
    for task in [Task::Daily, Task::Weekly] {
        let report_json = report_dir_default(&p.out_dir, task).join("report.json");
        if report_json.is_file() {
            found_any = true;
            let reports: Vec<CVReport> = load_reports(&report_json)?;
            text.push_str(&format!("\n{task} adherence (nested cross-validation)\n"));
            text.push_str(&format!(
                "{:<10} {:>16} {:>16} {:>16} {:>16}\n",
                "model", "accuracy", "precision", "recall", "specificity"
            ));
            for r in &reports {
                text.push_str(&format!(
                    "{:<10} {:>16} {:>16} {:>16} {:>16}\n",
                    r.model,
                    adhere_core::harness::format_percent(r.mean.accuracy, r.std.accuracy),
                    adhere_core::harness::format_percent(r.mean.precision, r.std.precision),
                    adhere_core::harness::format_percent(r.mean.recall, r.std.recall),
                    adhere_core::harness::format_percent(r.mean.specificity, r.std.specificity),
                ));
            }
            if let Some(r) = reports.first() {
                text.push_str(&format!(
                    "folds completed: {}, aborted: {}\n",
                    r.folds.len(),
                    r.aborted_folds.len()
                ));
            }
        }

        let attr_json = attributions_base(&p.out_dir, task).with_extension("json");
        if attr_json.is_file() {
            found_any = true;
            let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&attr_json)?)?;
            text.push_str(&format!("\nTop {task} features by mean |attribution|\n"));
            if let Some(features) = run.get("features").and_then(|f| f.as_array()) {
                for f in features.iter().take(p.top_k) {
                    text.push_str(&format!(
                        "  {:>2}. {:<28} mean|attr| {:.5}  mean {:+.5}\n",
                        f["rank"],
                        f["feature"].as_str().unwrap_or("?"),
                        f["mean_abs"].as_f64().unwrap_or(f64::NAN),
                        f["mean_signed"].as_f64().unwrap_or(f64::NAN),
                    ));
                }
            }
        }
    }

    if !found_any {
        bail!(
            "missing input artifact: no report.json or attributions_*.json under {} — run `adhere evaluate` or `adhere explain` first",
            p.out_dir.display()
        );
    }

    let out = p.out_dir.join("summary.txt");
    std::fs::write(&out, &text)?;
    print!("{text}");
    println!("\nsummary → {}", out.display());
    Ok(())
}
