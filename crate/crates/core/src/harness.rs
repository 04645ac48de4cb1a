//! Nested subject-level k-fold cross-validation with hyperparameter grid
//! search, confusion-matrix metrics, and mean±std reporting.
//!
//! Subjects — never rows — are partitioned, so no individual contributes to
//! both train and test of a fold. Preprocessing is fitted per fold on the
//! outer-train rows only; SMOTE rows exist only in training sets; the inner
//! validation slice drives both early stopping and grid selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::features::{SampleSet, Task};
use crate::ingest::SubjectId;
use crate::model::{
    classify, predict, train, train_logistic, LogisticConfig, ModelConfig, TrainSample,
};
use crate::preprocess::{FitParams, ModelInputLayout, ModelMatrix, PreprocessPlan};

/// Fraction of each outer-train set carved out (at subject level) as the
/// inner validation slice.
pub const INNER_VALIDATION_FRACTION: f64 = 0.2;

/// Subject-level fold assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSubjects {
    pub test: Vec<SubjectId>,
    pub train: Vec<SubjectId>,
    pub validation: Vec<SubjectId>,
}

/// The full cross-validation split: test subjects across folds are disjoint
/// and cover every subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldSubjects>,
}

/// Seeded shuffle, contiguous partition into k test groups with sizes
/// differing by at most one; the inner validation set is a 20% subject
/// slice of each outer-train set.
pub fn split_subject_kfold(subjects: &[SubjectId], k: usize, seed: u64) -> Result<SplitPlan> {
    let mut ids: Vec<SubjectId> = subjects.to_vec();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    if k > n {
        return Err(Error::config(format!("k = {k} exceeds the {n} available subjects")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let base = n / k;
    let rem = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0usize;
    for f in 0..k {
        let size = base + usize::from(f < rem);
        let test: Vec<SubjectId> = ids[start..start + size].to_vec();
        let pool: Vec<SubjectId> = ids
            .iter()
            .filter(|s| !test.contains(s))
            .cloned()
            .collect();
        let val_count = ((pool.len() as f64 * INNER_VALIDATION_FRACTION).round() as usize)
            .clamp(1, pool.len().saturating_sub(1));
        if pool.len() < 2 {
            return Err(Error::config(
                "outer-train pool too small to carve a validation slice",
            ));
        }
        let validation: Vec<SubjectId> = pool[..val_count].to_vec();
        let train: Vec<SubjectId> = pool[val_count..].to_vec();
        folds.push(FoldSubjects { test, train, validation });
        start += size;
    }
    Ok(SplitPlan { k, seed, folds })
}

/// Confusion counts and the four derived metrics; ratios with a zero
/// denominator are reported as absent, never as 0. Positive class =
/// adherent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
}

pub fn compute_metrics(truth: &[bool], predicted: &[bool]) -> Result<MetricSet> {
    if truth.len() != predicted.len() {
        return Err(Error::shape("compute_metrics: label vectors differ in length"));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut tn = 0usize;
    let mut fn_ = 0usize;
    for (y, p) in truth.iter().zip(predicted) {
        match (y, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    Ok(MetricSet {
        tp,
        fp,
        tn,
        fn_,
        accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
    })
}

/// The hyperparameters selected for one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ChosenConfig {
    Hybrid(ModelConfig),
    Logistic(LogisticConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_subjects: Vec<SubjectId>,
    pub train_subjects: Vec<SubjectId>,
    pub val_subjects: Vec<SubjectId>,
    pub chosen: ChosenConfig,
    pub metrics: MetricSet,
    pub n_train_rows: usize,
    pub n_synthetic_train_rows: usize,
    pub n_test_rows: usize,
    /// Synthetic rows found in any evaluation set; zero by construction and
    /// re-counted here so the hygiene gate can assert it.
    pub synthetic_rows_in_eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortedFold {
    pub fold: usize,
    pub reason: String,
}

/// Mean or population standard deviation per metric over completed folds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
}

/// Cross-validation outcome for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub task: Task,
    pub model: String,
    pub folds: Vec<FoldResult>,
    pub aborted_folds: Vec<AbortedFold>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

fn aggregate(folds: &[FoldResult], get: impl Fn(&MetricSet) -> Option<f64>) -> (Option<f64>, Option<f64>) {
    let values: Vec<f64> = folds.iter().filter_map(|f| get(&f.metrics)).collect();
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    // folds are the full population of reported runs
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

fn summarize_folds(folds: &[FoldResult]) -> (MetricSummary, MetricSummary) {
    let (acc_m, acc_s) = aggregate(folds, |m| m.accuracy);
    let (pre_m, pre_s) = aggregate(folds, |m| m.precision);
    let (rec_m, rec_s) = aggregate(folds, |m| m.recall);
    let (spe_m, spe_s) = aggregate(folds, |m| m.specificity);
    (
        MetricSummary { accuracy: acc_m, precision: pre_m, recall: rec_m, specificity: spe_m },
        MetricSummary { accuracy: acc_s, precision: pre_s, recall: rec_s, specificity: spe_s },
    )
}

/// Hyperparameter grid axes; the grid is their Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lstm_hidden: Vec<usize>,
    pub fnn_hidden: Vec<usize>,
    pub final_hidden: Vec<usize>,
    pub dropout: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub max_epochs: Vec<usize>,
    pub patience: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lstm_hidden: vec![8, 16, 32],
            fnn_hidden: vec![8, 16],
            final_hidden: vec![8],
            dropout: vec![0.2, 0.5],
            learning_rate: vec![1e-3, 1e-2],
            batch_size: vec![64],
            max_epochs: vec![40],
            patience: vec![5],
        }
    }
}

impl GridSpec {
    pub fn expand(&self) -> Vec<ModelConfig> {
        let mut grid = Vec::new();
        for &lstm_hidden in &self.lstm_hidden {
            for &fnn_hidden in &self.fnn_hidden {
                for &final_hidden in &self.final_hidden {
                    for &dropout_rate in &self.dropout {
                        for &learning_rate in &self.learning_rate {
                            for &batch_size in &self.batch_size {
                                for &max_epochs in &self.max_epochs {
                                    for &patience in &self.patience {
                                        grid.push(ModelConfig {
                                            lstm_hidden,
                                            fnn_hidden,
                                            final_hidden,
                                            dropout_rate,
                                            learning_rate,
                                            batch_size,
                                            max_epochs,
                                            patience,
                                            seed: 0,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        grid
    }
}

/// Settings shared across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedCvSettings {
    pub k: usize,
    pub seed: u64,
    pub fit: FitParams,
    pub logistic: LogisticConfig,
}

impl NestedCvSettings {
    pub fn new(seed: u64) -> Self {
        NestedCvSettings {
            k: 5,
            seed,
            fit: FitParams { seed, ..FitParams::default() },
            logistic: LogisticConfig { seed, ..LogisticConfig::default() },
        }
    }
}

/// Everything produced by one nested-CV run: the split plan plus one report
/// per model (hybrid first, then the logistic baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedCvOutcome {
    pub split: SplitPlan,
    pub reports: Vec<CVReport>,
}

impl NestedCvOutcome {
    pub fn report(&self, model: &str) -> Option<&CVReport> {
        self.reports.iter().find(|r| r.model == model)
    }
}

fn rows_for_subjects(set: &SampleSet, subjects: &[SubjectId]) -> Vec<usize> {
    set.samples
        .iter()
        .enumerate()
        .filter(|(_, s)| subjects.contains(&s.subject_id))
        .map(|(i, _)| i)
        .collect()
}

fn to_train_samples(matrix: &ModelMatrix, layout: &ModelInputLayout) -> Vec<TrainSample> {
    matrix
        .rows
        .iter()
        .zip(&matrix.labels)
        .map(|(row, label)| {
            let (dynamic, stat) = layout.split_row(row);
            TrainSample { dynamic, stat, label: *label }
        })
        .collect()
}

struct FoldModels {
    hybrid: FoldResult,
    logistic: FoldResult,
}

/// Runs the grid search plus the logistic baseline for one fold.
fn run_fold(
    set: &SampleSet,
    fold_idx: usize,
    fold: &FoldSubjects,
    grid: &[ModelConfig],
    settings: &NestedCvSettings,
) -> Result<FoldModels> {
    let master = settings.seed;
    let mut outer_train_subjects = fold.train.clone();
    outer_train_subjects.extend(fold.validation.iter().cloned());

    let outer_train_rows = rows_for_subjects(set, &outer_train_subjects);
    let inner_train_rows = rows_for_subjects(set, &fold.train);
    let val_rows = rows_for_subjects(set, &fold.validation);
    let test_rows = rows_for_subjects(set, &fold.test);

    let has_both = |rows: &[usize]| {
        rows.iter().any(|&i| set.samples[i].label) && rows.iter().any(|&i| !set.samples[i].label)
    };
    if !has_both(&outer_train_rows) {
        return Err(Error::data(format!(
            "fold {fold_idx}: training set lacks both classes"
        )));
    }
    if inner_train_rows.is_empty() || val_rows.is_empty() || test_rows.is_empty() {
        return Err(Error::data(format!(
            "fold {fold_idx}: a split partition has no samples"
        )));
    }

    // All preprocessing parameters come from the outer-train rows only.
    let fit_params = FitParams {
        seed: derive_seed(master, &[fold_idx as u64, 1]),
        fold_id: fold_idx as u32,
        ..settings.fit
    };
    let plan = PreprocessPlan::fit(set, &outer_train_rows, &fit_params)?;
    let layout = plan.layout(&set.names);

    let mut train_matrix = plan.transform(set, &inner_train_rows)?;
    let n_synthetic =
        train_matrix.apply_smote(settings.fit.smote_k, derive_seed(master, &[fold_idx as u64, 2]))?;
    let val_matrix = plan.transform(set, &val_rows)?;
    let test_matrix = plan.transform(set, &test_rows)?;
    let synthetic_rows_in_eval = val_matrix.synthetic.iter().filter(|s| **s).count()
        + test_matrix.synthetic.iter().filter(|s| **s).count();
    debug_assert_eq!(synthetic_rows_in_eval, 0);

    let train_samples = to_train_samples(&train_matrix, &layout);
    let val_samples = to_train_samples(&val_matrix, &layout);
    let test_samples = to_train_samples(&test_matrix, &layout);
    let channels = layout.channels.len();
    let static_dim = layout.static_names.len();

    // Grid search: each unit gets a derived seed; selection by inner
    // validation loss with ties to the earlier grid entry.
    let results: Vec<Result<(f64, crate::model::ModelParams, ModelConfig)>> = grid
        .par_iter()
        .enumerate()
        .map(|(ci, cfg)| {
            let cfg = ModelConfig {
                seed: derive_seed(master, &[fold_idx as u64, 3, ci as u64]),
                ..*cfg
            };
            let (params, history) =
                train(&cfg, channels, static_dim, &train_samples, &val_samples)?;
            Ok((history.best_val_loss(), params, cfg))
        })
        .collect();

    let mut best: Option<(f64, crate::model::ModelParams, ModelConfig)> = None;
    for r in results {
        let (loss, params, cfg) = r?;
        let better = match &best {
            None => true,
            Some((b, _, _)) => loss < *b,
        };
        if better {
            best = Some((loss, params, cfg));
        }
    }
    let (_, best_params, best_config) =
        best.ok_or_else(|| Error::config("hyperparameter grid is empty"))?;

    let hybrid_probs = predict(&best_params, &test_samples)?;
    let hybrid_preds = classify(&hybrid_probs);
    let hybrid_metrics = compute_metrics(&test_matrix.labels, &hybrid_preds)?;

    let logistic_cfg = LogisticConfig {
        seed: derive_seed(master, &[fold_idx as u64, 4]),
        ..settings.logistic
    };
    let (logistic_model, _) = train_logistic(
        &logistic_cfg,
        &train_matrix.rows,
        &train_matrix.labels,
        &val_matrix.rows,
        &val_matrix.labels,
    )?;
    let logistic_preds = classify(&logistic_model.predict(&test_matrix.rows));
    let logistic_metrics = compute_metrics(&test_matrix.labels, &logistic_preds)?;

    let base = FoldResult {
        fold: fold_idx,
        test_subjects: fold.test.clone(),
        train_subjects: fold.train.clone(),
        val_subjects: fold.validation.clone(),
        chosen: ChosenConfig::Hybrid(best_config),
        metrics: hybrid_metrics,
        n_train_rows: train_matrix.rows.len(),
        n_synthetic_train_rows: n_synthetic,
        n_test_rows: test_matrix.rows.len(),
        synthetic_rows_in_eval,
    };
    let logistic = FoldResult {
        chosen: ChosenConfig::Logistic(logistic_cfg),
        metrics: logistic_metrics,
        ..base.clone()
    };
    Ok(FoldModels { hybrid: base, logistic })
}

/// Nested subject-level cross-validation over the sample set: per fold, fit
/// preprocessing on outer-train, grid-search by inner-validation loss,
/// evaluate the winner and the logistic baseline on the untouched outer
/// test. Folds whose training data are unusable are reported and skipped.
pub fn run_nested_cv(
    set: &SampleSet,
    grid: &[ModelConfig],
    settings: &NestedCvSettings,
) -> Result<NestedCvOutcome> {
    if grid.is_empty() {
        return Err(Error::config("hyperparameter grid is empty"));
    }
    let subjects = set.subjects();
    let split = split_subject_kfold(&subjects, settings.k, settings.seed)?;

    let mut hybrid_folds = Vec::new();
    let mut logistic_folds = Vec::new();
    let mut aborted = Vec::new();
    for (fold_idx, fold) in split.folds.iter().enumerate() {
        match run_fold(set, fold_idx, fold, grid, settings) {
            Ok(models) => {
                hybrid_folds.push(models.hybrid);
                logistic_folds.push(models.logistic);
            }
            Err(e) => aborted.push(AbortedFold { fold: fold_idx, reason: e.to_string() }),
        }
    }

    let (h_mean, h_std) = summarize_folds(&hybrid_folds);
    let (l_mean, l_std) = summarize_folds(&logistic_folds);
    let reports = vec![
        CVReport {
            task: set.names.task,
            model: "hybrid".to_string(),
            folds: hybrid_folds,
            aborted_folds: aborted.clone(),
            mean: h_mean,
            std: h_std,
        },
        CVReport {
            task: set.names.task,
            model: "logistic".to_string(),
            folds: logistic_folds,
            aborted_folds: aborted,
            mean: l_mean,
            std: l_std,
        },
    ];
    Ok(NestedCvOutcome { split, reports })
}

/// `"87.25 ± 0.29"`-style percent formatting with two decimals.
pub fn format_percent(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{:.2} ± {:.2}", m * 100.0, s * 100.0),
        _ => "n/a".to_string(),
    }
}

/// Writes `report.csv` (model × metric mean±std table) and `report.json`
/// (full per-fold detail) into `dir`.
pub fn emit_report(reports: &[CVReport], dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["model", "accuracy", "precision", "recall", "specificity"])?;
    for r in reports {
        w.write_record(&[
            r.model.clone(),
            format_percent(r.mean.accuracy, r.std.accuracy),
            format_percent(r.mean.precision, r.std.precision),
            format_percent(r.mean.recall, r.std.recall),
            format_percent(r.mean.specificity, r.std.specificity),
        ])?;
    }
    w.flush()?;

    let json_path = dir.join("report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(reports)?)?;
    Ok(())
}

pub fn load_reports(path: &std::path::Path) -> Result<Vec<CVReport>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subjects(n: usize) -> Vec<SubjectId> {
        (0..n).map(|i| SubjectId::new(format!("S{i:02}"))).collect()
    }

    #[test]
    fn kfold_partitions_subjects() {
        let ids = subjects(10);
        let plan = split_subject_kfold(&ids, 5, 7).unwrap();
        assert_eq!(plan.folds.len(), 5);
        let mut seen = Vec::new();
        for fold in &plan.folds {
            assert_eq!(fold.test.len(), 2);
            seen.extend(fold.test.iter().cloned());
            for t in &fold.test {
                assert!(!fold.train.contains(t));
                assert!(!fold.validation.contains(t));
            }
            for v in &fold.validation {
                assert!(!fold.train.contains(v));
            }
            assert!(!fold.validation.is_empty());
        }
        seen.sort();
        let mut all = ids.clone();
        all.sort();
        assert_eq!(seen, all, "test folds are disjoint and cover all subjects");
    }

    #[test]
    fn kfold_is_deterministic() {
        let ids = subjects(13);
        let a = split_subject_kfold(&ids, 5, 42).unwrap();
        let b = split_subject_kfold(&ids, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = split_subject_kfold(&ids, 5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn kfold_rejects_k_above_subject_count() {
        let ids = subjects(3);
        assert!(split_subject_kfold(&ids, 5, 0).is_err());
    }

    #[test]
    fn metrics_match_hand_counts() {
        let y = [true, true, false, false];
        let p = [true, false, false, true];
        let m = compute_metrics(&y, &p).unwrap();
        assert_eq!((m.tp, m.fn_, m.tn, m.fp), (1, 1, 1, 1));
        assert_eq!(m.accuracy, Some(0.5));
        assert_eq!(m.precision, Some(0.5));
        assert_eq!(m.recall, Some(0.5));
        assert_eq!(m.specificity, Some(0.5));
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let y = [true, false, true];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!(m.precision, Some(1.0));
        assert_eq!(m.recall, Some(1.0));
        assert_eq!(m.specificity, Some(1.0));
    }

    #[test]
    fn zero_denominators_are_absent_not_zero() {
        let y = [true, true];
        let p = [true, true];
        let m = compute_metrics(&y, &p).unwrap();
        assert_eq!(m.specificity, None, "no negatives in truth");
        let p2 = [false, false];
        let m2 = compute_metrics(&y, &p2).unwrap();
        assert_eq!(m2.precision, None, "no positive predictions");
    }

    #[test]
    fn default_grid_matches_documented_axes() {
        let grid = GridSpec::default().expand();
        assert_eq!(grid.len(), 3 * 2 * 1 * 2 * 2);
        assert!(grid.iter().all(|c| c.patience == 5));
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(Some(0.8725), Some(0.0029)), "87.25 ± 0.29");
        assert_eq!(format_percent(None, None), "n/a");
    }

    #[test]
    fn fold_means_are_arithmetic_means() {
        let mk = |acc: f64| FoldResult {
            fold: 0,
            test_subjects: vec![],
            train_subjects: vec![],
            val_subjects: vec![],
            chosen: ChosenConfig::Logistic(LogisticConfig::default()),
            metrics: MetricSet {
                tp: 1,
                fp: 1,
                tn: 1,
                fn_: 1,
                accuracy: Some(acc),
                precision: None,
                recall: Some(1.0),
                specificity: Some(0.5),
            },
            n_train_rows: 0,
            n_synthetic_train_rows: 0,
            n_test_rows: 0,
            synthetic_rows_in_eval: 0,
        };
        let folds = vec![mk(0.5), mk(0.7), mk(0.9)];
        let (mean, std) = summarize_folds(&folds);
        assert!((mean.accuracy.unwrap() - 0.7).abs() < 1e-15);
        // population std over {0.5, 0.7, 0.9}
        let expect = (((0.04f64) + 0.0 + 0.04) / 3.0).sqrt();
        assert!((std.accuracy.unwrap() - expect).abs() < 1e-15);
        assert_eq!(mean.precision, None);
    }
}
