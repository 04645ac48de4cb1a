//! Train-set-fitted preprocessing: availability filtering, iterative
//! imputation, categorical encoding, min-max scaling, SMOTE class
//! rebalancing, and correlation-filter feature selection with lag expansion.
//!
//! Everything is fitted on training rows only and captured in a serializable
//! [`PreprocessPlan`] so the exact transform can be replayed on held-out rows
//! without touching them during fit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::features::{FeatureNameMap, SampleSet};
use crate::ingest::SubjectId;

/// Fit-time knobs with the pipeline defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    /// Keep features whose non-missing training fraction is ≥ this value.
    pub availability_threshold: f64,
    /// Number of features kept by the correlation filter before lag
    /// expansion.
    pub top_k: usize,
    /// SMOTE neighbor count.
    pub smote_k: usize,
    /// Ridge regularization inside the iterative imputer.
    pub ridge_lambda: f64,
    pub impute_max_rounds: usize,
    pub impute_tol: f64,
    pub seed: u64,
    pub fold_id: u32,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            availability_threshold: 0.6,
            top_k: 40,
            smote_k: 5,
            ridge_lambda: 1e-3,
            impute_max_rounds: 10,
            impute_tol: 1e-3,
            seed: 0,
            fold_id: 0,
        }
    }
}

/// One ridge regression of an incomplete column on all other kept numeric
/// columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRegression {
    /// Index into the kept-numeric column list.
    pub col: usize,
    pub intercept: f64,
    /// Coefficients over the other kept numeric columns, in column order
    /// with `col` skipped.
    pub coefs: Vec<f64>,
}

/// Fitted iterative-imputer state: training column means plus the final
/// round's regressions, applied to new rows in one pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerModel {
    pub means: Vec<f64>,
    pub regressions: Vec<ColumnRegression>,
}

/// Training-derived one-hot encoding for one categorical column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalEncoding {
    pub name: String,
    /// Training mode, imputed into missing cells.
    pub mode: String,
    /// Sorted training category list; unseen values map to all-zeros.
    pub categories: Vec<String>,
}

/// Training min/max for one encoded column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    /// x' = (x − min)/(max − min); constant training features map to 0.
    /// Out-of-range values are not clamped.
    pub fn scale(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }
}

/// The complete fitted preprocessing state for one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPlan {
    pub seed: u64,
    pub fold_id: u32,
    /// Full input column schemas this plan was fitted against.
    pub numeric_names: Vec<String>,
    pub categorical_names: Vec<String>,
    /// Availability-filtered columns (indices into the schemas above).
    pub kept_numeric: Vec<usize>,
    pub kept_categorical: Vec<usize>,
    pub categoricals: Vec<CategoricalEncoding>,
    pub imputer: ImputerModel,
    /// Aligned with the encoded column list (kept numerics, then one-hots).
    pub scaler: Vec<FeatureRange>,
    /// Final model features after selection and lag expansion, in canonical
    /// order (dynamic lag-major, then static).
    pub selected: Vec<String>,
    /// Indices of `selected` into the encoded column list.
    pub selected_idx: Vec<usize>,
}

/// Transformed rows in the selected model feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMatrix {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub subjects: Vec<SubjectId>,
    /// True for SMOTE-generated rows; always false for transformed samples.
    pub synthetic: Vec<bool>,
}

impl ModelMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rebalances classes 1:1 in place; synthetic rows are flagged and carry
    /// a placeholder subject id. Returns the number of rows added.
    pub fn apply_smote(&mut self, k: usize, seed: u64) -> Result<usize> {
        let out = smote(&self.rows, &self.labels, k, seed)?;
        let n_before = self.rows.len();
        let added = out.n_synthetic;
        self.rows = out.rows;
        self.labels = out.labels;
        for i in 0..added {
            self.subjects.push(SubjectId::new(format!("<synthetic-{}>", n_before + i)));
            self.synthetic.push(true);
        }
        Ok(added)
    }
}

/// How the selected flat features fold back into model inputs: a
/// (lags × channels) dynamic tensor plus a static vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInputLayout {
    pub lags: usize,
    /// Selected dynamic channels, in canonical channel order.
    pub channels: Vec<String>,
    /// Selected static features (survey scales and one-hot columns).
    pub static_names: Vec<String>,
}

impl ModelInputLayout {
    pub fn dynamic_len(&self) -> usize {
        self.lags * self.channels.len()
    }

    pub fn flat_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dynamic_len() + self.static_names.len());
        for lag in 1..=self.lags {
            for ch in &self.channels {
                names.push(format!("t-{lag} {ch}"));
            }
        }
        names.extend(self.static_names.iter().cloned());
        names
    }

    /// Splits a selected-space row into (dynamic oldest-lag-first, static).
    /// Rows store lag t−1 first; the recurrence consumes timesteps oldest
    /// first, so lag blocks are reversed here.
    pub fn split_row(&self, row: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = self.channels.len();
        let dyn_len = self.dynamic_len();
        assert_eq!(row.len(), dyn_len + self.static_names.len(), "row/layout mismatch");
        let mut dynamic = Vec::with_capacity(dyn_len);
        for lag in (1..=self.lags).rev() {
            let start = (lag - 1) * c;
            dynamic.extend_from_slice(&row[start..start + c]);
        }
        (dynamic, row[dyn_len..].to_vec())
    }

    /// Maps a gradient over (dynamic oldest-first, static) back to the
    /// selected-space flat order (lag t−1 first).
    pub fn merge_grad(&self, dyn_grad: &[f64], static_grad: &[f64]) -> Vec<f64> {
        let c = self.channels.len();
        let mut flat = vec![0.0; self.dynamic_len() + static_grad.len()];
        for (step, lag) in (1..=self.lags).rev().enumerate() {
            let src = step * c;
            let dst = (lag - 1) * c;
            flat[dst..dst + c].copy_from_slice(&dyn_grad[src..src + c]);
        }
        flat[self.dynamic_len()..].copy_from_slice(static_grad);
        flat
    }
}

/// Keeps features whose non-missing fraction is at least `threshold`.
/// NaN marks a missing numeric cell.
pub fn availability_filter(rows: &[Vec<f64>], names: &[String], threshold: f64) -> Vec<String> {
    names
        .iter()
        .enumerate()
        .filter(|(j, _)| {
            let present = rows.iter().filter(|r| !r[*j].is_nan()).count();
            rows.is_empty() || present as f64 / rows.len() as f64 >= threshold
        })
        .map(|(_, n)| n.clone())
        .collect()
}

fn column_available(present: usize, total: usize, threshold: f64) -> bool {
    total == 0 || present as f64 / total as f64 >= threshold
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::data("singular linear system in ridge solve"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Ok(x)
}

/// Ridge regression of `y` on `predictors` (+ intercept); the intercept is
/// unpenalized.
fn ridge_fit(predictors: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let n = y.len();
    let p = predictors.first().map_or(0, |r| r.len());
    let dim = p + 1;
    let mut ata = vec![vec![0.0; dim]; dim];
    let mut atb = vec![0.0; dim];
    for (row, &yi) in predictors.iter().zip(y) {
        let mut z = Vec::with_capacity(dim);
        z.push(1.0);
        z.extend_from_slice(row);
        for i in 0..dim {
            for j in i..dim {
                ata[i][j] += z[i] * z[j];
            }
            atb[i] += z[i] * yi;
        }
    }
    for i in 0..dim {
        for j in 0..i {
            ata[i][j] = ata[j][i];
        }
    }
    // penalize coefficients, not the intercept
    for i in 1..dim {
        ata[i][i] += lambda;
    }
    let _ = n;
    let beta = solve_linear(ata, atb)?;
    Ok((beta[0], beta[1..].to_vec()))
}

impl ImputerModel {
    /// Fits on a training matrix (NaN = missing): initialize missing cells
    /// with column means, then iterate round-robin ridge regressions of each
    /// incomplete column on all the others until convergence or the round
    /// limit. Observed cells are never modified. Returns the model and the
    /// completed training matrix.
    pub fn fit(
        matrix: &[Vec<f64>],
        names: &[String],
        lambda: f64,
        max_rounds: usize,
        tol: f64,
    ) -> Result<(ImputerModel, Vec<Vec<f64>>)> {
        let n = matrix.len();
        let m = names.len();
        let mut means = vec![0.0; m];
        let mut missing: Vec<Vec<usize>> = vec![Vec::new(); m];
        for j in 0..m {
            let mut sum = 0.0;
            let mut count = 0usize;
            for (i, row) in matrix.iter().enumerate() {
                if row[j].is_nan() {
                    missing[j].push(i);
                } else {
                    sum += row[j];
                    count += 1;
                }
            }
            if count == 0 && n > 0 {
                return Err(Error::data(format!(
                    "feature '{}' has zero observed training cells; it should have been filtered",
                    names[j]
                )));
            }
            means[j] = if count > 0 { sum / count as f64 } else { 0.0 };
        }

        let mut completed: Vec<Vec<f64>> = matrix
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, v)| if v.is_nan() { means[j] } else { *v })
                    .collect()
            })
            .collect();

        let incomplete: Vec<usize> = (0..m).filter(|j| !missing[*j].is_empty()).collect();
        let mut regressions = Vec::new();
        if !incomplete.is_empty() && m > 1 {
            for _round in 0..max_rounds {
                let mut max_change: f64 = 0.0;
                regressions.clear();
                for &j in &incomplete {
                    let observed_rows: Vec<usize> =
                        (0..n).filter(|i| !matrix[*i][j].is_nan()).collect();
                    let predictors: Vec<Vec<f64>> = observed_rows
                        .iter()
                        .map(|&i| other_columns(&completed[i], j))
                        .collect();
                    let targets: Vec<f64> = observed_rows.iter().map(|&i| completed[i][j]).collect();
                    let (intercept, coefs) = ridge_fit(&predictors, &targets, lambda)?;
                    for &i in &missing[j] {
                        let z = other_columns(&completed[i], j);
                        let pred = intercept + dot(&coefs, &z);
                        max_change = max_change.max((pred - completed[i][j]).abs());
                        completed[i][j] = pred;
                    }
                    regressions.push(ColumnRegression { col: j, intercept, coefs });
                }
                if max_change < tol {
                    break;
                }
            }
        }

        Ok((ImputerModel { means, regressions }, completed))
    }

    /// Completes one row in a single pass: mean-initialize missing cells,
    /// then apply the fitted regressions in order. Observed cells are
    /// untouched; columns that were complete at fit time fall back to the
    /// training mean.
    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        let was_missing: Vec<bool> = row.iter().map(|v| v.is_nan()).collect();
        let mut out: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(j, v)| if v.is_nan() { self.means[j] } else { *v })
            .collect();
        for reg in &self.regressions {
            if was_missing[reg.col] {
                let z = other_columns(&out, reg.col);
                out[reg.col] = reg.intercept + dot(&reg.coefs, &z);
            }
        }
        out
    }
}

fn other_columns(row: &[f64], skip: usize) -> Vec<f64> {
    row.iter()
        .enumerate()
        .filter(|(j, _)| *j != skip)
        .map(|(_, v)| *v)
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mode of the non-missing cells; ties break toward the lexicographically
/// smaller value. Errors when every cell is missing.
pub fn categorical_mode(cells: &[Option<String>], name: &str) -> Result<String> {
    let mut counts: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    for c in cells.iter().flatten() {
        *counts.entry(c.as_str()).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
        .map(|(v, _)| v.to_string())
        .ok_or_else(|| Error::data(format!("categorical '{name}' has no observed training cells")))
}

/// One-hot encodes a cell against a training category list; unseen values
/// yield the all-zeros vector.
pub fn onehot(value: &str, categories: &[String]) -> Vec<f64> {
    categories
        .iter()
        .map(|c| if c == value { 1.0 } else { 0.0 })
        .collect()
}

/// SMOTE output: original rows (order preserved) followed by synthetic rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoteOutput {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub n_synthetic: usize,
}

/// Synthetic minority oversampling: generates `majority − minority` rows of
/// the minority class, each on the segment between a minority row and one of
/// its k nearest minority neighbors (Euclidean), until classes balance 1:1.
/// Deterministic given the seed; k is truncated to `minority − 1` if needed.
pub fn smote(rows: &[Vec<f64>], labels: &[bool], k: usize, seed: u64) -> Result<SmoteOutput> {
    if rows.len() != labels.len() {
        return Err(Error::shape("smote: rows and labels differ in length"));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == neg {
        return Ok(SmoteOutput { rows: rows.to_vec(), labels: labels.to_vec(), n_synthetic: 0 });
    }
    let minority_label = pos < neg;
    let minority: Vec<usize> = (0..rows.len()).filter(|i| labels[*i] == minority_label).collect();
    let n_min = minority.len();
    let n_maj = rows.len() - n_min;
    if n_min < 2 {
        return Err(Error::data(format!(
            "smote: minority class has {n_min} row(s); need at least 2 — review the adherence \
             threshold or the input data"
        )));
    }
    let k_eff = k.min(n_min - 1).max(1);

    // k nearest minority neighbors per minority row, ties broken by index
    let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(n_min);
    for (a, &ia) in minority.iter().enumerate() {
        let mut dists: Vec<(f64, usize)> = minority
            .iter()
            .enumerate()
            .filter(|(b, _)| *b != a)
            .map(|(b, &ib)| (sq_dist(&rows[ia], &rows[ib]), b))
            .collect();
        dists.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
        neighbors.push(dists.into_iter().take(k_eff).map(|(_, b)| b).collect());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out_rows = rows.to_vec();
    let mut out_labels = labels.to_vec();
    let n_synthetic = n_maj - n_min;
    for _ in 0..n_synthetic {
        let a = rng.random_range(0..n_min);
        let b = neighbors[a][rng.random_range(0..neighbors[a].len())];
        let u: f64 = rng.random();
        let xa = &rows[minority[a]];
        let xb = &rows[minority[b]];
        let synth: Vec<f64> = xa.iter().zip(xb).map(|(p, q)| p + u * (q - p)).collect();
        out_rows.push(synth);
        out_labels.push(minority_label);
    }
    Ok(SmoteOutput { rows: out_rows, labels: out_labels, n_synthetic })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Point-biserial correlation of a feature with a binary label, via Pearson
/// correlation against the 0/1 encoding. Degenerate inputs (constant feature
/// or single-class labels) score 0.
pub fn point_biserial(x: &[f64], y: &[bool]) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().filter(|b| **b).count() as f64 / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = if *yi { 1.0 } else { 0.0 } - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Ranks features by |point-biserial correlation| with the label and keeps
/// the top k; ties break by feature name.
pub fn select_features(
    rows: &[Vec<f64>],
    labels: &[bool],
    names: &[String],
    top_k: usize,
) -> Vec<String> {
    let mut scored: Vec<(f64, &String)> = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            (point_biserial(&col, labels).abs(), name)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    scored.into_iter().take(top_k).map(|(_, n)| n.clone()).collect()
}

/// Lag expansion: if a dynamic channel is selected at any lag, include it at
/// every lag; static selections pass through. The result is in canonical
/// order — dynamic lag-major over `channel_order`, then statics in
/// `static_order`.
pub fn expand_lags(
    selected: &[String],
    lags: usize,
    channel_order: &[String],
    static_order: &[String],
) -> Vec<String> {
    let mut wanted_channels: Vec<&String> = Vec::new();
    let mut wanted_static: Vec<&String> = Vec::new();
    for name in selected {
        match FeatureNameMap::parse_dynamic_name(name) {
            Some((lag, ch)) if lag >= 1 && lag <= lags && channel_order.iter().any(|c| c == ch) => {
                if let Some(c) = channel_order.iter().find(|c| c.as_str() == ch) {
                    if !wanted_channels.contains(&c) {
                        wanted_channels.push(c);
                    }
                }
            }
            _ => {
                if !wanted_static.contains(&name) {
                    wanted_static.push(name);
                }
            }
        }
    }
    let mut channels: Vec<&String> =
        channel_order.iter().filter(|c| wanted_channels.contains(c)).collect();
    let statics: Vec<&String> =
        static_order.iter().filter(|s| wanted_static.contains(s)).collect();

    let mut out = Vec::new();
    for lag in 1..=lags {
        for ch in channels.iter_mut() {
            out.push(format!("t-{lag} {ch}"));
        }
    }
    out.extend(statics.into_iter().cloned());
    out
}

/// Cronbach's alpha over an items matrix (rows = respondents, columns =
/// items), with sample (n−1) variances.
pub fn cronbach_alpha(rows: &[Vec<f64>]) -> Result<f64> {
    let n = rows.len();
    let k = rows.first().map_or(0, |r| r.len());
    if k < 2 {
        return Err(Error::data(format!(
            "cronbach_alpha needs at least 2 items, got {k}"
        )));
    }
    if n < 2 {
        return Err(Error::data("cronbach_alpha needs at least 2 respondents"));
    }
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::shape("cronbach_alpha: ragged item matrix"));
    }
    let sample_var = |values: &[f64]| {
        let m = values.iter().sum::<f64>() / values.len() as f64;
        values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
    };
    let item_var_sum: f64 = (0..k)
        .map(|j| sample_var(&rows.iter().map(|r| r[j]).collect::<Vec<f64>>()))
        .sum();
    let totals: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
    let total_var = sample_var(&totals);
    if total_var <= 0.0 {
        return Err(Error::data("cronbach_alpha: zero variance of item sums"));
    }
    Ok(k as f64 / (k as f64 - 1.0) * (1.0 - item_var_sum / total_var))
}

impl PreprocessPlan {
    /// Fits the full plan on the training rows of `set` (indices into
    /// `set.samples`). The selection stage runs on the SMOTE-rebalanced,
    /// scaled training matrix, mirroring the training pipeline.
    pub fn fit(set: &SampleSet, train_rows: &[usize], params: &FitParams) -> Result<PreprocessPlan> {
        if train_rows.is_empty() {
            return Err(Error::data("preprocess fit: empty training set"));
        }
        let map = &set.names;
        let numeric_names: Vec<String> = {
            let mut v = map.dynamic_names();
            v.extend(map.static_numeric.iter().cloned());
            v
        };
        let categorical_names = map.static_categorical.clone();

        let full_rows: Vec<Vec<f64>> = train_rows
            .iter()
            .map(|&i| {
                let s = &set.samples[i];
                let mut r = s.dynamic.clone();
                r.extend_from_slice(&s.static_numeric);
                r
            })
            .collect();

        let n = train_rows.len();
        let mut kept_numeric = Vec::new();
        for (j, _) in numeric_names.iter().enumerate() {
            let present = full_rows.iter().filter(|r| !r[j].is_nan()).count();
            if column_available(present, n, params.availability_threshold) {
                kept_numeric.push(j);
            }
        }
        let mut kept_categorical = Vec::new();
        for (j, _) in categorical_names.iter().enumerate() {
            let present = train_rows
                .iter()
                .filter(|&&i| set.samples[i].static_categorical[j].is_some())
                .count();
            if column_available(present, n, params.availability_threshold) {
                kept_categorical.push(j);
            }
        }

        let kept_numeric_names: Vec<String> =
            kept_numeric.iter().map(|&j| numeric_names[j].clone()).collect();
        let train_numeric: Vec<Vec<f64>> = full_rows
            .iter()
            .map(|full| kept_numeric.iter().map(|&j| full[j]).collect())
            .collect();

        let (imputer, completed) = ImputerModel::fit(
            &train_numeric,
            &kept_numeric_names,
            params.ridge_lambda,
            params.impute_max_rounds,
            params.impute_tol,
        )?;

        let mut categoricals = Vec::new();
        for &j in &kept_categorical {
            let cells: Vec<Option<String>> = train_rows
                .iter()
                .map(|&i| set.samples[i].static_categorical[j].clone())
                .collect();
            let mode = categorical_mode(&cells, &categorical_names[j])?;
            let mut categories: Vec<String> =
                cells.iter().flatten().cloned().collect();
            categories.sort();
            categories.dedup();
            categoricals.push(CategoricalEncoding {
                name: categorical_names[j].clone(),
                mode,
                categories,
            });
        }

        let mut encoded_names = kept_numeric_names.clone();
        for enc in &categoricals {
            for c in &enc.categories {
                encoded_names.push(format!("{}={}", enc.name, c));
            }
        }

        let encode_row = |numeric_done: &[f64], sample_idx: usize| -> Vec<f64> {
            let mut row = numeric_done.to_vec();
            for (enc, &j) in categoricals.iter().zip(&kept_categorical) {
                let value = set.samples[sample_idx].static_categorical[j]
                    .clone()
                    .unwrap_or_else(|| enc.mode.clone());
                row.extend(onehot(&value, &enc.categories));
            }
            row
        };

        let encoded_train: Vec<Vec<f64>> = completed
            .iter()
            .zip(train_rows)
            .map(|(done, &i)| encode_row(done, i))
            .collect();

        let scaler: Vec<FeatureRange> = encoded_names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for r in &encoded_train {
                    min = min.min(r[j]);
                    max = max.max(r[j]);
                }
                FeatureRange { name: name.clone(), min, max }
            })
            .collect();

        let scaled_train: Vec<Vec<f64>> = encoded_train
            .iter()
            .map(|r| r.iter().zip(&scaler).map(|(v, s)| s.scale(*v)).collect())
            .collect();

        let train_labels: Vec<bool> = train_rows.iter().map(|&i| set.samples[i].label).collect();
        let smote_seed = derive_seed(params.seed, &[params.fold_id as u64, 0x534d]);
        let balanced = smote(&scaled_train, &train_labels, params.smote_k, smote_seed)?;

        let picked = select_features(&balanced.rows, &balanced.labels, &encoded_names, params.top_k);
        let static_order: Vec<String> = encoded_names
            .iter()
            .filter(|n| {
                !matches!(FeatureNameMap::parse_dynamic_name(n),
                    Some((lag, ch)) if lag >= 1 && lag <= map.lags
                        && map.channels.iter().any(|c| c == ch))
            })
            .cloned()
            .collect();
        let selected = expand_lags(&picked, map.lags, &map.channels, &static_order);
        let selected_idx: Vec<usize> = selected
            .iter()
            .map(|name| {
                encoded_names
                    .iter()
                    .position(|n| n == name)
                    .expect("expanded feature missing from encoded columns")
            })
            .collect();

        Ok(PreprocessPlan {
            seed: params.seed,
            fold_id: params.fold_id,
            numeric_names,
            categorical_names,
            kept_numeric,
            kept_categorical,
            categoricals,
            imputer,
            scaler,
            selected,
            selected_idx,
        })
    }

    /// Applies the fitted transform to arbitrary rows of `set` (training or
    /// held-out) with the training-derived parameters.
    pub fn transform(&self, set: &SampleSet, rows: &[usize]) -> Result<ModelMatrix> {
        let map = &set.names;
        let mut expect_numeric = map.dynamic_names();
        expect_numeric.extend(map.static_numeric.iter().cloned());
        if expect_numeric != self.numeric_names || map.static_categorical != self.categorical_names
        {
            return Err(Error::shape(
                "sample set schema differs from the one this plan was fitted on",
            ));
        }

        let mut out_rows = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        let mut subjects = Vec::with_capacity(rows.len());
        for &i in rows {
            let s = &set.samples[i];
            let mut full = s.dynamic.clone();
            full.extend_from_slice(&s.static_numeric);
            let kept: Vec<f64> = self.kept_numeric.iter().map(|&j| full[j]).collect();
            let completed = self.imputer.apply_row(&kept);

            let mut encoded = completed;
            for (enc, &j) in self.categoricals.iter().zip(&self.kept_categorical) {
                let value = s.static_categorical[j].clone().unwrap_or_else(|| enc.mode.clone());
                encoded.extend(onehot(&value, &enc.categories));
            }

            let scaled: Vec<f64> =
                encoded.iter().zip(&self.scaler).map(|(v, sc)| sc.scale(*v)).collect();
            out_rows.push(self.selected_idx.iter().map(|&j| scaled[j]).collect());
            labels.push(s.label);
            subjects.push(s.subject_id.clone());
        }
        let n = out_rows.len();
        Ok(ModelMatrix {
            feature_names: self.selected.clone(),
            rows: out_rows,
            labels,
            subjects,
            synthetic: vec![false; n],
        })
    }

    /// Derives how the selected features fold back into model inputs.
    pub fn layout(&self, map: &FeatureNameMap) -> ModelInputLayout {
        let mut channels: Vec<String> = Vec::new();
        let mut static_names: Vec<String> = Vec::new();
        for name in &self.selected {
            match FeatureNameMap::parse_dynamic_name(name) {
                Some((lag, ch))
                    if lag >= 1
                        && lag <= map.lags
                        && map.channels.iter().any(|c| c == ch) =>
                {
                    if !channels.iter().any(|c| c == ch) {
                        channels.push(ch.to_string());
                    }
                }
                _ => static_names.push(name.clone()),
            }
        }
        // canonical channel order
        let channels = map
            .channels
            .iter()
            .filter(|c| channels.contains(c))
            .cloned()
            .collect();
        ModelInputLayout { lags: map.lags, channels, static_names }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<PreprocessPlan> {
        Ok(serde_json::from_str(s)?)
    }
}
