//! Adam optimization with seeded minibatch shuffling and patience-based
//! early stopping, for both the hybrid network and the logistic-regression
//! baseline.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};

use super::net::{loss_and_grads, predict_probability};
use super::params::ModelParams;
use super::{bce_loss, sigmoid, ModelConfig, StopReason, TrainHistory};

/// One model-ready input: the dynamic tensor flattened oldest-lag-first plus
/// the static vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub dynamic: Vec<f64>,
    pub stat: Vec<f64>,
    pub label: bool,
}

/// Adam with the usual defaults (β1 = 0.9, β2 = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, dim: usize) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grads[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grads[k] * grads[k];
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Early stopping on validation loss: an epoch improves only by a strict
/// decrease of at least `min_delta`; `patience` consecutive non-improving
/// epochs stop training.
struct EarlyStopper {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    fn new(patience: usize) -> Self {
        EarlyStopper { patience, min_delta: 1e-6, best: f64::INFINITY, best_epoch: 0, stale: 0 }
    }

    /// Returns (improved, should_stop).
    fn observe(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if self.best - val_loss >= self.min_delta {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }
}

fn check_samples(samples: &[TrainSample], channels: usize, static_dim: usize) -> Result<()> {
    for s in samples {
        if channels == 0 || s.dynamic.len() % channels != 0 || s.dynamic.is_empty() {
            return Err(Error::shape(format!(
                "sample dynamic length {} does not divide into {channels} channels",
                s.dynamic.len()
            )));
        }
        if s.stat.len() != static_dim {
            return Err(Error::shape(format!(
                "sample static length {} differs from {static_dim}",
                s.stat.len()
            )));
        }
    }
    Ok(())
}

/// Trains the hybrid model. One epoch is a full pass over seeded-shuffled
/// minibatches; validation loss (eval mode) drives early stopping; the
/// returned parameters are the snapshot from the best validation epoch.
pub fn train(
    config: &ModelConfig,
    channels: usize,
    static_dim: usize,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::data("train: empty training set"));
    }
    if val_set.is_empty() {
        return Err(Error::data("train: empty validation set; early stopping is undefined"));
    }
    check_samples(train_set, channels, static_dim)?;
    check_samples(val_set, channels, static_dim)?;

    let mut params = ModelParams::init(config, channels, static_dim, config.seed)?;
    let mut best_params = params.clone();
    let mut adam = Adam::new(config.learning_rate, params.n_params());
    let mut stopper = EarlyStopper::new(config.patience);
    let mask_len = config.lstm_hidden + config.fnn_hidden;

    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stop_reason: StopReason::MaxEpochs,
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.max_epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0xe90c, epoch as u64]));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainSample> =
                chunk.iter().map(|&i| train_set[i].clone()).collect();
            let masks: Vec<Vec<bool>> = batch
                .iter()
                .map(|_| {
                    (0..mask_len)
                        .map(|_| rng.random::<f64>() >= config.dropout_rate)
                        .collect()
                })
                .collect();
            let (loss, grads) =
                loss_and_grads(&params, &batch, config.dropout_rate, Some(&masks))?;
            epoch_loss += loss * batch.len() as f64;
            let mut flat = params.to_vec();
            adam.update(&mut flat, &grads.to_vec());
            params = params.from_vec(&flat)?;
        }
        history.train_loss.push(epoch_loss / train_set.len() as f64);

        let val_loss = mean_bce(&params, val_set)?;
        history.val_loss.push(val_loss);

        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best_params = params.clone();
        }
        if stop {
            history.stop_reason = StopReason::Patience;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    Ok((best_params, history))
}

fn mean_bce(params: &ModelParams, samples: &[TrainSample]) -> Result<f64> {
    let mut loss = 0.0;
    for s in samples {
        let p = predict_probability(params, &s.dynamic, &s.stat)?;
        loss += bce_loss(p, s.label);
    }
    Ok(loss / samples.len() as f64)
}

/// Eval-mode probabilities for a batch; pure and order-independent.
pub fn predict(params: &ModelParams, samples: &[TrainSample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| predict_probability(params, &s.dynamic, &s.stat))
        .collect()
}

/// Thresholds probabilities at 0.5; exact ties classify positive.
pub fn classify(probabilities: &[f64]) -> Vec<bool> {
    probabilities.iter().map(|p| *p >= 0.5).collect()
}

/// Logistic regression over the flattened feature vector, trained with the
/// same Adam loop and early stopping as the hybrid model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        LogisticModel { w: vec![0.0; dim], b: 0.0 }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.probability(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// L2 penalty weight on the coefficients (bias unpenalized).
    pub l2: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            learning_rate: 1e-2,
            batch_size: 64,
            max_epochs: 60,
            patience: 5,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// Trains the baseline; `max_epochs = 0` returns the zero-initialized model
/// (all predictions 0.5).
pub fn train_logistic(
    config: &LogisticConfig,
    train_rows: &[Vec<f64>],
    train_labels: &[bool],
    val_rows: &[Vec<f64>],
    val_labels: &[bool],
) -> Result<(LogisticModel, TrainHistory)> {
    if train_rows.is_empty() {
        return Err(Error::data("train_logistic: empty training set"));
    }
    if val_rows.is_empty() && config.max_epochs > 0 {
        return Err(Error::data(
            "train_logistic: empty validation set; early stopping is undefined",
        ));
    }
    let dim = train_rows[0].len();
    let mut model = LogisticModel::zeros(dim);
    let mut best = model.clone();
    let mut adam = Adam::new(config.learning_rate, dim + 1);
    let mut stopper = EarlyStopper::new(config.patience);
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stop_reason: StopReason::MaxEpochs,
    };

    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    for epoch in 0..config.max_epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x1091, epoch as u64]));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let n = chunk.len() as f64;
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            let mut loss = 0.0;
            for &i in chunk {
                let p = model.probability(&train_rows[i]);
                let y = if train_labels[i] { 1.0 } else { 0.0 };
                loss += bce_loss(p, train_labels[i]);
                let d = (p.clamp(super::PROB_CLAMP_LO, super::PROB_CLAMP_HI) - y) / n;
                for (g, x) in gw.iter_mut().zip(&train_rows[i]) {
                    *g += d * x;
                }
                gb += d;
            }
            loss /= n;
            // L2 on the coefficients only
            loss += config.l2 * model.w.iter().map(|w| w * w).sum::<f64>();
            for (g, w) in gw.iter_mut().zip(&model.w) {
                *g += 2.0 * config.l2 * w;
            }
            epoch_loss += loss * n;

            let mut flat = model.w.clone();
            flat.push(model.b);
            let mut grads = gw;
            grads.push(gb);
            adam.update(&mut flat, &grads);
            model.b = flat.pop().unwrap();
            model.w = flat;
        }
        history.train_loss.push(epoch_loss / train_rows.len() as f64);

        let val_loss = val_rows
            .iter()
            .zip(val_labels)
            .map(|(r, y)| bce_loss(model.probability(r), *y))
            .sum::<f64>()
            / val_rows.len() as f64;
        history.val_loss.push(val_loss);

        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best = model.clone();
        }
        if stop {
            history.stop_reason = StopReason::Patience;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A small linearly separable task: label = (last-step channel 0 > 0.5).
    fn separable_data(n: usize, seed: u64) -> Vec<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let label = rng.random::<f64>() < 0.5;
                let mut dynamic = vec![0.0; 3 * 2];
                for v in dynamic.iter_mut() {
                    *v = rng.random_range(0.0..0.2);
                }
                dynamic[4] = if label { 1.0 } else { 0.0 }; // last step, channel 0
                TrainSample { dynamic, stat: vec![rng.random_range(0.0..1.0)], label }
            })
            .collect()
    }

    #[test]
    fn learns_a_separable_toy_set() {
        let data = separable_data(120, 4);
        let (train_half, val_half) = data.split_at(90);
        let config = ModelConfig {
            lstm_hidden: 6,
            fnn_hidden: 3,
            final_hidden: 4,
            dropout_rate: 0.0,
            learning_rate: 0.02,
            batch_size: 16,
            max_epochs: 200,
            patience: 25,
            seed: 5,
        };
        let (params, history) = train(&config, 2, 1, train_half, val_half).unwrap();
        let probs = predict(&params, &data).unwrap();
        let preds = classify(&probs);
        let correct = preds
            .iter()
            .zip(&data)
            .filter(|(p, s)| **p == s.label)
            .count();
        assert_eq!(correct, data.len(), "separable data should reach 100% accuracy");
        assert!(
            history.train_loss.last().unwrap() < &history.train_loss[0],
            "training loss decreases overall"
        );
    }

    #[test]
    fn plateau_stops_on_patience() {
        // a learning rate this small cannot move the validation loss by the
        // 1e-6 improvement threshold, so the curve plateaus immediately
        let data: Vec<TrainSample> = (0..40)
            .map(|i| TrainSample {
                dynamic: vec![(i % 2) as f64; 4],
                stat: vec![],
                label: i % 3 == 0,
            })
            .collect();
        let config = ModelConfig {
            lstm_hidden: 2,
            fnn_hidden: 2,
            final_hidden: 2,
            dropout_rate: 0.0,
            learning_rate: 1e-12,
            batch_size: 8,
            max_epochs: 500,
            patience: 5,
            seed: 1,
        };
        let (_, history) = train(&config, 2, 0, &data[..30], &data[30..]).unwrap();
        assert_eq!(history.stop_reason, StopReason::Patience);
        assert_eq!(history.val_loss.len(), 6, "first epoch improves from ∞, then 5 stale");
        assert!(history.best_epoch < history.val_loss.len());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = separable_data(60, 8);
        let config = ModelConfig {
            lstm_hidden: 4,
            fnn_hidden: 3,
            final_hidden: 3,
            dropout_rate: 0.3,
            learning_rate: 0.01,
            batch_size: 16,
            max_epochs: 12,
            patience: 5,
            seed: 33,
        };
        let (p1, h1) = train(&config, 2, 1, &data[..45], &data[45..]).unwrap();
        let (p2, h2) = train(&config, 2, 1, &data[..45], &data[45..]).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn empty_validation_set_is_an_error() {
        let data = separable_data(10, 1);
        let config = ModelConfig::default();
        assert!(train(&config, 2, 1, &data, &[]).is_err());
    }

    #[test]
    fn eval_predictions_are_order_invariant_and_repeatable() {
        let data = separable_data(20, 2);
        let params = ModelParams::init(
            &ModelConfig { lstm_hidden: 4, fnn_hidden: 3, final_hidden: 3, ..ModelConfig::default() },
            2,
            1,
            7,
        )
        .unwrap();
        let probs = predict(&params, &data).unwrap();
        assert!(probs.iter().all(|p| *p > 0.0 && *p < 1.0));
        let again = predict(&params, &data).unwrap();
        assert_eq!(probs, again);
        let mut reversed: Vec<TrainSample> = data.clone();
        reversed.reverse();
        let rev_probs = predict(&params, &reversed).unwrap();
        let mut back = rev_probs.clone();
        back.reverse();
        assert_eq!(probs, back);
    }

    #[test]
    fn logistic_zero_epochs_predicts_half() {
        let rows = vec![vec![1.0, 2.0], vec![0.5, 0.1]];
        let labels = vec![true, false];
        let config = LogisticConfig { max_epochs: 0, ..LogisticConfig::default() };
        let (model, history) = train_logistic(&config, &rows, &labels, &[], &[]).unwrap();
        assert!(history.train_loss.is_empty());
        for p in model.predict(&rows) {
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn logistic_learns_a_label_copy_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..200 {
            let label = rng.random::<f64>() < 0.5;
            rows.push(vec![if label { 1.0 } else { 0.0 }, rng.random::<f64>()]);
            labels.push(label);
        }
        let config = LogisticConfig {
            learning_rate: 0.05,
            max_epochs: 300,
            patience: 30,
            ..LogisticConfig::default()
        };
        let (model, _) =
            train_logistic(&config, &rows[..150], &labels[..150], &rows[150..], &labels[150..])
                .unwrap();
        assert!(model.w[0] > 2.0, "weight on the copy feature grows large: {}", model.w[0]);
        let preds = classify(&model.predict(&rows));
        assert_eq!(
            preds.iter().zip(&labels).filter(|(p, y)| p == y).count(),
            labels.len()
        );
    }

    /// Newton/IRLS oracle on the identical ridge-penalized objective.
    fn irls(rows: &[Vec<f64>], labels: &[bool], l2: f64, iters: usize) -> (Vec<f64>, f64) {
        let n = rows.len();
        let dim = rows[0].len() + 1; // bias last
        let mut beta = vec![0.0; dim];
        for _ in 0..iters {
            // gradient and Hessian of mean BCE + l2·Σw²
            let mut grad = vec![0.0; dim];
            let mut hess = vec![vec![0.0; dim]; dim];
            for (row, y) in rows.iter().zip(labels) {
                let mut x = row.clone();
                x.push(1.0);
                let z: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
                let p = sigmoid(z);
                let w = p * (1.0 - p);
                let resid = p - if *y { 1.0 } else { 0.0 };
                for i in 0..dim {
                    grad[i] += resid * x[i] / n as f64;
                    for j in 0..dim {
                        hess[i][j] += w * x[i] * x[j] / n as f64;
                    }
                }
            }
            for i in 0..dim - 1 {
                grad[i] += 2.0 * l2 * beta[i];
                hess[i][i] += 2.0 * l2;
            }
            // solve hess · delta = grad
            let mut a = hess;
            let mut b = grad;
            for col in 0..dim {
                let piv = (col..dim).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
                a.swap(col, piv);
                b.swap(col, piv);
                for r in col + 1..dim {
                    let f = a[r][col] / a[col][col];
                    for k in col..dim {
                        a[r][k] -= f * a[col][k];
                    }
                    b[r] -= f * b[col];
                }
            }
            let mut delta = vec![0.0; dim];
            for col in (0..dim).rev() {
                let mut s = b[col];
                for k in col + 1..dim {
                    s -= a[col][k] * delta[k];
                }
                delta[col] = s / a[col][col];
            }
            for i in 0..dim {
                beta[i] -= delta[i];
            }
        }
        let b = beta.pop().unwrap();
        (beta, b)
    }

    #[test]
    fn logistic_matches_irls_on_two_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..240 {
            let x0: f64 = rng.random_range(-1.0..1.0);
            let x1: f64 = rng.random_range(-1.0..1.0);
            let p = sigmoid(1.2 * x0 - 0.7 * x1 + 0.3);
            let label = rng.random::<f64>() < p;
            rows.push(vec![x0, x1]);
            labels.push(label);
        }
        let (w_irls, b_irls) = irls(&rows, &labels, 1e-4, 60);

        let config = LogisticConfig {
            learning_rate: 1e-3,
            batch_size: 240, // full-batch, small steps: Adam settles tightly
            max_epochs: 30_000,
            patience: 30_000,
            l2: 1e-4,
            seed: 3,
        };
        let (model, _) = train_logistic(&config, &rows, &labels, &rows, &labels).unwrap();
        assert!((model.w[0] - w_irls[0]).abs() < 1e-3, "{} vs {}", model.w[0], w_irls[0]);
        assert!((model.w[1] - w_irls[1]).abs() < 1e-3, "{} vs {}", model.w[1], w_irls[1]);
        assert!((model.b - b_irls).abs() < 1e-3, "{} vs {}", model.b, b_irls);
    }
}
