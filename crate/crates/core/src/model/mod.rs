//! The hybrid classifier: an LSTM branch over the dynamic lag tensor and a
//! feedforward branch over the static vector, their hidden states
//! concatenated, passed through dropout and a final hidden layer to a sigmoid
//! output. Trained with explicit backpropagation through time, Adam, and
//! patience-based early stopping. A logistic-regression baseline shares the
//! same training loop.

mod net;
mod params;
mod train;

pub use net::{logit_and_input_grads, loss_and_grads, predict_probability, Dropout};
pub use params::{Mat, ModelArtifact, ModelParams, MODEL_FILE_VERSION};
pub use train::{
    classify, predict, train, train_logistic, Adam, LogisticConfig, LogisticModel, TrainSample,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and optimization settings for the hybrid model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lstm_hidden: usize,
    pub fnn_hidden: usize,
    pub final_hidden: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lstm_hidden: 16,
            fnn_hidden: 8,
            final_hidden: 8,
            dropout_rate: 0.2,
            learning_rate: 1e-2,
            batch_size: 64,
            max_epochs: 40,
            patience: 5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lstm_hidden == 0 || self.fnn_hidden == 0 || self.final_hidden == 0 {
            return Err(Error::config("hidden sizes must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Why training stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

/// Per-epoch loss trace plus the early-stopping outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Index into the loss vectors of the best validation epoch.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    /// Best validation loss reached (infinity when no epoch ran).
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss.get(self.best_epoch).copied().unwrap_or(f64::INFINITY)
    }
}

pub(crate) const PROB_CLAMP_LO: f64 = 1e-7;
pub(crate) const PROB_CLAMP_HI: f64 = 1.0 - 1e-7;

/// Mean binary cross-entropy with probabilities clamped away from 0 and 1,
/// so the loss stays finite for any finite parameters.
pub fn bce_loss(prob: f64, label: bool) -> f64 {
    let p = prob.clamp(PROB_CLAMP_LO, PROB_CLAMP_HI);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
