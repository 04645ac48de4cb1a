//! Multi-scale (daily and weekly) medication-adherence modeling from smart
//! pill-bottle event streams and survey waves.
//!
//! The crate is organized as a pipeline:
//!
//! * [`ingest`] — parse MEMS event and survey CSVs, apply the burn-in
//!   exclusion, derive daily and weekly adherence labels.
//! * [`features`] — build model-ready samples: lagged dynamic tensors plus
//!   carried-forward static survey vectors.
//! * [`preprocess`] — train-set-fitted preprocessing: availability filtering,
//!   iterative imputation, one-hot encoding, min-max scaling, SMOTE
//!   rebalancing, and correlation-filter feature selection with lag
//!   expansion.
//! * [`model`] — the hybrid classifier: an LSTM branch over the dynamic
//!   tensor fused with a feedforward branch over the static vector, trained
//!   with explicit backpropagation, Adam, and patience-based early stopping;
//!   plus a logistic-regression baseline.
//! * [`explain`] — integrated/expected gradients attribution on the model
//!   logit, with ranked importance summaries.
//! * [`harness`] — nested subject-level k-fold cross-validation with grid
//!   search, metric computation, and mean±std reporting.
//! * [`synthcohort`] — a synthetic cohort generator with planted behavioral
//!   structure used to validate the full pipeline.
//! * [`storage`] — the on-disk CSV/JSON artifact formats exchanged between
//!   pipeline stages.

pub mod error;
pub mod explain;
pub mod features;
pub mod harness;
pub mod ingest;
pub mod model;
pub mod preprocess;
pub mod storage;
pub mod synthcohort;

pub use error::{Error, Result};

/// A deterministic size-`take` subsample of `0..n`, in ascending order.
pub fn seeded_subsample(n: usize, take: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut indices: Vec<usize> = (0..n).collect();
    if take >= n {
        return indices;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(take);
    indices.sort_unstable();
    indices
}

/// Mixes a master seed with per-unit indices so independent work units
/// (folds, grid points, subjects) get decorrelated, reproducible seeds.
pub fn derive_seed(master: u64, salt: &[u64]) -> u64 {
    let mut h = master ^ 0x9e37_79b9_7f4a_7c15;
    for &s in salt {
        h ^= s.wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 27;
    }
    h.wrapping_mul(0x94d0_49bb_1331_11eb) ^ (h >> 31)
}
