//! Run configuration: a JSON config file whose values sit between built-in
//! defaults and command-line flag overrides. The seed additionally falls
//! back to the `ADHERE_ML_SEED` environment variable.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

/// Optional file-level settings; every field can be overridden by a flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub events: Option<PathBuf>,
    pub surveys: Option<PathBuf>,
    pub task: Option<String>,
    pub burn_in_days: Option<u32>,
    pub interval_window: Option<[f64; 2]>,
    pub weekly_threshold: Option<f64>,
    pub daily_lags: Option<usize>,
    pub weekly_lags: Option<usize>,
    pub availability_threshold: Option<f64>,
    pub top_k: Option<usize>,
    pub smote_k: Option<usize>,
    pub k: Option<usize>,
    pub grid: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("missing input artifact: {}", path.display()))?;
        let cfg: FileConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))?;
        Ok(cfg)
    }
}

pub const SEED_ENV_VAR: &str = "ADHERE_ML_SEED";

/// flag > config file > ADHERE_ML_SEED > 0.
pub fn resolve_seed(flag: Option<u64>, config: &FileConfig) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = config.seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV_VAR) {
        Ok(raw) => match raw.parse::<u64>() {
            Ok(s) => Ok(s),
            Err(_) => bail!("{SEED_ENV_VAR}='{raw}' is not an unsigned integer seed"),
        },
        Err(_) => Ok(0),
    }
}

pub fn resolve<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
