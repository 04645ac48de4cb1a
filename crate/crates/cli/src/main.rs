//! `adhere` — end-to-end pipeline driver for multi-scale medication
//! adherence modeling on MEMS event streams and survey waves.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/processing error.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use adhere_core::features::Task;
use adhere_core::ingest::IntervalWindow;
use adhere_core::model::ModelConfig;
use adhere_core::synthcohort::CohortSpec;

use config::{resolve, resolve_seed, FileConfig};

#[derive(Parser)]
#[command(
    name = "adhere",
    version,
    about = "Multi-scale medication-adherence pipeline: simulate, label, featurize, evaluate, train, explain",
    after_help = "Stages hand data off through files in --out-dir; run them in order:\n  \
                  simulate → label → featurize → evaluate | train-final → explain → report\n\
                  A JSON config file (--config) supplies defaults; flags override it;\n\
                  ADHERE_ML_SEED is the seed fallback."
)]
struct Cli {
    /// JSON config file; command-line flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Directory for stage artifacts
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Master seed (fallback: config file, then ADHERE_ML_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort: events.csv, surveys.csv, ground_truth.json
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of subjects
        #[arg(long, default_value_t = 32)]
        subjects: usize,
        /// Days of follow-up per subject
        #[arg(long, default_value_t = 240)]
        days: usize,
        /// Planted habit carryover (logit boost after a taken dose)
        #[arg(long, default_value_t = 1.2)]
        carryover: f64,
        /// Planted weekend penalty (logit)
        #[arg(long, default_value_t = 0.9)]
        weekend_penalty: f64,
        /// Lower bound of the per-subject baseline adherence probability
        #[arg(long, default_value_t = 0.60)]
        base_lo: f64,
        /// Upper bound of the per-subject baseline adherence probability
        #[arg(long, default_value_t = 0.92)]
        base_hi: f64,
        /// Dose-hour jitter standard deviation (hours)
        #[arg(long, default_value_t = 0.6)]
        jitter_sd: f64,
        /// Per-day probability of an extra off-schedule opening
        #[arg(long, default_value_t = 0.02)]
        extra_rate: f64,
        /// Per-cell survey missingness probability
        #[arg(long, default_value_t = 0.08)]
        missing_rate: f64,
    },
    /// Derive daily and weekly adherence labels from the events file
    Label {
        #[command(flatten)]
        common: CommonArgs,
        /// Events CSV (default: <out-dir>/events.csv)
        #[arg(long, value_name = "FILE")]
        events: Option<PathBuf>,
        /// Burn-in days excluded from each subject's record
        #[arg(long)]
        burn_in: Option<u32>,
        /// Lower inter-dose interval bound (hours)
        #[arg(long)]
        window_lo: Option<f64>,
        /// Upper inter-dose interval bound (hours)
        #[arg(long)]
        window_hi: Option<f64>,
        /// Weekly adherence threshold (strict)
        #[arg(long)]
        weekly_threshold: Option<f64>,
    },
    /// Build model-ready daily and weekly samples from labels and surveys
    Featurize {
        #[command(flatten)]
        common: CommonArgs,
        /// Surveys CSV (default: <out-dir>/surveys.csv)
        #[arg(long, value_name = "FILE")]
        surveys: Option<PathBuf>,
        /// Daily lag count
        #[arg(long)]
        daily_lags: Option<usize>,
        /// Weekly lag count
        #[arg(long)]
        weekly_lags: Option<usize>,
    },
    /// Nested subject-level cross-validation with grid search
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Prediction task
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        /// Outer fold count
        #[arg(long)]
        k: Option<usize>,
        /// Hyperparameter grid JSON (axes → Cartesian product)
        #[arg(long, value_name = "FILE")]
        grid: Option<PathBuf>,
        /// Output directory for report.csv / report.json
        #[arg(long, value_name = "DIR")]
        report_dir: Option<PathBuf>,
        /// Feature availability threshold
        #[arg(long)]
        availability: Option<f64>,
        /// Features kept by the correlation filter before lag expansion
        #[arg(long)]
        top_k: Option<usize>,
        /// SMOTE neighbor count
        #[arg(long)]
        smote_k: Option<usize>,
    },
    /// Train one final model on all samples and persist it
    TrainFinal {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        #[arg(long, default_value_t = 16)]
        lstm_hidden: usize,
        #[arg(long, default_value_t = 8)]
        fnn_hidden: usize,
        #[arg(long, default_value_t = 8)]
        final_hidden: usize,
        #[arg(long, default_value_t = 0.2)]
        dropout: f64,
        #[arg(long, default_value_t = 1e-2)]
        learning_rate: f64,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 40)]
        max_epochs: usize,
        #[arg(long, default_value_t = 5)]
        patience: usize,
        #[arg(long)]
        availability: Option<f64>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        smote_k: Option<usize>,
    },
    /// Gradient-based feature attribution for the trained model
    Explain {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        /// Baseline draws per attributed sample
        #[arg(long, default_value_t = 32)]
        n_baselines: usize,
        /// Optional input-noise smoothing σ (off when omitted)
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Cap on attributed samples (0 = all)
        #[arg(long, default_value_t = 0)]
        max_samples: usize,
        /// Features shown in the ranked chart
        #[arg(long, default_value_t = 20)]
        top_k: usize,
    },
    /// Combine evaluation and attribution outputs into summary.txt
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Features listed per task
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::parse(s).ok_or_else(|| format!("unknown task '{s}' (expected 'daily' or 'weekly')"))
}

fn resolve_task(flag: Option<Task>, file: &FileConfig) -> Result<Task> {
    if let Some(t) = flag {
        return Ok(t);
    }
    if let Some(raw) = &file.task {
        return parse_task(raw).map_err(anyhow::Error::msg);
    }
    anyhow::bail!("--task is required (daily or weekly)")
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let out_dir_default = PathBuf::from("out");

    match cli.command {
        Command::Simulate {
            common,
            subjects,
            days,
            carryover,
            weekend_penalty,
            base_lo,
            base_hi,
            jitter_sd,
            extra_rate,
            missing_rate,
        } => {
            let out_dir = resolve(common.out_dir, file.out_dir.clone(), out_dir_default);
            let seed = resolve_seed(common.seed, &file)?;
            let spec = CohortSpec {
                n_subjects: subjects,
                n_days: days,
                carryover,
                weekend_penalty,
                base_adherence: (base_lo, base_hi),
                hour_jitter_sd: jitter_sd,
                extra_opening_rate: extra_rate,
                survey_missing_rate: missing_rate,
                ..CohortSpec::default()
            };
            stages::simulate(&stages::SimulateParams { out_dir, seed, spec })
        }
        Command::Label { common, events, burn_in, window_lo, window_hi, weekly_threshold } => {
            let out_dir = resolve(common.out_dir, file.out_dir.clone(), out_dir_default);
            let events = resolve(
                events,
                file.events.clone(),
                stages::events_path(&out_dir),
            );
            let window = IntervalWindow::new(
                resolve(window_lo, file.interval_window.map(|w| w[0]), 18.0),
                resolve(window_hi, file.interval_window.map(|w| w[1]), 30.0),
            )?;
            stages::label(&stages::LabelParams {
                events,
                out_dir,
                burn_in_days: resolve(burn_in, file.burn_in_days, 30),
                window,
                weekly_threshold: resolve(weekly_threshold, file.weekly_threshold, 0.8),
            })
        }
        Command::Featurize { common, surveys, daily_lags, weekly_lags } => {
            let out_dir = resolve(common.out_dir, file.out_dir.clone(), out_dir_default);
            let surveys = resolve(surveys, file.surveys.clone(), stages::surveys_path(&out_dir));
            stages::featurize(&stages::FeaturizeParams {
                out_dir,
                surveys,
                daily_lags: resolve(daily_lags, file.daily_lags, 7),
                weekly_lags: resolve(weekly_lags, file.weekly_lags, 4),
            })
        }
        Command::Evaluate {
            common,
            task,
            k,
            grid,
            report_dir,
            availability,
            top_k,
            smote_k,
        } => {
            let out_dir = resolve(common.out_dir, file.out_dir.clone(), out_dir_default);
            let task = resolve_task(task, &file)?;
            let seed = resolve_seed(common.seed, &file)?;
            let report_dir = resolve(
                report_dir,
                file.report_dir.clone(),
                stages::report_dir_default(&out_dir, task),
            );
            stages::evaluate(&stages::EvaluateParams {
                out_dir,
                task,
                k: resolve(k, file.k, 5),
                seed,
                grid: grid.or(file.grid.clone()),
                report_dir,
                availability_threshold: resolve(availability, file.availability_threshold, 0.6),
                top_k: resolve(top_k, file.top_k, 40),
                smote_k: resolve(smote_k, file.smote_k, 5),
            })
        }
        Command::TrainFinal {
            common,
            task,
            lstm_hidden,
            fnn_hidden,
            final_hidden,
            dropout,
            learning_rate,
            batch_size,
            max_epochs,
            patience,
            availability,
            top_k,
            smote_k,
        } => {
            let out_dir = resolve(common.out_dir, file.out_dir.clone(), out_dir_default);
            let task = resolve_task(task, &file)?;
            let seed = resolve_seed(common.seed, &file)?;
            let config = ModelConfig {
                lstm_hidden,
                fnn_hidden,
                final_hidden,
                dropout_rate: dropout,
                learning_rate,
                batch_size,
                max_epochs,
                patience,
                seed,
            };
            stages::train_final(&stages::TrainFinalParams {
                out_dir,
                task,
                seed,
                config,
                availability_threshold: resolve(availability, file.availability_threshold, 0.6),
                top_k: resolve(top_k, file.top_k, 40),
                smote_k: resolve(smote_k, file.smote_k, 5),
            })
        }
        Command::Explain { common, task, n_baselines, noise_sigma, max_samples, top_k } => {
            let out_dir = resolve(common.out_dir, file.out_dir.clone(), out_dir_default);
            let task = resolve_task(task, &file)?;
            let seed = resolve_seed(common.seed, &file)?;
            stages::explain(&stages::ExplainParams {
                out_dir,
                task,
                seed,
                n_baselines,
                noise_sigma,
                max_samples,
                top_k,
            })
        }
        Command::Report { common, top_k } => {
            let out_dir = resolve(common.out_dir, file.out_dir.clone(), out_dir_default);
            stages::report(&stages::ReportParams { out_dir, top_k })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
