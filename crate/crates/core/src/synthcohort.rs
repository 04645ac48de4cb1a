//! Synthetic cohort generation with planted behavioral structure: habit
//! carryover, weekend dips, preferred dosing epochs, and symptom effects.
//! The generator exists to validate the pipeline end to end — the planted
//! effects are recoverable by the labeler, the models, and the attribution
//! stage — not to simulate patients.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::ingest::{DoseEvent, Epoch, SubjectId, SurveyData, SurveyWave, Wave};

/// Numeric scale columns emitted into the survey file, in column order.
pub const SCALE_COLUMNS: [&str; 9] = [
    "psup",
    "decreg",
    "mases_med_taking",
    "bcpt_weight",
    "bcpt_vas",
    "bcpt_musske",
    "bcpt_gas",
    "bcpt_cog",
    "mdasi_interference",
];

/// The categorical intervention-arm column.
pub const GROUP_COLUMN: &str = "group";

/// Cohort-level generation parameters. Per-subject latents (base adherence,
/// carryover, weekend penalty, preferred epoch, burden, arm) are drawn from
/// these around the planted effect sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub n_days: usize,
    pub start_date: NaiveDate,
    /// Uniform range for the per-subject baseline adherence probability.
    pub base_adherence: (f64, f64),
    /// Logit boost applied when the previous day's dose was taken.
    pub carryover: f64,
    /// Logit penalty applied on Saturdays and Sundays.
    pub weekend_penalty: f64,
    /// Logit penalty per unit of symptom burden (burden is U(0,1)).
    pub symptom_weight: f64,
    /// Logit boost for the patient-navigation arm.
    pub navigation_boost: f64,
    /// Standard deviation of the dose-hour jitter around the preferred hour.
    pub hour_jitter_sd: f64,
    /// Per-day probability of an extra off-schedule bottle opening.
    pub extra_opening_rate: f64,
    /// Per-cell probability that a survey score is missing.
    pub survey_missing_rate: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_subjects: 32,
            n_days: 240,
            start_date: NaiveDate::from_ymd_opt(2021, 1, 4).unwrap(),
            base_adherence: (0.60, 0.92),
            carryover: 1.2,
            weekend_penalty: 0.9,
            symptom_weight: 1.0,
            navigation_boost: 0.3,
            hour_jitter_sd: 0.6,
            extra_opening_rate: 0.02,
            survey_missing_rate: 0.08,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::config("n_subjects must be at least 1"));
        }
        if self.n_days < 60 {
            return Err(Error::config(
                "n_days must be at least 60 (burn-in plus a modeling window)",
            ));
        }
        let (lo, hi) = self.base_adherence;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::config(format!(
                "base_adherence range [{lo}, {hi}] is not a probability range"
            )));
        }
        for (name, v) in [
            ("extra_opening_rate", self.extra_opening_rate),
            ("survey_missing_rate", self.survey_missing_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} = {v} is not a probability")));
            }
        }
        if self.hour_jitter_sd < 0.0 || !self.hour_jitter_sd.is_finite() {
            return Err(Error::config("hour_jitter_sd must be a finite non-negative number"));
        }
        for (name, v) in [
            ("carryover", self.carryover),
            ("weekend_penalty", self.weekend_penalty),
            ("symptom_weight", self.symptom_weight),
            ("navigation_boost", self.navigation_boost),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Realized per-subject latent parameters, dumped so the Bayes-optimal
/// predictor is computable from the ground truth alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub subject_id: SubjectId,
    pub base_adherence: f64,
    pub carryover: f64,
    pub weekend_penalty: f64,
    pub symptom_burden: f64,
    pub preferred_epoch: Epoch,
    pub preferred_hour: f64,
    pub hour_jitter_sd: f64,
    pub navigation_arm: bool,
    pub survey_missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub spec: CohortSpec,
    pub subjects: Vec<SubjectTruth>,
}

/// A generated cohort: raw events, survey waves, and the latent truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub events: Vec<DoseEvent>,
    pub surveys: SurveyData,
    pub truth: GroundTruth,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn minute_precision(date: NaiveDate, hour: f64) -> NaiveDateTime {
    let total = (hour * 60.0).round().clamp(0.0, 1439.0) as u32;
    date.and_hms_opt(total / 60, total % 60, 0).unwrap()
}

fn draw_epoch(rng: &mut ChaCha8Rng) -> (Epoch, f64) {
    // evening-heavy routine mix with a center hour per epoch
    let r: f64 = rng.random();
    let (epoch, center) = if r < 0.35 {
        (Epoch::Morning, 8.5)
    } else if r < 0.45 {
        (Epoch::Afternoon, 14.5)
    } else if r < 0.95 {
        (Epoch::Evening, 21.0)
    } else {
        (Epoch::Night, 2.5)
    };
    let hour = center + rng.random_range(-1.5..1.5);
    (epoch, hour)
}

/// Per-(scale, wave) score: an intercept plus a burden slope plus noise, so
/// symptom scales track the planted burden.
fn scale_score(scale: &str, wave: Wave, burden: f64, noise: f64) -> f64 {
    let (base, slope) = match scale {
        "psup" => (3.0, 0.4),
        "decreg" => (2.0, 0.8),
        "mases_med_taking" => (2.5, 1.0),
        "bcpt_weight" | "bcpt_vas" | "mdasi_interference" => (1.0, 2.5),
        "bcpt_musske" | "bcpt_gas" | "bcpt_cog" => (1.2, 1.8),
        _ => (1.0, 1.0),
    };
    let drift = match wave {
        Wave::Month0 => 0.0,
        Wave::Month4 => 0.15,
        Wave::Month8 => 0.25,
    };
    base + slope * burden + drift + noise
}

/// Generates the cohort. Fully deterministic given the seed: subjects get
/// derived seeds, so per-subject streams are independent of cohort size
/// ordering.
pub fn generate(spec: &CohortSpec, seed: u64) -> Result<Cohort> {
    spec.validate()?;
    let mut subjects = Vec::with_capacity(spec.n_subjects);
    let mut events = Vec::new();
    let mut waves = Vec::new();

    for idx in 0..spec.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[idx as u64]));
        let subject_id = SubjectId::new(format!("S{:03}", idx + 1));
        let (lo, hi) = spec.base_adherence;
        let base = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let carryover = spec.carryover * rng.random_range(0.75..1.25);
        let weekend_penalty = spec.weekend_penalty * rng.random_range(0.75..1.25);
        let burden: f64 = rng.random();
        let (preferred_epoch, preferred_hour) = draw_epoch(&mut rng);
        let navigation_arm = idx % 2 == 0;
        let jitter = Normal::new(0.0, spec.hour_jitter_sd.max(1e-12)).unwrap();

        let truth = SubjectTruth {
            subject_id: subject_id.clone(),
            base_adherence: base,
            carryover,
            weekend_penalty,
            symptom_burden: burden,
            preferred_epoch,
            preferred_hour,
            hour_jitter_sd: spec.hour_jitter_sd,
            navigation_arm,
            survey_missing_rate: spec.survey_missing_rate,
        };

        let mut yesterday = false;
        for day in 0..spec.n_days {
            let date = spec.start_date + Duration::days(day as i64);
            let weekend = crate::ingest::is_weekend(date);
            let z = logit(base.clamp(1e-12, 1.0 - 1e-12))
                + carryover * f64::from(yesterday)
                - weekend_penalty * f64::from(weekend)
                - spec.symptom_weight * burden
                + spec.navigation_boost * f64::from(navigation_arm);
            let p = if base >= 1.0 {
                1.0
            } else if base <= 0.0 {
                0.0
            } else {
                sigmoid(z)
            };
            let taken = rng.random::<f64>() < p;
            if taken {
                let hour = if spec.hour_jitter_sd > 0.0 {
                    preferred_hour + jitter.sample(&mut rng)
                } else {
                    preferred_hour
                };
                events.push(DoseEvent {
                    subject_id: subject_id.clone(),
                    timestamp: minute_precision(date, hour.clamp(0.0, 23.98)),
                });
            }
            if rng.random::<f64>() < spec.extra_opening_rate {
                let hour: f64 = rng.random_range(0.0..24.0);
                events.push(DoseEvent {
                    subject_id: subject_id.clone(),
                    timestamp: minute_precision(date, hour),
                });
            }
            yesterday = taken;
        }

        for wave in Wave::ALL {
            let mut scores = std::collections::BTreeMap::new();
            for scale in SCALE_COLUMNS {
                let noise: f64 = rng.random_range(-0.3..0.3);
                let missing = rng.random::<f64>() < spec.survey_missing_rate;
                if !missing {
                    scores.insert(scale.to_string(), scale_score(scale, wave, burden, noise));
                }
            }
            let mut categoricals = std::collections::BTreeMap::new();
            categoricals.insert(
                GROUP_COLUMN.to_string(),
                if navigation_arm { "PN" } else { "UC" }.to_string(),
            );
            waves.push(SurveyWave { subject_id: subject_id.clone(), wave, scores, categoricals });
        }

        subjects.push(truth);
    }

    events.sort_by(|a, b| (&a.subject_id, a.timestamp).cmp(&(&b.subject_id, b.timestamp)));
    events.dedup();

    Ok(Cohort {
        events,
        surveys: SurveyData {
            numeric_columns: SCALE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            categorical_columns: vec![GROUP_COLUMN.to_string()],
            waves,
        },
        truth: GroundTruth { seed, spec: spec.clone(), subjects },
    })
}
