//! Model-ready sample construction: lagged dynamic tensors plus
//! carried-forward static survey vectors.
//!
//! Daily samples carry a (lags × 6) tensor with channels
//! `[is_adherent, Morning, Afternoon, Evening, Night, is_Weekend]`; weekly
//! samples carry a (lags × 10) tensor with channels
//! `[is_adherent_wk, weekend_adh_0, weekend_adh_50, weekend_adh_100,
//! Morning, Afternoon, Evening, Night, time_mean, time_std]`. Lag rows are
//! ordered t−1 … t−max. Flat feature names follow the `"t-1 is_adherent"`
//! convention.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DayLabel, SubjectId, SurveyData, Wave, WeekLabel, WeekendAdherence};

/// Prediction task granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Daily,
    Weekly,
}

impl Task {
    pub fn default_lags(&self) -> usize {
        match self {
            Task::Daily => 7,
            Task::Weekly => 4,
        }
    }

    pub fn channel_names(&self) -> &'static [&'static str] {
        match self {
            Task::Daily => &DAILY_CHANNELS,
            Task::Weekly => &WEEKLY_CHANNELS,
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "daily" => Some(Task::Daily),
            "weekly" => Some(Task::Weekly),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Daily => "daily",
            Task::Weekly => "weekly",
        })
    }
}

pub const DAILY_CHANNELS: [&str; 6] =
    ["is_adherent", "Morning", "Afternoon", "Evening", "Night", "is_Weekend"];

pub const WEEKLY_CHANNELS: [&str; 10] = [
    "is_adherent_wk",
    "weekend_adh_0",
    "weekend_adh_50",
    "weekend_adh_100",
    "Morning",
    "Afternoon",
    "Evening",
    "Night",
    "time_mean",
    "time_std",
];

/// Ordered, bijective mapping between flat feature names and tensor
/// positions. Dynamic names come first in lag-major order (all channels of
/// t−1, then t−2, …), followed by static numeric then categorical names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureNameMap {
    pub task: Task,
    pub lags: usize,
    pub channels: Vec<String>,
    pub static_numeric: Vec<String>,
    pub static_categorical: Vec<String>,
}

impl FeatureNameMap {
    pub fn new(task: Task, lags: usize) -> Self {
        FeatureNameMap {
            task,
            lags,
            channels: task.channel_names().iter().map(|s| s.to_string()).collect(),
            static_numeric: Vec::new(),
            static_categorical: Vec::new(),
        }
    }

    pub fn dynamic_len(&self) -> usize {
        self.lags * self.channels.len()
    }

    pub fn dynamic_name(&self, lag: usize, channel: &str) -> String {
        format!("t-{lag} {channel}")
    }

    /// All dynamic flat names, lag-major, t−1 first.
    pub fn dynamic_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dynamic_len());
        for lag in 1..=self.lags {
            for ch in &self.channels {
                names.push(self.dynamic_name(lag, ch));
            }
        }
        names
    }

    /// Complete flat name list: dynamic, then static numeric, then
    /// categorical.
    pub fn flat_names(&self) -> Vec<String> {
        let mut names = self.dynamic_names();
        names.extend(self.static_numeric.iter().cloned());
        names.extend(self.static_categorical.iter().cloned());
        names
    }

    /// Splits a flat dynamic name like `"t-3 is_Weekend"` into (lag, channel).
    pub fn parse_dynamic_name(name: &str) -> Option<(usize, &str)> {
        let rest = name.strip_prefix("t-")?;
        let (lag_str, channel) = rest.split_once(' ')?;
        let lag: usize = lag_str.parse().ok()?;
        Some((lag, channel))
    }
}

/// One model-ready sample: a lagged dynamic tensor, a static vector, and the
/// target label. Daily samples target a calendar date; weekly samples target
/// the Monday of the target week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub subject_id: SubjectId,
    pub target_start: NaiveDate,
    /// Row-major (lags × channels), lag t−1 row first.
    pub dynamic: Vec<f64>,
    /// Aligned with `FeatureNameMap::static_numeric`; NaN marks missing.
    pub static_numeric: Vec<f64>,
    /// Aligned with `FeatureNameMap::static_categorical`.
    pub static_categorical: Vec<Option<String>>,
    pub label: bool,
}

/// A homogeneous collection of samples plus the feature-name map that gives
/// every tensor position a stable flat name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub names: FeatureNameMap,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn subjects(&self) -> Vec<SubjectId> {
        let mut ids: Vec<SubjectId> = self.samples.iter().map(|s| s.subject_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

fn onehot_epoch(epoch: Option<crate::ingest::Epoch>) -> [f64; 4] {
    let mut v = [0.0; 4];
    if let Some(e) = epoch {
        v[e.index()] = 1.0;
    }
    v
}

/// Builds daily samples: one per date that has `lags` fully labeled
/// predecessor days. Subjects with ≤ lags labeled days contribute zero
/// samples.
pub fn build_daily_samples(day_labels: &[DayLabel], lags: usize) -> SampleSet {
    let names = FeatureNameMap::new(Task::Daily, lags);
    let mut per_subject: BTreeMap<&SubjectId, Vec<&DayLabel>> = BTreeMap::new();
    for l in day_labels {
        per_subject.entry(&l.subject_id).or_default().push(l);
    }

    let mut samples = Vec::new();
    for (subject, mut labels) in per_subject {
        labels.sort_by_key(|l| l.date);
        let by_date: BTreeMap<NaiveDate, &DayLabel> = labels.iter().map(|l| (l.date, *l)).collect();
        for target in &labels {
            let mut dynamic = Vec::with_capacity(lags * DAILY_CHANNELS.len());
            let mut complete = true;
            for lag in 1..=lags {
                let lag_date = target.date - Duration::days(lag as i64);
                let Some(prev) = by_date.get(&lag_date) else {
                    complete = false;
                    break;
                };
                let epoch = onehot_epoch(prev.epoch);
                dynamic.push(if prev.adherent { 1.0 } else { 0.0 });
                dynamic.extend_from_slice(&epoch);
                dynamic.push(if prev.is_weekend { 1.0 } else { 0.0 });
            }
            if !complete {
                continue;
            }
            samples.push(Sample {
                subject_id: subject.clone(),
                target_start: target.date,
                dynamic,
                static_numeric: Vec::new(),
                static_categorical: Vec::new(),
                label: target.adherent,
            });
        }
    }
    SampleSet { names, samples }
}

fn weekend_onehot(level: WeekendAdherence) -> [f64; 3] {
    match level {
        WeekendAdherence::Zero => [1.0, 0.0, 0.0],
        WeekendAdherence::Half => [0.0, 1.0, 0.0],
        WeekendAdherence::Full => [0.0, 0.0, 1.0],
    }
}

/// Builds weekly samples: one per week that has `lags` consecutively labeled
/// predecessor weeks. A lag week with no events contributes zeroed time
/// statistics and all-zero epoch channels.
pub fn build_weekly_samples(week_labels: &[WeekLabel], lags: usize) -> SampleSet {
    let names = FeatureNameMap::new(Task::Weekly, lags);
    let mut per_subject: BTreeMap<&SubjectId, Vec<&WeekLabel>> = BTreeMap::new();
    for l in week_labels {
        per_subject.entry(&l.subject_id).or_default().push(l);
    }

    let mut samples = Vec::new();
    for (subject, mut labels) in per_subject {
        labels.sort_by_key(|l| l.week_start);
        let by_start: BTreeMap<NaiveDate, &WeekLabel> =
            labels.iter().map(|l| (l.week_start, *l)).collect();
        for target in &labels {
            let mut dynamic = Vec::with_capacity(lags * WEEKLY_CHANNELS.len());
            let mut complete = true;
            for lag in 1..=lags {
                let lag_start = target.week_start - Duration::days(7 * lag as i64);
                let Some(prev) = by_start.get(&lag_start) else {
                    complete = false;
                    break;
                };
                dynamic.push(if prev.adherent { 1.0 } else { 0.0 });
                dynamic.extend_from_slice(&weekend_onehot(prev.weekend_adh_level));
                dynamic.extend_from_slice(&onehot_epoch(prev.modal_epoch));
                dynamic.push(prev.time_mean.unwrap_or(0.0));
                dynamic.push(prev.time_std.unwrap_or(0.0));
            }
            if !complete {
                continue;
            }
            samples.push(Sample {
                subject_id: subject.clone(),
                target_start: target.week_start,
                dynamic,
                static_numeric: Vec::new(),
                static_categorical: Vec::new(),
                label: target.adherent,
            });
        }
    }
    SampleSet { names, samples }
}

/// Outcome of attaching static vectors: subjects without any survey wave are
/// dropped and counted rather than silently omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttachReport {
    pub dropped_subjects: Vec<SubjectId>,
    pub dropped_samples: usize,
}

/// First day index covered by the 4-month wave; day 0 is the subject's study
/// anchor (date of their first recorded event, before burn-in).
pub const WAVE_MONTH4_START_DAY: i64 = 122;
/// First day index covered by the 8-month wave.
pub const WAVE_MONTH8_START_DAY: i64 = 244;

fn wave_window(day_index: i64) -> Wave {
    if day_index < WAVE_MONTH4_START_DAY {
        Wave::Month0
    } else if day_index < WAVE_MONTH8_START_DAY {
        Wave::Month4
    } else {
        Wave::Month8
    }
}

/// Attaches to every sample the most recent survey wave at or before its
/// target date (carry-forward). Samples of subjects with no usable wave are
/// dropped and reported.
pub fn attach_static(
    set: SampleSet,
    surveys: &SurveyData,
    anchors: &BTreeMap<SubjectId, NaiveDate>,
) -> Result<(SampleSet, AttachReport)> {
    let mut names = set.names;
    names.static_numeric = surveys.numeric_columns.clone();
    names.static_numeric.sort();
    names.static_categorical = surveys.categorical_columns.clone();
    names.static_categorical.sort();

    let mut per_subject: BTreeMap<&SubjectId, BTreeMap<Wave, &crate::ingest::SurveyWave>> =
        BTreeMap::new();
    for w in &surveys.waves {
        per_subject.entry(&w.subject_id).or_default().insert(w.wave, w);
    }

    let mut samples = Vec::with_capacity(set.samples.len());
    let mut dropped_samples = 0usize;
    let mut dropped_subjects: Vec<SubjectId> = Vec::new();
    for mut sample in set.samples {
        let waves = per_subject.get(&sample.subject_id);
        let anchor = anchors.get(&sample.subject_id);
        let chosen = match (waves, anchor) {
            (Some(waves), Some(anchor)) => {
                let day_index = (sample.target_start - *anchor).num_days();
                let window = wave_window(day_index);
                // most recent existing wave at or before the window
                Wave::ALL
                    .iter()
                    .rev()
                    .filter(|w| **w <= window)
                    .find_map(|w| waves.get(w))
                    .copied()
            }
            _ => None,
        };
        let Some(wave) = chosen else {
            dropped_samples += 1;
            if !dropped_subjects.contains(&sample.subject_id) {
                dropped_subjects.push(sample.subject_id.clone());
            }
            continue;
        };
        sample.static_numeric = names
            .static_numeric
            .iter()
            .map(|n| wave.scores.get(n).copied().unwrap_or(f64::NAN))
            .collect();
        sample.static_categorical = names
            .static_categorical
            .iter()
            .map(|n| wave.categoricals.get(n).cloned())
            .collect();
        samples.push(sample);
    }

    if samples.is_empty() && dropped_samples > 0 {
        return Err(Error::data(
            "no samples left after static attachment: no subject has a usable survey wave",
        ));
    }

    Ok((SampleSet { names, samples }, AttachReport { dropped_subjects, dropped_samples }))
}

/// Writes the flat debug dump: one row per sample under the flat feature
/// header, for cross-checking against independent oracles.
pub fn write_flat_csv<W: std::io::Write>(set: &SampleSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["subject_id".to_string(), "target_start".to_string(), "label".to_string()];
    header.extend(set.names.flat_names());
    w.write_record(&header)?;
    for s in &set.samples {
        let mut row = vec![
            s.subject_id.to_string(),
            s.target_start.to_string(),
            s.label.to_string(),
        ];
        for v in &s.dynamic {
            row.push(format_cell(*v));
        }
        for v in &s.static_numeric {
            row.push(format_cell(*v));
        }
        for v in &s.static_categorical {
            row.push(v.clone().unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn format_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{is_weekend, Epoch, SurveyWave};

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn day_label(id: &str, date: NaiveDate, adherent: bool, hour: Option<f64>) -> DayLabel {
        DayLabel {
            subject_id: SubjectId::new(id),
            date,
            adherent,
            epoch: hour.map(Epoch::of_hour),
            opening_hour: hour,
            is_weekend: is_weekend(date),
        }
    }

    fn run_of_days(id: &str, start: NaiveDate, pattern: &[(bool, Option<f64>)]) -> Vec<DayLabel> {
        pattern
            .iter()
            .enumerate()
            .map(|(i, (adh, hour))| day_label(id, start + Duration::days(i as i64), *adh, *hour))
            .collect()
    }

    #[test]
    fn eight_days_yield_one_sample() {
        let labels = run_of_days(
            "S1",
            d(2021, 3, 1),
            &[(true, Some(21.0)); 8],
        );
        let set = build_daily_samples(&labels, 7);
        assert_eq!(set.samples.len(), 1);
        assert_eq!(set.samples[0].target_start, d(2021, 3, 8));
        assert!(set.samples[0].label);
    }

    #[test]
    fn lag_without_event_has_all_zero_epochs() {
        let mut pattern = vec![(true, Some(21.0)); 8];
        pattern[6] = (false, None); // t-1 relative to the target day 8
        let labels = run_of_days("S1", d(2021, 3, 1), &pattern);
        let set = build_daily_samples(&labels, 7);
        let s = &set.samples[0];
        // lag 1 row occupies positions 0..6
        let lag1 = &s.dynamic[0..6];
        let weekend = if is_weekend(d(2021, 3, 7)) { 1.0 } else { 0.0 };
        assert_eq!(lag1, &[0.0, 0.0, 0.0, 0.0, 0.0, weekend]);
    }

    #[test]
    fn dynamic_tensor_matches_hand_computation() {
        // 10 labeled days with a hand-built mixed pattern
        let pattern: Vec<(bool, Option<f64>)> = vec![
            (true, Some(8.0)),   // Mon 3/1   Morning
            (false, None),       // Tue 3/2
            (true, Some(13.0)),  // Wed 3/3   Afternoon
            (true, Some(21.0)),  // Thu 3/4   Evening
            (false, Some(2.0)),  // Fri 3/5   Night, event but non-adherent
            (true, Some(9.5)),   // Sat 3/6   Morning, weekend
            (false, None),       // Sun 3/7   weekend
            (true, Some(20.0)),  // Mon 3/8   Evening
            (true, Some(19.0)),  // Tue 3/9
            (true, Some(18.5)),  // Wed 3/10
        ];
        let labels = run_of_days("S1", d(2021, 3, 1), &pattern);
        let set = build_daily_samples(&labels, 7);
        assert_eq!(set.samples.len(), 3); // targets 3/8, 3/9, 3/10

        // Oracle for target 3/8: lags t-1=3/7 .. t-7=3/1
        let expected: Vec<f64> = vec![
            // 3/7: no event, weekend
            0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
            // 3/6: adherent, Morning, weekend
            1.0, 1.0, 0.0, 0.0, 0.0, 1.0,
            // 3/5: non-adherent, Night
            0.0, 0.0, 0.0, 0.0, 1.0, 0.0,
            // 3/4: adherent, Evening
            1.0, 0.0, 0.0, 1.0, 0.0, 0.0,
            // 3/3: adherent, Afternoon
            1.0, 0.0, 1.0, 0.0, 0.0, 0.0,
            // 3/2: no event
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            // 3/1: adherent, Morning
            1.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(set.samples[0].dynamic, expected);
        assert_eq!(set.names.flat_names().len(), 42);
    }

    fn week_label(
        id: &str,
        start: NaiveDate,
        adherent: bool,
        weekend: WeekendAdherence,
        modal: Option<Epoch>,
        mean: Option<f64>,
        std: Option<f64>,
    ) -> WeekLabel {
        WeekLabel {
            subject_id: SubjectId::new(id),
            week_start: start,
            adherent_fraction: if adherent { 1.0 } else { 0.5 },
            adherent,
            weekend_adh_level: weekend,
            modal_epoch: modal,
            time_mean: mean,
            time_std: std,
        }
    }

    #[test]
    fn five_weeks_yield_one_sample() {
        let monday = d(2021, 3, 1);
        let labels: Vec<WeekLabel> = (0..5)
            .map(|i| {
                week_label(
                    "S1",
                    monday + Duration::days(7 * i),
                    true,
                    WeekendAdherence::Full,
                    Some(Epoch::Evening),
                    Some(21.0),
                    Some(0.5),
                )
            })
            .collect();
        let set = build_weekly_samples(&labels, 4);
        assert_eq!(set.samples.len(), 1);
        assert_eq!(set.samples[0].target_start, monday + Duration::days(28));
        assert_eq!(set.names.flat_names().len(), 40);
    }

    #[test]
    fn weekend_level_is_onehot_per_lag() {
        let monday = d(2021, 3, 1);
        let mut labels: Vec<WeekLabel> = (0..5)
            .map(|i| {
                week_label(
                    "S1",
                    monday + Duration::days(7 * i),
                    true,
                    WeekendAdherence::Zero,
                    Some(Epoch::Evening),
                    Some(21.0),
                    Some(0.0),
                )
            })
            .collect();
        labels[3].weekend_adh_level = WeekendAdherence::Full; // t-1 of the target
        let set = build_weekly_samples(&labels, 4);
        let lag1 = &set.samples[0].dynamic[0..10];
        assert_eq!(&lag1[1..4], &[0.0, 0.0, 1.0], "weekend_adh_100 set, others 0");
    }

    #[test]
    fn missing_time_stats_become_zero_with_zero_epochs() {
        let monday = d(2021, 3, 1);
        let mut labels: Vec<WeekLabel> = (0..5)
            .map(|i| {
                week_label(
                    "S1",
                    monday + Duration::days(7 * i),
                    true,
                    WeekendAdherence::Full,
                    Some(Epoch::Morning),
                    Some(9.0),
                    Some(1.0),
                )
            })
            .collect();
        labels[3].modal_epoch = None;
        labels[3].time_mean = None;
        labels[3].time_std = None;
        let set = build_weekly_samples(&labels, 4);
        let lag1 = &set.samples[0].dynamic[0..10];
        assert_eq!(&lag1[4..8], &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(lag1[8], 0.0);
        assert_eq!(lag1[9], 0.0);
    }

    #[test]
    fn time_stats_pass_through() {
        let monday = d(2021, 3, 1);
        let mut labels: Vec<WeekLabel> = (0..5)
            .map(|i| {
                week_label(
                    "S1",
                    monday + Duration::days(7 * i),
                    true,
                    WeekendAdherence::Full,
                    Some(Epoch::Morning),
                    Some(9.0),
                    Some(0.0),
                )
            })
            .collect();
        labels[3].time_mean = Some(10.0);
        labels[3].time_std = Some(1.0);
        let set = build_weekly_samples(&labels, 4);
        let lag1 = &set.samples[0].dynamic[0..10];
        assert_eq!(lag1[8], 10.0);
        assert_eq!(lag1[9], 1.0);
    }

    fn survey(id: &str, wave: Wave, psup: Option<f64>) -> SurveyWave {
        let mut scores = BTreeMap::new();
        if let Some(v) = psup {
            scores.insert("psup".to_string(), v);
        }
        let mut categoricals = BTreeMap::new();
        categoricals.insert("group".to_string(), "PN".to_string());
        SurveyWave { subject_id: SubjectId::new(id), wave, scores, categoricals }
    }

    fn sample_at(id: &str, date: NaiveDate) -> Sample {
        Sample {
            subject_id: SubjectId::new(id),
            target_start: date,
            dynamic: vec![0.0; 42],
            static_numeric: Vec::new(),
            static_categorical: Vec::new(),
            label: true,
        }
    }

    fn surveys(waves: Vec<SurveyWave>) -> SurveyData {
        SurveyData {
            numeric_columns: vec!["psup".to_string()],
            categorical_columns: vec!["group".to_string()],
            waves,
        }
    }

    #[test]
    fn carry_forward_picks_most_recent_wave() {
        let anchor = d(2021, 1, 1);
        let mut anchors = BTreeMap::new();
        anchors.insert(SubjectId::new("S1"), anchor);
        let data = surveys(vec![
            survey("S1", Wave::Month0, Some(1.0)),
            survey("S1", Wave::Month4, Some(2.0)),
            survey("S1", Wave::Month8, Some(3.0)),
        ]);
        let set = SampleSet {
            names: FeatureNameMap::new(Task::Daily, 7),
            samples: vec![sample_at("S1", anchor + Duration::days(150))],
        };
        let (out, report) = attach_static(set, &data, &anchors).unwrap();
        assert_eq!(report.dropped_samples, 0);
        assert_eq!(out.samples[0].static_numeric, vec![2.0], "day 150 falls in the month-4 window");
    }

    #[test]
    fn wave_boundaries_honored_exactly() {
        let anchor = d(2021, 1, 1);
        let mut anchors = BTreeMap::new();
        anchors.insert(SubjectId::new("S1"), anchor);
        let data = surveys(vec![
            survey("S1", Wave::Month0, Some(1.0)),
            survey("S1", Wave::Month4, Some(2.0)),
            survey("S1", Wave::Month8, Some(3.0)),
        ]);
        // oracle: enumerated boundary table
        for (day, expect) in [(0, 1.0), (121, 1.0), (122, 2.0), (243, 2.0), (244, 3.0), (400, 3.0)] {
            let set = SampleSet {
                names: FeatureNameMap::new(Task::Daily, 7),
                samples: vec![sample_at("S1", anchor + Duration::days(day))],
            };
            let (out, _) = attach_static(set, &data, &anchors).unwrap();
            assert_eq!(out.samples[0].static_numeric, vec![expect], "day {day}");
        }
    }

    #[test]
    fn degenerate_carry_forward_uses_month0_everywhere() {
        let anchor = d(2021, 1, 1);
        let mut anchors = BTreeMap::new();
        anchors.insert(SubjectId::new("S1"), anchor);
        let data = surveys(vec![survey("S1", Wave::Month0, Some(7.0))]);
        let set = SampleSet {
            names: FeatureNameMap::new(Task::Daily, 7),
            samples: vec![
                sample_at("S1", anchor + Duration::days(10)),
                sample_at("S1", anchor + Duration::days(200)),
                sample_at("S1", anchor + Duration::days(300)),
            ],
        };
        let (out, _) = attach_static(set, &data, &anchors).unwrap();
        for s in &out.samples {
            assert_eq!(s.static_numeric, vec![7.0]);
        }
    }

    #[test]
    fn subject_without_waves_is_dropped_with_count() {
        let anchor = d(2021, 1, 1);
        let mut anchors = BTreeMap::new();
        anchors.insert(SubjectId::new("S1"), anchor);
        anchors.insert(SubjectId::new("S2"), anchor);
        let data = surveys(vec![survey("S1", Wave::Month0, Some(7.0))]);
        let set = SampleSet {
            names: FeatureNameMap::new(Task::Daily, 7),
            samples: vec![sample_at("S1", anchor), sample_at("S2", anchor), sample_at("S2", anchor)],
        };
        let (out, report) = attach_static(set, &data, &anchors).unwrap();
        assert_eq!(out.samples.len(), 1);
        assert_eq!(report.dropped_samples, 2);
        assert_eq!(report.dropped_subjects, vec![SubjectId::new("S2")]);
    }

    #[test]
    fn missing_score_is_nan_not_zero() {
        let anchor = d(2021, 1, 1);
        let mut anchors = BTreeMap::new();
        anchors.insert(SubjectId::new("S1"), anchor);
        let data = surveys(vec![survey("S1", Wave::Month0, None)]);
        let set = SampleSet {
            names: FeatureNameMap::new(Task::Daily, 7),
            samples: vec![sample_at("S1", anchor)],
        };
        let (out, _) = attach_static(set, &data, &anchors).unwrap();
        assert!(out.samples[0].static_numeric[0].is_nan());
    }
}
