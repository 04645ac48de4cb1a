//! MEMS event and survey ingestion: parsing, burn-in exclusion, and daily /
//! weekly adherence labeling.
//!
//! Daily adherence follows an inter-dose interval rule: a day is adherent iff
//! it has at least one bottle opening whose elapsed time since the
//! immediately preceding opening falls inside a window (default 24±6 hours).
//! Weekly adherence is a civil Monday–Sunday week whose adherent-day fraction
//! strictly exceeds a threshold (default 0.8).

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque subject identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubjectId(pub String);

impl SubjectId {
    pub fn new(s: impl Into<String>) -> Self {
        SubjectId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SubjectId {
    fn from(s: &str) -> Self {
        SubjectId(s.to_string())
    }
}

/// One timestamped bottle-opening record for one subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoseEvent {
    pub subject_id: SubjectId,
    /// Local calendar date-time, minute precision; no timezone arithmetic.
    pub timestamp: NaiveDateTime,
}

/// Dosing time bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Epoch {
    Morning,
    Afternoon,
    Evening,
    Night,
}

impl Epoch {
    /// Tie-break and channel order: Morning < Afternoon < Evening < Night.
    pub const ALL: [Epoch; 4] = [Epoch::Morning, Epoch::Afternoon, Epoch::Evening, Epoch::Night];

    /// Bucket for an hour-of-day in [0, 24): Morning 06:00–11:59,
    /// Afternoon 12:00–17:59, Evening 18:00–23:59, Night 00:00–05:59.
    pub fn of_hour(hour: f64) -> Epoch {
        if (6.0..12.0).contains(&hour) {
            Epoch::Morning
        } else if (12.0..18.0).contains(&hour) {
            Epoch::Afternoon
        } else if (18.0..24.0).contains(&hour) {
            Epoch::Evening
        } else {
            Epoch::Night
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Epoch::Morning => "Morning",
            Epoch::Afternoon => "Afternoon",
            Epoch::Evening => "Evening",
            Epoch::Night => "Night",
        }
    }

    pub fn parse(s: &str) -> Option<Epoch> {
        Epoch::ALL.iter().copied().find(|e| e.name() == s)
    }

    pub fn index(&self) -> usize {
        Epoch::ALL.iter().position(|e| e == self).unwrap()
    }
}

impl fmt::Display for Epoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Derived adherence status plus behavioral descriptors for one calendar day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayLabel {
    pub subject_id: SubjectId,
    pub date: NaiveDate,
    pub adherent: bool,
    /// Present iff at least one event occurred on this date.
    pub epoch: Option<Epoch>,
    /// Hour-of-day in [0, 24) of the representative opening; present iff an
    /// event occurred on this date.
    pub opening_hour: Option<f64>,
    /// Saturday or Sunday on the civil calendar.
    pub is_weekend: bool,
}

/// Weekend adherence level over {Saturday, Sunday}: adherent on 0, 1, or 2
/// weekend days, reported as 0 / 50 / 100.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeekendAdherence {
    Zero,
    Half,
    Full,
}

impl WeekendAdherence {
    pub fn from_count(adherent_weekend_days: usize) -> Self {
        match adherent_weekend_days {
            0 => WeekendAdherence::Zero,
            1 => WeekendAdherence::Half,
            2 => WeekendAdherence::Full,
            n => panic!("a week has at most 2 weekend days, got {n}"),
        }
    }

    pub fn percent(&self) -> u8 {
        match self {
            WeekendAdherence::Zero => 0,
            WeekendAdherence::Half => 50,
            WeekendAdherence::Full => 100,
        }
    }

    pub fn from_percent(p: u8) -> Option<Self> {
        match p {
            0 => Some(WeekendAdherence::Zero),
            50 => Some(WeekendAdherence::Half),
            100 => Some(WeekendAdherence::Full),
            _ => None,
        }
    }
}

/// Derived adherence status plus behavioral descriptors for one civil
/// Monday–Sunday week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekLabel {
    pub subject_id: SubjectId,
    /// Monday date of the civil week.
    pub week_start: NaiveDate,
    /// Adherent days / 7, in [0, 1].
    pub adherent_fraction: f64,
    /// adherent ⇔ adherent_fraction > threshold (strict).
    pub adherent: bool,
    pub weekend_adh_level: WeekendAdherence,
    /// Most frequent dosing epoch among event-bearing days; ties broken by
    /// the fixed order Morning < Afternoon < Evening < Night. Absent when no
    /// day of the week had an event.
    pub modal_epoch: Option<Epoch>,
    /// Mean hour-of-day over the opening hours of event-bearing days.
    pub time_mean: Option<f64>,
    /// Population standard deviation of the same hours (0 when only one
    /// event-bearing day; absent when zero).
    pub time_std: Option<f64>,
}

/// Survey wave identifier: baseline, 4-month, and 8-month follow-ups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Wave {
    Month0,
    Month4,
    Month8,
}

impl Wave {
    pub const ALL: [Wave; 3] = [Wave::Month0, Wave::Month4, Wave::Month8];

    pub fn parse(token: &str) -> Option<Wave> {
        match token {
            "0" => Some(Wave::Month0),
            "4" => Some(Wave::Month4),
            "8" => Some(Wave::Month8),
            _ => None,
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            Wave::Month0 => "0",
            Wave::Month4 => "4",
            Wave::Month8 => "8",
        }
    }
}

/// One survey record: pre-scored scale values plus categorical fields.
/// Missing cells are simply absent from the maps — never silently zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyWave {
    pub subject_id: SubjectId,
    pub wave: Wave,
    pub scores: BTreeMap<String, f64>,
    pub categoricals: BTreeMap<String, String>,
}

/// Parsed survey file: the full column schema plus per-(subject, wave)
/// records. A column is numeric iff every non-empty cell parses as a float.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyData {
    pub numeric_columns: Vec<String>,
    pub categorical_columns: Vec<String>,
    pub waves: Vec<SurveyWave>,
}

impl SurveyData {
    /// Waves for one subject, ordered Month0 → Month8.
    pub fn waves_for(&self, subject: &SubjectId) -> Vec<&SurveyWave> {
        let mut v: Vec<&SurveyWave> =
            self.waves.iter().filter(|w| &w.subject_id == subject).collect();
        v.sort_by_key(|w| w.wave);
        v
    }
}

/// All events for one subject, with the anchor date (date of the first event
/// ever recorded for the subject) kept alongside so burn-in filtering can be
/// re-applied without shifting the cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEvents {
    pub subject_id: SubjectId,
    /// Date of the subject's first recorded event; preserved by filtering.
    pub anchor_date: NaiveDate,
    pub timestamps: Vec<NaiveDateTime>,
}

/// Hour-of-day in [0, 24) at minute precision.
pub fn hour_of_day(ts: &NaiveDateTime) -> f64 {
    ts.hour() as f64 + ts.minute() as f64 / 60.0
}

const EVENTS_HEADER: [&str; 2] = ["subject_id", "timestamp"];
const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

/// Parses the events CSV (`subject_id,timestamp` with `YYYY-MM-DDTHH:MM`
/// timestamps). Output is sorted by (subject, timestamp) and duplicate
/// (subject, timestamp) pairs are collapsed to one. An empty file yields an
/// empty list.
pub fn parse_events<R: Read>(reader: R) -> Result<Vec<DoseEvent>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(e.into()),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Vec::new());
    }
    if headers.iter().collect::<Vec<_>>() != EVENTS_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header 'subject_id,timestamp', got '{}'", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut events = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let record = record?;
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 2 fields, got {}", record.len()),
            });
        }
        let subject = record[0].trim();
        if subject.is_empty() {
            return Err(Error::Parse { line, msg: "empty subject_id".into() });
        }
        let ts = NaiveDateTime::parse_from_str(record[1].trim(), TIMESTAMP_FORMAT).map_err(|e| {
            Error::Parse {
                line,
                msg: format!("unparseable timestamp '{}': {e}", &record[1]),
            }
        })?;
        events.push(DoseEvent { subject_id: SubjectId::new(subject), timestamp: ts });
    }

    events.sort_by(|a, b| (&a.subject_id, a.timestamp).cmp(&(&b.subject_id, b.timestamp)));
    events.dedup();
    Ok(events)
}

/// Groups sorted events per subject, fixing each subject's anchor date as the
/// date of their first recorded event.
pub fn group_by_subject(events: &[DoseEvent]) -> Vec<SubjectEvents> {
    let mut map: BTreeMap<&SubjectId, Vec<NaiveDateTime>> = BTreeMap::new();
    for e in events {
        map.entry(&e.subject_id).or_default().push(e.timestamp);
    }
    map.into_iter()
        .map(|(id, mut timestamps)| {
            timestamps.sort();
            timestamps.dedup();
            SubjectEvents {
                subject_id: id.clone(),
                anchor_date: timestamps[0].date(),
                timestamps,
            }
        })
        .collect()
}

/// Removes, per subject, all events earlier than `anchor_date + burn_in_days`
/// (midnight boundary). Subjects whose events all fall inside the burn-in are
/// retained with zero events; downstream decides exclusion. The anchor date
/// is not recomputed, so the operation is idempotent.
pub fn exclude_burn_in(series: &[SubjectEvents], burn_in_days: u32) -> Vec<SubjectEvents> {
    series
        .iter()
        .map(|s| {
            let cutoff = s
                .anchor_date
                .checked_add_signed(Duration::days(burn_in_days as i64))
                .expect("burn-in cutoff overflows the calendar")
                .and_hms_opt(0, 0, 0)
                .unwrap();
            SubjectEvents {
                subject_id: s.subject_id.clone(),
                anchor_date: s.anchor_date,
                timestamps: s.timestamps.iter().copied().filter(|t| *t >= cutoff).collect(),
            }
        })
        .collect()
}

/// Convenience wrapper over flat event lists: groups, filters, flattens.
pub fn exclude_burn_in_events(events: &[DoseEvent], burn_in_days: u32) -> Vec<DoseEvent> {
    exclude_burn_in(&group_by_subject(events), burn_in_days)
        .into_iter()
        .flat_map(|s| {
            let id = s.subject_id;
            s.timestamps
                .into_iter()
                .map(move |timestamp| DoseEvent { subject_id: id.clone(), timestamp })
        })
        .collect()
}

/// Inter-dose interval window in hours, inclusive at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalWindow {
    pub lo_hours: f64,
    pub hi_hours: f64,
}

impl Default for IntervalWindow {
    fn default() -> Self {
        // 24±6 hours
        IntervalWindow { lo_hours: 18.0, hi_hours: 30.0 }
    }
}

impl IntervalWindow {
    pub fn new(lo_hours: f64, hi_hours: f64) -> Result<Self> {
        if !(lo_hours.is_finite() && hi_hours.is_finite()) || lo_hours < 0.0 || hi_hours < lo_hours {
            return Err(Error::config(format!(
                "invalid interval window [{lo_hours}, {hi_hours}]"
            )));
        }
        Ok(IntervalWindow { lo_hours, hi_hours })
    }

    pub fn contains(&self, hours: f64) -> bool {
        hours >= self.lo_hours && hours <= self.hi_hours
    }
}

fn interval_hours(prev: NaiveDateTime, next: NaiveDateTime) -> f64 {
    (next - prev).num_minutes() as f64 / 60.0
}

/// Labels every calendar date from each subject's first post-burn-in event
/// date through their last event date.
///
/// A date is adherent iff it has at least one event whose elapsed time since
/// the immediately preceding event (any date) lies inside the window; the
/// first labeled date is adherent iff it has an event, since no prior
/// interval exists. The representative opening (epoch / opening hour) is the
/// first in-window event of the date, else the date's first event.
pub fn label_daily(series: &[SubjectEvents], window: IntervalWindow) -> Vec<DayLabel> {
    let mut labels = Vec::new();
    for subject in series {
        let ts = &subject.timestamps;
        if ts.is_empty() {
            continue;
        }
        // qualifies[i]: event i's interval from event i-1 is inside the window
        let qualifies: Vec<bool> = ts
            .iter()
            .enumerate()
            .map(|(i, t)| i > 0 && window.contains(interval_hours(ts[i - 1], *t)))
            .collect();

        let first_date = ts[0].date();
        let last_date = ts[ts.len() - 1].date();
        let mut idx = 0; // cursor into ts, advanced date by date
        let mut date = first_date;
        while date <= last_date {
            let start = idx;
            while idx < ts.len() && ts[idx].date() == date {
                idx += 1;
            }
            let day_events = start..idx;
            let has_event = !day_events.is_empty();
            let qualifying = day_events.clone().find(|i| qualifies[*i]);
            let adherent = if date == first_date {
                has_event
            } else {
                qualifying.is_some()
            };
            let representative = qualifying.or(if has_event { Some(start) } else { None });
            let (epoch, opening_hour) = match representative {
                Some(i) => {
                    let hour = hour_of_day(&ts[i]);
                    (Some(Epoch::of_hour(hour)), Some(hour))
                }
                None => (None, None),
            };
            labels.push(DayLabel {
                subject_id: subject.subject_id.clone(),
                date,
                adherent,
                epoch,
                opening_hour,
                is_weekend: is_weekend(date),
            });
            date = date.succ_opt().expect("date range overflow");
        }
    }
    labels
}

pub fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Monday of the civil week containing `date`.
pub fn week_start(date: NaiveDate) -> NaiveDate {
    date - Duration::days(date.weekday().num_days_from_monday() as i64)
}

/// Aggregates contiguous day labels into civil Monday–Sunday weeks. Weeks
/// with fewer than 7 labeled days are dropped. A week is adherent iff its
/// adherent-day fraction strictly exceeds `threshold`.
pub fn label_weekly(day_labels: &[DayLabel], threshold: f64) -> Vec<WeekLabel> {
    let mut weeks: BTreeMap<(SubjectId, NaiveDate), Vec<&DayLabel>> = BTreeMap::new();
    for l in day_labels {
        weeks
            .entry((l.subject_id.clone(), week_start(l.date)))
            .or_default()
            .push(l);
    }

    let mut out = Vec::new();
    for ((subject_id, start), mut days) in weeks {
        if days.len() < 7 {
            continue;
        }
        days.sort_by_key(|d| d.date);
        debug_assert_eq!(days.len(), 7);

        let adherent_days = days.iter().filter(|d| d.adherent).count();
        let adherent_fraction = adherent_days as f64 / 7.0;
        let weekend_count = days
            .iter()
            .filter(|d| d.is_weekend && d.adherent)
            .count();

        // Modal epoch over event-bearing days; ties resolved by the fixed
        // epoch order.
        let mut epoch_counts = [0usize; 4];
        for d in days.iter() {
            if let Some(e) = d.epoch {
                epoch_counts[e.index()] += 1;
            }
        }
        let modal_epoch = epoch_counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| Epoch::ALL[i]);

        let hours: Vec<f64> = days.iter().filter_map(|d| d.opening_hour).collect();
        let (time_mean, time_std) = if hours.is_empty() {
            (None, None)
        } else {
            let mean = hours.iter().sum::<f64>() / hours.len() as f64;
            let var = hours.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / hours.len() as f64;
            (Some(mean), Some(var.sqrt()))
        };

        out.push(WeekLabel {
            subject_id,
            week_start: start,
            adherent_fraction,
            adherent: adherent_fraction > threshold,
            weekend_adh_level: WeekendAdherence::from_count(weekend_count),
            modal_epoch,
            time_mean,
            time_std,
        });
    }
    out
}

/// Parses the survey CSV (`subject_id,wave,<scale columns...>`). Wave tokens
/// must be 0, 4, or 8; duplicate (subject, wave) records are fatal; empty
/// cells are missing values. Unknown scale columns are carried through by
/// name, typed numeric iff every non-empty cell parses as a float.
pub fn parse_surveys<R: Read>(reader: R) -> Result<SurveyData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(SurveyData {
            numeric_columns: Vec::new(),
            categorical_columns: Vec::new(),
            waves: Vec::new(),
        });
    }
    let cols: Vec<String> = headers.iter().map(|s| s.to_string()).collect();
    if cols.len() < 2 || cols[0] != "subject_id" || cols[1] != "wave" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header starting 'subject_id,wave', got '{}'", cols.join(",")),
        });
    }
    let scale_cols = &cols[2..];

    struct RawRow {
        line: usize,
        subject: SubjectId,
        wave: Wave,
        cells: Vec<Option<String>>,
    }

    let mut rows = Vec::new();
    let mut seen: BTreeMap<(SubjectId, Wave), usize> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != cols.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, got {}", cols.len(), record.len()),
            });
        }
        let subject = SubjectId::new(record[0].trim());
        let wave = Wave::parse(record[1].trim()).ok_or_else(|| Error::Parse {
            line,
            msg: format!("unknown wave token '{}' (expected 0, 4, or 8)", &record[1]),
        })?;
        if let Some(prev) = seen.insert((subject.clone(), wave), line) {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "duplicate record for subject '{}' wave {} (first at line {prev})",
                    subject,
                    wave.token()
                ),
            });
        }
        let cells = record
            .iter()
            .skip(2)
            .map(|c| {
                let t = c.trim();
                if t.is_empty() {
                    None
                } else {
                    Some(t.to_string())
                }
            })
            .collect();
        rows.push(RawRow { line, subject, wave, cells });
    }

    // Column typing: numeric iff all non-missing cells parse as floats.
    let mut numeric_columns = Vec::new();
    let mut categorical_columns = Vec::new();
    let mut is_numeric = Vec::with_capacity(scale_cols.len());
    for (j, name) in scale_cols.iter().enumerate() {
        let numeric = rows
            .iter()
            .filter_map(|r| r.cells[j].as_deref())
            .all(|v| v.parse::<f64>().is_ok());
        is_numeric.push(numeric);
        if numeric {
            numeric_columns.push(name.clone());
        } else {
            categorical_columns.push(name.clone());
        }
    }

    let mut waves = Vec::new();
    for row in rows {
        let mut scores = BTreeMap::new();
        let mut categoricals = BTreeMap::new();
        for (j, cell) in row.cells.iter().enumerate() {
            let Some(v) = cell else { continue };
            if is_numeric[j] {
                let parsed: f64 = v.parse().map_err(|e| Error::Parse {
                    line: row.line,
                    msg: format!("column '{}': {e}", scale_cols[j]),
                })?;
                if !parsed.is_finite() {
                    return Err(Error::Parse {
                        line: row.line,
                        msg: format!("column '{}': non-finite value '{v}'", scale_cols[j]),
                    });
                }
                scores.insert(scale_cols[j].clone(), parsed);
            } else {
                categoricals.insert(scale_cols[j].clone(), v.clone());
            }
        }
        waves.push(SurveyWave { subject_id: row.subject, wave: row.wave, scores, categoricals });
    }
    waves.sort_by(|a, b| (&a.subject_id, a.wave).cmp(&(&b.subject_id, b.wave)));

    Ok(SurveyData { numeric_columns, categorical_columns, waves })
}
