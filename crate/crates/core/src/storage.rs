//! On-disk artifact formats exchanged between pipeline stages. All files are
//! UTF-8, comma-delimited, LF-terminated CSV or pretty-printed JSON; floats
//! round-trip at full precision via the shortest-representation formatter.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};
use crate::features::{FeatureNameMap, Sample, SampleSet};
use crate::ingest::{
    DayLabel, DoseEvent, Epoch, SubjectEvents, SubjectId, SurveyData, WeekLabel,
    WeekendAdherence,
};
use crate::synthcohort::GroundTruth;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

/// Errors with a named missing artifact when a required stage input is
/// absent, so stage-order violations are self-explanatory.
pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.display().to_string()))
    }
}

pub fn write_events_csv<W: Write>(events: &[DoseEvent], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject_id", "timestamp"])?;
    for e in events {
        w.write_record(&[e.subject_id.to_string(), e.timestamp.format(TIMESTAMP_FORMAT).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_surveys_csv<W: Write>(surveys: &SurveyData, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["subject_id".to_string(), "wave".to_string()];
    header.extend(surveys.numeric_columns.iter().cloned());
    header.extend(surveys.categorical_columns.iter().cloned());
    w.write_record(&header)?;
    for record in &surveys.waves {
        let mut row = vec![record.subject_id.to_string(), record.wave.token().to_string()];
        for col in &surveys.numeric_columns {
            row.push(record.scores.get(col).map(|v| format!("{v}")).unwrap_or_default());
        }
        for col in &surveys.categorical_columns {
            row.push(record.categoricals.get(col).cloned().unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_day_labels_csv<W: Write>(labels: &[DayLabel], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject_id", "date", "adherent", "epoch", "opening_hour", "is_weekend"])?;
    for l in labels {
        w.write_record(&[
            l.subject_id.to_string(),
            l.date.to_string(),
            l.adherent.to_string(),
            l.epoch.map(|e| e.name().to_string()).unwrap_or_default(),
            l.opening_hour.map(|h| format!("{h}")).unwrap_or_default(),
            l.is_weekend.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_day_labels_csv<R: Read>(reader: R) -> Result<Vec<DayLabel>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let r = record?;
        let parse_err = |msg: String| Error::Parse { line, msg };
        out.push(DayLabel {
            subject_id: SubjectId::new(&r[0]),
            date: r[1].parse::<NaiveDate>().map_err(|e| parse_err(e.to_string()))?,
            adherent: parse_bool(&r[2]).map_err(|m| parse_err(m))?,
            epoch: if r[3].is_empty() {
                None
            } else {
                Some(Epoch::parse(&r[3]).ok_or_else(|| parse_err(format!("bad epoch '{}'", &r[3])))?)
            },
            opening_hour: if r[4].is_empty() {
                None
            } else {
                Some(r[4].parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?)
            },
            is_weekend: parse_bool(&r[5]).map_err(|m| parse_err(m))?,
        });
    }
    Ok(out)
}

pub fn write_week_labels_csv<W: Write>(labels: &[WeekLabel], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "subject_id",
        "week_start",
        "adherent_fraction",
        "adherent",
        "weekend_adh_level",
        "modal_epoch",
        "time_mean",
        "time_std",
    ])?;
    for l in labels {
        w.write_record(&[
            l.subject_id.to_string(),
            l.week_start.to_string(),
            format!("{}", l.adherent_fraction),
            l.adherent.to_string(),
            l.weekend_adh_level.percent().to_string(),
            l.modal_epoch.map(|e| e.name().to_string()).unwrap_or_default(),
            l.time_mean.map(|v| format!("{v}")).unwrap_or_default(),
            l.time_std.map(|v| format!("{v}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_week_labels_csv<R: Read>(reader: R) -> Result<Vec<WeekLabel>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let r = record?;
        let parse_err = |msg: String| Error::Parse { line, msg };
        let level: u8 = r[4].parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?;
        out.push(WeekLabel {
            subject_id: SubjectId::new(&r[0]),
            week_start: r[1].parse::<NaiveDate>().map_err(|e| parse_err(e.to_string()))?,
            adherent_fraction: r[2]
                .parse()
                .map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?,
            adherent: parse_bool(&r[3]).map_err(|m| parse_err(m))?,
            weekend_adh_level: WeekendAdherence::from_percent(level)
                .ok_or_else(|| parse_err(format!("bad weekend level '{level}'")))?,
            modal_epoch: if r[5].is_empty() {
                None
            } else {
                Some(Epoch::parse(&r[5]).ok_or_else(|| parse_err(format!("bad epoch '{}'", &r[5])))?)
            },
            time_mean: if r[6].is_empty() {
                None
            } else {
                Some(r[6].parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?)
            },
            time_std: if r[7].is_empty() {
                None
            } else {
                Some(r[7].parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?)
            },
        });
    }
    Ok(out)
}

/// Per-subject study metadata produced by the labeling stage: the anchor
/// (first raw event date, before burn-in) that the survey carry-forward
/// windows are measured from.
pub fn write_subjects_csv<W: Write>(series: &[SubjectEvents], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject_id", "anchor_date", "events_after_burn_in"])?;
    for s in series {
        w.write_record(&[
            s.subject_id.to_string(),
            s.anchor_date.to_string(),
            s.timestamps.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_subject_anchors_csv<R: Read>(reader: R) -> Result<BTreeMap<SubjectId, NaiveDate>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let r = record?;
        let date = r[1]
            .parse::<NaiveDate>()
            .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        out.insert(SubjectId::new(&r[0]), date);
    }
    Ok(out)
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("expected 'true' or 'false', got '{other}'")),
    }
}

/// Writes the sample dump (flat CSV under the feature-name header) plus the
/// sidecar `<path>.schema.json` describing the tensor layout.
pub fn write_samples(set: &SampleSet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    crate::features::write_flat_csv(set, file)?;
    let schema_path = schema_path_for(path);
    std::fs::write(schema_path, serde_json::to_string_pretty(&set.names)?)?;
    Ok(())
}

pub fn schema_path_for(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".schema.json");
    std::path::PathBuf::from(os)
}

/// Reads a sample dump back using its schema sidecar.
pub fn read_samples(path: &Path) -> Result<SampleSet> {
    require_file(path)?;
    let schema_path = schema_path_for(path);
    require_file(&schema_path)?;
    let names: FeatureNameMap = serde_json::from_str(&std::fs::read_to_string(&schema_path)?)?;

    let mut rdr = csv::Reader::from_path(path)?;
    let expected_header: Vec<String> = {
        let mut h = vec!["subject_id".to_string(), "target_start".to_string(), "label".to_string()];
        h.extend(names.flat_names());
        h
    };
    let actual: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    if actual != expected_header {
        return Err(Error::data(format!(
            "sample file header does not match its schema sidecar ({})",
            schema_path.display()
        )));
    }

    let dyn_len = names.dynamic_len();
    let n_num = names.static_numeric.len();
    let n_cat = names.static_categorical.len();
    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let r = record?;
        let parse_err = |msg: String| Error::Parse { line, msg };
        let mut cursor = 3usize;
        let mut dynamic = Vec::with_capacity(dyn_len);
        for _ in 0..dyn_len {
            let cell = &r[cursor];
            if cell.is_empty() {
                return Err(parse_err("dynamic features cannot be missing".to_string()));
            }
            dynamic.push(cell.parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?);
            cursor += 1;
        }
        let mut static_numeric = Vec::with_capacity(n_num);
        for _ in 0..n_num {
            let cell = &r[cursor];
            static_numeric.push(if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?
            });
            cursor += 1;
        }
        let mut static_categorical = Vec::with_capacity(n_cat);
        for _ in 0..n_cat {
            let cell = &r[cursor];
            static_categorical.push(if cell.is_empty() { None } else { Some(cell.to_string()) });
            cursor += 1;
        }
        samples.push(Sample {
            subject_id: SubjectId::new(&r[0]),
            target_start: r[1].parse::<NaiveDate>().map_err(|e| parse_err(e.to_string()))?,
            dynamic,
            static_numeric,
            static_categorical,
            label: parse_bool(&r[2]).map_err(|m| parse_err(m))?,
        });
    }
    Ok(SampleSet { names, samples })
}

pub fn write_ground_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(truth)?)?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    require_file(path)?;
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Parses event CSV from a file path with the missing-artifact error.
pub fn read_events(path: &Path) -> Result<Vec<DoseEvent>> {
    require_file(path)?;
    crate::ingest::parse_events(std::fs::File::open(path)?)
}

pub fn read_surveys(path: &Path) -> Result<SurveyData> {
    require_file(path)?;
    crate::ingest::parse_surveys(std::fs::File::open(path)?)
}

pub fn timestamp_string(ts: &NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}
