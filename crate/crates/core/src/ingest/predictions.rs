use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::labels::LabelSet;
use crate::time::{format_instant, parse_instant, Instant, Span};

/// Which recognizer produced a prediction stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionSource {
    Env,
    Wear,
}

impl fmt::Display for PredictionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictionSource::Env => "env",
            PredictionSource::Wear => "wear",
        })
    }
}

/// One recognizer output over its native window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub source: PredictionSource,
    pub window_start: Instant,
    pub window_end: Instant,
    pub label: String,
}

impl PredictionRecord {
    pub fn span(&self) -> Span {
        Span::new(self.window_start, self.window_end)
    }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    window_start: String,
    window_end: String,
    label: String,
}

/// Reads a `window_start,window_end,label` CSV. Records come back sorted by
/// window start; consecutive windows may overlap.
pub fn parse_predictions<R: Read>(reader: R, source: PredictionSource) -> Result<Vec<PredictionRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<RawRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| IngestError::MalformedRow {
            row: row_no,
            reason: e.to_string(),
        })?;
        let bad = |what: &str, v: &str| IngestError::MalformedRow {
            row: row_no,
            reason: format!("bad {what} {v:?}"),
        };
        let window_start = parse_instant(&row.window_start).ok_or_else(|| bad("window_start", &row.window_start))?;
        let window_end = parse_instant(&row.window_end).ok_or_else(|| bad("window_end", &row.window_end))?;
        if window_end <= window_start {
            return Err(IngestError::MalformedRow {
                row: row_no,
                reason: "window_end is not after window_start".into(),
            });
        }
        if row.label.is_empty() {
            return Err(bad("label", &row.label));
        }
        out.push(PredictionRecord {
            source,
            window_start,
            window_end,
            label: row.label,
        });
    }
    if out.is_empty() {
        log::warn!("{source} prediction file has no rows");
    }
    out.sort_by_key(|r| r.window_start);
    Ok(out)
}

pub fn write_predictions<W: Write>(writer: W, records: &[PredictionRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["window_start", "window_end", "label"])?;
    for r in records {
        w.write_record([
            format_instant(r.window_start),
            format_instant(r.window_end),
            r.label.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Checks every record label against the source's declared label set.
pub fn check_prediction_labels(records: &[PredictionRecord], declared: &LabelSet) -> Result<(), IngestError> {
    match records.iter().position(|r| !declared.contains(&r.label)) {
        Some(i) => Err(IngestError::UndeclaredLabel {
            row: i + 1,
            label: records[i].label.clone(),
            source_name: records[i].source.to_string(),
        }),
        None => Ok(()),
    }
}
