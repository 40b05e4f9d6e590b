use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::time::{format_instant, parse_instant, Instant, Span};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthSegment {
    pub start: Instant,
    pub end: Instant,
    pub label: String,
}

impl GroundTruthSegment {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    start: String,
    end: String,
    label: String,
}

/// Reads the `start,end,label` CSV. Rows with `end <= start` are rejected.
pub fn parse_ground_truth<R: Read>(reader: R) -> Result<Vec<GroundTruthSegment>, IngestError> {
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
            reason: format!("bad {what} timestamp {v:?}"),
        };
        let start = parse_instant(&row.start).ok_or_else(|| bad("start", &row.start))?;
        let end = parse_instant(&row.end).ok_or_else(|| bad("end", &row.end))?;
        if end <= start {
            return Err(IngestError::MalformedRow {
                row: row_no,
                reason: "end is not after start".into(),
            });
        }
        out.push(GroundTruthSegment {
            start,
            end,
            label: row.label,
        });
    }
    Ok(out)
}

pub fn write_ground_truth<W: Write>(writer: W, segments: &[GroundTruthSegment]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["start", "end", "label"])?;
    for s in segments {
        w.write_record([format_instant(s.start), format_instant(s.end), s.label.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// Sorts segments and resolves overlaps by truncating the earlier segment
/// at the later one's start. Segments with equal starts are ordered by
/// input position, so the later-listed one wins. Gaps stay unlabeled and
/// segments truncated to nothing are dropped.
pub fn normalize_ground_truth(mut segments: Vec<GroundTruthSegment>) -> Vec<GroundTruthSegment> {
    segments.retain(|s| {
        let ok = s.start < s.end;
        if !ok {
            log::warn!("dropping empty ground-truth segment {:?} at {}", s.label, s.start);
        }
        ok
    });
    segments.sort_by_key(|s| s.start);
    let mut out: Vec<GroundTruthSegment> = Vec::with_capacity(segments.len());
    for seg in segments {
        if let Some(prev) = out.last_mut() {
            if prev.end > seg.start {
                prev.end = seg.start;
                if prev.end <= prev.start {
                    out.pop();
                }
            }
        }
        out.push(seg);
    }
    out
}
