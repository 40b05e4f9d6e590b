//! Versioned segment store: on overlapping time the newer version wins.
//!
//! The store is an ordered map keyed by segment start. Inserting a segment
//! splits and replaces every lower-version piece it overlaps, so the stored
//! pieces are always pairwise disjoint.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{format_instant, parse_instant, Instant, Span};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VersionedSegment {
    pub start: Instant,
    pub end: Instant,
    pub label: String,
    pub version: u32,
    pub home_id: String,
}

impl VersionedSegment {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimelineError {
    #[error("segments of equal version {version} disagree on {span}")]
    VersionConflict { version: u32, span: Span },
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("csv error: {0}")]
    Csv(String),
}

impl From<csv::Error> for TimelineError {
    fn from(e: csv::Error) -> Self {
        TimelineError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Piece {
    end: Instant,
    label: String,
    version: u32,
}

/// What an insert changed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InsertReport {
    pub inserted: usize,
    /// Stored pieces cut short or split by the incoming segments.
    pub truncated: usize,
    /// Stored pieces removed entirely.
    pub replaced: usize,
    /// Time of stored data overwritten, in milliseconds.
    pub overwritten_ms: i64,
}

/// One entry of a materialized timeline; `label == None` marks a gap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterializedInterval {
    pub start: Instant,
    pub end: Instant,
    pub label: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SegmentStore {
    home_id: String,
    pieces: BTreeMap<Instant, Piece>,
}

impl SegmentStore {
    pub fn new(home_id: impl Into<String>) -> Self {
        Self {
            home_id: home_id.into(),
            pieces: BTreeMap::new(),
        }
    }

    pub fn home_id(&self) -> &str {
        &self.home_id
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    fn overlapping(&self, span: &Span) -> Vec<(Instant, Piece)> {
        let mut out: Vec<(Instant, Piece)> = self
            .pieces
            .range(..span.end)
            .rev()
            .take_while(|(_, p)| p.end > span.start)
            .map(|(s, p)| (*s, p.clone()))
            .collect();
        out.reverse();
        out
    }

    /// Inserts a batch of mutually disjoint segments atomically: either all
    /// apply or, on error, the store is unchanged.
    ///
    /// Incoming time is owned by the higher version. A lower-version
    /// incoming segment only fills time not already held by a newer piece.
    /// Equal versions may overlap only when they agree on the label.
    pub fn insert(&mut self, segments: &[VersionedSegment]) -> Result<InsertReport, TimelineError> {
        let mut sorted: Vec<&VersionedSegment> = segments.iter().collect();
        sorted.sort_by_key(|s| s.start);
        for s in &sorted {
            if s.start >= s.end {
                return Err(TimelineError::InvalidSegment(format!(
                    "{:?} has start {} not before end {}",
                    s.label,
                    format_instant(s.start),
                    format_instant(s.end)
                )));
            }
            if s.label.is_empty() {
                return Err(TimelineError::InvalidSegment("empty label".into()));
            }
        }
        if let Some(w) = sorted.windows(2).find(|w| w[0].end > w[1].start) {
            return Err(TimelineError::InvalidSegment(format!(
                "incoming segments overlap at {}",
                format_instant(w[1].start)
            )));
        }
        for s in &sorted {
            for (start, p) in self.overlapping(&s.span()) {
                if p.version == s.version && p.label != s.label {
                    let span = Span::new(start, p.end).intersection(&s.span()).expect("overlapping");
                    return Err(TimelineError::VersionConflict {
                        version: s.version,
                        span,
                    });
                }
            }
        }

        let mut report = InsertReport::default();
        for s in sorted {
            self.insert_one(s, &mut report);
        }
        Ok(report)
    }

    fn insert_one(&mut self, seg: &VersionedSegment, report: &mut InsertReport) {
        let span = seg.span();
        let hits = self.overlapping(&span);
        // Free sub-intervals of `span` the incoming segment may claim.
        let mut claim: Vec<Span> = vec![span];
        for (start, p) in &hits {
            if p.version > seg.version {
                claim = subtract(&claim, &Span::new(*start, p.end));
            }
        }
        if claim.is_empty() {
            return;
        }
        for (start, p) in hits {
            if p.version > seg.version {
                continue;
            }
            let piece_span = Span::new(start, p.end);
            let remaining = subtract(&[piece_span], &span);
            let lost: i64 = claim.iter().map(|c| c.overlap(&piece_span).num_milliseconds()).sum();
            if lost == 0 {
                continue;
            }
            self.pieces.remove(&start);
            report.overwritten_ms += lost;
            if remaining.is_empty() {
                report.replaced += 1;
            } else {
                report.truncated += 1;
            }
            for r in remaining {
                self.pieces.insert(
                    r.start,
                    Piece {
                        end: r.end,
                        label: p.label.clone(),
                        version: p.version,
                    },
                );
            }
        }
        for c in claim {
            // a remaining equal-version piece with the same label might sit
            // inside the claim; remove before writing the claim itself
            let inside: Vec<Instant> = self.pieces.range(c.start..c.end).map(|(s, _)| *s).collect();
            for s in inside {
                self.pieces.remove(&s);
            }
            self.pieces.insert(
                c.start,
                Piece {
                    end: c.end,
                    label: seg.label.clone(),
                    version: seg.version,
                },
            );
        }
        report.inserted += 1;
    }

    /// Stored pieces in time order.
    pub fn segments(&self) -> Vec<VersionedSegment> {
        self.pieces
            .iter()
            .map(|(s, p)| VersionedSegment {
                start: *s,
                end: p.end,
                label: p.label.clone(),
                version: p.version,
                home_id: self.home_id.clone(),
            })
            .collect()
    }

    /// Stored pieces intersecting `span`, clipped to it.
    pub fn segments_in(&self, span: &Span) -> Vec<VersionedSegment> {
        self.overlapping(span)
            .into_iter()
            .filter_map(|(s, p)| {
                let clipped = Span::new(s, p.end).intersection(span)?;
                Some(VersionedSegment {
                    start: clipped.start,
                    end: clipped.end,
                    label: p.label,
                    version: p.version,
                    home_id: self.home_id.clone(),
                })
            })
            .collect()
    }

    /// Highest version stored, if any.
    pub fn max_version(&self) -> Option<u32> {
        self.pieces.values().map(|p| p.version).max()
    }

    /// Coalesced label timeline over `span`. Gaps appear as `None` entries.
    pub fn materialize(&self, span: &Span) -> Vec<MaterializedInterval> {
        let mut out: Vec<MaterializedInterval> = Vec::new();
        let mut cursor = span.start;
        let push = |out: &mut Vec<MaterializedInterval>, start: Instant, end: Instant, label: Option<String>| {
            if start >= end {
                return;
            }
            if let Some(last) = out.last_mut() {
                if last.end == start && last.label == label {
                    last.end = end;
                    return;
                }
            }
            out.push(MaterializedInterval { start, end, label });
        };
        for seg in self.segments_in(span) {
            push(&mut out, cursor, seg.start, None);
            push(&mut out, seg.start, seg.end, Some(seg.label));
            cursor = seg.end;
        }
        if !self.pieces.is_empty() {
            push(&mut out, cursor, span.end, None);
        }
        // an empty store materializes to nothing rather than one big gap
        out
    }

    /// Materialization over the whole stored extent.
    pub fn materialize_all(&self) -> Vec<MaterializedInterval> {
        match self.extent() {
            Some(span) => self.materialize(&span),
            None => Vec::new(),
        }
    }

    pub fn extent(&self) -> Option<Span> {
        let first = self.pieces.keys().next()?;
        let last = self.pieces.values().map(|p| p.end).max()?;
        Some(Span::new(*first, last))
    }

    /// Label of the segment covering each unit start in `[origin, origin + n*unit)`.
    pub fn to_unit_labels(&self, origin: Instant, unit: Duration, n: usize) -> Vec<Option<String>> {
        (0..n).map(|i| self.label_at(origin + unit * i as i32)).collect()
    }

    pub fn label_at(&self, t: Instant) -> Option<String> {
        self.pieces
            .range(..=t)
            .next_back()
            .filter(|(_, p)| p.end > t)
            .map(|(_, p)| p.label.clone())
    }

    /// Writes the `start,end,label,version` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TimelineError> {
        write_segments_csv(writer, &self.segments())
    }

    /// Rebuilds a store from its CSV snapshot.
    pub fn read_csv<R: Read>(home_id: &str, reader: R) -> Result<Self, TimelineError> {
        let segs = read_segments_csv(home_id, reader)?;
        let mut store = SegmentStore::new(home_id);
        for s in segs {
            store.insert(std::slice::from_ref(&s))?;
        }
        Ok(store)
    }
}

/// `pieces \ cut`, keeping order.
fn subtract(pieces: &[Span], cut: &Span) -> Vec<Span> {
    let mut out = Vec::with_capacity(pieces.len() + 1);
    for p in pieces {
        if p.intersection(cut).is_none() {
            out.push(*p);
            continue;
        }
        if p.start < cut.start {
            out.push(Span::new(p.start, cut.start));
        }
        if cut.end < p.end {
            out.push(Span::new(cut.end, p.end));
        }
    }
    out
}

pub fn write_segments_csv<W: Write>(writer: W, segments: &[VersionedSegment]) -> Result<(), TimelineError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["start", "end", "label", "version"])?;
    for s in segments {
        w.write_record([
            format_instant(s.start),
            format_instant(s.end),
            s.label.clone(),
            s.version.to_string(),
        ])?;
    }
    w.flush().map_err(|e| TimelineError::Csv(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RawRow {
    start: String,
    end: String,
    label: String,
    #[serde(default)]
    version: Option<u32>,
}

/// Reads `start,end,label[,version]`; a missing version reads as 0.
pub fn read_segments_csv<R: Read>(home_id: &str, reader: R) -> Result<Vec<VersionedSegment>, TimelineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<RawRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| TimelineError::MalformedRow {
            row: row_no,
            reason: e.to_string(),
        })?;
        let parse = |v: &str| {
            parse_instant(v).ok_or_else(|| TimelineError::MalformedRow {
                row: row_no,
                reason: format!("bad timestamp {v:?}"),
            })
        };
        out.push(VersionedSegment {
            start: parse(&row.start)?,
            end: parse(&row.end)?,
            label: row.label,
            version: row.version.unwrap_or(0),
            home_id: home_id.to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(m: i64) -> Instant {
        parse_instant("2010-11-04T10:00:00").unwrap() + Duration::minutes(m)
    }

    fn seg(a: i64, b: i64, label: &str, version: u32) -> VersionedSegment {
        VersionedSegment {
            start: at(a),
            end: at(b),
            label: label.into(),
            version,
            home_id: "h".into(),
        }
    }

    #[test]
    fn newer_overwrites_tail() {
        let mut st = SegmentStore::new("h");
        st.insert(&[seg(0, 10, "A", 1)]).unwrap();
        let rep = st.insert(&[seg(5, 15, "B", 2)]).unwrap();
        assert_eq!(st.segments(), vec![seg(0, 5, "A", 1), seg(5, 15, "B", 2)]);
        assert_eq!(rep.truncated, 1);
        assert_eq!(rep.overwritten_ms, 5 * 60_000);
    }

    #[test]
    fn empty_store_takes_verbatim() {
        let mut st = SegmentStore::new("h");
        st.insert(&[seg(0, 10, "A", 3), seg(10, 12, "B", 3)]).unwrap();
        assert_eq!(st.segments(), vec![seg(0, 10, "A", 3), seg(10, 12, "B", 3)]);
    }

    #[test]
    fn inner_insert_splits_flanks() {
        let mut st = SegmentStore::new("h");
        st.insert(&[seg(0, 30, "A", 1)]).unwrap();
        st.insert(&[seg(10, 20, "B", 2)]).unwrap();
        assert_eq!(
            st.segments(),
            vec![seg(0, 10, "A", 1), seg(10, 20, "B", 2), seg(20, 30, "A", 1)]
        );
    }

    #[test]
    fn older_insert_only_fills_gaps() {
        let mut st = SegmentStore::new("h");
        st.insert(&[seg(10, 20, "B", 5)]).unwrap();
        st.insert(&[seg(0, 30, "A", 1)]).unwrap();
        assert_eq!(
            st.segments(),
            vec![seg(0, 10, "A", 1), seg(10, 20, "B", 5), seg(20, 30, "A", 1)]
        );
    }

    #[test]
    fn equal_version_conflict_is_rejected_atomically() {
        let mut st = SegmentStore::new("h");
        st.insert(&[seg(0, 10, "A", 1)]).unwrap();
        let err = st.insert(&[seg(20, 25, "C", 2), seg(5, 15, "B", 1)]).unwrap_err();
        assert!(matches!(err, TimelineError::VersionConflict { version: 1, .. }));
        assert_eq!(st.segments(), vec![seg(0, 10, "A", 1)]);
    }

    #[test]
    fn insert_is_idempotent() {
        let mut st = SegmentStore::new("h");
        let batch = [seg(0, 10, "A", 1), seg(10, 20, "B", 1)];
        st.insert(&batch).unwrap();
        st.insert(&[seg(5, 12, "C", 2)]).unwrap();
        let once = st.segments();
        st.insert(&[seg(5, 12, "C", 2)]).unwrap();
        assert_eq!(st.segments(), once);
    }

    #[test]
    fn invalid_segments() {
        let mut st = SegmentStore::new("h");
        assert!(matches!(
            st.insert(&[seg(5, 5, "A", 1)]),
            Err(TimelineError::InvalidSegment(_))
        ));
        assert!(matches!(
            st.insert(&[seg(0, 10, "A", 1), seg(5, 15, "B", 1)]),
            Err(TimelineError::InvalidSegment(_))
        ));
    }

    #[test]
    fn materialize_coalesces_and_reports_gaps() {
        let mut st = SegmentStore::new("h");
        assert!(st.materialize(&Span::new(at(0), at(30))).is_empty());
        st.insert(&[seg(0, 10, "A", 1), seg(10, 20, "A", 1), seg(25, 30, "B", 1)])
            .unwrap();
        let m = st.materialize(&Span::new(at(0), at(30)));
        assert_eq!(
            m,
            vec![
                MaterializedInterval {
                    start: at(0),
                    end: at(20),
                    label: Some("A".into())
                },
                MaterializedInterval {
                    start: at(20),
                    end: at(25),
                    label: None
                },
                MaterializedInterval {
                    start: at(25),
                    end: at(30),
                    label: Some("B".into())
                },
            ]
        );
    }

    #[test]
    fn unit_labels_use_interval_start() {
        let mut st = SegmentStore::new("h");
        st.insert(&[seg(0, 2, "A", 1), seg(3, 4, "B", 1)]).unwrap();
        assert_eq!(
            st.to_unit_labels(at(0), Duration::minutes(1), 5),
            vec![Some("A".into()), Some("A".into()), None, Some("B".into()), None]
        );
        assert_eq!(
            SegmentStore::new("h").to_unit_labels(at(0), Duration::minutes(1), 2),
            vec![None, None]
        );
        // a segment starting mid-unit does not own that unit
        let mut half = SegmentStore::new("h");
        half.insert(&[VersionedSegment {
            start: at(0) + Duration::seconds(30),
            ..seg(0, 2, "A", 1)
        }])
        .unwrap();
        assert_eq!(
            half.to_unit_labels(at(0), Duration::minutes(1), 2),
            vec![None, Some("A".into())]
        );
    }

    #[test]
    fn csv_snapshot_round_trip() {
        let mut st = SegmentStore::new("h");
        st.insert(&[seg(0, 10, "A", 1)]).unwrap();
        st.insert(&[seg(5, 15, "B", 2)]).unwrap();
        let mut buf = Vec::new();
        st.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("start,end,label,version\n"));
        let back = SegmentStore::read_csv("h", buf.as_slice()).unwrap();
        assert_eq!(back.segments(), st.segments());
    }
}
