//! Timeline evaluation: unit-level accuracy, F1 and confusion, Ward-style
//! segment errors, segment-length EMD, label maps and blocked splits.
//!
//! Units whose ground truth is unlabeled are left out of every metric.

mod labelmap;
mod metrics;
mod report;
mod segments;
mod splits;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::GroundTruthSegment;
use crate::time::{Instant, Span};
use crate::timeline::{MaterializedInterval, VersionedSegment};

pub use labelmap::{apply_label_map, apply_label_map_timeline, LabelMap};
pub use metrics::{confusion_matrix, interval_f1, time_accuracy, ClassScore, ConfusionMatrix, F1Report, F1Scheme};
pub use report::{evaluate, table_header, table_row, EvalOptions, EvalReport};
pub use segments::{
    emd_histograms, emd_segment_lengths, length_histogram, short_segment_distribution, ward_metrics, ClassWard,
    SegmentErrorCounts, DEFAULT_EMD_MAX_LEN,
};
pub use splits::{blocked_splits, Fold};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("timelines differ: {0}")]
    SpanMismatch(String),
    #[error("ground truth has no labeled units")]
    NoLabeledUnits,
    #[error("one segment-length distribution is empty")]
    OneEmptyDistribution,
    #[error("label {label:?} has no entry in map {map}")]
    UnmappedLabel { map: String, label: String },
    #[error("span of {days} days is shorter than {folds} x {test_days} test days")]
    SpanTooShort { days: i64, folds: usize, test_days: i64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// A labeled interval, whatever it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Instant,
    pub end: Instant,
    pub label: String,
}

impl Segment {
    pub fn new(start: Instant, end: Instant, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

impl From<&GroundTruthSegment> for Segment {
    fn from(s: &GroundTruthSegment) -> Self {
        Segment::new(s.start, s.end, s.label.clone())
    }
}

impl From<&VersionedSegment> for Segment {
    fn from(s: &VersionedSegment) -> Self {
        Segment::new(s.start, s.end, s.label.clone())
    }
}

/// Materialized gaps carry no label and are dropped.
pub fn segments_from_materialized(m: &[MaterializedInterval]) -> Vec<Segment> {
    m.iter()
        .filter_map(|i| i.label.as_ref().map(|l| Segment::new(i.start, i.end, l.clone())))
        .collect()
}

/// Per-unit labels over `[origin, origin + len * unit)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTimeline {
    pub origin: Instant,
    pub unit: Duration,
    pub labels: Vec<Option<String>>,
}

impl LabeledTimeline {
    /// Each unit takes the label of the segment covering its start.
    pub fn from_segments(segments: &[Segment], origin: Instant, unit: Duration, len: usize) -> Self {
        let mut sorted: Vec<&Segment> = segments.iter().collect();
        sorted.sort_by_key(|s| s.start);
        let mut labels = vec![None; len];
        let unit_ms = unit.num_milliseconds();
        for s in sorted {
            // index of the first unit starting at or after `t`
            let ceil_index = |t: Instant| ((t - origin).num_milliseconds().max(0) + unit_ms - 1) / unit_ms;
            let (first, last) = (ceil_index(s.start) as usize, ceil_index(s.end) as usize);
            for slot in labels.iter_mut().take(last.min(len)).skip(first) {
                *slot = Some(s.label.clone());
            }
        }
        Self { origin, unit, labels }
    }

    pub fn span(&self) -> Span {
        Span::new(self.origin, self.origin + self.unit * self.labels.len() as i32)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub(crate) fn check_same_grid(&self, other: &LabeledTimeline) -> Result<(), EvalError> {
        if self.origin != other.origin || self.unit != other.unit || self.len() != other.len() {
            return Err(EvalError::SpanMismatch(format!(
                "{} / {}s x {} vs {} / {}s x {}",
                self.origin,
                self.unit.num_seconds(),
                self.len(),
                other.origin,
                other.unit.num_seconds(),
                other.len()
            )));
        }
        Ok(())
    }

    /// Maximal runs of equal labels; unlabeled runs are skipped.
    pub fn runs(&self) -> Vec<Segment> {
        let mut out: Vec<Segment> = Vec::new();
        let mut prev: Option<&str> = None;
        for (i, l) in self.labels.iter().enumerate() {
            let start = self.origin + self.unit * i as i32;
            match (l.as_deref(), prev) {
                (Some(l), Some(p)) if l == p => {
                    out.last_mut().expect("open run").end = start + self.unit;
                }
                (Some(l), _) => out.push(Segment::new(start, start + self.unit, l)),
                (None, _) => {}
            }
            prev = l.as_deref();
        }
        out
    }
}
