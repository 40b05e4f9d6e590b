//! Projection of every evidence source onto one shared unit timeline.
//!
//! Event-window predictions are assigned to each unit interval by majority
//! overlap. Fixed-duration sources (wearable epochs, summaries) that sit on
//! the unit grid map directly.

use std::collections::BTreeMap;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{PredictionRecord, SensorEvent};
use crate::summarize::ObservationSummary;
use crate::time::{ceil_to_unit, floor_to_unit, format_instant, is_on_grid, Instant, Span};

pub const DEFAULT_UNIT: Duration = Duration::seconds(60);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AlignError {
    #[error("timeline is empty")]
    EmptyTimeline,
    #[error("alignment unit must be positive")]
    NonPositiveUnit,
    #[error("{source_name} has {found} entries for a timeline of {expected} intervals")]
    LengthMismatch {
        source_name: &'static str,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedInterval {
    pub index: usize,
    pub span: Span,
}

/// Gap-free tiling `[origin + i*unit, origin + (i+1)*unit)` for `i < len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timeline {
    origin: Instant,
    unit: Duration,
    len: usize,
}

impl Timeline {
    pub fn new(origin: Instant, unit: Duration, len: usize) -> Result<Self, AlignError> {
        if unit <= Duration::zero() {
            return Err(AlignError::NonPositiveUnit);
        }
        Ok(Self { origin, unit, len })
    }

    /// Smallest unit-grid tiling covering `[start, end)`, with the origin
    /// floored to the unit.
    pub fn covering(start: Instant, end: Instant, unit: Duration) -> Result<Self, AlignError> {
        if unit <= Duration::zero() {
            return Err(AlignError::NonPositiveUnit);
        }
        let origin = floor_to_unit(start, unit);
        let stop = ceil_to_unit(end.max(start), unit);
        let mut len = ((stop - origin).num_milliseconds() / unit.num_milliseconds()) as usize;
        if len == 0 && end > start {
            len = 1;
        }
        Self::new(origin, unit, len)
    }

    /// Timeline spanning every event and prediction window given.
    pub fn for_sources<'a>(
        events: &[SensorEvent],
        predictions: impl IntoIterator<Item = &'a PredictionRecord>,
        unit: Duration,
    ) -> Result<Self, AlignError> {
        let mut lo: Option<Instant> = None;
        let mut hi: Option<Instant> = None;
        let mut see = |a: Instant, b: Instant| {
            lo = Some(lo.map_or(a, |l| l.min(a)));
            hi = Some(hi.map_or(b, |h| h.max(b)));
        };
        if let (Some(f), Some(l)) = (events.first(), events.last()) {
            // the last event still occupies its own interval
            see(f.timestamp, l.timestamp + Duration::milliseconds(1));
        }
        for p in predictions {
            see(p.window_start, p.window_end);
        }
        match (lo, hi) {
            (Some(a), Some(b)) => Self::covering(a, b, unit),
            _ => Err(AlignError::EmptyTimeline),
        }
    }

    pub fn origin(&self) -> Instant {
        self.origin
    }

    pub fn unit(&self) -> Duration {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn end(&self) -> Instant {
        self.origin + self.unit * self.len as i32
    }

    pub fn span(&self) -> Span {
        Span::new(self.origin, self.end())
    }

    pub fn interval(&self, index: usize) -> AlignedInterval {
        let start = self.origin + self.unit * index as i32;
        AlignedInterval {
            index,
            span: Span::new(start, start + self.unit),
        }
    }

    pub fn intervals(&self) -> impl Iterator<Item = AlignedInterval> + '_ {
        (0..self.len).map(|i| self.interval(i))
    }

    pub fn spans(&self) -> Vec<Span> {
        self.intervals().map(|i| i.span).collect()
    }

    /// Index range of intervals intersecting `span`, clipped to the timeline.
    pub fn index_range(&self, span: &Span) -> std::ops::Range<usize> {
        let u = self.unit.num_milliseconds();
        let lo = (span.start - self.origin).num_milliseconds().div_euclid(u);
        let hi = ((span.end - self.origin).num_milliseconds() + u - 1).div_euclid(u);
        let clamp = |x: i64| x.clamp(0, self.len as i64) as usize;
        clamp(lo)..clamp(hi)
    }

    /// Extends the timeline so its length is a multiple of `k`.
    pub fn padded_to_multiple(&self, k: usize) -> Self {
        let len = self.len.div_ceil(k.max(1)) * k.max(1);
        Self { len, ..*self }
    }
}

struct Candidate<'a> {
    overlap_ms: i64,
    earliest_start: Instant,
    label: &'a str,
}

fn majority(cands: &BTreeMap<&str, Candidate<'_>>) -> Option<String> {
    cands
        .values()
        .filter(|c| c.overlap_ms > 0)
        .min_by(|a, b| {
            b.overlap_ms
                .cmp(&a.overlap_ms)
                .then(a.earliest_start.cmp(&b.earliest_start))
                .then(a.label.cmp(b.label))
        })
        .map(|c| c.label.to_string())
}

/// Assigns each interval the label whose windows overlap it the longest.
///
/// Overlap is summed per label, so splitting a window into adjacent pieces
/// with the same label never changes the result. Ties go to the label with
/// the earlier-starting window, then to the lexicographically smaller label.
/// Uncovered time is not a candidate; intervals no window touches get `None`.
pub fn project_event_predictions(records: &[PredictionRecord], timeline: &Timeline) -> Vec<Option<String>> {
    let mut per_interval: Vec<BTreeMap<&str, Candidate<'_>>> = (0..timeline.len()).map(|_| BTreeMap::new()).collect();
    for r in records {
        let span = r.span();
        for idx in timeline.index_range(&span) {
            let ov = timeline.interval(idx).span.overlap(&span).num_milliseconds();
            if ov <= 0 {
                continue;
            }
            let c = per_interval[idx].entry(r.label.as_str()).or_insert(Candidate {
                overlap_ms: 0,
                earliest_start: r.window_start,
                label: r.label.as_str(),
            });
            c.overlap_ms += ov;
            c.earliest_start = c.earliest_start.min(r.window_start);
        }
    }
    per_interval.iter().map(majority).collect()
}

/// Direct association for records on the unit grid; records off the grid
/// fall back to majority overlap for the intervals they touch.
pub fn project_fixed_windows(records: &[PredictionRecord], timeline: &Timeline) -> Vec<Option<String>> {
    let (aligned, misaligned): (Vec<&PredictionRecord>, Vec<&PredictionRecord>) = records.iter().partition(|r| {
        is_on_grid(r.window_start, timeline.origin(), timeline.unit())
            && is_on_grid(r.window_end, timeline.origin(), timeline.unit())
    });
    let mut out: Vec<Option<String>> = vec![None; timeline.len()];
    for r in &aligned {
        for idx in timeline.index_range(&r.span()) {
            out[idx] = Some(r.label.clone());
        }
    }
    if !misaligned.is_empty() {
        log::warn!(
            "{} fixed-window records are off the {}s grid; using majority overlap",
            misaligned.len(),
            timeline.unit().num_seconds()
        );
        let owned: Vec<PredictionRecord> = misaligned.into_iter().cloned().collect();
        let fallback = project_event_predictions(&owned, timeline);
        for (slot, fb) in out.iter_mut().zip(fallback) {
            if slot.is_none() {
                *slot = fb;
            }
        }
    }
    out
}

/// Everything known about one aligned interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub interval: AlignedInterval,
    pub summary: Option<ObservationSummary>,
    pub env_label: Option<String>,
    pub wear_label: Option<String>,
}

impl EvidenceBundle {
    pub fn timestamp(&self) -> Instant {
        self.interval.span.start
    }

    pub fn has_evidence(&self) -> bool {
        self.summary.as_ref().is_some_and(|s| !s.is_blank()) || self.env_label.is_some() || self.wear_label.is_some()
    }

    pub fn to_prompt_entry(&self) -> BundleEntry {
        BundleEntry {
            timestamp: format_instant(self.timestamp()),
            summary: self.summary.as_ref().map(ObservationSummary::to_json),
            environmental_prediction: self.env_label.clone(),
            wearable_prediction: self.wear_label.clone(),
        }
    }
}

/// Wire form of a bundle inside the fusion prompt's sensor block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environmental_prediction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wearable_prediction: Option<String>,
}

/// JSON array of timestamped bundles, as embedded in the fusion prompt.
pub fn bundles_to_json(bundles: &[EvidenceBundle]) -> String {
    let entries: Vec<BundleEntry> = bundles.iter().map(EvidenceBundle::to_prompt_entry).collect();
    serde_json::to_string_pretty(&entries).expect("bundles serialize")
}

fn check_len<T>(source_name: &'static str, data: Option<&[T]>, expected: usize) -> Result<(), AlignError> {
    match data {
        Some(d) if d.len() != expected => Err(AlignError::LengthMismatch {
            source_name,
            expected,
            found: d.len(),
        }),
        _ => Ok(()),
    }
}

/// One bundle per interval. Sources passed as `None` are left empty.
pub fn build_bundles(
    summaries: Option<&[ObservationSummary]>,
    env_labels: Option<&[Option<String>]>,
    wear_labels: Option<&[Option<String>]>,
    timeline: &Timeline,
) -> Result<Vec<EvidenceBundle>, AlignError> {
    if timeline.is_empty() {
        return Err(AlignError::EmptyTimeline);
    }
    check_len("summaries", summaries, timeline.len())?;
    check_len("env labels", env_labels, timeline.len())?;
    check_len("wear labels", wear_labels, timeline.len())?;
    Ok(timeline
        .intervals()
        .map(|interval| {
            let i = interval.index;
            EvidenceBundle {
                interval,
                summary: summaries.map(|s| s[i].clone()),
                env_label: env_labels.and_then(|e| e[i].clone()),
                wear_label: wear_labels.and_then(|w| w[i].clone()),
            }
        })
        .collect())
}

/// Event-count windowing for the environmental recognizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventWindowing {
    pub size: usize,
    pub step: usize,
}

impl EventWindowing {
    /// 30-event windows advanced by 10 events (benchmark protocol).
    pub const SLIDING_30_10: Self = Self { size: 30, step: 10 };
    /// Non-overlapping 20-event windows (sparser deployment homes).
    pub const TUMBLING_20: Self = Self { size: 20, step: 20 };

    /// Spans from each window's first event to its last. Trailing events
    /// that cannot fill a whole window are dropped. A window whose events
    /// share one timestamp is widened to one millisecond.
    pub fn windows(&self, events: &[SensorEvent]) -> Vec<Span> {
        assert!(self.size > 0 && self.step > 0, "window size and step must be positive");
        let mut out = Vec::new();
        let mut i = 0;
        while i + self.size <= events.len() {
            let start = events[i].timestamp;
            let mut end = events[i + self.size - 1].timestamp;
            if end <= start {
                end = start + Duration::milliseconds(1);
            }
            out.push(Span::new(start, end));
            i += self.step;
        }
        out
    }
}
