use std::fmt::Write as _;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use super::{
    apply_label_map, confusion_matrix, emd_segment_lengths, interval_f1, short_segment_distribution, time_accuracy,
    ward_metrics, ClassScore, ConfusionMatrix, EvalError, F1Scheme, LabelMap, LabeledTimeline, Segment,
    SegmentErrorCounts, DEFAULT_EMD_MAX_LEN,
};
use crate::time::{ceil_to_unit, floor_to_unit, format_instant, Span};

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub unit: Duration,
    /// Scores exactly these classes, absent ones as 0.
    pub label_space: Option<Vec<String>>,
    pub gt_map: Option<LabelMap>,
    pub pred_map: Option<LabelMap>,
    /// Evaluated range; defaults to the unit-aligned extent of the ground truth.
    pub span: Option<Span>,
    pub emd_max_len: usize,
    pub short_max_len: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            unit: crate::align::DEFAULT_UNIT,
            label_space: None,
            gt_map: None,
            pred_map: None,
            span: None,
            emd_max_len: DEFAULT_EMD_MAX_LEN,
            short_max_len: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub span_start: String,
    pub span_end: String,
    pub unit_seconds: f64,
    pub units: usize,
    pub labeled_units: usize,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub fr: f64,
    pub mr: f64,
    pub of: f64,
    pub uf: f64,
    pub emd: f64,
    /// FR/MR per segment count, OF/UF per span duration.
    pub segment_metrics: String,
    pub classes: Vec<ClassScore>,
    pub ward: SegmentErrorCounts,
    pub confusion: ConfusionMatrix,
    /// Percent of segments of each length 1..=N units.
    pub short_segments_pred: Vec<f64>,
    pub short_segments_gt: Vec<f64>,
}

fn clip(segments: &[Segment], span: &Span) -> Vec<Segment> {
    segments
        .iter()
        .filter_map(|s| {
            let c = s.span().intersection(span)?;
            Some(Segment::new(c.start, c.end, s.label.clone()))
        })
        .collect()
}

/// Merges touching same-label neighbours.
fn coalesce(mut segments: Vec<Segment>) -> Vec<Segment> {
    segments.sort_by_key(|s| s.start);
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    for s in segments {
        match out.last_mut() {
            Some(last) if last.label == s.label && last.end == s.start => last.end = s.end,
            _ => out.push(s),
        }
    }
    out
}

/// Full metric suite for one prediction against one ground truth.
pub fn evaluate(pred: &[Segment], gt: &[Segment], options: &EvalOptions) -> Result<EvalReport, EvalError> {
    if options.unit <= Duration::zero() {
        return Err(EvalError::Invalid("unit must be positive".into()));
    }
    let gt = match &options.gt_map {
        Some(m) => apply_label_map(gt, m)?,
        None => gt.to_vec(),
    };
    let pred = match &options.pred_map {
        Some(m) => apply_label_map(pred, m)?,
        None => pred.to_vec(),
    };
    let span = match options.span {
        Some(s) => s,
        None => {
            let start = gt.iter().map(|s| s.start).min().ok_or(EvalError::NoLabeledUnits)?;
            let end = gt.iter().map(|s| s.end).max().expect("non-empty");
            Span::new(floor_to_unit(start, options.unit), ceil_to_unit(end, options.unit))
        }
    };
    let pred = coalesce(clip(&pred, &span));
    let gt = clip(&gt, &span);
    if pred.is_empty() {
        return Err(EvalError::SpanMismatch(format!(
            "prediction has no segment inside {span}"
        )));
    }
    let len = ((span.duration().num_milliseconds() + options.unit.num_milliseconds() - 1)
        / options.unit.num_milliseconds()) as usize;
    let ptl = LabeledTimeline::from_segments(&pred, span.start, options.unit, len);
    let gtl = LabeledTimeline::from_segments(&gt, span.start, options.unit, len);

    let space = options.label_space.as_deref();
    let weighted = interval_f1(&ptl, &gtl, F1Scheme::Weighted, space)?;
    let macro_ = interval_f1(&ptl, &gtl, F1Scheme::Macro, space)?;
    let ward = ward_metrics(&pred, &gt, &span)?;
    let emd = emd_segment_lengths(&pred, &gt, options.unit, options.emd_max_len)?;
    Ok(EvalReport {
        span_start: format_instant(span.start),
        span_end: format_instant(span.end),
        unit_seconds: options.unit.num_milliseconds() as f64 / 1000.0,
        units: len,
        labeled_units: gtl.labels.iter().filter(|l| l.is_some()).count(),
        accuracy: time_accuracy(&ptl, &gtl)?,
        weighted_f1: weighted.score,
        macro_f1: macro_.score,
        fr: ward.fr,
        mr: ward.mr,
        of: ward.of,
        uf: ward.uf,
        emd,
        segment_metrics: "Ward-style".into(),
        classes: macro_.classes,
        confusion: confusion_matrix(&ptl, &gtl, space.unwrap_or(&[]))?,
        ward,
        short_segments_pred: short_segment_distribution(&pred, options.unit, options.short_max_len),
        short_segments_gt: short_segment_distribution(&gt, options.unit, options.short_max_len),
    })
}

const COLUMNS: [&str; 8] = ["Accuracy", "Weighted F1", "Macro F1", "FR", "MR", "OF", "UF", "EMD"];

impl EvalReport {
    pub fn headline(&self) -> [f64; 8] {
        [
            self.accuracy,
            self.weighted_f1,
            self.macro_f1,
            self.fr,
            self.mr,
            self.of,
            self.uf,
            self.emd,
        ]
    }

    /// Aligned-column summary followed by the per-class scores.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", table_header());
        let _ = writeln!(out, "{}", table_row(&self.headline()));
        let _ = writeln!(out);
        let width = self.classes.iter().map(|c| c.label.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
            "Class", "Precision", "Recall", "F1", "Support"
        );
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        out
    }
}

pub fn table_header() -> String {
    COLUMNS.iter().map(|c| format!("{c:>11}")).collect::<Vec<_>>().join(" ")
}

pub fn table_row(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:>11.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::{parse_instant, Instant};

    fn t(m: i64) -> Instant {
        parse_instant("2010-11-04T00:00:00").unwrap() + Duration::minutes(m)
    }

    #[test]
    fn perfect_prediction() {
        let gt = vec![
            Segment::new(t(0), t(10), "Sleeping"),
            Segment::new(t(10), t(25), "Meal_Preparation"),
        ];
        let pred = vec![Segment::new(t(0), t(10), "Sleep"), Segment::new(t(10), t(25), "Cook")];
        let opts = EvalOptions {
            gt_map: LabelMap::builtin("aruba"),
            ..EvalOptions::default()
        };
        let r = evaluate(&pred, &gt, &opts).unwrap();
        assert_eq!((r.accuracy, r.macro_f1, r.weighted_f1, r.emd), (1.0, 1.0, 1.0, 0.0));
        assert_eq!((r.fr, r.mr, r.of, r.uf), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.units, 25);
        let table = r.to_table();
        assert!(table.lines().next().unwrap().contains("Weighted F1"));
        assert!(table.contains("Cook"));
    }

    #[test]
    fn disjoint_prediction_is_span_mismatch() {
        let gt = vec![Segment::new(t(0), t(10), "A")];
        let pred = vec![Segment::new(t(100), t(110), "A")];
        assert!(matches!(
            evaluate(&pred, &gt, &EvalOptions::default()),
            Err(EvalError::SpanMismatch(_))
        ));
    }
}
