use std::collections::BTreeMap;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use super::{EvalError, Segment};
use crate::time::Span;

/// Lengths at or above this many units share the last histogram bin.
pub const DEFAULT_EMD_MAX_LEN: usize = 600;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassWard {
    pub fr: f64,
    pub mr: f64,
    pub of: f64,
    pub uf: f64,
}

/// Ward-style segment error rates.
///
/// FR and MR are fractions of segment counts; OF and UF are fractions of
/// the evaluated span's duration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentErrorCounts {
    pub fr: f64,
    pub mr: f64,
    pub of: f64,
    pub uf: f64,
    pub gt_segments: usize,
    pub pred_segments: usize,
    pub fragmented: usize,
    pub merged: usize,
    pub per_class: BTreeMap<String, ClassWard>,
}

fn clip(segments: &[Segment], span: &Span) -> Vec<Segment> {
    let mut out: Vec<Segment> = segments
        .iter()
        .filter_map(|s| {
            let c = s.span().intersection(span)?;
            Some(Segment::new(c.start, c.end, s.label.clone()))
        })
        .collect();
    out.sort_by_key(|s| s.start);
    out
}

fn ms(d: Duration) -> i64 {
    d.num_milliseconds()
}

/// Milliseconds of `span` covered by the union of `cover`.
fn covered_ms(span: &Span, cover: &[Span]) -> i64 {
    let mut parts: Vec<Span> = cover.iter().filter_map(|c| c.intersection(span)).collect();
    parts.sort();
    let mut total = 0;
    let mut cursor = span.start;
    for p in parts {
        let start = p.start.max(cursor);
        if p.end > start {
            total += ms(p.end - start);
            cursor = p.end;
        }
    }
    total
}

struct Raw {
    fragmented: Vec<bool>,
    merged: Vec<bool>,
    of_ms: Vec<i64>,
    uf_ms: Vec<i64>,
}

fn raw_ward(pred: &[Segment], gt: &[Segment]) -> Raw {
    let same = |p: &Segment, g: &Segment| p.label == g.label && ms(p.span().overlap(&g.span())) > 0;
    let fragmented = gt
        .iter()
        .map(|g| pred.iter().filter(|p| same(p, g)).count() >= 2)
        .collect();
    let merged = pred
        .iter()
        .map(|p| gt.iter().filter(|g| same(p, g)).count() >= 2)
        .collect();
    // each gt segment pairs with its longest-overlapping same-label prediction
    let matches: Vec<Option<usize>> = gt
        .iter()
        .map(|g| {
            pred.iter()
                .enumerate()
                .filter(|(_, p)| same(p, g))
                .max_by_key(|(i, p)| (ms(p.span().overlap(&g.span())), std::cmp::Reverse(*i)))
                .map(|(i, _)| i)
        })
        .collect();
    let mut matched_gt: Vec<Vec<Span>> = vec![Vec::new(); pred.len()];
    let mut uf_ms = vec![0; gt.len()];
    for (gi, m) in matches.iter().enumerate() {
        if let Some(pi) = *m {
            matched_gt[pi].push(gt[gi].span());
            uf_ms[gi] = ms(gt[gi].span().duration()) - ms(gt[gi].span().overlap(&pred[pi].span()));
        }
    }
    let of_ms = pred
        .iter()
        .zip(&matched_gt)
        .map(|(p, gts)| {
            if gts.is_empty() {
                0
            } else {
                ms(p.span().duration()) - covered_ms(&p.span(), gts)
            }
        })
        .collect();
    Raw {
        fragmented,
        merged,
        of_ms,
        uf_ms,
    }
}

fn frac(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Ward-style FR, MR, OF and UF of `pred` against `gt` over `span`.
///
/// Both inputs are clipped to `span`. Each ground-truth segment is matched
/// to the same-label prediction it overlaps longest. OF is prediction time
/// outside the ground truth it was matched to; UF is matched ground-truth
/// time its prediction misses.
pub fn ward_metrics(pred: &[Segment], gt: &[Segment], span: &Span) -> Result<SegmentErrorCounts, EvalError> {
    if span.is_empty() {
        return Err(EvalError::SpanMismatch("empty evaluation span".into()));
    }
    let pred = clip(pred, span);
    let gt = clip(gt, span);
    let total_ms = ms(span.duration()) as f64;
    let raw = raw_ward(&pred, &gt);

    let count = |v: &[bool], keep: &dyn Fn(usize) -> bool| v.iter().enumerate().filter(|(i, &b)| b && keep(*i)).count();
    let sum = |v: &[i64], keep: &dyn Fn(usize) -> bool| {
        v.iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, &x)| x)
            .sum::<i64>() as f64
    };

    let mut per_class = BTreeMap::new();
    let labels: std::collections::BTreeSet<&str> = gt.iter().chain(&pred).map(|s| s.label.as_str()).collect();
    for label in labels {
        let g = |i: usize| gt[i].label == label;
        let p = |i: usize| pred[i].label == label;
        per_class.insert(
            label.to_string(),
            ClassWard {
                fr: frac(
                    count(&raw.fragmented, &g),
                    gt.iter().filter(|s| s.label == label).count(),
                ),
                mr: frac(count(&raw.merged, &p), pred.iter().filter(|s| s.label == label).count()),
                of: sum(&raw.of_ms, &p) / total_ms,
                uf: sum(&raw.uf_ms, &g) / total_ms,
            },
        );
    }
    let all = |_: usize| true;
    let fragmented = count(&raw.fragmented, &all);
    let merged = count(&raw.merged, &all);
    Ok(SegmentErrorCounts {
        fr: frac(fragmented, gt.len()),
        mr: frac(merged, pred.len()),
        of: sum(&raw.of_ms, &all) / total_ms,
        uf: sum(&raw.uf_ms, &all) / total_ms,
        gt_segments: gt.len(),
        pred_segments: pred.len(),
        fragmented,
        merged,
        per_class,
    })
}

/// Segment length in whole units, rounded, at least 1.
fn length_units(s: &Segment, unit: Duration) -> usize {
    let u = ms(unit) as f64;
    ((ms(s.span().duration()) as f64 / u).round() as usize).max(1)
}

/// Counts of segment lengths: bin `k - 1` holds length `k`, the last bin
/// holds every length `>= max_len`.
pub fn length_histogram(segments: &[Segment], unit: Duration, max_len: usize) -> Vec<f64> {
    let max_len = max_len.max(1);
    let mut h = vec![0.0; max_len];
    for s in segments {
        h[length_units(s, unit).min(max_len) - 1] += 1.0;
    }
    h
}

/// Earth mover's distance between two histograms on unit-spaced bins.
/// Each is normalized to unit mass first.
pub fn emd_histograms(p: &[f64], q: &[f64]) -> Result<f64, EvalError> {
    if p.iter().chain(q).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(EvalError::Invalid(
            "histogram weights must be finite and nonnegative".into(),
        ));
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    match (sp > 0.0, sq > 0.0) {
        (false, false) => return Ok(0.0),
        (true, true) => {}
        _ => return Err(EvalError::OneEmptyDistribution),
    }
    let n = p.len().max(q.len());
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for k in 0..n.saturating_sub(1) {
        cp += p.get(k).copied().unwrap_or(0.0) / sp;
        cq += q.get(k).copied().unwrap_or(0.0) / sq;
        total += (cp - cq).abs();
    }
    Ok(total)
}

/// EMD between the segment-length distributions, in units.
pub fn emd_segment_lengths(pred: &[Segment], gt: &[Segment], unit: Duration, max_len: usize) -> Result<f64, EvalError> {
    emd_histograms(
        &length_histogram(pred, unit, max_len),
        &length_histogram(gt, unit, max_len),
    )
}

/// Percentage of segments with each length `1..=max_len` units.
pub fn short_segment_distribution(segments: &[Segment], unit: Duration, max_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; max_len];
    if segments.is_empty() {
        return out;
    }
    for s in segments {
        let k = length_units(s, unit);
        if k <= max_len {
            out[k - 1] += 1.0;
        }
    }
    let n = segments.len() as f64;
    out.iter_mut().for_each(|x| *x = *x * 100.0 / n);
    out
}
