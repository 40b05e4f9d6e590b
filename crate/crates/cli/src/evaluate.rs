//! `trace eval` and `trace report`.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::Serialize;
use trace_core::eval::{
    apply_label_map, evaluate, segments_from_materialized, table_header, table_row, EvalError, EvalOptions, EvalReport,
    Segment,
};
use trace_core::ingest::{normalize_ground_truth, parse_ground_truth};
use trace_core::time::{parse_instant, Span};
use trace_core::timeline::SegmentStore;

use crate::error::{data, usage, CliResult};
use crate::run::{resolve_label_map, write_json};

pub struct EvalArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub label_map: Option<String>,
    pub pred_label_map: Option<String>,
    pub labels: Vec<String>,
    pub unit_seconds: f64,
    pub out: PathBuf,
    pub svg: bool,
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| usage(format!("cannot open {}: {e}", path.display())))
}

/// Predicted timeline CSV, resolved to its latest-version view.
pub fn read_prediction(path: &Path) -> CliResult<Vec<Segment>> {
    let store = SegmentStore::read_csv("pred", open(path)?).map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok(segments_from_materialized(&store.materialize_all()))
}

pub fn read_truth(path: &Path) -> CliResult<Vec<Segment>> {
    let gt = parse_ground_truth(open(path)?).map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok(normalize_ground_truth(gt).iter().map(Segment::from).collect())
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<EvalReport> {
    if args.unit_seconds.is_nan() || args.unit_seconds <= 0.0 {
        return Err(usage("unit must be positive"));
    }
    let map = |spec: &Option<String>, segs: Vec<Segment>| -> CliResult<Vec<Segment>> {
        match spec {
            Some(spec) => apply_label_map(&segs, &resolve_label_map(spec)?).map_err(data),
            None => Ok(segs),
        }
    };
    let pred = map(&args.pred_label_map, read_prediction(&args.pred)?)?;
    let gt = map(&args.label_map, read_truth(&args.gt)?)?;
    let options = EvalOptions {
        unit: Duration::milliseconds((args.unit_seconds * 1000.0).round() as i64),
        label_space: (!args.labels.is_empty()).then(|| args.labels.clone()),
        ..EvalOptions::default()
    };
    let report = evaluate(&pred, &gt, &options).map_err(|e| match e {
        EvalError::SpanMismatch(m) => usage(format!("prediction and ground truth do not overlap: {m}")),
        other => data(other),
    })?;
    fs::create_dir_all(&args.out).map_err(|e| usage(format!("{}: {e}", args.out.display())))?;
    write_json(&args.out.join("eval.json"), &report)?;
    fs::write(args.out.join("eval.txt"), report.to_table()).map_err(|e| usage(e.to_string()))?;
    if args.svg {
        let span = report_span(&report);
        let strips = [("ground truth", clip(&gt, &span)), ("prediction", clip(&pred, &span))];
        fs::write(args.out.join("timeline.svg"), timeline_svg(&span, &strips)).map_err(|e| usage(e.to_string()))?;
        fs::write(args.out.join("short_segments.svg"), short_segment_svg(&report)).map_err(|e| usage(e.to_string()))?;
    }
    Ok(report)
}

fn report_span(report: &EvalReport) -> Span {
    let p = |s: &str| parse_instant(s).expect("report writes parseable instants");
    Span::new(p(&report.span_start), p(&report.span_end))
}

fn clip(segs: &[Segment], span: &Span) -> Vec<Segment> {
    segs.iter()
        .filter_map(|s| {
            s.span()
                .intersection(span)
                .map(|c| Segment::new(c.start, c.end, s.label.clone()))
        })
        .collect()
}

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One horizontal strip per timeline, colored by label.
pub fn timeline_svg(span: &Span, strips: &[(&str, Vec<Segment>)]) -> String {
    let (width, left, row) = (1000.0, 110.0, 40.0);
    let total = (span.end - span.start).num_milliseconds().max(1) as f64;
    let mut labels: Vec<&str> = strips
        .iter()
        .flat_map(|(_, s)| s.iter().map(|x| x.label.as_str()))
        .collect();
    labels.sort_unstable();
    labels.dedup();
    let color = |l: &str| PALETTE[labels.iter().position(|x| *x == l).unwrap_or(0) % PALETTE.len()];
    let height = row * strips.len() as f64 + 20.0 * labels.len() as f64 + 30.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="12">"#,
        width + left + 10.0
    );
    for (i, (name, segs)) in strips.iter().enumerate() {
        let y = 10.0 + i as f64 * row;
        let _ = writeln!(out, r#"<text x="4" y="{}">{}</text>"#, y + 18.0, escape(name));
        for s in segs {
            let x = left + width * (s.start - span.start).num_milliseconds() as f64 / total;
            let w = width * (s.end - s.start).num_milliseconds() as f64 / total;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y}" width="{w:.2}" height="28" fill="{}"><title>{}</title></rect>"#,
                color(&s.label),
                escape(&s.label)
            );
        }
    }
    let base = 20.0 + strips.len() as f64 * row;
    for (i, l) in labels.iter().enumerate() {
        let y = base + i as f64 * 20.0;
        let _ = writeln!(
            out,
            r#"<rect x="{left}" y="{y}" width="14" height="14" fill="{}"/>"#,
            color(l)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{}</text>"#,
            left + 20.0,
            y + 12.0,
            escape(l)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Side-by-side bars of the short-segment percentages.
pub fn short_segment_svg(report: &EvalReport) -> String {
    let n = report.short_segments_gt.len().max(report.short_segments_pred.len());
    let (bar, gap, plot_h) = (16.0, 12.0, 200.0);
    let max = report
        .short_segments_gt
        .iter()
        .chain(&report.short_segments_pred)
        .cloned()
        .fold(1.0_f64, f64::max);
    let width = 40.0 + n as f64 * (2.0 * bar + gap);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="11">"#,
        plot_h + 60.0
    );
    for i in 0..n {
        let x = 30.0 + i as f64 * (2.0 * bar + gap);
        for (j, (series, fill)) in [
            (&report.short_segments_gt, "#59a14f"),
            (&report.short_segments_pred, "#e15759"),
        ]
        .into_iter()
        .enumerate()
        {
            let v = series.get(i).copied().unwrap_or(0.0);
            let h = plot_h * v / max;
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{:.2}" width="{bar}" height="{h:.2}" fill="{fill}"><title>{v:.2}%</title></rect>"#,
                x + j as f64 * bar,
                10.0 + plot_h - h
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}">{}</text>"#,
            x + bar - 4.0,
            plot_h + 25.0,
            i + 1
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="30" y="{}">segment length (units); green: ground truth, red: prediction</text>"#,
        plot_h + 45.0
    );
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Serialize)]
pub struct Aggregate {
    pub folds: Vec<String>,
    pub columns: Vec<&'static str>,
    pub mean: Vec<f64>,
    /// Sample standard deviation; 0 for a single fold.
    pub std: Vec<f64>,
}

/// Averages every `eval.json` found below `dir`.
pub fn cmd_report(dir: &Path) -> CliResult<(Aggregate, String)> {
    if !dir.is_dir() {
        return Err(usage(format!("{} is not a directory", dir.display())));
    }
    let mut found: Vec<(String, EvalReport)> = Vec::new();
    collect(dir, dir, &mut found)?;
    if found.is_empty() {
        return Err(data(format!("no eval.json below {}", dir.display())));
    }
    found.sort_by(|a, b| a.0.cmp(&b.0));
    let rows: Vec<[f64; 8]> = found.iter().map(|(_, r)| r.headline()).collect();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..8).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..8)
        .map(|c| {
            if rows.len() < 2 {
                return 0.0;
            }
            let var = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / (n - 1.0);
            var.sqrt()
        })
        .collect();
    let width = found.iter().map(|(k, _)| k.len()).max().unwrap_or(4).max(4);
    let mut table = String::new();
    let _ = writeln!(table, "{:<width$} {}", "", table_header());
    for ((name, _), row) in found.iter().zip(&rows) {
        let _ = writeln!(table, "{name:<width$} {}", table_row(row));
    }
    let _ = writeln!(table, "{:<width$} {}", "mean", table_row(&mean));
    let _ = writeln!(table, "{:<width$} {}", "std", table_row(&std));
    let agg = Aggregate {
        folds: found.into_iter().map(|(k, _)| k).collect(),
        columns: vec!["accuracy", "weighted_f1", "macro_f1", "fr", "mr", "of", "uf", "emd"],
        mean,
        std,
    };
    write_json(&dir.join("summary.json"), &agg)?;
    fs::write(dir.join("summary.txt"), &table).map_err(|e| usage(e.to_string()))?;
    Ok((agg, table))
}

fn collect(root: &Path, dir: &Path, found: &mut Vec<(String, EvalReport)>) -> CliResult<()> {
    let entries = fs::read_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| usage(e.to_string()))?.path();
        if path.is_dir() {
            if path.file_name().is_some_and(|n| n == "cache") {
                continue;
            }
            collect(root, &path, found)?;
        } else if path.file_name().is_some_and(|n| n == "eval.json") {
            let text = fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let report: EvalReport =
                serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?;
            let rel = path
                .parent()
                .and_then(|p| p.strip_prefix(root).ok())
                .unwrap_or(Path::new(""));
            let name = rel.to_string_lossy();
            found.push((if name.is_empty() { ".".into() } else { name.into_owned() }, report));
        }
    }
    Ok(())
}
