//! `trace summarize` and `trace align`: dump pipeline intermediates as JSON.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::Duration;
use trace_core::align::{build_bundles, bundles_to_json, project_event_predictions, project_fixed_windows, Timeline};
use trace_core::ingest::{
    parse_event_log, parse_predictions, ParseOptions, PredictionRecord, PredictionSource, SensorEvent,
    SensorMetadataSet,
};
use trace_core::summarize::{summarize_series, ObservationSummary, DEFAULT_OUT_OF_HOME_HORIZON};

use crate::error::{data, usage, CliResult};

pub struct InspectArgs {
    pub events: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub env: Option<PathBuf>,
    pub wear: Option<PathBuf>,
    pub unit_seconds: f64,
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| usage(format!("cannot open {}: {e}", path.display())))
}

fn unit(args: &InspectArgs) -> CliResult<Duration> {
    if args.unit_seconds.is_nan() || args.unit_seconds <= 0.0 {
        return Err(usage("unit must be positive"));
    }
    Ok(Duration::milliseconds((args.unit_seconds * 1000.0).round() as i64))
}

fn load_events(args: &InspectArgs) -> CliResult<(Vec<SensorEvent>, SensorMetadataSet)> {
    let Some(events) = &args.events else {
        return Ok((Vec::new(), SensorMetadataSet::default()));
    };
    let meta_path = args
        .metadata
        .as_ref()
        .ok_or_else(|| usage("--events needs --metadata"))?;
    let text = fs::read_to_string(meta_path).map_err(|e| usage(format!("{}: {e}", meta_path.display())))?;
    let metadata =
        SensorMetadataSet::from_toml_str(&text).map_err(|e| data(format!("{}: {e}", meta_path.display())))?;
    let log = parse_event_log(BufReader::new(open(events)?), &metadata, ParseOptions::default())
        .map_err(|e| data(format!("{}: {e}", events.display())))?;
    for issue in &log.issues {
        log::warn!("{}:{}: {:?}", events.display(), issue.line, issue.kind);
    }
    Ok((log.events, metadata))
}

fn load_predictions(path: &Option<PathBuf>, source: PredictionSource) -> CliResult<Option<Vec<PredictionRecord>>> {
    path.as_ref()
        .map(|p| parse_predictions(open(p)?, source).map_err(|e| data(format!("{}: {e}", p.display()))))
        .transpose()
}

fn summaries(events: &[SensorEvent], metadata: &SensorMetadataSet, timeline: &Timeline) -> Vec<ObservationSummary> {
    summarize_series(events, metadata, &timeline.spans(), DEFAULT_OUT_OF_HOME_HORIZON)
}

/// One summary object per unit interval.
pub fn cmd_summarize(args: &InspectArgs) -> CliResult<String> {
    let unit = unit(args)?;
    let (events, metadata) = load_events(args)?;
    if events.is_empty() {
        return Err(data("no events to summarize"));
    }
    let timeline = Timeline::for_sources(&events, None::<&PredictionRecord>, unit).map_err(data)?;
    let out: Vec<_> = summaries(&events, &metadata, &timeline)
        .iter()
        .map(ObservationSummary::to_debug_json)
        .collect();
    serde_json::to_string_pretty(&out).map_err(data)
}

/// Evidence bundles in prompt form.
pub fn cmd_align(args: &InspectArgs) -> CliResult<String> {
    let unit = unit(args)?;
    let (events, metadata) = load_events(args)?;
    let env = load_predictions(&args.env, PredictionSource::Env)?;
    let wear = load_predictions(&args.wear, PredictionSource::Wear)?;
    let preds = env.iter().chain(wear.iter()).flatten();
    let timeline = Timeline::for_sources(&events, preds, unit).map_err(data)?;
    let summaries = (!events.is_empty()).then(|| summaries(&events, &metadata, &timeline));
    let env = env.map(|r| project_event_predictions(&r, &timeline));
    let wear = wear.map(|r| project_fixed_windows(&r, &timeline));
    let bundles = build_bundles(summaries.as_deref(), env.as_deref(), wear.as_deref(), &timeline).map_err(data)?;
    Ok(bundles_to_json(&bundles))
}
