//! Per-home pipeline: summarize, align, fuse each window, refine it against
//! recent history and write the result into the versioned store.

use std::time::Instant as WallClock;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{
    build_bundles, project_event_predictions, project_fixed_windows, AlignError, EvidenceBundle, Timeline, DEFAULT_UNIT,
};
use crate::context::ContextPrior;
use crate::ingest::{PredictionRecord, SensorEvent, SensorMetadataSet};
use crate::labels::LabelSet;
use crate::reasoner::{
    default_sources_text, fallback_predictions, identity_segments, parse_crossref_response, parse_refine_response,
    render_crossref_prompt, render_refine_prompt, render_refine_step_prompt, BackendResponse, CrossrefInput,
    PromptKind, Reasoner, ReasonerError, RefineInput,
};
use crate::summarize::{summarize_series, DEFAULT_OUT_OF_HOME_HORIZON};
use crate::time::{format_instant, Instant, Span};
use crate::timeline::{SegmentStore, VersionedSegment};

pub use crate::reasoner::{MinutePrediction, RefineScope};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub home_id: String,
    pub unit: Duration,
    /// Units per inference window.
    pub window_size: usize,
    /// Units between consecutive window starts. Equal to `window_size` unless overlap is wanted.
    pub stride: usize,
    /// Refined windows shown to refinement as history.
    pub history_windows: usize,
    pub allowed: LabelSet,
    /// Overrides the generated source descriptions.
    pub sources_text: Option<String>,
    /// Experimental: one refinement prompt per STEP section.
    pub split_refinement: bool,
    pub out_of_home_horizon: Duration,
}

impl PipelineConfig {
    pub fn new(home_id: impl Into<String>, allowed: LabelSet) -> Self {
        Self {
            home_id: home_id.into(),
            unit: DEFAULT_UNIT,
            window_size: 10,
            stride: 10,
            history_windows: 2,
            allowed,
            sources_text: None,
            split_refinement: false,
            out_of_home_horizon: DEFAULT_OUT_OF_HOME_HORIZON,
        }
    }

    fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: &str| Err(InferenceError::Config(m.into()));
        if self.window_size == 0 {
            return bad("window_size must be positive");
        }
        if self.stride == 0 || self.stride > self.window_size {
            return bad("stride must be in 1..=window_size");
        }
        if self.unit <= Duration::zero() {
            return bad("unit must be positive");
        }
        if self.allowed.is_empty() {
            return bad("label set is empty");
        }
        Ok(())
    }

    fn history_span(&self) -> Duration {
        self.unit * (self.history_windows * self.window_size) as i32
    }
}

/// Everything the pipeline reads for one home.
#[derive(Debug, Clone, Default)]
pub struct HomeInputs {
    pub events: Vec<SensorEvent>,
    pub metadata: SensorMetadataSet,
    pub env_predictions: Option<Vec<PredictionRecord>>,
    pub wear_predictions: Option<Vec<PredictionRecord>>,
    pub prior: ContextPrior,
    /// Restricts inference to this range; otherwise the extent of all inputs.
    pub span: Option<Span>,
}

/// Fuses one window. Transport failure is returned to the caller.
pub fn cross_reference(
    reasoner: &Reasoner,
    config: &PipelineConfig,
    bundles: &[EvidenceBundle],
    prior: &ContextPrior,
    sources_text: &str,
    trace_id: String,
) -> Result<BackendResponse<Vec<MinutePrediction>>, ReasonerError> {
    let text = render_crossref_prompt(&CrossrefInput {
        home_id: &config.home_id,
        bundles,
        prior,
        sources_text,
        allowed: &config.allowed,
        window_size: config.window_size,
    })?;
    let request = reasoner.request(PromptKind::CrossReference, text, trace_id)?;
    let stamps: Vec<Instant> = bundles.iter().map(EvidenceBundle::timestamp).collect();
    reasoner.call(
        &request,
        |raw| parse_crossref_response(raw, &stamps, &config.allowed),
        || fallback_predictions(bundles, &config.allowed),
    )
}

fn identity(
    scope: &RefineScope,
    predictions: &[MinutePrediction],
    unit: Duration,
    version: u32,
) -> Vec<VersionedSegment> {
    identity_segments(predictions, unit)
        .into_iter()
        .map(|(span, label)| VersionedSegment {
            start: span.start,
            end: span.end,
            label,
            version,
            home_id: scope.home_id.clone(),
        })
        .collect()
}

/// Minute labels implied by a segmentation, one per prediction timestamp.
fn relabel(predictions: &[MinutePrediction], segments: &[VersionedSegment]) -> Vec<MinutePrediction> {
    predictions
        .iter()
        .map(|p| {
            let seg = segments.iter().find(|s| s.span().contains(p.timestamp));
            match seg {
                Some(s) if s.label != p.label => MinutePrediction {
                    alternative: p.label.clone(),
                    label: s.label.clone(),
                    reason: "revised in previous refinement step".into(),
                    ..p.clone()
                },
                _ => p.clone(),
            }
        })
        .collect()
}

/// Outcome of refining one window.
#[derive(Debug, Clone)]
pub struct Refined {
    pub segments: Vec<VersionedSegment>,
    pub degraded: bool,
    pub unavailable: bool,
}

/// Refines one window's predictions. Every returned segment carries `version`.
pub fn refine(
    reasoner: &Reasoner,
    config: &PipelineConfig,
    scope: &RefineScope,
    predictions: &[MinutePrediction],
    history: &[VersionedSegment],
    prior: &ContextPrior,
    version: u32,
    trace_id: &str,
) -> Result<Refined, ReasonerError> {
    let steps: Vec<Option<usize>> = if config.split_refinement {
        vec![Some(1), Some(2), Some(3)]
    } else {
        vec![None]
    };
    let mut current = predictions.to_vec();
    let mut result = Refined {
        segments: identity(scope, predictions, config.unit, version),
        degraded: false,
        unavailable: false,
    };
    for step in steps {
        let input = RefineInput {
            predictions: &current,
            history,
            prior,
            allowed: &config.allowed,
        };
        let text = match step {
            Some(k) => render_refine_step_prompt(&input, k),
            None => render_refine_prompt(&input),
        };
        let id = match step {
            Some(k) => format!("{trace_id}:step{k}"),
            None => trace_id.to_string(),
        };
        let request = reasoner.request(PromptKind::Refinement, text, id)?;
        let segments = match reasoner.call(
            &request,
            |raw| parse_refine_response(raw, scope, &config.allowed),
            || identity(scope, &current, config.unit, version),
        ) {
            Ok(resp) => {
                result.degraded |= resp.degraded;
                resp.parsed
            }
            Err(ReasonerError::BackendUnavailable { .. }) => {
                result.degraded = true;
                result.unavailable = true;
                identity(scope, &current, config.unit, version)
            }
            Err(e) => return Err(e),
        };
        current = relabel(&current, &segments);
        result.segments = segments;
    }
    for s in &mut result.segments {
        s.version = version;
        s.home_id = scope.home_id.clone();
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradedWindow {
    pub step: usize,
    pub start: String,
    pub stage: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub home_id: String,
    pub origin: String,
    pub unit_seconds: f64,
    pub units: usize,
    pub steps: usize,
    pub degraded_windows: Vec<DegradedWindow>,
    pub backend_requests: usize,
    pub backend_attempts: usize,
    /// Requests where every attempt failed at the transport level.
    pub unavailable_requests: usize,
    pub wall_time_ms: u64,
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub store: SegmentStore,
    pub timeline: Timeline,
    /// Fused minute labels before refinement, in timeline order.
    pub minute_predictions: Vec<MinutePrediction>,
    pub report: PipelineReport,
}

pub fn run_pipeline(
    inputs: &HomeInputs,
    config: &PipelineConfig,
    reasoner: &Reasoner,
) -> Result<PipelineOutput, InferenceError> {
    config.validate()?;
    let started = WallClock::now();
    let before = reasoner.stats();

    let timeline = match inputs.span {
        Some(span) => Timeline::covering(span.start, span.end, config.unit)?,
        None => {
            let preds = inputs
                .env_predictions
                .iter()
                .chain(inputs.wear_predictions.iter())
                .flatten();
            Timeline::for_sources(&inputs.events, preds, config.unit)?
        }
    };
    let timeline = timeline.padded_to_multiple(config.window_size);
    if timeline.is_empty() {
        return Err(AlignError::EmptyTimeline.into());
    }
    let spans = timeline.spans();
    let summaries = (!inputs.events.is_empty())
        .then(|| summarize_series(&inputs.events, &inputs.metadata, &spans, config.out_of_home_horizon));
    let env = inputs
        .env_predictions
        .as_ref()
        .map(|r| project_event_predictions(r, &timeline));
    let wear = inputs
        .wear_predictions
        .as_ref()
        .map(|r| project_fixed_windows(r, &timeline));
    let bundles = build_bundles(summaries.as_deref(), env.as_deref(), wear.as_deref(), &timeline)?;
    let sources_text = config
        .sources_text
        .clone()
        .unwrap_or_else(|| default_sources_text(inputs.env_predictions.is_some(), inputs.wear_predictions.is_some()));

    let mut store = SegmentStore::new(config.home_id.clone());
    let mut minute_predictions: Vec<Option<MinutePrediction>> = vec![None; timeline.len()];
    let mut report = PipelineReport {
        home_id: config.home_id.clone(),
        origin: format_instant(timeline.origin()),
        unit_seconds: config.unit.num_milliseconds() as f64 / 1000.0,
        units: timeline.len(),
        ..PipelineReport::default()
    };

    let mut step = 0;
    let mut first = 0;
    while first + config.window_size <= timeline.len() {
        let window_bundles = &bundles[first..first + config.window_size];
        let window = Span::new(
            window_bundles[0].interval.span.start,
            window_bundles[config.window_size - 1].interval.span.end,
        );
        let version = step as u32 + 1;
        let trace = format!("{}:{}", config.home_id, format_instant(window.start));
        let degrade = |report: &mut PipelineReport, stage: &str| {
            report.degraded_windows.push(DegradedWindow {
                step,
                start: format_instant(window.start),
                stage: stage.into(),
            })
        };

        let predictions = match cross_reference(
            reasoner,
            config,
            window_bundles,
            &inputs.prior,
            &sources_text,
            format!("{trace}:xref"),
        ) {
            Ok(resp) => {
                if resp.degraded {
                    degrade(&mut report, "cross_reference");
                }
                resp.parsed
            }
            Err(ReasonerError::BackendUnavailable { .. }) => {
                report.unavailable_requests += 1;
                degrade(&mut report, "cross_reference");
                fallback_predictions(window_bundles, &config.allowed)
            }
            Err(e) => return Err(e.into()),
        };
        for (i, p) in predictions.iter().enumerate() {
            minute_predictions[first + i] = Some(p.clone());
        }

        let horizon_start = (window.start - config.history_span()).max(timeline.origin());
        let scope = RefineScope {
            home_id: config.home_id.clone(),
            window,
            horizon_start,
        };
        let history = store.segments_in(&Span::new(horizon_start, window.start));
        let refined = refine(
            reasoner,
            config,
            &scope,
            &predictions,
            &history,
            &inputs.prior,
            version,
            &format!("{trace}:refine"),
        )?;
        if refined.unavailable {
            report.unavailable_requests += 1;
        }
        if refined.degraded {
            degrade(&mut report, "refinement");
        }
        if let Err(e) = store.insert(&refined.segments) {
            log::warn!("{trace}: refined segments rejected ({e}); storing unrefined labels");
            degrade(&mut report, "store");
            store
                .insert(&identity(&scope, &predictions, config.unit, version))
                .map_err(|e| InferenceError::Config(format!("store rejected fallback: {e}")))?;
        }
        step += 1;
        first += config.stride;
    }

    let after = reasoner.stats();
    report.steps = step;
    report.backend_requests = after.requests - before.requests;
    report.backend_attempts = after.attempts - before.attempts;
    report.wall_time_ms = started.elapsed().as_millis() as u64;
    Ok(PipelineOutput {
        store,
        timeline,
        minute_predictions: minute_predictions.into_iter().flatten().collect(),
        report,
    })
}
