use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;

use super::parse::{WireMinute, WireSegment};
use super::{MinutePrediction, ReasonerError};
use crate::align::{bundles_to_json, EvidenceBundle};
use crate::context::ContextPrior;
use crate::labels::LabelSet;
use crate::time::format_instant;
use crate::timeline::VersionedSegment;

pub const CROSS_REFERENCE_TEMPLATE: &str = include_str!("templates/cross_reference.txt");
pub const REFINEMENT_TEMPLATE: &str = include_str!("templates/refinement.txt");

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{\{([A-Z_]+)\}\}|\{([A-Za-z_]+)\}").expect("valid regex"));

static RESIDUAL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\{\{[A-Z_]+\}\}|\{(?:correction_sources_text|POSSIBLE_ACTIVITY_LABELS)\}").expect("valid regex")
});

/// Placeholder tokens left in a rendered prompt.
pub fn find_residual_placeholders(text: &str) -> Vec<String> {
    RESIDUAL.find_iter(text).map(|m| m.as_str().to_string()).collect()
}

/// Single pass over the template, so inserted text is never rescanned.
fn substitute(template: &str, values: &HashMap<&str, String>) -> String {
    PLACEHOLDER
        .replace_all(template, |caps: &regex::Captures| {
            let name = caps.get(1).or(caps.get(2)).expect("one group matches").as_str();
            values.get(name).cloned().unwrap_or_else(|| caps[0].to_string())
        })
        .into_owned()
}

/// Labels as a JSON-style list: `["Cook", "Relax"]`.
pub fn format_label_list(labels: &LabelSet) -> String {
    let quoted: Vec<String> = labels
        .iter()
        .map(|l| serde_json::to_string(l).expect("string serializes"))
        .collect();
    format!("[{}]", quoted.join(", "))
}

/// Source descriptions for the cross-reference prompt.
pub fn default_sources_text(has_env: bool, has_wear: bool) -> String {
    let mut lines = vec![
        "- summary: observations for the minute: \"location\" lists visited locations in order (most recent last, \"out of home\" when the resident has left), \"interaction\" lists object interactions, \"environment\" gives min/max/mean readings per variable".to_string(),
    ];
    if has_env {
        lines.push(
            "- environmental_prediction: activity label predicted by the ambient-sensor recognizer (TDOST); a coarse hypothesis".into(),
        );
    }
    if has_wear {
        lines.push("- wearable_prediction: activity label predicted from the wearable device".into());
    }
    lines.join("\n")
}

pub struct CrossrefInput<'a> {
    pub home_id: &'a str,
    pub bundles: &'a [EvidenceBundle],
    pub prior: &'a ContextPrior,
    pub sources_text: &'a str,
    pub allowed: &'a LabelSet,
    pub window_size: usize,
}

pub fn render_crossref_prompt(input: &CrossrefInput<'_>) -> Result<String, ReasonerError> {
    if input.window_size == 0 || input.bundles.len() != input.window_size {
        return Err(ReasonerError::WindowSizeMismatch {
            expected: input.window_size,
            found: input.bundles.len(),
        });
    }
    let values = HashMap::from([
        ("WINDOW_SIZE", input.window_size.to_string()),
        ("HOME_ID", input.home_id.to_string()),
        ("correction_sources_text", input.sources_text.to_string()),
        ("SENSOR_BLOCK", bundles_to_json(input.bundles)),
        ("CONTEXT_BLOCK", input.prior.render()),
        ("POSSIBLE_ACTIVITY_LABELS", format_label_list(input.allowed)),
    ]);
    Ok(substitute(CROSS_REFERENCE_TEMPLATE, &values))
}

pub struct RefineInput<'a> {
    pub predictions: &'a [MinutePrediction],
    pub history: &'a [VersionedSegment],
    pub prior: &'a ContextPrior,
    pub allowed: &'a LabelSet,
}

fn refine_values(input: &RefineInput<'_>) -> HashMap<&'static str, String> {
    let minutes: Vec<WireMinute> = input
        .predictions
        .iter()
        .map(|p| WireMinute {
            timestamp: format_instant(p.timestamp),
            labels: vec![p.label.clone(), p.alternative.clone()],
            reason: p.reason.clone(),
        })
        .collect();
    let history: Vec<WireSegment> = input
        .history
        .iter()
        .map(|s| WireSegment {
            home_id: s.home_id.clone(),
            start_timestamp: format_instant(s.start),
            end_timestamp: format_instant(s.end),
            version: serde_json::json!(s.version),
            label: s.label.clone(),
        })
        .collect();
    HashMap::from([
        (
            "MINUTE_PREDICTION_BLOCK",
            serde_json::to_string_pretty(&minutes).expect("serializes"),
        ),
        (
            "ACTIVITY_HISTORY_BLOCK",
            serde_json::to_string_pretty(&history).expect("serializes"),
        ),
        ("CONTEXT_BLOCK", input.prior.render()),
        ("POSSIBLE_ACTIVITY_LABELS", format_label_list(input.allowed)),
    ])
}

pub fn render_refine_prompt(input: &RefineInput<'_>) -> String {
    substitute(REFINEMENT_TEMPLATE, &refine_values(input))
}

const STEP_HEADERS: [&str; 3] = [
    "### STEP 1: Local Temporal Smoothing",
    "### STEP 2: Cross-Window Continuity",
    "### STEP 3: Context and Routine Alignment",
];
const STEP_4_HEADER: &str = "### STEP 4: Versioned Output";

/// Split-prompt ablation: the refinement prompt restricted to a single
/// STEP section (`step` in 1..=3), with the shared input and output parts.
pub fn render_refine_step_prompt(input: &RefineInput<'_>, step: usize) -> String {
    assert!((1..=3).contains(&step), "refinement step must be 1, 2 or 3");
    let t = REFINEMENT_TEMPLATE;
    let pos = |h: &str| t.find(h).expect("template has every step header");
    let head = &t[..pos(STEP_HEADERS[0])];
    let start = pos(STEP_HEADERS[step - 1]);
    let end = if step == 3 {
        pos(STEP_4_HEADER)
    } else {
        pos(STEP_HEADERS[step])
    };
    let tail = &t[pos("## CRITICAL REQUIREMENTS")..];
    let template = format!("{head}{}{tail}", &t[start..end]);
    substitute(&template, &refine_values(input))
}
