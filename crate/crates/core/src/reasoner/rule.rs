//! Deterministic stand-in for a language model. It reads the blocks back out
//! of the prompts this module renders and answers with the same JSON schemas.

use chrono::{Duration, Timelike};
use regex::Regex;
use serde_json::{json, Value};

use super::parse::{WireMinute, WireSegment};
use super::{Backend, BackendError, PromptKind, PromptRequest};
use crate::align::BundleEntry;
use crate::labels::{normalize_label, LabelSet};
use crate::summarize::OUT_OF_HOME;
use crate::time::{format_instant, parse_instant, Instant};

const COOK_OBJECTS: &[&str] = &[
    "stove",
    "stovetop",
    "oven",
    "microwave",
    "cooktop",
    "burner",
    "kettle",
    "toaster",
    "coffee",
];
const MEDICINE_OBJECTS: &[&str] = &["medicine", "meds", "pill"];
const TV_OBJECTS: &[&str] = &["tv", "television"];

pub struct RuleBackend {
    pub unit: Duration,
    /// Runs shorter than this many units are absorbed by a neighbour.
    pub min_segment_units: usize,
}

impl RuleBackend {
    pub fn new(unit: Duration) -> Self {
        Self {
            unit,
            min_segment_units: 2,
        }
    }
}

impl Default for RuleBackend {
    fn default() -> Self {
        Self::new(crate::align::DEFAULT_UNIT)
    }
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Result<&'a str, BackendError> {
    let from = text
        .find(start)
        .map(|i| i + start.len())
        .ok_or_else(|| BackendError::Malformed(format!("prompt lacks {start:?}")))?;
    let len = text[from..]
        .find(end)
        .ok_or_else(|| BackendError::Malformed(format!("prompt lacks {end:?}")))?;
    Ok(&text[from..from + len])
}

fn json_block<T: serde::de::DeserializeOwned>(block: &str) -> Result<T, BackendError> {
    serde_json::from_str(block).map_err(|e| BackendError::Malformed(e.to_string()))
}

fn is_sleep(label: &str) -> bool {
    normalize_label(label).contains("sleep")
}

fn mentions(text: &str, words: &[&str]) -> bool {
    let lower = text.to_lowercase();
    lower.split(|c: char| !c.is_alphanumeric()).any(|w| words.contains(&w))
}

/// `(activity, location)` pairs read from rendered typical-location lines.
fn prior_locations(context: &str) -> Vec<(String, String)> {
    let re = Regex::new(
        r"(?m)^(.+?)(?: / [^:]+)?: usually occurs (?:around .+? )?in (.+?)\.(?: \(may also occur in (.+)\))?$",
    )
    .expect("valid regex");
    let mut out = Vec::new();
    for caps in re.captures_iter(context) {
        let activity = caps[1].to_string();
        out.push((activity.clone(), caps[2].to_string()));
        if let Some(alts) = caps.get(3) {
            for l in alts.as_str().split(", ").flat_map(|p| p.split(" and ")) {
                out.push((activity.clone(), l.to_string()));
            }
        }
    }
    out
}

struct Minute<'a> {
    hour: u32,
    location: Option<&'a str>,
    interactions: Vec<&'a str>,
    env: Option<&'a str>,
    wear: Option<&'a str>,
}

impl<'a> Minute<'a> {
    fn from_entry(entry: &'a BundleEntry) -> Self {
        let summary = entry.summary.as_ref();
        let strings = |key: &str| -> Vec<&'a str> {
            summary
                .and_then(|s| s.get(key))
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).collect())
                .unwrap_or_default()
        };
        Self {
            hour: parse_instant(&entry.timestamp).map_or(12, |t| t.hour()),
            location: strings("location").last().copied(),
            interactions: strings("interaction"),
            env: entry.environmental_prediction.as_deref(),
            wear: entry.wearable_prediction.as_deref(),
        }
    }

    fn at_home(&self) -> bool {
        self.location.is_some_and(|l| l != OUT_OF_HOME)
    }

    /// Candidate labels in priority order, each with its evidence.
    fn candidates(&self, prior: &[(String, String)]) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        if let Some(w) = self.wear.filter(|w| is_sleep(w)) {
            out.push(("Sleep".into(), format!("wearable shows {w}")));
        }
        for i in self.interactions.iter().rev() {
            let label = if mentions(i, COOK_OBJECTS) {
                "Cook"
            } else if mentions(i, MEDICINE_OBJECTS) {
                "Take Medicine"
            } else if mentions(i, TV_OBJECTS) {
                "Relax"
            } else {
                continue;
            };
            out.push((label.into(), format!("interaction: {i}")));
        }
        if let Some(loc) = self.location {
            if loc == OUT_OF_HOME {
                out.push(("Leave Home".into(), "entrance used, no activity since".into()));
            } else if mentions(loc, &["bathroom", "toilet"]) {
                let night = self.hour >= 22 || self.hour < 6;
                let (first, second) = if night {
                    ("Bed to Toilet", "Use Bathroom")
                } else {
                    ("Use Bathroom", "Bed to Toilet")
                };
                out.push((first.into(), format!("location {loc}")));
                out.push((second.into(), format!("location {loc}")));
            }
        }
        if let Some(env) = self.env {
            out.push((env.to_string(), format!("environmental prediction {env}")));
        }
        if let Some(loc) = self.location {
            for (activity, place) in prior {
                if place == loc {
                    out.push((activity.clone(), format!("routine: {activity} in {loc}")));
                }
            }
        }
        out
    }

    fn permits(&self, label: &str) -> bool {
        if is_sleep(label) && self.wear.is_some_and(|w| !is_sleep(w)) {
            return false;
        }
        !(normalize_label(label) == "leave home" && self.at_home())
    }
}

fn crossref(text: &str) -> Result<String, BackendError> {
    let home = between(text, "window for home ", ".\nYou must produce")?;
    let labels: Vec<String> = json_block(between(text, "output labels from ", ".\n[IMPORTANT]")?)?;
    let allowed = LabelSet::new(labels);
    let entries: Vec<BundleEntry> = json_block(between(
        text,
        "The sensor observations are provided as structured JSON:\n",
        "\n### User Context",
    )?)?;
    let context = between(text, "contextual priors are:\n", "\n## INTERNAL REASONING PROCESS")?;
    let prior = prior_locations(context);

    let predictions: Vec<Value> = entries
        .iter()
        .map(|entry| {
            let m = Minute::from_entry(entry);
            let mut picked: Vec<(String, String)> = Vec::new();
            for (label, why) in m.candidates(&prior) {
                let Some(label) = allowed.resolve(&label) else { continue };
                if m.permits(label) && !picked.iter().any(|(l, _)| l == label) {
                    picked.push((label.to_string(), why));
                }
            }
            let fallback = allowed.fallback().to_string();
            let (label, reason) = picked
                .first()
                .cloned()
                .unwrap_or_else(|| (fallback.clone(), "no clear evidence".into()));
            let alternative = picked
                .iter()
                .map(|(l, _)| l.clone())
                .find(|l| *l != label)
                .unwrap_or_else(|| if label == fallback { label.clone() } else { fallback });
            json!({
                "timestamp": entry.timestamp,
                "labels": [label, alternative],
                "reason": reason,
            })
        })
        .collect();
    Ok(serde_json::to_string_pretty(&json!({
        "home_id": home,
        "minute_predictions": predictions,
    }))
    .expect("serializes"))
}

/// Absorbs runs shorter than `min_len` into a neighbour until none remain.
pub(crate) fn smooth_runs(runs: &mut Vec<(String, usize)>, min_len: usize) {
    loop {
        coalesce(runs);
        if runs.len() < 2 {
            return;
        }
        let Some((i, _)) = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.1 < min_len)
            .min_by_key(|(i, r)| (r.1, *i))
        else {
            return;
        };
        let left = i.checked_sub(1).map(|j| &runs[j]);
        let right = runs.get(i + 1);
        let label = match (left, right) {
            (Some(l), Some(r)) if l.0 == r.0 => l.0.clone(),
            (Some(l), Some(r)) => {
                if r.1 > l.1 {
                    r.0.clone()
                } else {
                    l.0.clone()
                }
            }
            (Some(l), None) => l.0.clone(),
            (None, Some(r)) => r.0.clone(),
            (None, None) => return,
        };
        runs[i].0 = label;
    }
}

fn coalesce(runs: &mut Vec<(String, usize)>) {
    let mut out: Vec<(String, usize)> = Vec::with_capacity(runs.len());
    for (label, n) in runs.drain(..) {
        match out.last_mut() {
            Some(last) if last.0 == label => last.1 += n,
            _ => out.push((label, n)),
        }
    }
    *runs = out;
}

impl RuleBackend {
    fn refine(&self, text: &str) -> Result<String, BackendError> {
        let minutes: Vec<WireMinute> = json_block(between(text, "The predictions are:\n", "\n### ACTIVITY_HISTORY")?)?;
        let history: Vec<WireSegment> = json_block(between(
            text,
            "immediately before this window is:\n",
            "\n### USER_CONTEXT",
        )?)?;
        let stamp = |s: &str| parse_instant(s).ok_or_else(|| BackendError::Malformed(format!("bad timestamp {s:?}")));
        let Some(first) = minutes.first() else {
            return Ok(json!({ "revised_activities": [] }).to_string());
        };
        let scope_start = stamp(&first.timestamp)?;
        let mut runs: Vec<(String, usize)> = minutes
            .iter()
            .map(|m| (m.labels.first().cloned().unwrap_or_default(), 1))
            .collect();
        smooth_runs(&mut runs, self.min_segment_units);

        let mut last_hist: Option<(Instant, Instant, &str)> = None;
        let mut version = 0u32;
        for h in &history {
            let (s, e) = (stamp(&h.start_timestamp)?, stamp(&h.end_timestamp)?);
            version = version.max(h.version.as_u64().unwrap_or(0) as u32);
            if last_hist.is_none_or(|(_, end, _)| e >= end) {
                last_hist = Some((s, e, h.label.as_str()));
            }
        }
        let home_id = history.first().map(|h| h.home_id.clone()).unwrap_or_default();

        let mut cursor = scope_start;
        let mut out = Vec::new();
        for (i, (label, n)) in runs.iter().enumerate() {
            let mut start = cursor;
            let end = cursor + self.unit * *n as i32;
            if i == 0 {
                if let Some((hs, he, hl)) = last_hist {
                    if he == scope_start && hl == label {
                        start = hs;
                    }
                }
            }
            out.push(WireSegment {
                home_id: home_id.clone(),
                start_timestamp: format_instant(start),
                end_timestamp: format_instant(end),
                version: json!(version + 1),
                label: label.clone(),
            });
            cursor = end;
        }
        Ok(serde_json::to_string_pretty(&json!({ "revised_activities": out })).expect("serializes"))
    }
}

impl Backend for RuleBackend {
    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError> {
        match request.kind {
            PromptKind::CrossReference => crossref(&request.text),
            PromptKind::Refinement => self.refine(&request.text),
        }
    }
}
