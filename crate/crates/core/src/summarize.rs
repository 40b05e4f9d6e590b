//! Sensor-observation summaries: where the resident is, what they touched,
//! and what the environment looked like within one fixed-duration window.
//!
//! A summary is built per window as a fold over the timeline, because
//! empty windows inherit the previous location and environment. The
//! out-of-home rule needs up to three minutes of lookahead, so a series is
//! summarized in batch rather than causally.

use std::collections::BTreeMap;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ingest::{BinaryState, SensorEvent, SensorKind, SensorMetadataSet, SensorValue};
use crate::time::{format_instant, Span};

/// Location reported while the out-of-home rule holds.
pub const OUT_OF_HOME: &str = "out of home";

/// Quiet period after an entrance event that implies the resident left.
pub const DEFAULT_OUT_OF_HOME_HORIZON: Duration = Duration::minutes(3);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvStat {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSummary {
    pub window: Span,
    /// Triggered locations in temporal order, each kept at its last occurrence.
    pub locations: Vec<String>,
    pub interactions: Vec<String>,
    pub environment: BTreeMap<String, EnvStat>,
    pub carried_location: bool,
    pub carried_environment: bool,
    pub out_of_home: bool,
}

impl ObservationSummary {
    pub fn empty(window: Span) -> Self {
        Self {
            window,
            locations: Vec::new(),
            interactions: Vec::new(),
            environment: BTreeMap::new(),
            carried_location: false,
            carried_environment: false,
            out_of_home: false,
        }
    }

    /// Most recent location, if any is known.
    pub fn current_location(&self) -> Option<&str> {
        self.locations.last().map(String::as_str)
    }

    pub fn is_blank(&self) -> bool {
        self.locations.is_empty() && self.interactions.is_empty() && self.environment.is_empty()
    }

    /// The location/interaction/environment object embedded in prompts.
    pub fn to_json(&self) -> serde_json::Value {
        let env: serde_json::Map<String, serde_json::Value> = self
            .environment
            .iter()
            .map(|(k, s)| {
                let mut o = json!({ "min": s.min, "max": s.max, "mean": round4(s.mean) });
                if let Some(u) = &s.unit {
                    o["unit"] = json!(u);
                }
                (k.clone(), o)
            })
            .collect();
        json!({
            "location": self.locations,
            "interaction": self.interactions,
            "environment": env,
        })
    }

    /// Debug form with the window and carry flags.
    pub fn to_debug_json(&self) -> serde_json::Value {
        let mut v = self.to_json();
        v["window_start"] = json!(format_instant(self.window.start));
        v["window_end"] = json!(format_instant(self.window.end));
        v["carried_location"] = json!(self.carried_location);
        v["carried_environment"] = json!(self.carried_environment);
        v["out_of_home"] = json!(self.out_of_home);
        v
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Interaction phrases for object-mapped sensors, in temporal order.
/// Motion sensors never yield interactions.
pub fn map_interactions(events: &[SensorEvent], metadata: &SensorMetadataSet) -> Vec<String> {
    events
        .iter()
        .filter_map(|e| {
            let meta = metadata.get(&e.sensor_id)?;
            if meta.kind == SensorKind::Motion {
                return None;
            }
            let object = meta.object.as_deref()?;
            let verb = match e.value {
                SensorValue::Binary(BinaryState::Open) => "open",
                SensorValue::Binary(BinaryState::Closed) => "close",
                SensorValue::Binary(BinaryState::On) => "turn on",
                SensorValue::Binary(BinaryState::Off) => "turn off",
                _ => return None,
            };
            Some(format!("{verb} the {object}"))
        })
        .collect()
}

/// Keeps only the last occurrence of each location, preserving order.
pub fn dedup_keep_last(raw: &[String]) -> Vec<String> {
    raw.iter()
        .enumerate()
        .filter(|(i, loc)| !raw[i + 1..].contains(loc))
        .map(|(_, loc)| loc.clone())
        .collect()
}

fn triggered_locations(events: &[SensorEvent], metadata: &SensorMetadataSet) -> Vec<String> {
    events
        .iter()
        .filter(|e| e.is_activation())
        .filter_map(|e| {
            let meta = metadata.get(&e.sensor_id)?;
            (meta.kind == SensorKind::Motion).then(|| meta.room.clone())
        })
        .collect()
}

/// Per-variable (min, max, mean) over the numeric readings in `events`.
pub fn environment_stats(events: &[SensorEvent], metadata: &SensorMetadataSet) -> BTreeMap<String, EnvStat> {
    let mut acc: BTreeMap<String, (f64, f64, f64, usize, Option<String>)> = BTreeMap::new();
    for e in events {
        let SensorValue::Numeric { value, unit } = &e.value else {
            continue;
        };
        let Some(meta) = metadata.get(&e.sensor_id) else {
            continue;
        };
        let entry = acc.entry(meta.variable_name().to_string()).or_insert((
            f64::INFINITY,
            f64::NEG_INFINITY,
            0.0,
            0,
            unit.clone(),
        ));
        entry.0 = entry.0.min(*value);
        entry.1 = entry.1.max(*value);
        entry.2 += *value;
        entry.3 += 1;
    }
    acc.into_iter()
        .map(|(k, (min, max, sum, n, unit))| {
            // float rounding can land the mean one ulp outside [min, max]
            let mean = (sum / n as f64).clamp(min, max);
            (k, EnvStat { min, max, mean, unit })
        })
        .collect()
}

/// Summarizes one window given the summary of the window before it.
pub fn summarize_window(
    window: Span,
    events: &[SensorEvent],
    previous: Option<&ObservationSummary>,
    metadata: &SensorMetadataSet,
) -> ObservationSummary {
    let mut summary = ObservationSummary::empty(window);

    let raw = triggered_locations(events, metadata);
    if !raw.is_empty() {
        summary.locations = dedup_keep_last(&raw);
    } else if let Some(prev) = previous {
        let returning = prev.locations == [OUT_OF_HOME] && events.iter().any(SensorEvent::is_activation);
        if returning {
            // someone is back: fall back to the rooms of whatever fired
            let rooms: Vec<String> = events
                .iter()
                .filter(|e| e.is_activation())
                .filter_map(|e| metadata.get(&e.sensor_id).map(|m| m.room.clone()))
                .collect();
            summary.locations = dedup_keep_last(&rooms);
        } else {
            summary.locations = prev.locations.clone();
            summary.carried_location = true;
        }
    }

    summary.interactions = map_interactions(events, metadata);

    let env = environment_stats(events, metadata);
    match previous {
        Some(prev) if env.is_empty() => {
            summary.environment = prev.environment.clone();
            summary.carried_environment = !prev.environment.is_empty();
        }
        Some(prev) => {
            let mut merged = prev.environment.clone();
            merged.extend(env);
            summary.environment = merged;
        }
        None => summary.environment = env,
    }
    summary
}

/// Out-of-home flag per window: the last activation at or before the
/// window end came from an entrance sensor, and nothing was activated in
/// the `horizon` after it.
pub fn detect_out_of_home(
    events: &[SensorEvent],
    metadata: &SensorMetadataSet,
    windows: &[Span],
    horizon: Duration,
) -> Vec<bool> {
    let activations: Vec<&SensorEvent> = events.iter().filter(|e| e.is_activation()).collect();
    if !metadata.has_entrance() {
        return vec![false; windows.len()];
    }
    windows
        .iter()
        .map(|w| {
            let idx = activations.partition_point(|e| e.timestamp < w.end);
            let Some(last) = idx.checked_sub(1).map(|i| activations[i]) else {
                return false;
            };
            let is_entrance = metadata.get(&last.sensor_id).is_some_and(|m| m.is_entrance);
            if !is_entrance {
                return false;
            }
            match activations.get(idx) {
                Some(next) => next.timestamp - last.timestamp >= horizon,
                None => true,
            }
        })
        .collect()
}

/// Summarizes consecutive windows, applying carry-forward and the
/// out-of-home rule. `events` must be sorted by timestamp.
pub fn summarize_series(
    events: &[SensorEvent],
    metadata: &SensorMetadataSet,
    windows: &[Span],
    horizon: Duration,
) -> Vec<ObservationSummary> {
    let away = detect_out_of_home(events, metadata, windows, horizon);
    let mut out: Vec<ObservationSummary> = Vec::with_capacity(windows.len());
    let mut cursor = 0;
    for (w, is_away) in windows.iter().zip(away) {
        let begin = cursor + events[cursor..].partition_point(|e| e.timestamp < w.start);
        let end = begin + events[begin..].partition_point(|e| e.timestamp < w.end);
        cursor = begin;
        let mut s = summarize_window(*w, &events[begin..end], out.last(), metadata);
        if is_away {
            s.locations = vec![OUT_OF_HOME.to_string()];
            s.carried_location = false;
            s.out_of_home = true;
        }
        out.push(s);
    }
    out
}
