//! User context prior: layout, typical times, typical locations and habits.
//!
//! Priors are loaded from a TOML document or derived from labeled training
//! segments, and rendered to the plain-text block embedded in prompts.
//!
//! ```toml
//! allowed_labels = ["Sleep", "Cook", "Relax"]
//! habits = ["Relax: usually occurs after Cook."]
//!
//! [layout]
//! house_type = "one-bedroom apartment"
//!
//! [[layout.rooms]]
//! name = "kitchen"
//! objects = ["stove", "fridge"]
//!
//! [[typical_times]]
//! activity = "Sleep"
//! start = "23:00"
//! end = "07:00"
//!
//! [[typical_times]]
//! activity = "Cook"
//! sub_activity = "Breakfast"
//! around = ["07:30"]
//!
//! [[typical_locations]]
//! activity = "Cook"
//! locations = ["kitchen"]
//! object = "stove"
//! ```

use std::collections::BTreeMap;

use chrono::{NaiveTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::GroundTruthSegment;
use crate::labels::LabelSet;
use crate::time::{format_clock, parse_clock, Span};

/// Rendered in place of an empty prior.
pub const NO_CONTEXT: &str = "No user context available.";

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("malformed prior entry: {0}")]
    MalformedEntry(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PriorWarning {
    UnknownActivity {
        section: &'static str,
        activity: String,
    },
    /// Derived prior: too few training instances for the activity.
    InsufficientData {
        activity: String,
        instances: usize,
    },
}

impl std::fmt::Display for PriorWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PriorWarning::UnknownActivity { section, activity } => {
                write!(f, "{section}: activity {activity:?} is not an allowed label")
            }
            PriorWarning::InsufficientData { activity, instances } => {
                write!(f, "{activity}: only {instances} training instances, omitted")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Room {
    pub name: String,
    #[serde(default)]
    pub objects: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub house_type: Option<String>,
    #[serde(default)]
    pub rooms: Vec<Room>,
}

impl Layout {
    fn is_empty(&self) -> bool {
        self.house_type.is_none() && self.rooms.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimeExpr {
    /// Primary time first, alternatives after.
    Around(Vec<NaiveTime>),
    Span {
        start: NaiveTime,
        end: NaiveTime,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypicalTime {
    pub activity: String,
    pub sub_activity: Option<String>,
    pub when: TimeExpr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypicalLocation {
    pub activity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_activity: Option<String>,
    pub locations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextPrior {
    pub layout: Layout,
    pub typical_times: Vec<TypicalTime>,
    pub typical_locations: Vec<TypicalLocation>,
    pub habits: Vec<String>,
    pub allowed_labels: LabelSet,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawTime {
    activity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sub_activity: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    around: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrior {
    #[serde(default)]
    allowed_labels: Vec<String>,
    #[serde(default)]
    habits: Vec<String>,
    #[serde(default)]
    layout: Layout,
    #[serde(default)]
    typical_times: Vec<RawTime>,
    #[serde(default)]
    typical_locations: Vec<TypicalLocation>,
}

fn clock(activity: &str, v: &str) -> Result<NaiveTime, ContextError> {
    parse_clock(v).ok_or_else(|| ContextError::MalformedEntry(format!("{activity}: bad time {v:?}")))
}

impl TypicalTime {
    fn from_raw(raw: RawTime) -> Result<Self, ContextError> {
        let a = raw.activity.as_str();
        if a.trim().is_empty() {
            return Err(ContextError::MalformedEntry(
                "typical_times entry without activity".into(),
            ));
        }
        let when = match (raw.around.is_empty(), &raw.start, &raw.end) {
            (false, None, None) => TimeExpr::Around(raw.around.iter().map(|t| clock(a, t)).collect::<Result<_, _>>()?),
            (true, Some(s), Some(e)) => TimeExpr::Span {
                start: clock(a, s)?,
                end: clock(a, e)?,
            },
            _ => {
                return Err(ContextError::MalformedEntry(format!(
                    "{a}: give either `around` or both `start` and `end`"
                )))
            }
        };
        Ok(Self {
            activity: raw.activity,
            sub_activity: raw.sub_activity,
            when,
        })
    }

    fn to_raw(&self) -> RawTime {
        let mut raw = RawTime {
            activity: self.activity.clone(),
            sub_activity: self.sub_activity.clone(),
            ..RawTime::default()
        };
        match &self.when {
            TimeExpr::Around(ts) => raw.around = ts.iter().map(|t| format_clock(*t)).collect(),
            TimeExpr::Span { start, end } => {
                raw.start = Some(format_clock(*start));
                raw.end = Some(format_clock(*end));
            }
        }
        raw
    }
}

/// Parses a prior document. Activities missing from `allowed_labels` are
/// kept and reported as warnings; the check is skipped when no labels are
/// declared.
pub fn load_prior(text: &str) -> Result<(ContextPrior, Vec<PriorWarning>), ContextError> {
    let raw: RawPrior = toml::from_str(text).map_err(|e| ContextError::MalformedEntry(e.to_string()))?;
    for loc in &raw.typical_locations {
        if loc.locations.is_empty() {
            return Err(ContextError::MalformedEntry(format!(
                "{}: typical_locations entry without locations",
                loc.activity
            )));
        }
    }
    if let Some(room) = raw.layout.rooms.iter().find(|r| r.name.trim().is_empty()) {
        return Err(ContextError::MalformedEntry(format!("room without name: {room:?}")));
    }
    let prior = ContextPrior {
        layout: raw.layout,
        typical_times: raw
            .typical_times
            .into_iter()
            .map(TypicalTime::from_raw)
            .collect::<Result<_, _>>()?,
        typical_locations: raw.typical_locations,
        habits: raw.habits,
        allowed_labels: LabelSet::new(raw.allowed_labels),
    };
    let warnings = prior.check_activities();
    for w in &warnings {
        log::warn!("context prior: {w}");
    }
    Ok((prior, warnings))
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

impl ContextPrior {
    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
            && self.typical_times.is_empty()
            && self.typical_locations.is_empty()
            && self.habits.is_empty()
    }

    pub fn check_activities(&self) -> Vec<PriorWarning> {
        if self.allowed_labels.is_empty() {
            return Vec::new();
        }
        let times = self.typical_times.iter().map(|t| ("typical_times", &t.activity));
        let locs = self
            .typical_locations
            .iter()
            .map(|t| ("typical_locations", &t.activity));
        times
            .chain(locs)
            .filter(|(_, a)| !self.allowed_labels.contains(a))
            .map(|(section, a)| PriorWarning::UnknownActivity {
                section,
                activity: a.clone(),
            })
            .collect()
    }

    pub fn to_toml_string(&self) -> String {
        let raw = RawPrior {
            allowed_labels: self.allowed_labels.as_slice().to_vec(),
            habits: self.habits.clone(),
            layout: self.layout.clone(),
            typical_times: self.typical_times.iter().map(TypicalTime::to_raw).collect(),
            typical_locations: self.typical_locations.clone(),
        };
        toml::to_string(&raw).expect("prior serializes")
    }

    pub fn layout_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(h) = &self.layout.house_type {
            out.push(format!("User is living in a {h}."));
        }
        for room in &self.layout.rooms {
            if room.objects.is_empty() {
                out.push(format!("There is a {}.", room.name));
            } else {
                out.push(format!("There is a {} with {}.", room.name, join_list(&room.objects)));
            }
        }
        out
    }

    pub fn time_lines(&self) -> Vec<String> {
        self.typical_times
            .iter()
            .map(|t| {
                let who = subject(&t.activity, t.sub_activity.as_deref());
                match &t.when {
                    TimeExpr::Around(ts) => {
                        let mut line = format!("{who}: usually occurs around {}.", format_clock(ts[0]));
                        if ts.len() > 1 {
                            let alts: Vec<String> = ts[1..].iter().map(|t| format_clock(*t)).collect();
                            line.push_str(&format!(" (may also occur around {})", join_list(&alts)));
                        }
                        line
                    }
                    TimeExpr::Span { start, end } => format!(
                        "{who}: usually starts around {} and ends around {}.",
                        format_clock(*start),
                        format_clock(*end)
                    ),
                }
            })
            .collect()
    }

    pub fn location_lines(&self) -> Vec<String> {
        self.typical_locations
            .iter()
            .map(|l| {
                let who = subject(&l.activity, l.sub_activity.as_deref());
                let place = match &l.object {
                    Some(obj) => format!("around {obj} in {}", l.locations[0]),
                    None => format!("in {}", l.locations[0]),
                };
                let mut line = format!("{who}: usually occurs {place}.");
                if l.locations.len() > 1 {
                    line.push_str(&format!(" (may also occur in {})", join_list(&l.locations[1..])));
                }
                line
            })
            .collect()
    }

    /// Text for the prompt context block. Deterministic for a fixed prior.
    pub fn render(&self) -> String {
        if self.is_empty() {
            return NO_CONTEXT.to_string();
        }
        let sections = [
            self.layout_lines(),
            self.time_lines(),
            self.location_lines(),
            self.habits.clone(),
        ];
        sections
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.join("\n"))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

fn subject(activity: &str, sub: Option<&str>) -> String {
    match sub {
        Some(s) => format!("{activity} / {s}"),
        None => activity.to_string(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DeriveConfig {
    /// Activities with fewer training instances are omitted.
    pub min_instances: usize,
    /// A second start-hour bucket is reported when its count reaches this
    /// fraction of the mode's count.
    pub secondary_ratio: f64,
    /// Number of transition habits to emit.
    pub top_bigrams: usize,
    /// Consecutive segments further apart than this do not form a transition.
    pub max_transition_gap_minutes: i64,
}

impl Default for DeriveConfig {
    fn default() -> Self {
        Self {
            min_instances: 3,
            secondary_ratio: 0.5,
            top_bigrams: 3,
            max_transition_gap_minutes: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivityTimeStats {
    pub activity: String,
    pub instances: usize,
    pub mode_hour: u32,
    pub secondary_hour: Option<u32>,
    /// Mean circular distance of start times from the mode, in minutes.
    pub spread_minutes: f64,
}

#[derive(Debug, Clone)]
pub struct DerivedPrior {
    pub prior: ContextPrior,
    /// Indices of the input segments that lie entirely inside a training span.
    pub consumed: Vec<usize>,
    pub stats: Vec<ActivityTimeStats>,
    pub warnings: Vec<PriorWarning>,
}

fn circular_distance(a: i64, b: i64, modulus: i64) -> i64 {
    let d = (a - b).rem_euclid(modulus);
    d.min(modulus - d)
}

fn hour_bucket(t: NaiveTime) -> u32 {
    let minutes = t.hour() * 60 + t.minute();
    ((minutes + 30) / 60) % 24
}

/// Builds a prior from labeled segments. Only segments contained in one of
/// `training` are read; everything else is ignored.
pub fn derive_prior_from_history(
    segments: &[GroundTruthSegment],
    training: &[Span],
    allowed: &LabelSet,
    config: &DeriveConfig,
) -> DerivedPrior {
    let consumed: Vec<usize> = segments
        .iter()
        .enumerate()
        .filter(|(_, s)| training.iter().any(|t| t.contains_span(&s.span())))
        .map(|(i, _)| i)
        .collect();
    let used: Vec<&GroundTruthSegment> = consumed.iter().map(|&i| &segments[i]).collect();

    let mut starts: BTreeMap<&str, Vec<NaiveTime>> = BTreeMap::new();
    for s in &used {
        starts.entry(s.label.as_str()).or_default().push(s.start.time());
    }

    let mut warnings = Vec::new();
    let mut stats = Vec::new();
    let mut typical_times = Vec::new();
    for (activity, times) in &starts {
        if times.len() < config.min_instances.max(1) {
            warnings.push(PriorWarning::InsufficientData {
                activity: activity.to_string(),
                instances: times.len(),
            });
            continue;
        }
        let mut counts = [0usize; 24];
        for t in times {
            counts[hour_bucket(*t) as usize] += 1;
        }
        let neighbours = |h: usize| counts[(h + 23) % 24] + counts[(h + 1) % 24];
        let mode = (0..24)
            .max_by(|&a, &b| {
                counts[a]
                    .cmp(&counts[b])
                    .then(neighbours(a).cmp(&neighbours(b)))
                    .then(b.cmp(&a))
            })
            .expect("24 buckets");
        let secondary = (0..24)
            .filter(|&h| circular_distance(h as i64, mode as i64, 24) >= 2)
            .filter(|&h| counts[h] > 0 && counts[h] as f64 >= config.secondary_ratio * counts[mode] as f64)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)));
        let mode_minute = mode as i64 * 60;
        let spread = times
            .iter()
            .map(|t| circular_distance((t.hour() * 60 + t.minute()) as i64, mode_minute, 1440) as f64)
            .sum::<f64>()
            / times.len() as f64;
        let at = |h: usize| NaiveTime::from_hms_opt(h as u32, 0, 0).expect("valid hour");
        let mut around = vec![at(mode)];
        around.extend(secondary.map(at));
        typical_times.push(TypicalTime {
            activity: allowed.resolve(activity).unwrap_or(activity).to_string(),
            sub_activity: None,
            when: TimeExpr::Around(around),
        });
        stats.push(ActivityTimeStats {
            activity: activity.to_string(),
            instances: times.len(),
            mode_hour: mode as u32,
            secondary_hour: secondary.map(|h| h as u32),
            spread_minutes: spread,
        });
    }

    let mut ordered = used.clone();
    ordered.sort_by_key(|s| s.start);
    let max_gap = chrono::Duration::minutes(config.max_transition_gap_minutes);
    let mut bigrams: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for w in ordered.windows(2) {
        if w[0].label != w[1].label && w[1].start - w[0].end <= max_gap {
            *bigrams.entry((w[0].label.as_str(), w[1].label.as_str())).or_default() += 1;
        }
    }
    let mut ranked: Vec<((&str, &str), usize)> = bigrams
        .into_iter()
        .filter(|(_, n)| *n >= config.min_instances.max(1))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let habits = ranked
        .iter()
        .take(config.top_bigrams)
        .map(|((prev, next), _)| format!("{next}: usually occurs after {prev}."))
        .collect();

    let prior = ContextPrior {
        typical_times,
        habits,
        allowed_labels: allowed.clone(),
        ..ContextPrior::default()
    };
    DerivedPrior {
        prior,
        consumed,
        stats,
        warnings,
    }
}
