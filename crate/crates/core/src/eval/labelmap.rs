use std::collections::BTreeMap;

use serde::Deserialize;

use super::{EvalError, LabeledTimeline, Segment};
use crate::labels::normalize_label;

const ARUBA: &[(&str, &str)] = &[
    ("Relax", "Relax"),
    ("Meal Preparation", "Cook"),
    ("Enter Home", "Enter Home"),
    ("Leave Home", "Leave Home"),
    ("Sleeping", "Sleep"),
    ("Eating", "Eat"),
    ("Work", "Work"),
    ("Bed to Toilet", "Bed to Toilet"),
    ("Wash Dishes", "Work"),
    ("Housekeeping", "Work"),
    ("Resperate", "Other"),
    ("Other", "Other"),
];

const MILAN: &[(&str, &str)] = &[
    ("Kitchen Activity", "Cook"),
    ("Guest Bathroom", "Use Bathroom"),
    ("Read", "Relax"),
    ("Master Bathroom", "Use Bathroom"),
    ("Leave Home", "Leave Home"),
    ("Master Bedroom Activity", "Other"),
    ("Watch TV", "Relax"),
    ("Sleep", "Sleep"),
    ("Bed to Toilet", "Bed to Toilet"),
    ("Desk Activity", "Work"),
    ("Morning Meds", "Take Medicine"),
    ("Chores", "Work"),
    ("Dining Room Activity", "Eat"),
    ("Evening Meds", "Take Medicine"),
    ("Meditate", "Other"),
    ("Other", "Other"),
];

/// Spellings found in the raw Milan logs that differ from the table.
const MILAN_ALIASES: &[(&str, &str)] = &[("Dining Rm Activity", "Eat")];

const KYOTO7: &[(&str, &str)] = &[
    ("Meal Preparation", "Cook"),
    ("R1 Work", "Work"),
    ("R1 Personal Hygiene", "Personal Hygiene"),
    ("R2 Work", "Work"),
    ("R2 Bed to Toilet", "Bed to Toilet"),
    ("R2 Personal Hygiene", "Personal Hygiene"),
    ("R1 Sleep", "Sleep"),
    ("R2 Sleep", "Sleep"),
    ("R1 Bed to Toilet", "Bed to Toilet"),
    ("Watch TV", "Relax"),
    ("Study", "Other"),
    ("Clean", "Work"),
    ("Wash Bathtub", "Other"),
    ("Other", "Other"),
];

/// Original-to-shared label map for one dataset. Lookups ignore case,
/// underscores and repeated spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub name: String,
    /// Original labels in declaration order.
    inventory: Vec<String>,
    entries: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawMap {
    #[serde(default)]
    name: Option<String>,
    map: BTreeMap<String, String>,
}

impl LabelMap {
    pub fn new<'a>(name: &str, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut m = Self {
            name: name.to_string(),
            inventory: Vec::new(),
            entries: BTreeMap::new(),
        };
        for (from, to) in pairs {
            m.insert(from, to);
        }
        m
    }

    fn insert(&mut self, from: &str, to: &str) {
        if self.entries.insert(normalize_label(from), to.to_string()).is_none() {
            self.inventory.push(from.to_string());
        }
    }

    pub fn identity<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        Self::new("identity", labels.into_iter().map(|l| (l, l)))
    }

    /// `aruba`, `milan` or `kyoto7`.
    pub fn builtin(name: &str) -> Option<Self> {
        let m = match name.to_ascii_lowercase().as_str() {
            "aruba" => Self::new("aruba", ARUBA.iter().copied()),
            "milan" => {
                let mut m = Self::new("milan", MILAN.iter().copied());
                for (from, to) in MILAN_ALIASES {
                    m.entries.insert(normalize_label(from), to.to_string());
                }
                m
            }
            "kyoto7" => Self::new("kyoto7", KYOTO7.iter().copied()),
            _ => return None,
        };
        Some(m)
    }

    /// `name = "..."` plus a `[map]` table of `"original" = "shared"`.
    pub fn from_toml_str(text: &str) -> Result<Self, EvalError> {
        let raw: RawMap = toml::from_str(text).map_err(|e| EvalError::Invalid(e.to_string()))?;
        let name = raw.name.unwrap_or_else(|| "custom".into());
        Ok(Self::new(&name, raw.map.iter().map(|(a, b)| (a.as_str(), b.as_str()))))
    }

    /// Original labels as declared.
    pub fn inventory(&self) -> &[String] {
        &self.inventory
    }

    /// Distinct target labels, in first-use order.
    pub fn shared_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for from in &self.inventory {
            let to = &self.entries[&normalize_label(from)];
            if !out.contains(to) {
                out.push(to.clone());
            }
        }
        out
    }

    pub fn map(&self, label: &str) -> Result<&str, EvalError> {
        self.entries
            .get(&normalize_label(label))
            .map(String::as_str)
            .ok_or_else(|| EvalError::UnmappedLabel {
                map: self.name.clone(),
                label: label.to_string(),
            })
    }
}

pub fn apply_label_map(segments: &[Segment], map: &LabelMap) -> Result<Vec<Segment>, EvalError> {
    segments
        .iter()
        .map(|s| Ok(Segment::new(s.start, s.end, map.map(&s.label)?)))
        .collect()
}

pub fn apply_label_map_timeline(tl: &LabeledTimeline, map: &LabelMap) -> Result<LabeledTimeline, EvalError> {
    let labels = tl
        .labels
        .iter()
        .map(|l| l.as_deref().map(|l| map.map(l).map(str::to_string)).transpose())
        .collect::<Result<_, _>>()?;
    Ok(LabeledTimeline { labels, ..tl.clone() })
}
