//! Allowed-label sets.
//!
//! Datasets spell the same label several ways (`Leave Home`, `Leave_Home`,
//! `leave_home`), and model output drifts between them. Lookups go through
//! [`normalize_label`]; the set always hands back its own canonical spelling.

use serde::{Deserialize, Serialize};

/// Fallback label emitted when evidence is insufficient.
pub const OTHER: &str = "Other";

/// Lowercase, with `_` and runs of whitespace collapsed to one space.
pub fn normalize_label(label: &str) -> String {
    label
        .split(|c: char| c == '_' || c.is_whitespace())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Ordered, duplicate-free set of labels for one home.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for l in labels {
            let l = l.into();
            if !out.iter().any(|e| normalize_label(e) == normalize_label(&l)) {
                out.push(l);
            }
        }
        Self { labels: out }
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.labels
    }

    /// Canonical spelling of `label`, if it belongs to the set.
    pub fn resolve(&self, label: &str) -> Option<&str> {
        let key = normalize_label(label);
        self.labels
            .iter()
            .find(|l| normalize_label(l) == key)
            .map(String::as_str)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.resolve(label).is_some()
    }

    /// The set's spelling of the fallback label, or `"Other"` if absent.
    pub fn fallback(&self) -> &str {
        self.resolve(OTHER).unwrap_or(OTHER)
    }

    /// Returns the set with the fallback label appended when missing.
    pub fn with_fallback(mut self) -> Self {
        if !self.contains(OTHER) {
            self.labels.push(OTHER.to_string());
        }
        self
    }
}

impl<'a> IntoIterator for &'a LabelSet {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.labels.iter()
    }
}
