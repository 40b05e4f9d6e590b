//! CASAS-style event logs: `DATE TIME SENSOR VALUE [ACTIVITY begin|end]`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::ground_truth::GroundTruthSegment;
use super::metadata::{SensorKind, SensorMetadataSet};
use super::IngestError;
use crate::time::{parse_date_time, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryState {
    On,
    Off,
    Open,
    Closed,
}

impl BinaryState {
    fn parse(token: &str) -> Option<Self> {
        match token.to_ascii_uppercase().as_str() {
            "ON" => Some(Self::On),
            "OFF" => Some(Self::Off),
            "OPEN" | "OPENED" => Some(Self::Open),
            "CLOSE" | "CLOSED" => Some(Self::Closed),
            _ => None,
        }
    }

    /// ON and OPEN count as activations.
    pub fn is_active(self) -> bool {
        matches!(self, Self::On | Self::Open)
    }

    fn token(self) -> &'static str {
        match self {
            Self::On => "ON",
            Self::Off => "OFF",
            Self::Open => "OPEN",
            Self::Closed => "CLOSE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SensorValue {
    Binary(BinaryState),
    Numeric { value: f64, unit: Option<String> },
    Categorical(String),
}

impl fmt::Display for SensorValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorValue::Binary(b) => f.write_str(b.token()),
            SensorValue::Numeric { value, .. } => write!(f, "{value}"),
            SensorValue::Categorical(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Marker {
    Begin,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: String,
    pub marker: Marker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorEvent {
    pub timestamp: Instant,
    pub sensor_id: String,
    pub value: SensorValue,
    pub annotation: Option<Annotation>,
}

impl SensorEvent {
    /// Whether the event counts as a sensor being triggered. Numeric
    /// readings and OFF/CLOSE transitions do not.
    pub fn is_activation(&self) -> bool {
        match &self.value {
            SensorValue::Binary(b) => b.is_active(),
            SensorValue::Numeric { .. } => false,
            SensorValue::Categorical(_) => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IssueKind {
    UnknownSensor(String),
    Malformed(String),
    NonMonotonicTimestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIssue {
    /// 1-based line number in the input.
    pub line: usize,
    pub kind: IssueKind,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Abort on the first unknown sensor instead of skipping it.
    pub unknown_sensor_fatal: bool,
    /// Abort on the first malformed line instead of collecting it.
    pub malformed_fatal: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub events: Vec<SensorEvent>,
    pub issues: Vec<LineIssue>,
}

impl ParsedLog {
    pub fn malformed_lines(&self) -> impl Iterator<Item = usize> + '_ {
        self.issues
            .iter()
            .filter(|i| matches!(i.kind, IssueKind::Malformed(_)))
            .map(|i| i.line)
    }
}

fn parse_value(token: &str, meta: &super::SensorMetadata) -> Result<SensorValue, String> {
    if let Some(b) = BinaryState::parse(token) {
        let ok = match meta.kind {
            SensorKind::Motion | SensorKind::Plug => matches!(b, BinaryState::On | BinaryState::Off),
            SensorKind::Contact => true,
            SensorKind::Environmental => false,
        };
        return if ok {
            Ok(SensorValue::Binary(b))
        } else {
            Err(format!("value {token:?} is not valid for a {:?} sensor", meta.kind))
        };
    }
    if let Ok(v) = token.parse::<f64>() {
        if !v.is_finite() {
            return Err(format!("non-finite reading {token:?}"));
        }
        if meta.accepts_numeric() {
            return Ok(SensorValue::Numeric {
                value: v,
                unit: meta.unit_tag(),
            });
        }
        return Err(format!("numeric value {token:?} for a {:?} sensor", meta.kind));
    }
    match meta.kind {
        SensorKind::Environmental | SensorKind::Plug => Ok(SensorValue::Categorical(token.to_string())),
        _ => Err(format!("value {token:?} is not valid for a {:?} sensor", meta.kind)),
    }
}

fn parse_annotation(rest: &[&str]) -> Result<Option<Annotation>, String> {
    if rest.is_empty() {
        return Ok(None);
    }
    let (marker_tok, label_toks) = rest.split_last().expect("non-empty");
    let marker = match marker_tok.to_ascii_lowercase().as_str() {
        "begin" => Marker::Begin,
        "end" => Marker::End,
        other => return Err(format!("annotation marker {other:?} is neither begin nor end")),
    };
    if label_toks.is_empty() {
        return Err("annotation marker without activity label".into());
    }
    Ok(Some(Annotation {
        label: label_toks.join(" "),
        marker,
    }))
}

/// Parses an event log. Output is stably sorted by timestamp; problems are
/// collected per line unless the options make them fatal.
pub fn parse_event_log<R: BufRead>(
    reader: R,
    metadata: &SensorMetadataSet,
    options: ParseOptions,
) -> Result<ParsedLog, IngestError> {
    let mut out = ParsedLog::default();
    let mut last: Option<Instant> = None;
    let mut unsorted = false;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let malformed = |reason: String, out: &mut ParsedLog| -> Result<(), IngestError> {
            if options.malformed_fatal {
                return Err(IngestError::MalformedLine { line: line_no, reason });
            }
            out.issues.push(LineIssue {
                line: line_no,
                kind: IssueKind::Malformed(reason),
            });
            Ok(())
        };

        if fields.len() < 4 {
            malformed(format!("expected at least 4 fields, found {}", fields.len()), &mut out)?;
            continue;
        }
        let Some(timestamp) = parse_date_time(fields[0], fields[1]) else {
            malformed(format!("bad timestamp {:?} {:?}", fields[0], fields[1]), &mut out)?;
            continue;
        };
        let sensor_id = fields[2];
        let Some(meta) = metadata.get(sensor_id) else {
            if options.unknown_sensor_fatal {
                return Err(IngestError::UnknownSensor {
                    line: line_no,
                    sensor_id: sensor_id.to_string(),
                });
            }
            log::warn!("line {line_no}: skipping unknown sensor {sensor_id}");
            out.issues.push(LineIssue {
                line: line_no,
                kind: IssueKind::UnknownSensor(sensor_id.to_string()),
            });
            continue;
        };
        let value = match parse_value(fields[3], meta) {
            Ok(v) => v,
            Err(reason) => {
                malformed(reason, &mut out)?;
                continue;
            }
        };
        let annotation = match parse_annotation(&fields[4..]) {
            Ok(a) => a,
            Err(reason) => {
                malformed(reason, &mut out)?;
                continue;
            }
        };

        if last.is_some_and(|prev| timestamp < prev) {
            out.issues.push(LineIssue {
                line: line_no,
                kind: IssueKind::NonMonotonicTimestamp,
            });
            unsorted = true;
        }
        last = Some(last.map_or(timestamp, |p| p.max(timestamp)));
        out.events.push(SensorEvent {
            timestamp,
            sensor_id: sensor_id.to_string(),
            value,
            annotation,
        });
    }

    if unsorted {
        log::warn!("event log timestamps are not monotonic; events were stably sorted");
        out.events.sort_by_key(|e| e.timestamp);
    }
    Ok(out)
}

/// Serializes one event back to the log line format.
pub fn format_event(event: &SensorEvent) -> String {
    let mut line = format!(
        "{} {} {} {}",
        event.timestamp.format("%Y-%m-%d"),
        event.timestamp.format("%H:%M:%S%.f"),
        event.sensor_id,
        event.value
    );
    if let Some(a) = &event.annotation {
        let marker = match a.marker {
            Marker::Begin => "begin",
            Marker::End => "end",
        };
        line.push_str(&format!(" {} {}", a.label, marker));
    }
    line
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnmatchedMarker {
    pub timestamp: Instant,
    pub label: String,
    pub marker: Marker,
}

#[derive(Debug, Clone, Default)]
pub struct AnnotationPairing {
    pub segments: Vec<GroundTruthSegment>,
    pub unmatched: Vec<UnmatchedMarker>,
}

/// Pairs embedded begin/end markers greedily by label: an `end` closes the
/// most recent open `begin` of the same label. Markers left open, ends
/// without a begin, and zero-length pairs are reported as unmatched.
pub fn pair_annotations(events: &[SensorEvent]) -> AnnotationPairing {
    let mut open: BTreeMap<&str, Vec<Instant>> = BTreeMap::new();
    let mut out = AnnotationPairing::default();
    for e in events {
        let Some(a) = &e.annotation else { continue };
        match a.marker {
            Marker::Begin => open.entry(a.label.as_str()).or_default().push(e.timestamp),
            Marker::End => match open.get_mut(a.label.as_str()).and_then(Vec::pop) {
                Some(start) if start < e.timestamp => out.segments.push(GroundTruthSegment {
                    start,
                    end: e.timestamp,
                    label: a.label.clone(),
                }),
                Some(start) => {
                    out.unmatched.push(UnmatchedMarker {
                        timestamp: start,
                        label: a.label.clone(),
                        marker: Marker::Begin,
                    });
                    out.unmatched.push(UnmatchedMarker {
                        timestamp: e.timestamp,
                        label: a.label.clone(),
                        marker: Marker::End,
                    });
                }
                None => out.unmatched.push(UnmatchedMarker {
                    timestamp: e.timestamp,
                    label: a.label.clone(),
                    marker: Marker::End,
                }),
            },
        }
    }
    for (label, starts) in open {
        for timestamp in starts {
            out.unmatched.push(UnmatchedMarker {
                timestamp,
                label: label.to_string(),
                marker: Marker::Begin,
            });
        }
    }
    out.segments.sort_by_key(|s| (s.start, s.end));
    out.unmatched.sort_by_key(|u| u.timestamp);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SensorMetadata;
    use crate::time::parse_instant;
    use proptest::prelude::*;

    fn meta() -> SensorMetadataSet {
        let m = |id: &str, kind, room: &str| SensorMetadata {
            sensor_id: id.into(),
            kind,
            room: room.into(),
            object: None,
            is_entrance: false,
            variable: None,
            unit: None,
        };
        SensorMetadataSet::new([
            m("M004", SensorKind::Motion, "bedroom"),
            m("M010", SensorKind::Motion, "kitchen"),
            m("D001", SensorKind::Contact, "foyer"),
            m("T001", SensorKind::Environmental, "kitchen"),
        ])
        .unwrap()
    }

    fn parse(text: &str) -> ParsedLog {
        parse_event_log(text.as_bytes(), &meta(), ParseOptions::default()).unwrap()
    }

    #[test]
    fn parses_casas_line() {
        let log = parse("2010-11-04 05:40:51.30 M004 ON\n");
        assert!(log.issues.is_empty());
        assert_eq!(
            log.events,
            vec![SensorEvent {
                timestamp: parse_instant("2010-11-04T05:40:51.30").unwrap(),
                sensor_id: "M004".into(),
                value: SensorValue::Binary(BinaryState::On),
                annotation: None,
            }]
        );
        let line = format_event(&log.events[0]);
        assert_eq!(parse(&line).events, log.events);
    }

    #[test]
    fn empty_input_is_empty() {
        let log = parse("");
        assert!(log.events.is_empty());
        assert!(log.issues.is_empty());
    }

    #[test]
    fn two_fields_is_malformed_at_line() {
        let log = parse("2010-11-04 05:40:51 M004 ON\n2010-11-04 05:41:00\n");
        assert_eq!(log.events.len(), 1);
        assert_eq!(log.malformed_lines().collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn malformed_can_be_fatal() {
        let err = parse_event_log(
            "garbage\n".as_bytes(),
            &meta(),
            ParseOptions {
                malformed_fatal: true,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::MalformedLine { line: 1, .. }));
    }

    #[test]
    fn unknown_sensor_skipped_or_fatal() {
        let text = "2010-11-04 05:40:51 X999 ON\n2010-11-04 05:40:52 M004 OFF\n";
        let log = parse(text);
        assert_eq!(log.events.len(), 1);
        assert_eq!(log.issues[0].kind, IssueKind::UnknownSensor("X999".into()));
        let fatal = parse_event_log(
            text.as_bytes(),
            &meta(),
            ParseOptions {
                unknown_sensor_fatal: true,
                ..Default::default()
            },
        );
        assert!(matches!(fatal, Err(IngestError::UnknownSensor { line: 1, .. })));
    }

    #[test]
    fn value_kind_must_match_sensor_kind() {
        let log = parse("2010-11-04 05:40:51 M004 21.5\n2010-11-04 05:40:52 T001 ON\n");
        assert!(log.events.is_empty());
        assert_eq!(log.malformed_lines().count(), 2);
        let ok = parse("2010-11-04 05:40:51 T001 21.5\n");
        assert!(matches!(
            ok.events[0].value,
            SensorValue::Numeric { value, ref unit } if value == 21.5 && unit.as_deref() == Some("°C")
        ));
    }

    #[test]
    fn non_monotonic_lines_are_flagged_and_sorted() {
        let log = parse("2010-11-04 05:40:59 M004 ON\n2010-11-04 05:40:51 M010 ON\n2010-11-04 05:40:51 D001 OPEN\n");
        let ids: Vec<_> = log.events.iter().map(|e| e.sensor_id.as_str()).collect();
        assert_eq!(ids, ["M010", "D001", "M004"]);
        assert_eq!(
            log.issues
                .iter()
                .filter(|i| i.kind == IssueKind::NonMonotonicTimestamp)
                .count(),
            2
        );
    }

    #[test]
    fn annotations_pair_greedily_by_label() {
        let log = parse(
            "2010-11-04 05:00:00 M004 ON Sleeping begin\n\
             2010-11-04 05:10:00 M010 ON Meal_Preparation begin\n\
             2010-11-04 05:20:00 M010 OFF Meal_Preparation end\n\
             2010-11-04 05:30:00 M004 OFF Sleeping end\n\
             2010-11-04 05:40:00 M004 OFF Relax end\n\
             2010-11-04 05:50:00 M004 ON Wash Dishes begin\n",
        );
        let pairing = pair_annotations(&log.events);
        let labels: Vec<_> = pairing.segments.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["Sleeping", "Meal_Preparation"]);
        assert_eq!(pairing.unmatched.len(), 2);
        assert_eq!(pairing.unmatched[0].label, "Relax");
        assert_eq!(pairing.unmatched[1].label, "Wash Dishes");
        assert_eq!(pairing.unmatched[1].marker, Marker::Begin);
    }

    fn arb_line() -> impl Strategy<Value = String> {
        let sensor = prop_oneof![
            Just(("M004", vec!["ON", "OFF"])),
            Just(("D001", vec!["OPEN", "CLOSE"])),
            Just(("T001", vec!["20.5", "-1.25", "23"])),
        ];
        (
            0u32..86_400,
            0u32..1000,
            sensor,
            0usize..3,
            proptest::option::of(("[A-Z][a-z]{1,6}", any::<bool>())),
        )
            .prop_map(|(secs, ms, (id, vals), vi, ann)| {
                let value = vals[vi % vals.len()];
                let mut line = format!(
                    "2010-11-04 {:02}:{:02}:{:02}.{:03} {id} {value}",
                    secs / 3600,
                    secs / 60 % 60,
                    secs % 60,
                    ms
                );
                if let Some((label, begin)) = ann {
                    line.push_str(&format!(" {label} {}", if begin { "begin" } else { "end" }));
                }
                line
            })
    }

    proptest! {
        #[test]
        fn reserialization_round_trips(lines in proptest::collection::vec(arb_line(), 0..40)) {
            let log = parse(&lines.join("\n"));
            let again: Vec<String> = log.events.iter().map(format_event).collect();
            let reparsed = parse(&again.join("\n"));
            prop_assert_eq!(reparsed.events, log.events);
        }

        #[test]
        fn order_is_stable_sort_of_any_permutation(
            lines in proptest::collection::vec(arb_line(), 0..30),
            seed in any::<u64>(),
        ) {
            let log = parse(&lines.join("\n"));
            let mut shuffled = lines.clone();
            // deterministic Fisher-Yates from the seed
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (s >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let other = parse(&shuffled.join("\n"));
            let ts = |l: &ParsedLog| l.events.iter().map(|e| e.timestamp).collect::<Vec<_>>();
            prop_assert_eq!(ts(&other), ts(&log));
            prop_assert!(ts(&log).windows(2).all(|w| w[0] <= w[1]));
            // same multiset of events
            let key = |l: &ParsedLog| {
                let mut v: Vec<String> = l.events.iter().map(format_event).collect();
                v.sort();
                v
            };
            prop_assert_eq!(key(&other), key(&log));
            // stability: events with equal timestamps keep input order
            let expected: Vec<String> = {
                let mut indexed: Vec<(usize, SensorEvent)> = shuffled
                    .iter()
                    .enumerate()
                    .filter_map(|(i, l)| parse(l).events.into_iter().next().map(|e| (i, e)))
                    .collect();
                indexed.sort_by_key(|(i, e)| (e.timestamp, *i));
                indexed.iter().map(|(_, e)| format_event(e)).collect()
            };
            prop_assert_eq!(other.events.iter().map(format_event).collect::<Vec<_>>(), expected);
        }
    }
}
