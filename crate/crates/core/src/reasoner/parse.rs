use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{MinutePrediction, RefineScope, ResponseError};
use crate::labels::LabelSet;
use crate::time::{parse_instant, Instant, Span};
use crate::timeline::VersionedSegment;

/// Minute prediction as it appears in prompts and responses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct WireMinute {
    pub timestamp: String,
    pub labels: Vec<String>,
    pub reason: String,
}

/// Refined segment as it appears in prompts and responses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct WireSegment {
    pub home_id: String,
    pub start_timestamp: String,
    pub end_timestamp: String,
    pub version: Value,
    pub label: String,
}

/// Strips code fences, prose around the first JSON object and trailing
/// commas before a closing bracket.
pub fn sanitize_response(raw: &str) -> String {
    let mut text = raw.trim();
    if let Some(open) = text.find("```") {
        let after = &text[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        text = match body.find("```") {
            Some(close) => &body[..close],
            None => body,
        };
    }
    let text = match text.find(['{', '[']) {
        Some(i) => &text[i..],
        None => return text.trim().to_string(),
    };
    let text = &text[..balanced_end(text)];
    strip_trailing_commas(text)
}

/// Byte length of the leading balanced JSON value, or the whole text.
fn balanced_end(text: &str) -> usize {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text.char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return i + 1;
                }
            }
            _ => {}
        }
    }
    text.len()
}

fn strip_trailing_commas(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn items<'a>(value: &'a Value, key: &str) -> Result<&'a Vec<Value>, ResponseError> {
    let arr = match value {
        Value::Array(a) => Some(a),
        Value::Object(o) => o.get(key).and_then(Value::as_array),
        _ => None,
    };
    arr.ok_or_else(|| ResponseError::ParseFailure(format!("missing \"{key}\" array")))
}

fn parse_json(raw: &str) -> Result<Value, ResponseError> {
    serde_json::from_str(&sanitize_response(raw)).map_err(|e| ResponseError::ParseFailure(e.to_string()))
}

fn resolve(allowed: &LabelSet, label: &str) -> Result<String, ResponseError> {
    allowed
        .resolve(label)
        .map(str::to_string)
        .ok_or_else(|| ResponseError::IllegalLabel(label.to_string()))
}

/// Parses a `minute_predictions` payload. Items are matched to `expected`
/// timestamps by position.
pub fn parse_crossref_response(
    raw: &str,
    expected: &[Instant],
    allowed: &LabelSet,
) -> Result<Vec<MinutePrediction>, ResponseError> {
    let value = parse_json(raw)?;
    let list = items(&value, "minute_predictions")?;
    if list.len() != expected.len() {
        return Err(ResponseError::CountMismatch {
            expected: expected.len(),
            found: list.len(),
        });
    }
    list.iter()
        .zip(expected)
        .map(|(item, &timestamp)| {
            let labels: Vec<&str> = item
                .get("labels")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).collect())
                .unwrap_or_default();
            let Some(primary) = labels.first() else {
                return Err(ResponseError::ParseFailure("item without labels".into()));
            };
            let label = resolve(allowed, primary)?;
            let alternative = match labels.get(1) {
                Some(alt) => resolve(allowed, alt)?,
                None => label.clone(),
            };
            let reason = item
                .get("reason")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string();
            Ok(MinutePrediction {
                timestamp,
                label,
                alternative,
                reason,
            })
        })
        .collect()
}

fn version_of(v: Option<&Value>) -> Result<u32, ResponseError> {
    let n = match v {
        Some(Value::Number(n)) => n.as_u64(),
        Some(Value::String(s)) => s.trim().parse().ok(),
        _ => None,
    };
    n.and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| ResponseError::ParseFailure(format!("bad version {v:?}")))
}

/// Parses a `revised_activities` payload into segments clipped to
/// `[scope.horizon_start, scope.window.end)`. Segments may start before the
/// window but together must cover all of it.
pub fn parse_refine_response(
    raw: &str,
    scope: &RefineScope,
    allowed: &LabelSet,
) -> Result<Vec<VersionedSegment>, ResponseError> {
    let value = parse_json(raw)?;
    let list = items(&value, "revised_activities")?;
    let mut segs = Vec::with_capacity(list.len());
    for item in list {
        let field = |k: &str| {
            item.get(k)
                .and_then(Value::as_str)
                .ok_or_else(|| ResponseError::ParseFailure(format!("segment without {k}")))
        };
        let stamp = |k: &str| {
            let v = field(k)?;
            parse_instant(v).ok_or_else(|| ResponseError::ParseFailure(format!("bad {k} {v:?}")))
        };
        let start = stamp("start_timestamp")?;
        let end = stamp("end_timestamp")?;
        if start >= end {
            return Err(ResponseError::ParseFailure(format!("empty segment at {start}")));
        }
        segs.push(VersionedSegment {
            start,
            end,
            label: resolve(allowed, field("label")?)?,
            version: version_of(item.get("version"))?,
            home_id: scope.home_id.clone(),
        });
    }
    segs.sort_by_key(|s| s.start);
    if let Some(w) = segs.windows(2).find(|w| w[0].end > w[1].start) {
        let overlap = w[0].span().intersection(&w[1].span()).expect("overlapping");
        return Err(ResponseError::OverlapWithinResponse(overlap));
    }
    let bounds = Span::new(scope.horizon_start, scope.window.end);
    let clipped: Vec<VersionedSegment> = segs
        .into_iter()
        .filter_map(|s| {
            let span = s.span().intersection(&bounds)?;
            Some(VersionedSegment {
                start: span.start,
                end: span.end,
                ..s
            })
        })
        .collect();
    let mut cursor = scope.window.start;
    for s in &clipped {
        if s.end <= cursor {
            continue;
        }
        if s.start > cursor {
            return Err(ResponseError::CoverageGap(Span::new(
                cursor,
                s.start.min(scope.window.end),
            )));
        }
        cursor = s.end;
    }
    if cursor < scope.window.end {
        return Err(ResponseError::CoverageGap(Span::new(cursor, scope.window.end)));
    }
    Ok(clipped)
}
