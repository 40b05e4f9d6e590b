//! Prompt rendering, backend calls and response validation for the two
//! reasoning stages: minute-level cross-reference and segment refinement.

mod backend;
mod parse;
mod prompts;
mod rule;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant as WallClock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{Instant, Span};

pub use backend::{
    prompt_sha256, Backend, BackendError, CachingBackend, HttpBackend, HttpConfig, RunLog, RunLogRecord,
};
pub use parse::{parse_crossref_response, parse_refine_response, sanitize_response};
pub use prompts::{
    default_sources_text, find_residual_placeholders, format_label_list, render_crossref_prompt, render_refine_prompt,
    render_refine_step_prompt, CrossrefInput, RefineInput, CROSS_REFERENCE_TEMPLATE, REFINEMENT_TEMPLATE,
};
pub use rule::RuleBackend;

pub const DEFAULT_MAX_ATTEMPTS: usize = 3;
pub const DEFAULT_MAX_TOKENS: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    CrossReference,
    Refinement,
}

impl std::fmt::Display for PromptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PromptKind::CrossReference => "cross_reference",
            PromptKind::Refinement => "refinement",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub kind: PromptKind,
    pub text: String,
    pub temperature: f32,
    pub max_tokens: u32,
    pub trace_id: String,
}

/// Fused label for one aligned interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinutePrediction {
    pub timestamp: Instant,
    pub label: String,
    pub alternative: String,
    pub reason: String,
}

/// The time range a refinement call may rewrite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefineScope {
    pub home_id: String,
    /// The current inference window; the response must cover it.
    pub window: Span,
    /// Earliest instant a revised segment may start at.
    pub horizon_start: Instant,
}

/// Why a response was rejected.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ResponseError {
    #[error("response is not the expected JSON: {0}")]
    ParseFailure(String),
    #[error("expected {expected} predictions, got {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("label {0:?} is not allowed")]
    IllegalLabel(String),
    #[error("scope not covered: {0}")]
    CoverageGap(Span),
    #[error("segments overlap at {0}")]
    OverlapWithinResponse(Span),
}

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error("expected {expected} bundles, got {found}")]
    WindowSizeMismatch { expected: usize, found: usize },
    #[error("backend unavailable after {attempts} attempts: {last}")]
    BackendUnavailable { attempts: usize, last: String },
    #[error("prompt still contains placeholders: {0:?}")]
    ResidualPlaceholder(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse<T> {
    /// Text of the last attempt, if any reached the backend.
    pub raw_text: Option<String>,
    pub parsed: T,
    pub attempt_count: usize,
    /// True when every attempt failed and `parsed` is the fallback.
    pub degraded: bool,
    pub errors: Vec<String>,
}

/// Calls the backend until `parse` accepts a response. When all attempts
/// fail to parse, or mix parse and transport failures, `fallback` supplies
/// the payload. Only an all-transport failure is an error.
pub fn call_with_retry<T>(
    request: &PromptRequest,
    backend: &dyn Backend,
    max_attempts: usize,
    parse: impl Fn(&str) -> Result<T, ResponseError>,
    fallback: impl FnOnce() -> T,
) -> Result<BackendResponse<T>, ReasonerError> {
    let max_attempts = max_attempts.max(1);
    let mut errors = Vec::new();
    let mut raw_text = None;
    let mut transport_failures = 0;
    for attempt in 1..=max_attempts {
        match backend.complete(request) {
            Ok(text) => {
                match parse(&text) {
                    Ok(parsed) => {
                        return Ok(BackendResponse {
                            raw_text: Some(text),
                            parsed,
                            attempt_count: attempt,
                            degraded: false,
                            errors,
                        })
                    }
                    Err(e) => {
                        log::debug!("{}: attempt {attempt} rejected: {e}", request.trace_id);
                        errors.push(e.to_string());
                        backend.discard(request);
                    }
                }
                raw_text = Some(text);
            }
            Err(e) => {
                if e.is_transport() {
                    transport_failures += 1;
                }
                log::debug!("{}: attempt {attempt} failed: {e}", request.trace_id);
                errors.push(e.to_string());
            }
        }
    }
    if transport_failures == max_attempts {
        return Err(ReasonerError::BackendUnavailable {
            attempts: max_attempts,
            last: errors.pop().unwrap_or_default(),
        });
    }
    log::warn!(
        "{}: no valid response after {max_attempts} attempts, using fallback",
        request.trace_id
    );
    Ok(BackendResponse {
        raw_text,
        parsed: fallback(),
        attempt_count: max_attempts,
        degraded: true,
        errors,
    })
}

/// Fallback fusion: the environmental label, or the fallback label when it
/// is absent or not allowed.
pub fn fallback_predictions(
    bundles: &[crate::align::EvidenceBundle],
    allowed: &crate::LabelSet,
) -> Vec<MinutePrediction> {
    bundles
        .iter()
        .map(|b| {
            let env = b.env_label.as_deref().and_then(|l| allowed.resolve(l));
            let label = env.unwrap_or(allowed.fallback()).to_string();
            MinutePrediction {
                timestamp: b.timestamp(),
                alternative: label.clone(),
                label,
                reason: match env {
                    Some(_) => "fallback: environmental prediction".into(),
                    None => "fallback: no usable evidence".into(),
                },
            }
        })
        .collect()
}

/// Fallback refinement: runs of equal minute labels, each minute lasting `unit`.
pub fn identity_segments(predictions: &[MinutePrediction], unit: chrono::Duration) -> Vec<(Span, String)> {
    let mut out: Vec<(Span, String)> = Vec::new();
    for p in predictions {
        let span = Span::new(p.timestamp, p.timestamp + unit);
        match out.last_mut() {
            Some((s, l)) if *l == p.label && s.end == span.start => s.end = span.end,
            _ => out.push((span, p.label.clone())),
        }
    }
    out
}

/// Counters shared by every call a reasoner makes.
#[derive(Debug, Default, Serialize, Deserialize, Clone, PartialEq, Eq)]
pub struct CallStats {
    pub requests: usize,
    pub attempts: usize,
    pub degraded: usize,
}

/// Backend plus retry policy and optional run log.
pub struct Reasoner {
    backend: Arc<dyn Backend>,
    run_log: Option<Arc<RunLog>>,
    pub max_attempts: usize,
    pub max_tokens: u32,
    requests: AtomicUsize,
    attempts: AtomicUsize,
    degraded: AtomicUsize,
}

impl Reasoner {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            run_log: None,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            max_tokens: DEFAULT_MAX_TOKENS,
            requests: AtomicUsize::new(0),
            attempts: AtomicUsize::new(0),
            degraded: AtomicUsize::new(0),
        }
    }

    pub fn with_run_log(mut self, log: Arc<RunLog>) -> Self {
        self.run_log = Some(log);
        self
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn stats(&self) -> CallStats {
        CallStats {
            requests: self.requests.load(Ordering::Relaxed),
            attempts: self.attempts.load(Ordering::Relaxed),
            degraded: self.degraded.load(Ordering::Relaxed),
        }
    }

    pub fn request(&self, kind: PromptKind, text: String, trace_id: String) -> Result<PromptRequest, ReasonerError> {
        let residual = find_residual_placeholders(&text);
        if !residual.is_empty() {
            return Err(ReasonerError::ResidualPlaceholder(residual));
        }
        Ok(PromptRequest {
            kind,
            text,
            temperature: 0.0,
            max_tokens: self.max_tokens,
            trace_id,
        })
    }

    /// `call_with_retry` plus accounting and run logging.
    pub fn call<T>(
        &self,
        request: &PromptRequest,
        parse: impl Fn(&str) -> Result<T, ResponseError>,
        fallback: impl FnOnce() -> T,
    ) -> Result<BackendResponse<T>, ReasonerError> {
        let started = WallClock::now();
        let result = call_with_retry(request, self.backend.as_ref(), self.max_attempts, parse, fallback);
        let latency_ms = started.elapsed().as_millis() as u64;
        self.requests.fetch_add(1, Ordering::Relaxed);
        let (attempts, response) = match &result {
            Ok(r) => {
                if r.degraded {
                    self.degraded.fetch_add(1, Ordering::Relaxed);
                }
                (r.attempt_count, r.raw_text.clone())
            }
            Err(_) => (self.max_attempts, None),
        };
        self.attempts.fetch_add(attempts, Ordering::Relaxed);
        if let Some(log) = &self.run_log {
            let record = RunLogRecord {
                trace_id: request.trace_id.clone(),
                kind: request.kind,
                prompt_sha256: prompt_sha256(&request.text),
                response,
                attempts,
                latency_ms,
            };
            if let Err(e) = log.append(&record) {
                log::warn!("run log write failed: {e}");
            }
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<String, BackendError>>>,
    }

    impl Backend for Scripted {
        fn complete(&self, _req: &PromptRequest) -> Result<String, BackendError> {
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn req() -> PromptRequest {
        PromptRequest {
            kind: PromptKind::CrossReference,
            text: "x".into(),
            temperature: 0.0,
            max_tokens: 10,
            trace_id: "t".into(),
        }
    }

    fn parse_num(s: &str) -> Result<i32, ResponseError> {
        s.parse().map_err(|_| ResponseError::ParseFailure(s.into()))
    }

    #[test]
    fn first_attempt_success() {
        let b = Scripted {
            replies: Mutex::new(vec![Ok("7".into())]),
        };
        let r = call_with_retry(&req(), &b, 3, parse_num, || 0).unwrap();
        assert_eq!((r.parsed, r.attempt_count, r.degraded), (7, 1, false));
    }

    #[test]
    fn three_malformed_means_fallback() {
        let b = Scripted {
            replies: Mutex::new(vec![Ok("a".into()), Ok("b".into()), Ok("c".into())]),
        };
        let r = call_with_retry(&req(), &b, 3, parse_num, || -1).unwrap();
        assert_eq!((r.parsed, r.attempt_count, r.degraded), (-1, 3, true));
        assert_eq!(r.errors.len(), 3);
    }

    #[test]
    fn transport_failures_are_unavailable() {
        let b = Scripted {
            replies: Mutex::new(
                (0..3)
                    .map(|_| Err(BackendError::Unavailable("timeout".into())))
                    .collect(),
            ),
        };
        assert!(matches!(
            call_with_retry(&req(), &b, 3, parse_num, || 0),
            Err(ReasonerError::BackendUnavailable { attempts: 3, .. })
        ));
    }

    #[test]
    fn recovery_on_second_attempt() {
        let b = Scripted {
            replies: Mutex::new(vec![Err(BackendError::Unavailable("reset".into())), Ok("5".into())]),
        };
        let r = call_with_retry(&req(), &b, 3, parse_num, || 0).unwrap();
        assert_eq!((r.parsed, r.attempt_count), (5, 2));
    }
}
