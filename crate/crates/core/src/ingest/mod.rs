//! Parsing of raw sensor logs, recognizer prediction files, ground-truth
//! annotations and sensor metadata into validated records.
//!
//! Every parser is a pure function over its input stream. Timestamps are
//! naive local times and every interval is half-open.

mod events;
mod ground_truth;
mod metadata;
mod predictions;

pub use events::{
    format_event, pair_annotations, parse_event_log, Annotation, AnnotationPairing, BinaryState, IssueKind, LineIssue,
    Marker, ParseOptions, ParsedLog, SensorEvent, SensorValue, UnmatchedMarker,
};
pub use ground_truth::{normalize_ground_truth, parse_ground_truth, write_ground_truth, GroundTruthSegment};
pub use metadata::{SensorKind, SensorMetadata, SensorMetadataSet};
pub use predictions::{
    check_prediction_labels, parse_predictions, write_predictions, PredictionRecord, PredictionSource,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: unknown sensor {sensor_id:?}")]
    UnknownSensor { line: usize, sensor_id: String },
    #[error("line {line}: malformed line: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("row {row}: malformed row: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("label {label:?} at row {row} is not declared for source {source_name}")]
    UndeclaredLabel {
        row: usize,
        label: String,
        source_name: String,
    },
    #[error("invalid sensor metadata: {0}")]
    Metadata(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
