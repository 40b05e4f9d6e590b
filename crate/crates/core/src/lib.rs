//! Context-aware activity inference for smart homes.
//!
//! The pipeline turns raw ambient sensor logs and external recognizer
//! outputs into a versioned activity timeline:
//!
//! 1. [`ingest`] parses logs, prediction files, annotations and metadata.
//! 2. [`summarize`] builds per-window location/interaction/environment
//!    summaries.
//! 3. [`align`] projects every source onto a shared unit timeline and
//!    packs per-interval evidence bundles.
//! 4. [`reasoner`] renders the fusion and refinement prompts, talks to a
//!    reasoning backend and validates what comes back.
//! 5. [`inference`] drives the stages window by window and writes the
//!    result into a [`timeline::SegmentStore`].
//! 6. [`eval`] scores timelines against ground truth.

pub mod align;
pub mod context;
pub mod eval;
pub mod inference;
pub mod ingest;
pub mod labels;
pub mod reasoner;
pub mod summarize;
pub mod time;
pub mod timeline;

pub use labels::LabelSet;
pub use time::{Instant, Span};
