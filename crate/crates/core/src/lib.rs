//! Driver takeover readiness toolkit.
//!
//! Covers the three phases around a takeover request: readiness before it
//! (the Observable Readiness Index, ORI, estimated by a recurrent regressor
//! from gaze / hand / held-object probability streams), the takeover itself
//! (takeover time, TOT), and control quality after it (peak speed change and
//! peak lateral offset in the following 5 seconds).
//!
//! Modules:
//! - [`domain`]: categorical schemas, probability vectors, frame features, episodes
//! - [`ground_truth`]: multi-rater score normalization, fusion and interpolation
//! - [`net`]: from-scratch LSTM regressor, BPTT, Adam training, checkpoints
//! - [`metrics`]: post-takeover quality metrics, Pearson correlation, per-task means
//! - [`synth`]: seeded generator of takeover episodes and rater sheets
//! - [`eval`]: leave-one-subject-out folds, feature ablations, confusion matrices
//! - [`io`]: JSON-Lines episode files and CSV reports

pub mod domain;
pub mod error;
pub mod eval;
pub mod ground_truth;
pub mod io;
pub mod metrics;
pub mod net;
pub mod synth;

pub use error::{Error, Result};

/// Episode file schema tag.
pub const SCHEMA_VERSION: &str = "readywatch_v1";
