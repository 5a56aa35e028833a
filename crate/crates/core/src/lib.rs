//! DRG prediction toolkit: catalog dissection and split taxonomy,
//! cross-version harmonization, cohort preprocessing, a sparse linear
//! classifier trained under single-label or two-label losses, and the
//! evaluation protocol.

pub mod catalog;
pub mod harmonize;
pub mod metrics;
pub mod model;
pub mod predictions;
pub mod preprocess;
pub mod stats;
pub mod synth;
