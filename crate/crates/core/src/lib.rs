//! In-context cascade segmentation of 3D volumes, slice by slice.
//!
//! A 2D in-context segmenter labels a query slice from a small support set
//! of labelled slices. The cascade starts from a contiguous block of
//! ground-truth slices and walks outward in both directions, feeding each
//! prediction back into a bounded support set.
//!
//! The crate ships a deterministic patch-matching segmenter
//! ([`segmenter::ReferenceSegmenter`]) and a subprocess bridge
//! ([`bridge::BridgeBackend`]) for external model servers.

pub mod bridge;
pub mod cascade;
pub mod eval;
pub mod harness;
pub mod io;
pub mod par;
pub mod segmenter;
pub mod support;
pub mod types;

pub use cascade::{
    run, run_baseline, run_ics, run_split, CascadeConfig, CascadeError, CascadeResult, Direction,
    InitialSupportSpec, Method,
};
pub use eval::{aggregate, dsc, paired_test, DscStats, PairedTestResult, TestMethod};
pub use io::{load_case, CaseBundle, RunReport};
pub use par::Exec;
pub use segmenter::{threshold, BackendError, RefSegParams, ReferenceSegmenter, SegmenterBackend};
pub use support::{EvictionPolicy, Provenance, SupportEntry, SupportSet};
pub use types::{ImageError, Mask, ProbMask, Slice, Spacing, Volume};
