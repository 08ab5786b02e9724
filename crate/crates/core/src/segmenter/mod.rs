//! The few-shot segmenter contract and the built-in reference backend.

mod reference;
mod resample;

use thiserror::Error;

use crate::bridge::BridgeError;
use crate::par::Exec;
use crate::support::SupportEntry;
use crate::types::{Mask, ProbMask, Slice};

pub use reference::{ref_segment, ref_segment_with, RefSegParams};
pub use resample::{normalize_slice, Interpolation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("support set is empty")]
    EmptySupport,
    #[error("support entry is {got:?}, query is {expected:?}")]
    DimMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid reference segmenter parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Reference(#[from] SegmentError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("backend returned a {got:?} mask for a {expected:?} query")]
    OutputShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Maps a query slice plus labelled support pairs to a per-pixel foreground
/// probability. Implementations receive images already normalized to
/// `[0, 1]` and resized to [`required_size`](Self::required_size).
pub trait SegmenterBackend {
    fn id(&self) -> &str;

    /// Fixed input size, or `None` to accept native resolution.
    fn required_size(&self) -> Option<(usize, usize)> {
        None
    }

    /// Largest support list accepted per call; 0 means unlimited.
    fn max_support(&self) -> usize {
        0
    }

    fn segment(
        &mut self,
        query: &Slice,
        support: &[SupportEntry],
    ) -> Result<ProbMask, BackendError>;
}

impl<B: SegmenterBackend + ?Sized> SegmenterBackend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn required_size(&self) -> Option<(usize, usize)> {
        (**self).required_size()
    }

    fn max_support(&self) -> usize {
        (**self).max_support()
    }

    fn segment(
        &mut self,
        query: &Slice,
        support: &[SupportEntry],
    ) -> Result<ProbMask, BackendError> {
        (**self).segment(query, support)
    }
}

/// `value >= t` becomes foreground.
pub fn threshold(prob: &ProbMask, t: f32) -> Mask {
    debug_assert!(t > 0.0 && t < 1.0);
    let data = prob.data().iter().map(|&v| u8::from(v >= t)).collect();
    Mask::from_parts(prob.width(), prob.height(), data)
}

#[derive(Debug, Clone, Default)]
pub struct ReferenceSegmenter {
    params: RefSegParams,
    exec: Exec,
}

impl ReferenceSegmenter {
    pub fn new(params: RefSegParams) -> Result<Self, SegmentError> {
        params.validate()?;
        Ok(Self {
            params,
            exec: Exec::default(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn params(&self) -> &RefSegParams {
        &self.params
    }
}

impl SegmenterBackend for ReferenceSegmenter {
    fn id(&self) -> &str {
        "ref"
    }

    fn segment(
        &mut self,
        query: &Slice,
        support: &[SupportEntry],
    ) -> Result<ProbMask, BackendError> {
        Ok(ref_segment_with(query, support, &self.params, self.exec)?)
    }
}
