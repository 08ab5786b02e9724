//! Capacity-bounded support set with oldest-first eviction.
//!
//! "Oldest" is defined by the append counter `seq`, not by slice index:
//! a backward pass appends slices in decreasing index order.

use thiserror::Error;

use crate::types::{Mask, Slice};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SupportError {
    #[error("initial support set is empty")]
    EmptyInitial,
    #[error("{len} initial entries exceed capacity {capacity}")]
    OverCapacity { len: usize, capacity: usize },
    #[error("support capacity must be at least 1")]
    ZeroCapacity,
    #[error("entry is {got:?}, support set holds {expected:?}")]
    DimMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("initial entry from slice {0} is not ground truth")]
    NotGroundTruth(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    GroundTruth,
    Predicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportEntry {
    pub image: Slice,
    pub label: Mask,
    pub provenance: Provenance,
    pub source_index: usize,
    pub seq: u64,
}

impl SupportEntry {
    /// `seq` is left at 0; the owning set assigns it on insertion.
    pub fn new(image: Slice, label: Mask, provenance: Provenance) -> Result<Self, SupportError> {
        if image.dims() != label.dims() {
            return Err(SupportError::DimMismatch {
                expected: image.dims(),
                got: label.dims(),
            });
        }
        let source_index = image.index();
        Ok(Self {
            image,
            label,
            provenance,
            source_index,
            seq: 0,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvictionPolicy {
    /// Drop the lowest-seq entries regardless of provenance.
    #[default]
    Fifo,
    /// Only predicted entries are eligible for eviction.
    PinGroundTruth,
}

impl EvictionPolicy {
    pub fn from_pin_initial(pin: bool) -> Self {
        if pin {
            Self::PinGroundTruth
        } else {
            Self::Fifo
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    capacity: usize,
    next_seq: u64,
    entries: Vec<SupportEntry>,
}

impl SupportSet {
    pub fn new(capacity: usize, initial: Vec<SupportEntry>) -> Result<Self, SupportError> {
        if capacity == 0 {
            return Err(SupportError::ZeroCapacity);
        }
        if initial.is_empty() {
            return Err(SupportError::EmptyInitial);
        }
        if initial.len() > capacity {
            return Err(SupportError::OverCapacity {
                len: initial.len(),
                capacity,
            });
        }
        let dims = initial[0].dims();
        let mut entries = Vec::with_capacity(capacity + 1);
        for (i, mut e) in initial.into_iter().enumerate() {
            if e.image.dims() != dims || e.label.dims() != dims {
                return Err(SupportError::DimMismatch {
                    expected: dims,
                    got: e.label.dims(),
                });
            }
            if e.provenance != Provenance::GroundTruth {
                return Err(SupportError::NotGroundTruth(e.source_index));
            }
            e.seq = i as u64 + 1;
            entries.push(e);
        }
        Ok(Self {
            capacity,
            next_seq: entries.len() as u64 + 1,
            entries,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SupportEntry] {
        &self.entries
    }

    pub fn dims(&self) -> (usize, usize) {
        self.entries[0].dims()
    }

    /// Appends with the next `seq`, then evicts until `len() <= capacity`.
    ///
    /// Under [`EvictionPolicy::PinGroundTruth`] ground-truth entries are
    /// skipped; if every entry is ground truth the oldest one goes.
    pub fn append(
        &mut self,
        mut entry: SupportEntry,
        policy: EvictionPolicy,
    ) -> Result<(), SupportError> {
        let dims = self.dims();
        if entry.image.dims() != dims || entry.label.dims() != dims {
            return Err(SupportError::DimMismatch {
                expected: dims,
                got: entry.image.dims(),
            });
        }
        entry.seq = self.next_seq;
        self.next_seq += 1;
        self.entries.push(entry);
        while self.entries.len() > self.capacity {
            let victim = match policy {
                EvictionPolicy::Fifo => 0,
                EvictionPolicy::PinGroundTruth => self
                    .entries
                    .iter()
                    .position(|e| e.provenance == Provenance::Predicted)
                    .unwrap_or(0),
            };
            self.entries.remove(victim);
        }
        Ok(())
    }
}
