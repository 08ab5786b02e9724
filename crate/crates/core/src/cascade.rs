//! Bidirectional in-context cascade and the fixed-support baseline.
//!
//! Both methods start from a contiguous block of labelled slices. The
//! baseline segments every other slice from that block alone. The cascade
//! walks outward from the block in both directions, and each prediction is
//! binarized and appended to that direction's support set (evicting the
//! oldest entry beyond capacity) before the next slice is segmented.
//! Forward and backward passes start from independent copies of the initial
//! set and never observe each other.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::io::CaseBundle;
use crate::par::Exec;
use crate::segmenter::normalize_slice;
use crate::segmenter::{threshold, BackendError, Interpolation, SegmenterBackend};
use crate::support::{EvictionPolicy, Provenance, SupportEntry, SupportError, SupportSet};
use crate::types::{Mask, ProbMask, Slice};

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("initial support indices are empty")]
    EmptyInitial,
    #[error("initial support indices {0:?} are not one contiguous ascending block")]
    NonContiguousInitial(Vec<usize>),
    #[error("initial support index {index} outside 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("invalid cascade config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Support(#[from] SupportError),
    #[error("backend failed on slice {index}: {source}")]
    BackendFailure {
        index: usize,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    /// Maximum stored support entries (before augmentation).
    pub capacity: usize,
    pub prob_threshold: f32,
    pub augment: bool,
    pub pin_initial: bool,
    /// Start each pass on the boundary labelled slice, as the loop bounds
    /// are literally written, instead of on the first unlabelled one.
    pub faithful_loops: bool,
    pub keep_probs: bool,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            capacity: 5,
            prob_threshold: 0.5,
            augment: true,
            pin_initial: false,
            faithful_loops: false,
            keep_probs: false,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), CascadeError> {
        if self.capacity == 0 {
            return Err(CascadeError::InvalidConfig("capacity must be >= 1".into()));
        }
        if !(self.prob_threshold > 0.0 && self.prob_threshold < 1.0) {
            return Err(CascadeError::InvalidConfig(format!(
                "threshold {} outside (0, 1)",
                self.prob_threshold
            )));
        }
        Ok(())
    }

    fn policy(&self) -> EvictionPolicy {
        EvictionPolicy::from_pin_initial(self.pin_initial)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Baseline,
    Ics,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Ics => "ics",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Forward,
    Backward,
}

/// A contiguous block of ground-truth slice indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitialSupportSpec {
    indices: Vec<usize>,
}

impl InitialSupportSpec {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self, CascadeError> {
        let (&first, &last) = match (indices.first(), indices.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(CascadeError::EmptyInitial),
        };
        if let Some(&index) = indices.iter().find(|&&i| i == 0 || i > n) {
            return Err(CascadeError::IndexOutOfRange { index, n });
        }
        let contiguous =
            indices.windows(2).all(|w| w[1] == w[0] + 1) && last + 1 - first == indices.len();
        if !contiguous {
            return Err(CascadeError::NonContiguousInitial(indices));
        }
        Ok(Self { indices })
    }

    /// `count` slices starting at `start` (1-based).
    pub fn block(start: usize, count: usize, n: usize) -> Result<Self, CascadeError> {
        if count == 0 {
            return Err(CascadeError::EmptyInitial);
        }
        Self::new((start..start + count).collect(), n)
    }

    /// Block placed at `floor((n - count) / 2) + 1`.
    pub fn centered(count: usize, n: usize) -> Result<Self, CascadeError> {
        if count > n {
            return Err(CascadeError::IndexOutOfRange { index: count, n });
        }
        Self::block((n - count) / 2 + 1, count, n)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn start(&self) -> usize {
        self.indices[0]
    }

    pub fn end(&self) -> usize {
        *self.indices.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.start()..=self.end()).contains(&index)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timings {
    pub forward: Duration,
    pub backward: Duration,
    pub per_slice: BTreeMap<usize, Duration>,
}

/// A prediction on an already-labelled boundary slice, produced only with
/// `faithful_loops`. Ground truth is kept as that slice's final mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPrediction {
    pub direction: Direction,
    pub index: usize,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeResult {
    pub masks: BTreeMap<usize, Mask>,
    pub direction_of: BTreeMap<usize, Direction>,
    pub probs: Option<BTreeMap<usize, ProbMask>>,
    pub boundary: Vec<BoundaryPrediction>,
    /// Largest stored support set observed during the run.
    pub max_support_len: usize,
    pub timings: Timings,
}

impl CascadeResult {
    fn empty(keep_probs: bool) -> Self {
        Self {
            masks: BTreeMap::new(),
            direction_of: BTreeMap::new(),
            probs: keep_probs.then(BTreeMap::new),
            boundary: Vec::new(),
            max_support_len: 0,
            timings: Timings::default(),
        }
    }

    fn absorb(&mut self, pass: PassOutput) {
        for step in pass.steps {
            if step.boundary {
                self.boundary.push(BoundaryPrediction {
                    direction: pass.direction,
                    index: step.index,
                    mask: step.mask,
                });
                continue;
            }
            let previous = self.masks.insert(step.index, step.mask);
            assert!(previous.is_none(), "slice {} predicted twice", step.index);
            self.direction_of.insert(step.index, pass.direction);
            self.timings.per_slice.insert(step.index, step.elapsed);
            if let (Some(probs), Some(p)) = (self.probs.as_mut(), step.prob) {
                probs.insert(step.index, p);
            }
        }
        self.max_support_len = self.max_support_len.max(pass.max_support_len);
        match pass.direction {
            Direction::Forward => self.timings.forward += pass.elapsed,
            Direction::Backward => self.timings.backward += pass.elapsed,
        }
    }
}

/// The original entries, then all of them rotated by 90, then 180, then 270
/// degrees counter-clockwise, as four consecutive blocks. Non-square
/// entries are zero-padded to a centred square first. Output `seq` values
/// are renumbered `1..=4n` in output order.
pub fn augment_support(entries: &[SupportEntry]) -> Vec<SupportEntry> {
    let squared: Vec<SupportEntry> = entries
        .iter()
        .map(|e| {
            if e.image.width() == e.image.height() {
                e.clone()
            } else {
                SupportEntry {
                    image: e.image.padded_square().0,
                    label: e.label.padded_square().0,
                    ..e.clone()
                }
            }
        })
        .collect();
    let mut out = Vec::with_capacity(4 * entries.len());
    for turns in 0..4u8 {
        for e in &squared {
            out.push(SupportEntry {
                image: e.image.rotated(turns),
                label: e.label.rotated(turns),
                ..e.clone()
            });
        }
    }
    for (i, e) in out.iter_mut().enumerate() {
        e.seq = i as u64 + 1;
    }
    out
}

/// Support list handed to the backend for one query, after augmentation and
/// any backend `max_support` limit. Under a limit, groups of the most recent
/// entries (each original with its rotations) are kept first.
fn presented_support(
    stored: &[SupportEntry],
    augment: bool,
    max_support: usize,
) -> Vec<SupportEntry> {
    let per_entry = if augment { 4 } else { 1 };
    if max_support == 0 || stored.len() * per_entry <= max_support {
        return if augment {
            augment_support(stored)
        } else {
            stored.to_vec()
        };
    }
    let mut out = Vec::with_capacity(max_support);
    for e in stored.iter().rev() {
        let group = if augment {
            augment_support(std::slice::from_ref(e))
        } else {
            vec![e.clone()]
        };
        for g in group {
            if out.len() == max_support {
                break;
            }
            out.push(g);
        }
    }
    for (i, e) in out.iter_mut().enumerate() {
        e.seq = i as u64 + 1;
    }
    out
}

/// Prepares the query and support exactly as every backend sees them,
/// calls the backend, and maps the probabilities back onto the query grid.
fn predict<B: SegmenterBackend + ?Sized>(
    query: &Slice,
    stored: &[SupportEntry],
    backend: &mut B,
    cfg: &CascadeConfig,
) -> Result<(ProbMask, Mask), BackendError> {
    let native = query.dims();
    let mut q = normalize_slice(query);
    let mut support: Vec<SupportEntry> = stored
        .iter()
        .map(|e| SupportEntry {
            image: normalize_slice(&e.image),
            ..e.clone()
        })
        .collect();

    let mut origin = (0, 0);
    if cfg.augment && native.0 != native.1 {
        let (padded, o) = q.padded_square();
        q = padded;
        origin = o;
        for e in &mut support {
            e.image = e.image.padded_square().0;
            e.label = e.label.padded_square().0;
        }
    }
    let working = q.dims();
    let mut support = presented_support(&support, cfg.augment, backend.max_support());

    if let Some(target) = backend.required_size().filter(|&t| t != working) {
        q = q.resampled(target, Interpolation::Bilinear);
        for e in &mut support {
            e.image = e.image.resampled(target, Interpolation::Bilinear);
            e.label = e.label.resampled(target, Interpolation::Nearest);
        }
    }

    let prob = backend.segment(&q, &support)?;
    if prob.dims() != q.dims() {
        return Err(BackendError::OutputShape {
            expected: q.dims(),
            got: prob.dims(),
        });
    }
    let mut prob = if prob.dims() != working {
        prob.resampled(working, Interpolation::Bilinear)
    } else {
        prob
    };
    if working != native {
        prob = prob.cropped(origin, native.0, native.1);
    }
    let mask = threshold(&prob, cfg.prob_threshold);
    Ok((prob, mask))
}

struct Step {
    index: usize,
    mask: Mask,
    prob: Option<ProbMask>,
    boundary: bool,
    elapsed: Duration,
}

struct PassOutput {
    direction: Direction,
    steps: Vec<Step>,
    max_support_len: usize,
    elapsed: Duration,
}

fn initial_entries(
    bundle: &CaseBundle,
    block: &InitialSupportSpec,
) -> Result<Vec<SupportEntry>, CascadeError> {
    block
        .indices()
        .iter()
        .map(|&i| {
            let image = bundle.image.slice(i).ok_or(CascadeError::IndexOutOfRange {
                index: i,
                n: bundle.len(),
            })?;
            let label = bundle.label(i).expect("bundle has one mask per slice");
            Ok(SupportEntry::new(
                image.clone(),
                label.clone(),
                Provenance::GroundTruth,
            )?)
        })
        .collect()
}

fn pass_indices(
    block: &InitialSupportSpec,
    n: usize,
    direction: Direction,
    faithful: bool,
) -> Vec<usize> {
    match (direction, faithful) {
        (Direction::Forward, false) => (block.end() + 1..=n).collect(),
        (Direction::Forward, true) => (block.end()..=n).collect(),
        (Direction::Backward, false) => (1..block.start()).rev().collect(),
        (Direction::Backward, true) => (1..=block.start()).rev().collect(),
    }
}

fn run_pass<B: SegmenterBackend + ?Sized>(
    bundle: &CaseBundle,
    block: &InitialSupportSpec,
    initial: &SupportSet,
    backend: &mut B,
    cfg: &CascadeConfig,
    direction: Direction,
    method: Method,
) -> Result<PassOutput, CascadeError> {
    let started = Instant::now();
    let mut support = initial.clone();
    let faithful = method == Method::Ics && cfg.faithful_loops;
    let mut steps = Vec::new();
    let mut max_support_len = support.len();
    for index in pass_indices(block, bundle.len(), direction, faithful) {
        let t0 = Instant::now();
        let query = bundle
            .image
            .slice(index)
            .expect("pass indices are in range");
        let (prob, mask) = predict(query, support.entries(), backend, cfg)
            .map_err(|source| CascadeError::BackendFailure { index, source })?;
        if method == Method::Ics {
            let entry = SupportEntry::new(query.clone(), mask.clone(), Provenance::Predicted)?;
            support.append(entry, cfg.policy())?;
            assert!(
                support.len() <= cfg.capacity,
                "support set exceeded capacity"
            );
            max_support_len = max_support_len.max(support.len());
        }
        steps.push(Step {
            index,
            boundary: block.contains(index),
            mask,
            prob: cfg.keep_probs.then_some(prob),
            elapsed: t0.elapsed(),
        });
    }
    Ok(PassOutput {
        direction,
        steps,
        max_support_len,
        elapsed: started.elapsed(),
    })
}

fn prepare(
    bundle: &CaseBundle,
    block: &InitialSupportSpec,
    cfg: &CascadeConfig,
) -> Result<SupportSet, CascadeError> {
    cfg.validate()?;
    let block = InitialSupportSpec::new(block.indices().to_vec(), bundle.len())?;
    Ok(SupportSet::new(
        cfg.capacity,
        initial_entries(bundle, &block)?,
    )?)
}

fn run_method<B: SegmenterBackend + ?Sized>(
    bundle: &CaseBundle,
    block: &InitialSupportSpec,
    backend: &mut B,
    cfg: &CascadeConfig,
    method: Method,
) -> Result<CascadeResult, CascadeError> {
    let initial = prepare(bundle, block, cfg)?;
    let forward = run_pass(
        bundle,
        block,
        &initial,
        backend,
        cfg,
        Direction::Forward,
        method,
    )?;
    let backward = run_pass(
        bundle,
        block,
        &initial,
        backend,
        cfg,
        Direction::Backward,
        method,
    )?;
    let mut result = CascadeResult::empty(cfg.keep_probs);
    result.absorb(forward);
    result.absorb(backward);
    Ok(result)
}

/// Segments every unlabelled slice from the initial block only.
pub fn run_baseline<B: SegmenterBackend + ?Sized>(
    bundle: &CaseBundle,
    block: &InitialSupportSpec,
    backend: &mut B,
    cfg: &CascadeConfig,
) -> Result<CascadeResult, CascadeError> {
    run_method(bundle, block, backend, cfg, Method::Baseline)
}

/// Forward then backward cascade on a single backend instance.
pub fn run_ics<B: SegmenterBackend + ?Sized>(
    bundle: &CaseBundle,
    block: &InitialSupportSpec,
    backend: &mut B,
    cfg: &CascadeConfig,
) -> Result<CascadeResult, CascadeError> {
    run_method(bundle, block, backend, cfg, Method::Ics)
}

pub fn run<B: SegmenterBackend + ?Sized>(
    method: Method,
    bundle: &CaseBundle,
    block: &InitialSupportSpec,
    backend: &mut B,
    cfg: &CascadeConfig,
) -> Result<CascadeResult, CascadeError> {
    run_method(bundle, block, backend, cfg, method)
}

/// Runs the two directions of `method` concurrently, each on its own
/// backend from `make_backend`. Output is identical to the sequential form.
pub fn run_split<B, F>(
    method: Method,
    bundle: &CaseBundle,
    block: &InitialSupportSpec,
    make_backend: F,
    cfg: &CascadeConfig,
    exec: Exec,
) -> Result<CascadeResult, CascadeError>
where
    B: SegmenterBackend,
    F: Fn() -> Result<B, BackendError> + Sync,
{
    let initial = prepare(bundle, block, cfg)?;
    let pass = |direction: Direction| -> Result<PassOutput, CascadeError> {
        let mut backend =
            make_backend().map_err(|source| CascadeError::BackendFailure { index: 0, source })?;
        run_pass(
            bundle,
            block,
            &initial,
            &mut backend,
            cfg,
            direction,
            method,
        )
    };
    let (forward, backward) = exec.join(|| pass(Direction::Forward), || pass(Direction::Backward));
    let mut result = CascadeResult::empty(cfg.keep_probs);
    result.absorb(forward?);
    result.absorb(backward?);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::{ReferenceSegmenter, SegmentError};
    use crate::types::{Spacing, Volume};

    #[test]
    fn spec_validation() {
        assert!(matches!(
            InitialSupportSpec::new(vec![], 5),
            Err(CascadeError::EmptyInitial)
        ));
        assert!(matches!(
            InitialSupportSpec::new(vec![2, 4], 5),
            Err(CascadeError::NonContiguousInitial(_))
        ));
        assert!(matches!(
            InitialSupportSpec::new(vec![3, 2], 5),
            Err(CascadeError::NonContiguousInitial(_))
        ));
        assert!(matches!(
            InitialSupportSpec::new(vec![5, 6], 5),
            Err(CascadeError::IndexOutOfRange { index: 6, n: 5 })
        ));
        assert!(matches!(
            InitialSupportSpec::new(vec![0], 5),
            Err(CascadeError::IndexOutOfRange { index: 0, .. })
        ));
        assert_eq!(
            InitialSupportSpec::centered(3, 10).unwrap().indices(),
            &[4, 5, 6]
        );
        assert_eq!(
            InitialSupportSpec::centered(1, 41).unwrap().indices(),
            &[21]
        );
        assert!(InitialSupportSpec::centered(6, 5).is_err());
    }

    #[test]
    fn pass_bounds() {
        let block = InitialSupportSpec::new(vec![5, 6, 7], 10).unwrap();
        assert_eq!(
            pass_indices(&block, 10, Direction::Forward, false),
            vec![8, 9, 10]
        );
        assert_eq!(
            pass_indices(&block, 10, Direction::Backward, false),
            vec![4, 3, 2, 1]
        );
        assert_eq!(
            pass_indices(&block, 10, Direction::Forward, true),
            vec![7, 8, 9, 10]
        );
        assert_eq!(
            pass_indices(&block, 10, Direction::Backward, true),
            vec![5, 4, 3, 2, 1]
        );
        let first = InitialSupportSpec::new(vec![1], 3).unwrap();
        assert!(pass_indices(&first, 3, Direction::Backward, false).is_empty());
    }

    fn entry(w: usize, h: usize, mark: usize) -> SupportEntry {
        let mut lbl = vec![0u8; w * h];
        lbl[mark] = 1;
        let img: Vec<f32> = lbl.iter().map(|&v| v as f32).collect();
        SupportEntry::new(
            Slice::new(w, h, 1, img).unwrap(),
            Mask::new(w, h, lbl).unwrap(),
            Provenance::GroundTruth,
        )
        .unwrap()
    }

    #[test]
    fn augment_counts_and_geometry() {
        let e = entry(4, 4, 0);
        let out = augment_support(&[e.clone(), e.clone()]);
        assert_eq!(out.len(), 8);
        assert_eq!(augment_support(&out).len(), 32);
        let single = augment_support(&[e]);
        let marks: Vec<usize> = single
            .iter()
            .map(|a| a.label.data().iter().position(|&v| v == 1).unwrap())
            .collect();
        assert_eq!(marks, vec![0, 12, 15, 3]);
        for a in &single {
            assert_eq!(
                a.image.data().iter().position(|&v| v == 1.0),
                a.label.data().iter().position(|&v| v == 1)
            );
        }
        let seqs: Vec<u64> = single.iter().map(|a| a.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3, 4]);
    }

    #[test]
    fn augment_pads_rectangles() {
        let out = augment_support(&[entry(4, 2, 0)]);
        assert!(out.iter().all(|a| a.dims() == (4, 4)));
        // padded content occupies rows 1..3
        assert_eq!(out[0].label.data().iter().position(|&v| v == 1), Some(4));
    }

    #[test]
    fn presented_support_respects_backend_limit() {
        let mut entries: Vec<SupportEntry> = (0..3).map(|i| entry(2, 2, i)).collect();
        for (i, e) in entries.iter_mut().enumerate() {
            e.source_index = i + 1;
            e.seq = i as u64 + 1;
        }
        assert_eq!(presented_support(&entries, true, 0).len(), 12);
        let limited = presented_support(&entries, true, 6);
        let sources: Vec<usize> = limited.iter().map(|e| e.source_index).collect();
        assert_eq!(sources, vec![3, 3, 3, 3, 2, 2]);
        let plain = presented_support(&entries, false, 2);
        let sources: Vec<usize> = plain.iter().map(|e| e.source_index).collect();
        assert_eq!(sources, vec![3, 2]);
    }

    struct Failing;

    impl SegmenterBackend for Failing {
        fn id(&self) -> &str {
            "failing"
        }

        fn segment(&mut self, _: &Slice, _: &[SupportEntry]) -> Result<ProbMask, BackendError> {
            Err(SegmentError::EmptySupport.into())
        }
    }

    fn flat_bundle(n: usize) -> CaseBundle {
        let slices = (1..=n)
            .map(|k| Slice::new(4, 4, k, vec![0.0; 16]).unwrap())
            .collect();
        let image = Volume::new("flat", Spacing::default(), slices).unwrap();
        CaseBundle::from_masks(image, vec![Mask::zeros(4, 4); n], "LV")
    }

    #[test]
    fn backend_failure_carries_slice_index() {
        let bundle = flat_bundle(4);
        let block = InitialSupportSpec::block(2, 1, 4).unwrap();
        let err = run_ics(&bundle, &block, &mut Failing, &CascadeConfig::default()).unwrap_err();
        assert!(matches!(err, CascadeError::BackendFailure { index: 3, .. }));
    }

    #[test]
    fn everything_labelled_gives_empty_result() {
        let bundle = flat_bundle(3);
        let block = InitialSupportSpec::block(1, 3, 3).unwrap();
        let r = run_baseline(
            &bundle,
            &block,
            &mut ReferenceSegmenter::default(),
            &CascadeConfig::default(),
        )
        .unwrap();
        assert!(r.masks.is_empty());
    }

    #[test]
    fn over_capacity_initial_block_rejected() {
        let bundle = flat_bundle(6);
        let block = InitialSupportSpec::block(1, 3, 6).unwrap();
        let cfg = CascadeConfig {
            capacity: 2,
            ..Default::default()
        };
        let err = run_ics(&bundle, &block, &mut ReferenceSegmenter::default(), &cfg).unwrap_err();
        assert!(matches!(
            err,
            CascadeError::Support(SupportError::OverCapacity { .. })
        ));
    }

    #[test]
    fn bad_threshold_rejected() {
        let cfg = CascadeConfig {
            prob_threshold: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(CascadeError::InvalidConfig(_))
        ));
    }
}
