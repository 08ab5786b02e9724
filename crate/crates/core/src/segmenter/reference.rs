//! Patch k-nearest-neighbour label transfer.
//!
//! For each query pixel the `k` support patches with the smallest sum of
//! squared differences (within a Chebyshev search window) vote for the label
//! at their centre, weighted by `exp(-ssd / (p^2 * sigma^2))`.
//!
//! Candidates are visited in `(entry seq, dy, dx)` ascending order and a
//! candidate only displaces a kept one when its SSD is strictly smaller, so
//! equal scores resolve to the earliest visited candidate. Patch sums run
//! row-major, which makes the output bit-reproducible.

use crate::par::Exec;
use crate::support::SupportEntry;
use crate::types::{ProbMask, Slice};

use super::resample::normalize_slice;
use super::SegmentError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefSegParams {
    pub patch_size: usize,
    pub search_radius: usize,
    pub k: usize,
    pub bandwidth: f64,
}

impl Default for RefSegParams {
    fn default() -> Self {
        Self {
            patch_size: 5,
            search_radius: 4,
            k: 7,
            bandwidth: 0.5,
        }
    }
}

impl RefSegParams {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.patch_size < 3 || self.patch_size.is_multiple_of(2) {
            return Err(SegmentError::InvalidParams(format!(
                "patch size must be odd and >= 3, got {}",
                self.patch_size
            )));
        }
        if self.k == 0 {
            return Err(SegmentError::InvalidParams("k must be >= 1".into()));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(SegmentError::InvalidParams(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }
}

/// Mirror index without repeating the edge sample (`-1 -> 1`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Normalized plane with a reflected border of `pad` pixels on each side.
struct Padded {
    stride: usize,
    data: Vec<f32>,
}

impl Padded {
    fn new(slice: &Slice, pad: usize) -> Self {
        let norm = normalize_slice(slice);
        let (w, h) = norm.dims();
        let stride = w + 2 * pad;
        let mut data = Vec::with_capacity(stride * (h + 2 * pad));
        for py in 0..h + 2 * pad {
            let sy = reflect(py as isize - pad as isize, h);
            for px in 0..stride {
                let sx = reflect(px as isize - pad as isize, w);
                data.push(norm.get(sx, sy));
            }
        }
        Self { stride, data }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    ssd: f64,
    label: u8,
}

pub fn ref_segment(
    query: &Slice,
    support: &[SupportEntry],
    params: &RefSegParams,
) -> Result<ProbMask, SegmentError> {
    ref_segment_with(query, support, params, Exec::default())
}

pub fn ref_segment_with(
    query: &Slice,
    support: &[SupportEntry],
    params: &RefSegParams,
    exec: Exec,
) -> Result<ProbMask, SegmentError> {
    params.validate()?;
    if support.is_empty() {
        return Err(SegmentError::EmptySupport);
    }
    let (w, h) = query.dims();
    for e in support {
        if e.image.dims() != (w, h) || e.label.dims() != (w, h) {
            return Err(SegmentError::DimMismatch {
                expected: (w, h),
                got: e.image.dims(),
            });
        }
    }

    let p = params.patch_size;
    let half = p / 2;
    let r = params.search_radius as isize;
    let k = params.k;
    let scale = (p * p) as f64 * params.bandwidth * params.bandwidth;

    let mut order: Vec<&SupportEntry> = support.iter().collect();
    order.sort_by_key(|e| e.seq);
    let q = Padded::new(query, half);
    let padded: Vec<(Padded, &[u8])> = order
        .iter()
        .map(|e| (Padded::new(&e.image, half), e.label.data()))
        .collect();
    let stride = q.stride;

    let mut out = vec![0f32; w * h];
    exec.for_each_row(&mut out, w, |y, row| {
        let mut best: Vec<Candidate> = Vec::with_capacity(k + 1);
        for (x, value) in row.iter_mut().enumerate() {
            best.clear();
            for (s, labels) in &padded {
                for dy in -r..=r {
                    let cy = y as isize + dy;
                    if cy < 0 || cy >= h as isize {
                        continue;
                    }
                    let cy = cy as usize;
                    for dx in -r..=r {
                        let cx = x as isize + dx;
                        if cx < 0 || cx >= w as isize {
                            continue;
                        }
                        let cx = cx as usize;
                        let bound = if best.len() == k {
                            best[k - 1].ssd
                        } else {
                            f64::INFINITY
                        };
                        let mut ssd = 0f64;
                        for v in 0..p {
                            let qrow = &q.data[(y + v) * stride + x..][..p];
                            let srow = &s.data[(cy + v) * stride + cx..][..p];
                            for (a, b) in qrow.iter().zip(srow) {
                                let d = (*a - *b) as f64;
                                ssd += d * d;
                            }
                            if ssd >= bound {
                                break;
                            }
                        }
                        if ssd >= bound {
                            continue;
                        }
                        let at = best.partition_point(|c| c.ssd <= ssd);
                        best.insert(
                            at,
                            Candidate {
                                ssd,
                                label: labels[cy * w + cx],
                            },
                        );
                        best.truncate(k);
                    }
                }
            }
            let floor = best[0].ssd;
            let (mut num, mut den) = (0f64, 0f64);
            for c in &best {
                let wgt = (-(c.ssd - floor) / scale).exp();
                num += wgt * c.label as f64;
                den += wgt;
            }
            *value = ((num / den) as f32).clamp(0.0, 1.0);
        }
    });
    Ok(ProbMask::from_parts(w, h, out))
}
