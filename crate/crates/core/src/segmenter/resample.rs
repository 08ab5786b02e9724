//! Intensity normalization and plane resampling.
//!
//! Resampling follows the align-corners-false convention: destination pixel
//! `d` samples source coordinate `(d + 0.5) * (src / dst) - 0.5`, clamped to
//! the valid range.

use crate::types::{Mask, ProbMask, Slice};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

/// Min-max rescale into `[0, 1]`. Constant slices become all zeros.
pub fn normalize_slice(slice: &Slice) -> Slice {
    let data = slice.data();
    let (lo, hi) = data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let out = if range > 0.0 && range.is_finite() {
        data.iter()
            .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
            .collect()
    } else if range > 0.0 {
        // range overflowed f32; fall back to f64 arithmetic
        let (lo, range) = (lo as f64, hi as f64 - lo as f64);
        data.iter()
            .map(|&v| ((v as f64 - lo) / range) as f32)
            .collect()
    } else {
        vec![0.0; data.len()]
    };
    Slice::from_parts(slice.width(), slice.height(), slice.index(), out)
}

fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    let scale = src_len as f64 / dst_len as f64;
    ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64)
}

pub(crate) fn resample_plane(
    data: &[f32],
    src: (usize, usize),
    dst: (usize, usize),
    mode: Interpolation,
) -> Vec<f32> {
    let (sw, sh) = src;
    let (dw, dh) = dst;
    assert!(dw >= 1 && dh >= 1, "resample target must be at least 1x1");
    if src == dst {
        return data.to_vec();
    }
    let xs: Vec<f64> = (0..dw).map(|x| source_coord(x, sw, dw)).collect();
    let ys: Vec<f64> = (0..dh).map(|y| source_coord(y, sh, dh)).collect();
    let mut out = Vec::with_capacity(dw * dh);
    match mode {
        Interpolation::Nearest => {
            for &sy in &ys {
                let row = (sy.round() as usize).min(sh - 1) * sw;
                for &sx in &xs {
                    out.push(data[row + (sx.round() as usize).min(sw - 1)]);
                }
            }
        }
        Interpolation::Bilinear => {
            let lerp = |a: f32, b: f32, t: f64| -> f64 { a as f64 + t * (b as f64 - a as f64) };
            for &sy in &ys {
                let y0 = sy.floor() as usize;
                let y1 = (y0 + 1).min(sh - 1);
                let ty = sy - y0 as f64;
                for &sx in &xs {
                    let x0 = sx.floor() as usize;
                    let x1 = (x0 + 1).min(sw - 1);
                    let tx = sx - x0 as f64;
                    let top = lerp(data[y0 * sw + x0], data[y0 * sw + x1], tx);
                    let bottom = lerp(data[y1 * sw + x0], data[y1 * sw + x1], tx);
                    let v = if top == bottom {
                        top
                    } else {
                        top + ty * (bottom - top)
                    };
                    out.push(v as f32);
                }
            }
        }
    }
    out
}

impl Slice {
    pub fn resampled(&self, target: (usize, usize), mode: Interpolation) -> Slice {
        let data = resample_plane(self.data(), self.dims(), target, mode);
        Slice::from_parts(target.0, target.1, self.index(), data)
    }
}

impl ProbMask {
    pub fn resampled(&self, target: (usize, usize), mode: Interpolation) -> ProbMask {
        let data = resample_plane(self.data(), self.dims(), target, mode)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        ProbMask::from_parts(target.0, target.1, data)
    }
}

impl Mask {
    /// Resamples and re-thresholds at 0.5.
    pub fn resampled(&self, target: (usize, usize), mode: Interpolation) -> Mask {
        let as_f32: Vec<f32> = self.data().iter().map(|&v| v as f32).collect();
        let data = resample_plane(&as_f32, self.dims(), target, mode)
            .into_iter()
            .map(|v| u8::from(v >= 0.5))
            .collect();
        Mask::from_parts(target.0, target.1, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice(w: usize, h: usize, v: Vec<f32>) -> Slice {
        Slice::new(w, h, 1, v).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_slice(&slice(2, 1, vec![0., 10.])).data(),
            &[0.0, 1.0]
        );
        assert_eq!(normalize_slice(&slice(3, 1, vec![7.; 3])).data(), &[0.0; 3]);
        assert_eq!(
            normalize_slice(&slice(3, 1, vec![2., 4., 6.])).data(),
            &[0.0, 0.5, 1.0]
        );
    }

    #[test]
    fn normalize_handles_huge_range() {
        let s = slice(2, 1, vec![-f32::MAX, f32::MAX]);
        assert_eq!(normalize_slice(&s).data(), &[0.0, 1.0]);
    }

    #[test]
    fn identity_resample_is_noop() {
        let s = slice(3, 2, vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(s.resampled((3, 2), Interpolation::Bilinear), s);
    }

    #[test]
    fn nearest_upsample_of_corner_mask() {
        // source coords for dst 0..4 at scale 0.5: -0.25->0, 0.25->0, 0.75->1, 1.25->1
        let m = Mask::new(2, 2, vec![1, 0, 0, 0]).unwrap();
        let up = m.resampled((4, 4), Interpolation::Nearest);
        #[rustfmt::skip]
        let expected = vec![
            1, 1, 0, 0,
            1, 1, 0, 0,
            0, 0, 0, 0,
            0, 0, 0, 0,
        ];
        assert_eq!(up.data(), expected.as_slice());
    }

    #[test]
    fn constant_survives_any_resize() {
        let s = slice(5, 3, vec![0.37; 15]);
        for target in [(1, 1), (7, 2), (10, 10), (2, 9)] {
            let r = s.resampled(target, Interpolation::Bilinear);
            assert!(r.data().iter().all(|&v| v == 0.37), "{target:?}");
        }
    }

    #[test]
    fn bilinear_midpoint() {
        // 2 -> 1 samples source coordinate 0.5
        let s = slice(2, 1, vec![0., 1.]);
        assert_eq!(s.resampled((1, 1), Interpolation::Bilinear).data(), &[0.5]);
    }
}
