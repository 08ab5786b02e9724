//! Image-plane types shared across the engine.
//!
//! All 2-D buffers are stored row-major: the pixel at column `x`, row `y`
//! lives at `y * width + x`. Slice indices are 1-based throughout.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("image must be at least 1x1, got {width}x{height}")]
    ZeroSize { width: usize, height: usize },
    #[error("expected {expected} values for a {width}x{height} image, got {actual}")]
    LengthMismatch {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite intensity at pixel offset {0}")]
    NonFinite(usize),
    #[error("mask value {value} at pixel offset {offset} is not binary")]
    NotBinary { offset: usize, value: u8 },
    #[error("probability {value} at pixel offset {offset} is outside [0, 1]")]
    OutOfRange { offset: usize, value: f32 },
    #[error("slice index must be >= 1")]
    ZeroIndex,
    #[error("volume has no slices")]
    EmptyVolume,
    #[error("slice {index} is {width}x{height}, expected {expected_w}x{expected_h}")]
    InconsistentSlice {
        index: usize,
        width: usize,
        height: usize,
        expected_w: usize,
        expected_h: usize,
    },
    #[error("slice at position {position} has index {index}, expected {expected}")]
    IndexGap {
        position: usize,
        index: usize,
        expected: usize,
    },
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<(), ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::ZeroSize { width, height });
    }
    if width * height != len {
        return Err(ImageError::LengthMismatch {
            width,
            height,
            expected: width * height,
            actual: len,
        });
    }
    Ok(())
}

/// One 2-D cross-section of a volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    width: usize,
    height: usize,
    index: usize,
    data: Vec<f32>,
}

impl Slice {
    pub fn new(
        width: usize,
        height: usize,
        index: usize,
        data: Vec<f32>,
    ) -> Result<Self, ImageError> {
        check_dims(width, height, data.len())?;
        if index == 0 {
            return Err(ImageError::ZeroIndex);
        }
        if let Some(offset) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite(offset));
        }
        Ok(Self {
            width,
            height,
            index,
            data,
        })
    }

    /// Builds a slice from values already known to be finite and correctly sized.
    pub(crate) fn from_parts(width: usize, height: usize, index: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(width * height, data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            index,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn with_index(mut self, index: usize) -> Self {
        assert!(index >= 1, "slice indices are 1-based");
        self.index = index;
        self
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Binary label image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        check_dims(width, height, data.len())?;
        if let Some(offset) = data.iter().position(|&v| v > 1) {
            return Err(ImageError::NotBinary {
                offset,
                value: data[offset],
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    /// Any nonzero value becomes 1.
    pub fn binarize(width: usize, height: usize, values: &[f32]) -> Result<Self, ImageError> {
        check_dims(width, height, values.len())?;
        Ok(Self {
            width,
            height,
            data: values.iter().map(|&v| u8::from(v > 0.0)).collect(),
        })
    }

    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<u8>) -> Self {
        debug_assert_eq!(width * height, data.len());
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }
}

/// Backend output before thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ProbMask {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        check_dims(width, height, data.len())?;
        if let Some(offset) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(ImageError::OutOfRange {
                offset,
                value: data[offset],
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(width * height, data.len());
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Voxel spacing in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spacing {
    pub dx: f32,
    pub dy: f32,
    pub dz: f32,
}

impl Default for Spacing {
    fn default() -> Self {
        Self {
            dx: 1.0,
            dy: 1.0,
            dz: 1.0,
        }
    }
}

/// An ordered stack of equally sized slices, indexed `1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    id: String,
    spacing: Spacing,
    slices: Vec<Slice>,
}

impl Volume {
    pub fn new(
        id: impl Into<String>,
        spacing: Spacing,
        slices: Vec<Slice>,
    ) -> Result<Self, ImageError> {
        let first = slices.first().ok_or(ImageError::EmptyVolume)?;
        let (w, h) = first.dims();
        for (position, s) in slices.iter().enumerate() {
            if s.dims() != (w, h) {
                return Err(ImageError::InconsistentSlice {
                    index: s.index(),
                    width: s.width(),
                    height: s.height(),
                    expected_w: w,
                    expected_h: h,
                });
            }
            if s.index() != position + 1 {
                return Err(ImageError::IndexGap {
                    position,
                    index: s.index(),
                    expected: position + 1,
                });
            }
        }
        Ok(Self {
            id: id.into(),
            spacing,
            slices,
        })
    }

    /// Assigns indices `1..=n` in order before validating.
    pub fn from_planes(
        id: impl Into<String>,
        spacing: Spacing,
        slices: Vec<Slice>,
    ) -> Result<Self, ImageError> {
        let slices = slices
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.with_index(i + 1))
            .collect();
        Self::new(id, spacing, slices)
    }

    /// One 0/1-valued slice per mask.
    pub fn from_masks(
        id: impl Into<String>,
        spacing: Spacing,
        masks: &[Mask],
    ) -> Result<Self, ImageError> {
        let slices = masks
            .iter()
            .enumerate()
            .map(|(i, m)| {
                Slice::from_parts(
                    m.width(),
                    m.height(),
                    i + 1,
                    m.data().iter().map(|&v| v as f32).collect(),
                )
            })
            .collect();
        Self::new(id, spacing, slices)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn set_id(&mut self, id: impl Into<String>) {
        self.id = id.into();
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.slices[0].dims()
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    /// 1-based lookup.
    pub fn slice(&self, index: usize) -> Option<&Slice> {
        index.checked_sub(1).and_then(|i| self.slices.get(i))
    }
}

pub(crate) fn rotate90<T: Copy>(data: &[T], width: usize, height: usize) -> (Vec<T>, usize, usize) {
    // counter-clockwise: out[r][c] = in[c][width - 1 - r]
    let (ow, oh) = (height, width);
    let mut out = Vec::with_capacity(data.len());
    for r in 0..oh {
        for c in 0..ow {
            out.push(data[c * width + (width - 1 - r)]);
        }
    }
    (out, ow, oh)
}

pub(crate) fn rotate_times<T: Copy>(
    data: &[T],
    width: usize,
    height: usize,
    quarter_turns: u8,
) -> (Vec<T>, usize, usize) {
    let mut cur = (data.to_vec(), width, height);
    for _ in 0..quarter_turns % 4 {
        cur = rotate90(&cur.0, cur.1, cur.2);
    }
    cur
}

/// Zero-pads to a centered `side x side` canvas. Returns the buffer and the
/// (left, top) offset of the original content.
pub(crate) fn pad_to_square<T: Copy + Default>(
    data: &[T],
    width: usize,
    height: usize,
) -> (Vec<T>, usize, (usize, usize)) {
    let side = width.max(height);
    let left = (side - width) / 2;
    let top = (side - height) / 2;
    let mut out = vec![T::default(); side * side];
    for y in 0..height {
        let dst = (y + top) * side + left;
        out[dst..dst + width].copy_from_slice(&data[y * width..(y + 1) * width]);
    }
    (out, side, (left, top))
}

pub(crate) fn crop<T: Copy>(
    data: &[T],
    stride: usize,
    origin: (usize, usize),
    width: usize,
    height: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let start = (y + origin.1) * stride + origin.0;
        out.extend_from_slice(&data[start..start + width]);
    }
    out
}

impl Slice {
    pub fn rotated(&self, quarter_turns: u8) -> Slice {
        let (data, w, h) = rotate_times(&self.data, self.width, self.height, quarter_turns);
        Slice::from_parts(w, h, self.index, data)
    }

    pub fn padded_square(&self) -> (Slice, (usize, usize)) {
        let (data, side, origin) = pad_to_square(&self.data, self.width, self.height);
        (Slice::from_parts(side, side, self.index, data), origin)
    }
}

impl Mask {
    pub fn rotated(&self, quarter_turns: u8) -> Mask {
        let (data, w, h) = rotate_times(&self.data, self.width, self.height, quarter_turns);
        Mask::from_parts(w, h, data)
    }

    pub fn padded_square(&self) -> (Mask, (usize, usize)) {
        let (data, side, origin) = pad_to_square(&self.data, self.width, self.height);
        (Mask::from_parts(side, side, data), origin)
    }
}

impl ProbMask {
    pub fn rotated(&self, quarter_turns: u8) -> ProbMask {
        let (data, w, h) = rotate_times(&self.data, self.width, self.height, quarter_turns);
        ProbMask::from_parts(w, h, data)
    }

    pub(crate) fn cropped(&self, origin: (usize, usize), width: usize, height: usize) -> ProbMask {
        ProbMask::from_parts(
            width,
            height,
            crop(&self.data, self.width, origin, width, height),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_rejects_nan() {
        assert_eq!(
            Slice::new(2, 1, 1, vec![0.0, f32::NAN]),
            Err(ImageError::NonFinite(1))
        );
    }

    #[test]
    fn slice_rejects_bad_length() {
        assert!(matches!(
            Slice::new(2, 2, 1, vec![0.0; 3]),
            Err(ImageError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Slice::new(0, 2, 1, vec![]),
            Err(ImageError::ZeroSize { .. })
        ));
    }

    #[test]
    fn mask_must_be_binary() {
        assert!(matches!(
            Mask::new(2, 1, vec![0, 2]),
            Err(ImageError::NotBinary {
                offset: 1,
                value: 2
            })
        ));
        assert_eq!(Mask::binarize(2, 1, &[0.0, 3.0]).unwrap().data(), &[0, 1]);
    }

    #[test]
    fn volume_requires_contiguous_indices() {
        let a = Slice::new(1, 1, 1, vec![0.0]).unwrap();
        let b = Slice::new(1, 1, 3, vec![0.0]).unwrap();
        assert!(matches!(
            Volume::new("v", Spacing::default(), vec![a.clone(), b]),
            Err(ImageError::IndexGap { .. })
        ));
        let c = Slice::new(2, 1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            Volume::new("v", Spacing::default(), vec![a, c]),
            Err(ImageError::InconsistentSlice { .. })
        ));
        assert_eq!(
            Volume::new("v", Spacing::default(), vec![]),
            Err(ImageError::EmptyVolume)
        );
    }

    #[test]
    fn rotation_moves_corner_mark() {
        let mut data = vec![0u8; 16];
        data[0] = 1;
        let m = Mask::new(4, 4, data).unwrap();
        let corners: Vec<(usize, usize)> = (1..4)
            .map(|t| {
                let r = m.rotated(t);
                let i = r.data().iter().position(|&v| v == 1).unwrap();
                (i % 4, i / 4)
            })
            .collect();
        // counter-clockwise: top-left -> bottom-left -> bottom-right -> top-right
        assert_eq!(corners, vec![(0, 3), (3, 3), (3, 0)]);
        assert_eq!(m.rotated(4), m);
    }

    #[test]
    fn rotation_of_rectangle_swaps_dims() {
        let s = Slice::new(3, 2, 1, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let r = s.rotated(1);
        assert_eq!(r.dims(), (2, 3));
        assert_eq!(r.data(), &[3., 6., 2., 5., 1., 4.]);
    }

    #[test]
    fn pad_and_crop_invert() {
        let s = Slice::new(3, 1, 1, vec![1., 2., 3.]).unwrap();
        let (p, origin) = s.padded_square();
        assert_eq!(p.dims(), (3, 3));
        assert_eq!(origin, (0, 1));
        assert_eq!(p.data(), &[0., 0., 0., 1., 2., 3., 0., 0., 0.]);
        assert_eq!(crop(p.data(), 3, origin, 3, 1), vec![1., 2., 3.]);
    }
}
