//! Minimal single-file NIfTI-1 reader and writer.
//!
//! Supports `.nii` and gzip-compressed `.nii.gz` (detected from the stream
//! magic, not the extension), 2-D or 3-D images, and the datatypes
//! u8/i16/i32/f32/f64. Orientation is ignored apart from `pixdim`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::types::{ImageError, Slice, Spacing, Volume};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DEFAULT_VOX_OFFSET: usize = 352;
pub const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a single-file NIfTI-1 image (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("file has {actual} bytes, header requires {expected}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("invalid header: {0}")]
    BadHeader(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(#[from] ImageError),
    #[error("slicing axis must be 0, 1 or 2, got {0}")]
    BadAxis(usize),
}

impl NiftiError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Datatype {
    pub fn from_code(code: i16) -> Result<Self, NiftiError> {
        Ok(match code {
            2 => Self::U8,
            4 => Self::I16,
            8 => Self::I32,
            16 => Self::F32,
            64 => Self::F64,
            other => return Err(NiftiError::UnsupportedDatatype(other)),
        })
    }

    pub fn code(self) -> i16 {
        match self {
            Self::U8 => 2,
            Self::I16 => 4,
            Self::I32 => 8,
            Self::F32 => 16,
            Self::F64 => 64,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::I16 => 2,
            Self::I32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dims: [i16; 8],
    pub datatype: Datatype,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub magic: [u8; 4],
    pub big_endian: bool,
}

struct Fields<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Fields<'_> {
    fn i16(&self, at: usize) -> i16 {
        let b = [self.bytes[at], self.bytes[at + 1]];
        if self.big_endian {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn i32(&self, at: usize) -> i32 {
        let b: [u8; 4] = self.bytes[at..at + 4].try_into().unwrap();
        if self.big_endian {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_bits(self.i32(at) as u32)
    }
}

impl NiftiHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self, NiftiError> {
        if bytes.len() < HEADER_SIZE {
            return Err(NiftiError::TruncatedFile {
                expected: HEADER_SIZE,
                actual: bytes.len(),
            });
        }
        let sizeof_hdr: [u8; 4] = bytes[0..4].try_into().unwrap();
        let big_endian = if i32::from_le_bytes(sizeof_hdr) == HEADER_SIZE as i32 {
            false
        } else if i32::from_be_bytes(sizeof_hdr) == HEADER_SIZE as i32 {
            true
        } else {
            return Err(NiftiError::BadHeader(format!(
                "sizeof_hdr is {}, expected 348",
                i32::from_le_bytes(sizeof_hdr)
            )));
        };
        let f = Fields { bytes, big_endian };
        let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
        if magic != MAGIC_SINGLE {
            return Err(NiftiError::BadMagic(magic));
        }
        let mut dims = [0i16; 8];
        for (i, d) in dims.iter_mut().enumerate() {
            *d = f.i16(40 + 2 * i);
        }
        if !(2..=3).contains(&dims[0]) {
            return Err(NiftiError::BadHeader(format!(
                "dim[0] = {} (only 2-D and 3-D supported)",
                dims[0]
            )));
        }
        if let Some(bad) = dims[1..=dims[0] as usize].iter().find(|&&d| d < 1) {
            return Err(NiftiError::BadHeader(format!(
                "non-positive dimension {bad}"
            )));
        }
        let datatype = Datatype::from_code(f.i16(70))?;
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = f.f32(76 + 4 * i);
        }
        let vox_offset = f.f32(108);
        if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 {
            return Err(NiftiError::BadHeader(format!(
                "vox_offset {vox_offset} inside header"
            )));
        }
        Ok(Self {
            dims,
            datatype,
            bitpix: f.i16(72),
            pixdim,
            vox_offset,
            scl_slope: f.f32(112),
            scl_inter: f.f32(116),
            magic,
            big_endian,
        })
    }

    /// `(nx, ny, nz)`; `nz` is 1 for 2-D images.
    pub fn shape(&self) -> (usize, usize, usize) {
        let nz = if self.dims[0] == 3 {
            self.dims[3] as usize
        } else {
            1
        };
        (self.dims[1] as usize, self.dims[2] as usize, nz)
    }

    fn spacing_component(&self, i: usize) -> f32 {
        let p = self.pixdim[i];
        if p.is_finite() && p > 0.0 {
            p
        } else {
            1.0
        }
    }
}

/// Decoded voxel grid in file order (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub header: NiftiHeader,
    pub data: Vec<f32>,
}

fn decompress_if_gzip(bytes: Vec<u8>) -> Result<Vec<u8>, std::io::Error> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<RawImage, NiftiError> {
    let header = NiftiHeader::parse(bytes)?;
    let (nx, ny, nz) = header.shape();
    let count = nx * ny * nz;
    let width = header.datatype.bytes();
    let start = header.vox_offset as usize;
    let expected = start + count * width;
    if bytes.len() < expected {
        return Err(NiftiError::TruncatedFile {
            expected,
            actual: bytes.len(),
        });
    }
    let f = Fields {
        bytes: &bytes[start..expected],
        big_endian: header.big_endian,
    };
    let raw: Box<dyn Fn(usize) -> f64> = match header.datatype {
        Datatype::U8 => Box::new(|i| f.bytes[i] as f64),
        Datatype::I16 => Box::new(|i| f.i16(2 * i) as f64),
        Datatype::I32 => Box::new(|i| f.i32(4 * i) as f64),
        Datatype::F32 => Box::new(|i| f.f32(4 * i) as f64),
        Datatype::F64 => Box::new(|i| {
            let b: [u8; 8] = f.bytes[8 * i..8 * i + 8].try_into().unwrap();
            if f.big_endian {
                f64::from_be_bytes(b)
            } else {
                f64::from_le_bytes(b)
            }
        }),
    };
    let (slope, inter) = (header.scl_slope, header.scl_inter);
    let scaled = slope != 0.0 && slope.is_finite() && inter.is_finite();
    let data = if scaled {
        (0..count)
            .map(|i| (raw(i) * slope as f64 + inter as f64) as f32)
            .collect()
    } else {
        (0..count).map(|i| raw(i) as f32).collect()
    };
    drop(raw);
    Ok(RawImage { header, data })
}

impl RawImage {
    /// Cuts the grid into 2-D planes perpendicular to `axis` (0 = x, 1 = y,
    /// 2 = z). Plane `k` becomes slice index `k + 1`.
    pub fn into_volume(self, id: impl Into<String>, axis: usize) -> Result<Volume, NiftiError> {
        let (nx, ny, nz) = self.header.shape();
        let at = |x: usize, y: usize, z: usize| self.data[x + nx * (y + ny * z)];
        let h = &self.header;
        let (p1, p2, p3) = (
            h.spacing_component(1),
            h.spacing_component(2),
            h.spacing_component(3),
        );
        let (count, w, hgt, spacing) = match axis {
            2 => (
                nz,
                nx,
                ny,
                Spacing {
                    dx: p1,
                    dy: p2,
                    dz: p3,
                },
            ),
            1 => (
                ny,
                nx,
                nz,
                Spacing {
                    dx: p1,
                    dy: p3,
                    dz: p2,
                },
            ),
            0 => (
                nx,
                ny,
                nz,
                Spacing {
                    dx: p2,
                    dy: p3,
                    dz: p1,
                },
            ),
            other => return Err(NiftiError::BadAxis(other)),
        };
        let mut slices = Vec::with_capacity(count);
        for k in 0..count {
            let mut plane = Vec::with_capacity(w * hgt);
            for v in 0..hgt {
                for u in 0..w {
                    plane.push(match axis {
                        2 => at(u, v, k),
                        1 => at(u, k, v),
                        _ => at(k, u, v),
                    });
                }
            }
            slices.push(Slice::new(w, hgt, k + 1, plane)?);
        }
        Ok(Volume::new(id, spacing, slices)?)
    }
}

pub(crate) fn case_id_from_path(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = name.strip_suffix(".gz").unwrap_or(&name);
    name.strip_suffix(".nii").unwrap_or(name).to_string()
}

pub fn read_raw(path: &Path) -> Result<RawImage, NiftiError> {
    let bytes = fs::read(path).map_err(|e| NiftiError::io(path, e))?;
    let bytes = decompress_if_gzip(bytes).map_err(|e| NiftiError::io(path, e))?;
    decode_image(&bytes)
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume, NiftiError> {
    read_nifti_axis(path, 2)
}

pub fn read_nifti_axis(path: impl AsRef<Path>, axis: usize) -> Result<Volume, NiftiError> {
    let path = path.as_ref();
    read_raw(path)?.into_volume(case_id_from_path(path), axis)
}

/// Serializes as little-endian f32, `scl_slope = 1`, `vox_offset = 352`.
pub fn encode_nifti(volume: &Volume) -> Result<Vec<u8>, NiftiError> {
    if volume.is_empty() {
        return Err(NiftiError::InvalidVolume(ImageError::EmptyVolume));
    }
    let (w, h) = volume.dims();
    let n = volume.len();
    for (name, v) in [("width", w), ("height", h), ("slice count", n)] {
        if v > i16::MAX as usize {
            return Err(NiftiError::BadHeader(format!(
                "{name} {v} exceeds NIfTI-1 limit"
            )));
        }
    }
    let mut out = vec![0u8; DEFAULT_VOX_OFFSET];
    let put_i16 =
        |buf: &mut [u8], at: usize, v: i16| buf[at..at + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 =
        |buf: &mut [u8], at: usize, v: f32| buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
    out[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dims = [3, w as i16, h as i16, n as i16, 1, 1, 1, 1];
    for (i, d) in dims.iter().enumerate() {
        put_i16(&mut out, 40 + 2 * i, *d);
    }
    put_i16(&mut out, 70, Datatype::F32.code());
    put_i16(&mut out, 72, 32);
    let s = volume.spacing();
    for (i, p) in [1.0, s.dx, s.dy, s.dz, 1.0, 1.0, 1.0, 1.0]
        .iter()
        .enumerate()
    {
        put_f32(&mut out, 76 + 4 * i, *p);
    }
    put_f32(&mut out, 108, DEFAULT_VOX_OFFSET as f32);
    put_f32(&mut out, 112, 1.0);
    put_f32(&mut out, 116, 0.0);
    out[123] = 2; // xyzt_units: millimetres
    out[344..348].copy_from_slice(&MAGIC_SINGLE);
    out.reserve(w * h * n * 4);
    for slice in volume.slices() {
        for v in slice.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes `volume`; paths ending in `.gz` are gzip-compressed.
pub fn write_nifti(volume: &Volume, path: impl AsRef<Path>) -> Result<(), NiftiError> {
    let path = path.as_ref();
    let bytes = encode_nifti(volume)?;
    let bytes = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| NiftiError::io(path, e))?;
        enc.finish().map_err(|e| NiftiError::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, bytes).map_err(|e| NiftiError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume(w: usize, h: usize, n: usize) -> Volume {
        let slices = (0..n)
            .map(|k| {
                Slice::new(
                    w,
                    h,
                    k + 1,
                    (0..w * h).map(|i| (i + 100 * k) as f32 * 0.5).collect(),
                )
                .unwrap()
            })
            .collect();
        Volume::new(
            "v",
            Spacing {
                dx: 0.5,
                dy: 0.75,
                dz: 2.0,
            },
            slices,
        )
        .unwrap()
    }

    #[test]
    fn single_slice_file_size() {
        let v = volume(2, 2, 1);
        assert_eq!(encode_nifti(&v).unwrap().len(), 352 + 16);
    }

    #[test]
    fn encode_decode_f32_fixture() {
        let v = volume(4, 4, 2);
        let raw = decode_image(&encode_nifti(&v).unwrap()).unwrap();
        assert_eq!(raw.header.dims[..4], [3, 4, 4, 2]);
        let back = raw.into_volume("v", 2).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.dims(), (4, 4));
        assert_eq!(back, v);
    }

    #[test]
    fn dual_file_magic_rejected() {
        let mut bytes = encode_nifti(&volume(2, 2, 1)).unwrap();
        bytes[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(decode_image(&bytes), Err(NiftiError::BadMagic(m)) if &m == b"ni1\0"));
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = encode_nifti(&volume(2, 2, 2)).unwrap();
        assert!(matches!(
            decode_image(&bytes[..bytes.len() - 1]),
            Err(NiftiError::TruncatedFile {
                expected: 384,
                actual: 383
            })
        ));
        assert!(matches!(
            decode_image(&bytes[..100]),
            Err(NiftiError::TruncatedFile { .. })
        ));
    }

    #[test]
    fn unsupported_datatype_rejected() {
        let mut bytes = encode_nifti(&volume(2, 2, 1)).unwrap();
        bytes[70..72].copy_from_slice(&512i16.to_le_bytes());
        assert!(matches!(
            decode_image(&bytes),
            Err(NiftiError::UnsupportedDatatype(512))
        ));
    }

    /// Hand-built big-endian i16 file with scaling.
    #[test]
    fn big_endian_i16_with_scaling() {
        let mut bytes = vec![0u8; 352];
        bytes[0..4].copy_from_slice(&348i32.to_be_bytes());
        for (i, d) in [2i16, 2, 1, 1, 1, 1, 1, 1].iter().enumerate() {
            bytes[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_be_bytes());
        }
        bytes[70..72].copy_from_slice(&4i16.to_be_bytes());
        bytes[72..74].copy_from_slice(&16i16.to_be_bytes());
        bytes[108..112].copy_from_slice(&352f32.to_be_bytes());
        bytes[112..116].copy_from_slice(&2f32.to_be_bytes());
        bytes[116..120].copy_from_slice(&(-1f32).to_be_bytes());
        bytes[344..348].copy_from_slice(b"n+1\0");
        bytes.extend_from_slice(&(-3i16).to_be_bytes());
        bytes.extend_from_slice(&7i16.to_be_bytes());
        let v = decode_image(&bytes).unwrap().into_volume("be", 2).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.slices()[0].data(), &[-7.0, 13.0]);
        assert_eq!(v.spacing(), Spacing::default());
    }

    #[test]
    fn zero_slope_means_unscaled() {
        let mut bytes = encode_nifti(&volume(2, 1, 1)).unwrap();
        bytes[112..116].copy_from_slice(&0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&5f32.to_le_bytes());
        let v = decode_image(&bytes).unwrap().into_volume("v", 2).unwrap();
        assert_eq!(v.slices()[0].data(), &[0.0, 0.5]);
    }

    #[test]
    fn reslicing_along_other_axes() {
        // 2x3x4 grid with value = x + 10y + 100z
        let slices = (0..4)
            .map(|z| {
                let data = (0..3)
                    .flat_map(|y| (0..2).map(move |x| (x + 10 * y + 100 * z) as f32))
                    .collect();
                Slice::new(2, 3, z + 1, data).unwrap()
            })
            .collect();
        let v = Volume::new(
            "g",
            Spacing {
                dx: 1.0,
                dy: 2.0,
                dz: 3.0,
            },
            slices,
        )
        .unwrap();
        let raw = decode_image(&encode_nifti(&v).unwrap()).unwrap();
        let along_x = raw.clone().into_volume("g", 0).unwrap();
        assert_eq!(along_x.len(), 2);
        assert_eq!(along_x.dims(), (3, 4));
        assert_eq!(along_x.slice(2).unwrap().get(2, 3), 1.0 + 20.0 + 300.0);
        assert_eq!(
            along_x.spacing(),
            Spacing {
                dx: 2.0,
                dy: 3.0,
                dz: 1.0
            }
        );
        let along_y = raw.clone().into_volume("g", 1).unwrap();
        assert_eq!(along_y.len(), 3);
        assert_eq!(along_y.dims(), (2, 4));
        assert_eq!(along_y.slice(3).unwrap().get(1, 2), 1.0 + 20.0 + 200.0);
        assert!(matches!(
            raw.into_volume("g", 3),
            Err(NiftiError::BadAxis(3))
        ));
    }

    #[test]
    fn case_ids_strip_extensions() {
        assert_eq!(case_id_from_path(Path::new("/a/pat32.nii.gz")), "pat32");
        assert_eq!(case_id_from_path(Path::new("pat32.nii")), "pat32");
        assert_eq!(case_id_from_path(Path::new("x.gz")), "x");
    }
}
