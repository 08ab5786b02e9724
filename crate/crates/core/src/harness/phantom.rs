//! Synthetic volumes with analytically known ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::HarnessError;
use crate::io::CaseBundle;
use crate::types::{Mask, Slice, Spacing, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomShape {
    Disk,
    /// A disk that sprouts a smaller branch disk halfway through the sweep.
    TubeWithBranch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftProfile {
    /// Offset grows with `k - 1`.
    Linear,
    /// Offset grows with `|k - mid|`; slice `k` mirrors slice `n + 1 - k`,
    /// noise included.
    Mirrored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub id: String,
    pub region: String,
    pub n_slices: usize,
    pub width: usize,
    pub height: usize,
    pub shape: PhantomShape,
    pub radius: f64,
    /// Shape centre on slice 1 (or on the middle slice when mirrored), in
    /// pixel coordinates.
    pub center: (f64, f64),
    pub drift_per_slice: (f64, f64),
    pub radius_growth_per_slice: f64,
    pub noise_std: f64,
    pub profile: DriftProfile,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    DriftingDisk,
    Constant,
    Mirrored,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "drifting-disk" => Ok(Preset::DriftingDisk),
            "constant" => Ok(Preset::Constant),
            "mirrored" => Ok(Preset::Mirrored),
            other => Err(format!(
                "unknown preset {other:?} (drifting-disk, constant, mirrored)"
            )),
        }
    }
}

impl PhantomConfig {
    /// 64x64x40 disk of radius 12 sliding 1 px per slice across the full
    /// width, with mild noise.
    pub fn drifting_disk(seed: u64) -> Self {
        Self {
            id: "drifting-disk".into(),
            region: "phantom".into(),
            n_slices: 40,
            width: 64,
            height: 64,
            shape: PhantomShape::Disk,
            radius: 12.0,
            center: (12.0, 31.5),
            drift_per_slice: (1.0, 0.0),
            radius_growth_per_slice: 0.0,
            noise_std: 0.05,
            profile: DriftProfile::Linear,
            seed,
        }
    }

    /// Every slice identical and noise-free, with the disk on the image
    /// centre.
    pub fn constant(seed: u64) -> Self {
        Self {
            id: "constant".into(),
            center: (31.5, 31.5),
            drift_per_slice: (0.0, 0.0),
            noise_std: 0.0,
            ..Self::drifting_disk(seed)
        }
    }

    /// 41 slices drifting outward from the centre slice in both directions.
    pub fn mirrored(seed: u64) -> Self {
        Self {
            id: "mirrored".into(),
            n_slices: 41,
            radius: 10.0,
            center: (31.5, 31.5),
            profile: DriftProfile::Mirrored,
            ..Self::drifting_disk(seed)
        }
    }

    pub fn preset(preset: Preset, seed: u64) -> Self {
        match preset {
            Preset::DriftingDisk => Self::drifting_disk(seed),
            Preset::Constant => Self::constant(seed),
            Preset::Mirrored => Self::mirrored(seed),
        }
    }

    fn offset(&self, k: usize) -> f64 {
        match self.profile {
            DriftProfile::Linear => (k - 1) as f64,
            DriftProfile::Mirrored => (k as f64 - (self.n_slices + 1) as f64 / 2.0).abs(),
        }
    }

    fn max_offset(&self) -> f64 {
        (1..=self.n_slices)
            .map(|k| self.offset(k))
            .fold(0.0, f64::max)
    }

    /// Centre and radius of every disk drawn on slice `k` (1-based).
    pub fn disks(&self, k: usize) -> Vec<((f64, f64), f64)> {
        let t = self.offset(k);
        let c = (
            self.center.0 + t * self.drift_per_slice.0,
            self.center.1 + t * self.drift_per_slice.1,
        );
        let r = self.radius + t * self.radius_growth_per_slice;
        let mut out = vec![(c, r)];
        if self.shape == PhantomShape::TubeWithBranch {
            let split = self.max_offset() / 2.0;
            if t >= split {
                out.push(((c.0, c.1 + r + (t - split)), r / 2.0));
            }
        }
        out
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidPhantom(m.to_string()));
        if self.n_slices == 0 || self.width == 0 || self.height == 0 {
            return bad("dimensions and slice count must be positive");
        }
        if !self.radius.is_finite()
            || self.radius <= 0.0
            || !self.noise_std.is_finite()
            || self.noise_std < 0.0
        {
            return bad("radius must be positive and noise_std non-negative");
        }
        for k in 1..=self.n_slices {
            for ((cx, cy), r) in self.disks(k) {
                let inside = r > 0.0
                    && cx - r >= 0.0
                    && cy - r >= 0.0
                    && cx + r <= (self.width - 1) as f64
                    && cy + r <= (self.height - 1) as f64;
                if !inside {
                    return Err(HarnessError::ShapeOutOfBounds { slice: k });
                }
            }
        }
        Ok(())
    }
}

/// Draws the phantom: foreground 1.0, background 0.0, plus seeded Gaussian
/// noise on the image. Labels are the noiseless shape.
pub fn gen_phantom(cfg: &PhantomConfig) -> Result<CaseBundle, HarnessError> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let n = cfg.n_slices;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std).expect("noise_std validated");

    let distinct = match cfg.profile {
        DriftProfile::Linear => n,
        DriftProfile::Mirrored => n.div_ceil(2),
    };
    let noise_planes: Vec<Vec<f32>> = (0..distinct)
        .map(|_| {
            (0..w * h)
                .map(|_| {
                    if cfg.noise_std > 0.0 {
                        noise.sample(&mut rng) as f32
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let mut slices = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for k in 1..=n {
        let disks = cfg.disks(k);
        let mut label = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let hit = disks.iter().any(|&((cx, cy), r)| {
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    dx * dx + dy * dy <= r * r
                });
                label[y * w + x] = u8::from(hit);
            }
        }
        let plane = match cfg.profile {
            DriftProfile::Linear => &noise_planes[k - 1],
            DriftProfile::Mirrored => &noise_planes[k.min(n + 1 - k) - 1],
        };
        let image = label
            .iter()
            .zip(plane)
            .map(|(&l, &e)| l as f32 + e)
            .collect();
        slices.push(Slice::new(w, h, k, image).expect("phantom values are finite"));
        labels.push(Mask::new(w, h, label).expect("phantom labels are binary"));
    }
    let volume = Volume::new(cfg.id.clone(), Spacing::default(), slices)
        .expect("phantom slices are consistent");
    Ok(CaseBundle::from_masks(volume, labels, cfg.region.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn still_phantom_has_identical_slices() {
        let b = gen_phantom(&PhantomConfig::constant(1)).unwrap();
        assert_eq!(b.len(), 40);
        assert!(b
            .image
            .slices()
            .windows(2)
            .all(|w| w[0].data() == w[1].data()));
        assert!(b.labels.windows(2).all(|w| w[0] == w[1]));
        assert!(!b.labels[0].is_empty());
    }

    #[test]
    fn center_arithmetic_and_bounds() {
        let cfg = PhantomConfig {
            center: (14.0, 32.0),
            noise_std: 0.0,
            ..PhantomConfig::drifting_disk(0)
        };
        assert_eq!(cfg.disks(40)[0].0, (53.0, 32.0));
        // a radius-12 disk centred at x = 53 reaches x = 65 on a 64-wide image
        assert!(matches!(
            gen_phantom(&cfg),
            Err(HarnessError::ShapeOutOfBounds { slice: 39 })
        ));
        let preset = PhantomConfig::drifting_disk(0);
        assert_eq!(preset.disks(40)[0].0, (51.0, 31.5));
        assert!(gen_phantom(&preset).is_ok());
    }

    #[test]
    fn same_seed_same_volume() {
        let a = gen_phantom(&PhantomConfig::drifting_disk(7)).unwrap();
        let b = gen_phantom(&PhantomConfig::drifting_disk(7)).unwrap();
        let c = gen_phantom(&PhantomConfig::drifting_disk(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.image, c.image);
        assert_eq!(a.labels, c.labels);
    }

    #[test]
    fn mirrored_slices_pair_up() {
        let b = gen_phantom(&PhantomConfig::mirrored(3)).unwrap();
        let n = b.len();
        for k in 1..=n {
            assert_eq!(
                b.image.slice(k).unwrap().data(),
                b.image.slice(n + 1 - k).unwrap().data()
            );
            assert_eq!(b.label(k), b.label(n + 1 - k));
        }
        assert_ne!(b.label(1), b.label(21));
    }

    #[test]
    fn branch_appears_late() {
        let cfg = PhantomConfig {
            shape: PhantomShape::TubeWithBranch,
            radius: 8.0,
            center: (20.0, 24.0),
            drift_per_slice: (0.5, 0.0),
            ..PhantomConfig::drifting_disk(0)
        };
        assert_eq!(cfg.disks(1).len(), 1);
        assert_eq!(cfg.disks(40).len(), 2);
        let b = gen_phantom(&cfg).unwrap();
        assert!(b.labels[39].count_ones() > b.labels[0].count_ones());
    }

    #[test]
    fn invalid_configs() {
        let cfg = PhantomConfig {
            n_slices: 0,
            ..PhantomConfig::constant(0)
        };
        assert!(matches!(
            gen_phantom(&cfg),
            Err(HarnessError::InvalidPhantom(_))
        ));
        assert_eq!("mirrored".parse::<Preset>(), Ok(Preset::Mirrored));
        assert!("disk".parse::<Preset>().is_err());
    }
}
