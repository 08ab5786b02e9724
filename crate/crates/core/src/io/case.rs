use std::path::Path;

use thiserror::Error;

use super::nifti::{read_nifti_axis, NiftiError};
use crate::types::{Mask, Volume};

/// Region names used by the HVSMR cardiac dataset. Any other name is
/// accepted as a custom region.
pub const CARDIAC_REGIONS: [&str; 8] = ["LV", "RV", "LA", "RA", "AO", "PA", "SVC", "IVC"];

#[derive(Debug, Error)]
pub enum CaseError {
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error("image is {image:?} (w, h, slices) but label is {label:?}")]
    ShapeMismatch {
        image: (usize, usize, usize),
        label: (usize, usize, usize),
    },
}

/// One image volume with its binary ground truth for a single region.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseBundle {
    pub image: Volume,
    pub labels: Vec<Mask>,
    pub region: String,
    /// Slice index in the source file for each slice of `image`.
    pub original_indices: Vec<usize>,
}

fn shape(v: &Volume) -> (usize, usize, usize) {
    let (w, h) = v.dims();
    (w, h, v.len())
}

impl CaseBundle {
    /// Binarizes `label` (any value > 0 is foreground).
    pub fn new(
        image: Volume,
        label: &Volume,
        region: impl Into<String>,
    ) -> Result<Self, CaseError> {
        if shape(&image) != shape(label) {
            return Err(CaseError::ShapeMismatch {
                image: shape(&image),
                label: shape(label),
            });
        }
        let labels = label
            .slices()
            .iter()
            .map(|s| Mask::binarize(s.width(), s.height(), s.data()).expect("slice dims are valid"))
            .collect();
        Ok(Self::from_masks(image, labels, region))
    }

    pub fn from_masks(image: Volume, labels: Vec<Mask>, region: impl Into<String>) -> Self {
        assert_eq!(image.len(), labels.len(), "one mask per slice");
        assert!(
            labels.iter().all(|m| m.dims() == image.dims()),
            "mask dims match slices"
        );
        let original_indices = (1..=image.len()).collect();
        Self {
            image,
            labels,
            region: region.into(),
            original_indices,
        }
    }

    pub fn id(&self) -> &str {
        self.image.id()
    }

    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }

    /// 1-based.
    pub fn label(&self, index: usize) -> Option<&Mask> {
        index.checked_sub(1).and_then(|i| self.labels.get(i))
    }

    pub fn label_volume(&self) -> Volume {
        Volume::from_masks(self.id(), self.image.spacing(), &self.labels)
            .expect("labels share dimensions")
    }
}

pub fn load_case(
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
    region: &str,
    axis: usize,
) -> Result<CaseBundle, CaseError> {
    let image = read_nifti_axis(image_path, axis)?;
    let label = read_nifti_axis(label_path, axis)?;
    CaseBundle::new(image, &label, region)
}
