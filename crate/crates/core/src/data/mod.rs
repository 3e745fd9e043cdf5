//! Deterministic synthetic phantoms: several shape families ("domains") with
//! fuzzy borders, multiplicative speckle and wedge-shaped shadows.

pub mod dataset;
pub mod pgm;
pub mod render;
pub mod spec;

pub use dataset::{
    generate, generate_dataset, load_dataset, load_manifest, Dataset, DatasetConfig, DomainCounts, Manifest,
    ManifestEntry, Split,
};
pub use render::{apply_shadow, apply_speckle, generate_background, generate_sample, largest_component};
pub use spec::{DatasetPreset, DomainSpec, Range, ShadowParams, ShapeFamily};

use crate::mask::Mask;
use crate::nn::Tensor;

/// A grayscale image in `[0, 1]` with shape `(1, H, W)` and its binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub image: Tensor,
    pub mask: Mask,
    pub domain: usize,
}

impl ImageSample {
    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }
}
