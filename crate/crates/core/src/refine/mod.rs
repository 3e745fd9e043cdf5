//! Detect, crop with context, re-segment, repeat until the mask settles.

pub mod crops;
pub mod geometry;

pub use crops::{sample_training_crops, CropSampler};
pub use geometry::{argmax_mask, crop_resize, expand_bbox, extract_components, project_back, BoundingBox, Component};

use serde::{Deserialize, Serialize};

use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::metrics::{dice, Segmentation, Segmenter};
use crate::model::{forward, ModelParams, Variant};
use crate::nn::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Total background margin added around a detection, per axis.
    pub context_fraction: f64,
    /// Side of the square crop fed to the refinement model; `None` uses that
    /// model's working resolution.
    pub refine_resolution: Option<usize>,
    pub stop_dice: f64,
    pub max_iterations: usize,
    /// Smallest kept component, as a fraction of the image area.
    pub min_component_fraction: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            context_fraction: 0.2,
            refine_resolution: None,
            stop_dice: 0.995,
            max_iterations: 5,
            min_component_fraction: 0.001,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.context_fraction) {
            return Err(Error::Config(format!(
                "context_fraction {} outside [0, 1]",
                self.context_fraction
            )));
        }
        if !(self.stop_dice > 0.0 && self.stop_dice <= 1.0) {
            return Err(Error::Config(format!("stop_dice {} outside (0, 1]", self.stop_dice)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.min_component_fraction) {
            return Err(Error::Config(format!(
                "min_component_fraction {} outside [0, 1)",
                self.min_component_fraction
            )));
        }
        Ok(())
    }

    pub fn min_area(&self, width: usize, height: usize) -> usize {
        ((self.min_component_fraction * (width * height) as f64).ceil() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    /// Union of the kept components, `{0, 1}`.
    pub final_mask: Mask,
    /// `(2, H, W)` background/foreground scores at the input resolution.
    pub prob_map: Tensor,
    pub objects: Vec<Component>,
    pub iterations: usize,
    /// Dice between consecutive masks; `iterations - 1` entries.
    pub dice_trace: Vec<f64>,
}

impl From<SegmentationResult> for Segmentation {
    fn from(r: SegmentationResult) -> Self {
        Segmentation {
            mask: r.final_mask,
            iterations: r.iterations,
            dice_trace: r.dice_trace,
        }
    }
}

/// Two-channel `(rest, target)` scores for `domain`. For the multi-label
/// model the target is class `domain + 1` and "rest" is the best other class,
/// so the two-way argmax agrees with the full argmax.
fn target_scores(params: &ModelParams, domain: usize, image: &Tensor) -> Result<Tensor> {
    let (route, target) = match params.variant {
        Variant::Md => (domain, 1),
        Variant::Sd => (0, 1),
        Variant::Ml => (0, domain + 1),
    };
    let probs = forward(params, route, image)?;
    let (c, h, w) = probs.chw()?;
    if target >= c {
        return Err(Error::Index {
            what: "domain id",
            index: domain,
            limit: c - 1,
        });
    }
    let mut out = Tensor::zeros(&[2, h, w]);
    for i in 0..h * w {
        let rest = (0..c)
            .filter(|&k| k != target)
            .map(|k| probs.data()[k * h * w + i])
            .fold(f32::NEG_INFINITY, f32::max);
        out.data_mut()[i] = rest;
        out.data_mut()[h * w + i] = probs.data()[target * h * w + i];
    }
    Ok(out)
}

/// Segment the `b` region of `image` at `resolution` and map the scores back
/// to the full image.
fn segment_region(
    params: &ModelParams,
    domain: usize,
    image: &Tensor,
    b: BoundingBox,
    resolution: usize,
    config: &RefineConfig,
) -> Result<SegmentationResult> {
    let (_, h, w) = image.chw()?;
    let crop = crop_resize(image, b, resolution)?;
    let scores = target_scores(params, domain, &crop)?;
    let prob_map = project_back(&scores, b, w, h)?;
    let objects = extract_components(&argmax_mask(&prob_map)?, config.min_area(w, h));
    let mut final_mask = Mask::new(w, h);
    for o in &objects {
        for (d, &s) in final_mask.data_mut().iter_mut().zip(o.mask.data()) {
            *d |= s;
        }
    }
    Ok(SegmentationResult {
        final_mask,
        prob_map,
        objects,
        iterations: 1,
        dice_trace: Vec::new(),
    })
}

/// Single pass at the model's working resolution.
pub fn segment_once(
    params: &ModelParams,
    domain: usize,
    image: &Tensor,
    config: &RefineConfig,
) -> Result<SegmentationResult> {
    config.validate()?;
    let (_, h, w) = image.chw()?;
    segment_region(
        params,
        domain,
        image,
        BoundingBox::whole(w, h),
        params.working_resolution,
        config,
    )
}

/// Iterative refinement. Later passes use `refiner` when given, otherwise
/// `params` again.
pub fn refine_iterate(
    params: &ModelParams,
    refiner: Option<&ModelParams>,
    domain: usize,
    image: &Tensor,
    config: &RefineConfig,
) -> Result<SegmentationResult> {
    let mut current = segment_once(params, domain, image, config)?;
    let fine = refiner.unwrap_or(params);
    let resolution = config.refine_resolution.unwrap_or(fine.working_resolution);
    let (_, h, w) = image.chw()?;
    let mut trace = Vec::new();
    while current.iterations < config.max_iterations {
        let Some(largest) = current.objects.first() else { break };
        let b = expand_bbox(largest.bbox, config.context_fraction, w, h);
        let next = segment_region(fine, domain, image, b, resolution, config)?;
        if next.objects.is_empty() {
            break;
        }
        let d = dice(&next.final_mask, &current.final_mask)?;
        trace.push(d);
        current = SegmentationResult {
            iterations: current.iterations + 1,
            ..next
        };
        if d >= config.stop_dice {
            break;
        }
    }
    current.dice_trace = trace;
    Ok(current)
}

/// A model (optionally with a refinement model) as a [`Segmenter`].
#[derive(Clone, Copy, Debug)]
pub struct ModelSegmenter<'a> {
    pub params: &'a ModelParams,
    pub refiner: Option<&'a ModelParams>,
    pub config: &'a RefineConfig,
    pub refine: bool,
}

impl Segmenter for ModelSegmenter<'_> {
    fn segment(&self, sample: &ImageSample) -> Result<Segmentation> {
        let r = if self.refine {
            refine_iterate(self.params, self.refiner, sample.domain, &sample.image, self.config)?
        } else {
            segment_once(self.params, sample.domain, &sample.image, self.config)?
        };
        Ok(r.into())
    }
}
