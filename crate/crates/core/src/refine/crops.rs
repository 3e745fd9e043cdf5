use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{crop_resize, expand_bbox, BoundingBox};
use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::nn::Tensor;

/// How refinement-stage training crops are drawn around a ground-truth box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropSampler {
    pub margin_low: f64,
    pub margin_high: f64,
    /// Largest centre shift, as a fraction of the expanded box extent.
    pub max_jitter: f64,
    pub resolution: usize,
}

impl Default for CropSampler {
    fn default() -> Self {
        CropSampler {
            margin_low: 0.1,
            margin_high: 0.5,
            max_jitter: 0.1,
            resolution: 64,
        }
    }
}

fn shift(lo: usize, extent: usize, delta: i64, limit: usize) -> (usize, usize) {
    let start = (lo as i64 + delta).max(0) as usize;
    let end = (lo + extent).saturating_add_signed(delta as isize).min(limit);
    if end <= start {
        return (lo, extent);
    }
    (start, end - start)
}

impl CropSampler {
    fn draw_box(&self, tight: BoundingBox, width: usize, height: usize, rng: &mut impl Rng) -> BoundingBox {
        let frac = if self.margin_high > self.margin_low {
            rng.gen_range(self.margin_low..=self.margin_high)
        } else {
            self.margin_low
        };
        let b = expand_bbox(tight, frac, width, height);
        let jx = (self.max_jitter * b.width as f64).floor() as i64;
        let jy = (self.max_jitter * b.height as f64).floor() as i64;
        let dx = if jx > 0 { rng.gen_range(-jx..=jx) } else { 0 };
        let dy = if jy > 0 { rng.gen_range(-jy..=jy) } else { 0 };
        let (x0, w) = shift(b.x0, b.width, dx, width);
        let (y0, h) = shift(b.y0, b.height, dy, height);
        BoundingBox::new(x0, y0, w, h)
    }

    /// `count` crops of `(image, mask)` resized to `resolution`; the image
    /// bilinearly, the mask by nearest neighbour. A jittered box that loses
    /// the structure falls back to the unjittered one.
    pub fn sample(&self, image: &Tensor, mask: &Mask, count: usize, rng: &mut impl Rng) -> Result<Vec<(Tensor, Mask)>> {
        let tight = BoundingBox::of_mask(mask).ok_or_else(|| Error::Data("cannot crop around an empty mask".into()))?;
        let (w, h) = (mask.width(), mask.height());
        (0..count)
            .map(|_| {
                let mut b = self.draw_box(tight, w, h, rng);
                let mut m = mask.crop(b.x0, b.y0, b.width, b.height);
                if m.is_empty() {
                    b = CropSampler {
                        max_jitter: 0.0,
                        ..self.clone()
                    }
                    .draw_box(tight, w, h, rng);
                    m = mask.crop(b.x0, b.y0, b.width, b.height);
                }
                let img = crop_resize(image, b, self.resolution)?;
                Ok((img, m.resize_nearest(self.resolution, self.resolution)))
            })
            .collect()
    }

    /// Crops for every sample, tagged with the sample's domain.
    pub fn sample_dataset(
        &self,
        samples: &[ImageSample],
        per_image: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<ImageSample>> {
        let mut out = Vec::with_capacity(samples.len() * per_image);
        for s in samples {
            for (image, mask) in self.sample(&s.image, &s.mask, per_image, rng)? {
                out.push(ImageSample {
                    image,
                    mask,
                    domain: s.domain,
                });
            }
        }
        Ok(out)
    }
}

/// Convenience form of [`CropSampler::sample`] with the default jitter.
pub fn sample_training_crops(
    image: &Tensor,
    mask: &Mask,
    margin_low: f64,
    margin_high: f64,
    count: usize,
    resolution: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(Tensor, Mask)>> {
    CropSampler {
        margin_low,
        margin_high,
        resolution,
        ..CropSampler::default()
    }
    .sample(image, mask, count, rng)
}
