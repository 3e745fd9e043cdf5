use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::nn::{bilinear_resize, Tensor};

/// Axis-aligned pixel box; `x0, y0` inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "empty bounding box");
        BoundingBox { x0, y0, width, height }
    }

    pub fn whole(width: usize, height: usize) -> Self {
        BoundingBox::new(0, 0, width, height)
    }

    /// Tight box around flat pixel indices of a `width`-wide grid.
    pub fn around(indices: &[usize], width: usize) -> Option<Self> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &i in indices {
            let (x, y) = (i % width, i / width);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        (!indices.is_empty()).then(|| BoundingBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    pub fn of_mask(mask: &Mask) -> Option<Self> {
        let idx: Vec<usize> = (0..mask.data().len()).filter(|&i| mask.data()[i] != 0).collect();
        BoundingBox::around(&idx, mask.width())
    }

    /// Exclusive right edge.
    pub fn x1(&self) -> usize {
        self.x0 + self.width
    }

    /// Exclusive bottom edge.
    pub fn y1(&self) -> usize {
        self.y0 + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x1() <= width && self.y1() <= height
    }

    fn ensure_fits(&self, width: usize, height: usize) -> Result<()> {
        if !self.fits(width, height) {
            return Err(Error::Data(format!("{self:?} exceeds a {width}x{height} image")));
        }
        Ok(())
    }
}

/// One 4-connected foreground region.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub mask: Mask,
    pub area: usize,
    pub bbox: BoundingBox,
}

/// Connected components with at least `min_area` pixels, largest first
/// (ties keep scan order).
pub fn extract_components(mask: &Mask, min_area: usize) -> Vec<Component> {
    let mut comps: Vec<Component> = mask
        .components()
        .into_iter()
        .filter(|c| c.len() >= min_area.max(1))
        .map(|c| {
            let mut m = Mask::new(mask.width(), mask.height());
            for &i in &c {
                m.data_mut()[i] = 1;
            }
            Component {
                area: c.len(),
                bbox: BoundingBox::around(&c, mask.width()).expect("nonempty component"),
                mask: m,
            }
        })
        .collect();
    comps.sort_by_key(|c| std::cmp::Reverse(c.area));
    comps
}

/// Move every side outward by `round(fraction / 2 · extent)`, then clamp.
pub fn expand_bbox(b: BoundingBox, fraction: f64, width: usize, height: usize) -> BoundingBox {
    let dx = (fraction / 2.0 * b.width as f64).round() as usize;
    let dy = (fraction / 2.0 * b.height as f64).round() as usize;
    let x0 = b.x0.saturating_sub(dx);
    let y0 = b.y0.saturating_sub(dy);
    let x1 = (b.x1() + dx).min(width);
    let y1 = (b.y1() + dy).min(height);
    BoundingBox::new(x0, y0, x1 - x0, y1 - y0)
}

fn crop_tensor(image: &Tensor, b: BoundingBox) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    b.ensure_fits(w, h)?;
    let mut out = Vec::with_capacity(c * b.area());
    for ch in 0..c {
        let plane = image.plane(ch);
        for y in b.y0..b.y1() {
            out.extend_from_slice(&plane[y * w + b.x0..y * w + b.x1()]);
        }
    }
    Tensor::from_vec(&[c, b.height, b.width], out)
}

/// Crop `b` out of `image` and resize it to `target × target`.
pub fn crop_resize(image: &Tensor, b: BoundingBox, target: usize) -> Result<Tensor> {
    bilinear_resize(&crop_tensor(image, b)?, target, target)
}

/// Inverse of [`crop_resize`] for a two-channel `(background, foreground)`
/// map: resized into `b` of a `width × height` canvas whose other pixels are
/// pure background.
pub fn project_back(prob: &Tensor, b: BoundingBox, width: usize, height: usize) -> Result<Tensor> {
    let (c, _, _) = prob.chw()?;
    if c != 2 {
        return Err(Error::dim("probability map channels", 2, c));
    }
    b.ensure_fits(width, height)?;
    let inner = bilinear_resize(prob, b.height, b.width)?;
    let mut out = Tensor::zeros(&[2, height, width]);
    out.plane_mut(0).fill(1.0);
    for ch in 0..2 {
        let src = inner.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..b.height {
            let row = (b.y0 + y) * width + b.x0;
            dst[row..row + b.width].copy_from_slice(&src[y * b.width..(y + 1) * b.width]);
        }
    }
    Ok(out)
}

/// Foreground wherever its score beats background; ties go to background.
pub fn argmax_mask(prob: &Tensor) -> Result<Mask> {
    let (c, h, w) = prob.chw()?;
    if c != 2 {
        return Err(Error::dim("probability map channels", 2, c));
    }
    let (bg, fg) = (prob.plane(0), prob.plane(1));
    Mask::from_vec(w, h, bg.iter().zip(fg).map(|(b, f)| (f > b) as u8).collect())
}
