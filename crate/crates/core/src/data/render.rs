use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::spec::{DomainSpec, ShadowParams, ShapeFamily};
use super::ImageSample;
use crate::mask::Mask;
use crate::nn::Tensor;

/// Relative rim thickness of the ring family.
const RIM: f64 = 0.2;
const RIM_BOOST: f64 = 0.35;
const MAX_WOBBLE: f64 = 0.08;

/// A sampled shape in image coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub family: ShapeFamily,
    pub cx: f64,
    pub cy: f64,
    pub angle: f64,
    /// Minor/major axis ratio, `sqrt(1 - e^2)`.
    pub squash: f64,
    /// Ellipse semi-major axis, blob base radius, or lobe radius.
    pub radius: f64,
    /// Blob: harmonic amplitudes and phases. Bilobed: `[centre distance / radius, ..]`.
    pub extra: [f64; 4],
    /// Target foreground area in pixels.
    pub area: f64,
}

impl Shape {
    pub fn draw(spec: &DomainSpec, res: usize, rng: &mut impl Rng) -> Shape {
        let total = (res * res) as f64;
        let area = spec.size.sample(rng) * total;
        let e = spec.eccentricity.sample(rng);
        let squash = (1.0 - e * e).sqrt();
        let angle = rng.gen_range(0.0..PI);
        let (radius, extra, extent) = match spec.family {
            ShapeFamily::EllipseRing => {
                let a = (area / (PI * squash)).sqrt();
                (a, [0.0; 4], a)
            }
            ShapeFamily::ConvexBlob => {
                let c2 = rng.gen_range(0.0..MAX_WOBBLE);
                let c3 = rng.gen_range(0.0..MAX_WOBBLE);
                let p2 = rng.gen_range(0.0..2.0 * PI);
                let p3 = rng.gen_range(0.0..2.0 * PI);
                let r0 = (area / (squash * PI * (1.0 + (c2 * c2 + c3 * c3) / 2.0))).sqrt();
                (r0, [c2, p2, c3, p3], r0 * (1.0 + c2 + c3))
            }
            ShapeFamily::BilobedBlob => {
                let k = rng.gen_range(0.9..1.3);
                let unit = 2.0 * PI - 2.0 * (k / 2.0f64).acos() + (k / 2.0) * (4.0 - k * k).sqrt();
                let r = (area / (squash * unit)).sqrt();
                (r, [k, 0.0, 0.0, 0.0], r * (1.0 + k / 2.0))
            }
        };
        let lo = extent + 1.0;
        let hi = res as f64 - extent - 1.0;
        let mut centre = || {
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                res as f64 / 2.0
            }
        };
        let (cx, cy) = (centre(), centre());
        Shape {
            family: spec.family,
            cx,
            cy,
            angle,
            squash,
            radius,
            extra,
            area,
        }
    }

    /// Level function: `<= 1` inside. `scale` shrinks the shape about its centre.
    fn level(&self, px: f64, py: f64) -> f64 {
        let (dx, dy) = (px - self.cx, py - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = (-dx * s + dy * c) / self.squash;
        match self.family {
            ShapeFamily::EllipseRing => (u * u + v * v).sqrt() / self.radius,
            ShapeFamily::ConvexBlob => {
                let [c2, p2, c3, p3] = self.extra;
                let phi = v.atan2(u);
                let r = self.radius * (1.0 + c2 * (2.0 * phi + p2).cos() + c3 * (3.0 * phi + p3).cos());
                (u * u + v * v).sqrt() / r
            }
            ShapeFamily::BilobedBlob => {
                let half = self.extra[0] * self.radius / 2.0;
                let left = ((u + half).powi(2) + v * v).sqrt();
                let right = ((u - half).powi(2) + v * v).sqrt();
                left.min(right) / self.radius
            }
        }
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        self.level(px, py) <= 1.0
    }

    /// Sample at pixel centres and keep the largest 4-connected component.
    pub fn rasterize(&self, res: usize) -> Mask {
        let raw = Mask::from_fn(res, res, |x, y| self.contains(x as f64 + 0.5, y as f64 + 0.5));
        largest_component(&raw)
    }
}

/// Keep only the largest 4-connected component (ties: first in scan order).
pub fn largest_component(mask: &Mask) -> Mask {
    let comps = mask.components();
    let mut out = Mask::new(mask.width(), mask.height());
    if let Some(best) = comps.iter().reduce(|a, b| if b.len() > a.len() { b } else { a }) {
        for &i in best {
            out.data_mut()[i] = 1;
        }
    }
    out
}

/// Noise-free intensities before blur.
pub fn render_clean(spec: &DomainSpec, shape: &Shape, mask: &Mask) -> Vec<f32> {
    let res = mask.width();
    let rim = (spec.interior_mean + RIM_BOOST).min(1.0);
    let mut out = Vec::with_capacity(res * res);
    for y in 0..res {
        for x in 0..res {
            let v = if !mask.is_fg(x, y) {
                spec.exterior_mean
            } else if spec.family == ShapeFamily::EllipseRing && shape.level(x as f64 + 0.5, y as f64 + 0.5) > 1.0 - RIM
            {
                rim
            } else {
                spec.interior_mean
            };
            out.push(v as f32);
        }
    }
    out
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(data: &[f32], width: usize, height: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0f32; data.len()];
    for y in 0..height {
        for x in 0..width {
            let acc: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, &wk)| wk * data[y * width + clamp(x as isize + k as isize - radius, width)] as f64)
                .sum();
            tmp[y * width + x] = acc as f32;
        }
    }
    let mut out = vec![0f32; data.len()];
    for y in 0..height {
        for x in 0..width {
            let acc: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, &wk)| wk * tmp[clamp(y as isize + k as isize - radius, height) * width + x] as f64)
                .sum();
            out[y * width + x] = acc as f32;
        }
    }
    out
}

/// `pixel ← clamp(pixel · n, 0, 1)` with `n ~ Gamma(1/strength, strength)`,
/// so `E[n] = 1` and `Var[n] = strength`.
pub fn apply_speckle(image: &Tensor, rng: &mut impl Rng, strength: f64) -> Tensor {
    if strength <= 0.0 {
        return image.clone();
    }
    let gamma = speckle_distribution(strength);
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v as f64 * gamma.sample(rng)).clamp(0.0, 1.0) as f32;
    }
    out
}

pub fn speckle_distribution(strength: f64) -> Gamma<f64> {
    Gamma::new(1.0 / strength, strength).expect("positive speckle strength")
}

/// An attenuated sector hanging from the top edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wedge {
    pub apex_x: f64,
    /// Angle of the wedge axis from straight down, radians.
    pub direction: f64,
    pub half_width: f64,
    pub factor: f32,
}

impl Wedge {
    pub fn draw(params: &ShadowParams, width: usize, rng: &mut impl Rng) -> Wedge {
        Wedge {
            apex_x: rng.gen_range(0.0..width as f64),
            direction: rng.gen_range(-0.35..0.35),
            half_width: params.angular_width.sample(rng) / 2.0,
            factor: params.attenuation.sample(rng) as f32,
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.apex_x;
        let dy = y as f64 + 0.5;
        let off = dx.atan2(dy) + self.direction;
        off.abs() <= self.half_width
    }

    pub fn apply(&self, image: &Tensor) -> Tensor {
        let (_, h, w) = image.chw().expect("single-channel image");
        let mut out = image.clone();
        for y in 0..h {
            for x in 0..w {
                if self.contains(x, y) {
                    out.data_mut()[y * w + x] *= self.factor;
                }
            }
        }
        out
    }
}

/// Draw a wedge and attenuate it. Pixels outside the wedge are untouched.
pub fn apply_shadow(image: &Tensor, rng: &mut impl Rng, params: &ShadowParams) -> Tensor {
    let (_, _, w) = image.chw().expect("single-channel image");
    Wedge::draw(params, w, rng).apply(image)
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Render one phantom. Intensities are quantized to 8 bits so an image
/// survives a PGM round trip unchanged.
/// Blur, speckle, maybe shadow, then quantise to 8 bits.
fn degrade(spec: &DomainSpec, clean: Vec<f32>, resolution: usize, rng: &mut impl Rng) -> Tensor {
    let blurred = gaussian_blur(&clean, resolution, resolution, spec.blur_sigma);
    let image = Tensor::from_vec(&[1, resolution, resolution], blurred).expect("square image");
    let mut image = apply_speckle(&image, rng, spec.speckle);
    if rng.gen_bool(spec.shadow.probability) {
        image = apply_shadow(&image, rng, &spec.shadow);
    }
    image.map(quantize)
}

pub fn generate_sample(spec: &DomainSpec, resolution: usize, domain: usize, rng: &mut impl Rng) -> ImageSample {
    let shape = Shape::draw(spec, resolution, rng);
    let mask = shape.rasterize(resolution);
    let clean = render_clean(spec, &shape, &mask);
    ImageSample {
        image: degrade(spec, clean, resolution, rng),
        mask,
        domain,
    }
}

/// A phantom of `spec`'s domain with no structure: exterior texture, speckle
/// and shadows only, and an empty mask.
pub fn generate_background(spec: &DomainSpec, resolution: usize, domain: usize, rng: &mut impl Rng) -> ImageSample {
    let clean = vec![spec.exterior_mean as f32; resolution * resolution];
    ImageSample {
        image: degrade(spec, clean, resolution, rng),
        mask: Mask::new(resolution, resolution),
        domain,
    }
}
