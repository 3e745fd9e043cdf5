use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    /// Filled ellipse drawn with a bright rim.
    EllipseRing,
    /// Ellipse with a gentle low-order radial wobble.
    ConvexBlob,
    /// Two overlapping discs, stretched.
    BilobedBlob,
}

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn check(&self, what: &str, min: f64, max: f64) -> Result<()> {
        if !(self.lo <= self.hi && self.lo >= min && self.hi <= max) {
            return Err(Error::Config(format!(
                "{what} range [{}, {}] must be ordered and within [{min}, {max}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowParams {
    pub probability: f64,
    /// Full opening angle of the wedge, radians.
    pub angular_width: Range,
    /// Multiplicative factor applied inside the wedge.
    pub attenuation: Range,
}

impl ShadowParams {
    pub const NONE: ShadowParams = ShadowParams {
        probability: 0.0,
        angular_width: Range::new(0.2, 0.4),
        attenuation: Range::new(1.0, 1.0),
    };
}

/// One synthetic domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub family: ShapeFamily,
    /// Foreground area as a fraction of the image area.
    pub size: Range,
    /// Eccentricity of the elliptical envelope, in `[0, 1)`.
    pub eccentricity: Range,
    pub interior_mean: f64,
    pub exterior_mean: f64,
    pub shadow: ShadowParams,
    /// Variance of the unit-mean speckle multiplier.
    pub speckle: f64,
    /// Gaussian sigma of the boundary blur, pixels.
    pub blur_sigma: f64,
}

pub const MIN_MEAN_CONTRAST: f64 = 0.15;

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        self.size.check("size", 1e-4, 0.3)?;
        self.eccentricity.check("eccentricity", 0.0, 0.95)?;
        self.shadow
            .angular_width
            .check("shadow width", 0.0, std::f64::consts::PI)?;
        self.shadow.attenuation.check("shadow attenuation", 0.0, 1.0)?;
        if !(0.0..=1.0).contains(&self.shadow.probability) {
            return Err(Error::Config(format!(
                "shadow probability {} outside [0, 1]",
                self.shadow.probability
            )));
        }
        for m in [self.interior_mean, self.exterior_mean] {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::Config(format!("intensity mean {m} outside [0, 1]")));
            }
        }
        if (self.interior_mean - self.exterior_mean).abs() < MIN_MEAN_CONTRAST {
            return Err(Error::Config(format!(
                "domain {:?}: interior and exterior means must differ by >= {MIN_MEAN_CONTRAST}",
                self.name
            )));
        }
        if self.speckle.is_nan() || self.speckle < 0.0 || self.blur_sigma.is_nan() || self.blur_sigma < 0.0 {
            return Err(Error::Config("speckle and blur_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Fetal-head-like: bright skull rim around a mid-gray interior.
    pub fn ring() -> Self {
        DomainSpec {
            name: "ring".into(),
            family: ShapeFamily::EllipseRing,
            size: Range::new(0.08, 0.22),
            eccentricity: Range::new(0.3, 0.75),
            interior_mean: 0.42,
            exterior_mean: 0.18,
            shadow: ShadowParams {
                probability: 0.3,
                angular_width: Range::new(0.15, 0.35),
                attenuation: Range::new(0.4, 0.7),
            },
            speckle: 0.15,
            blur_sigma: 1.0,
        }
    }

    /// Chamber-like: dark cavity in brighter tissue.
    pub fn blob() -> Self {
        DomainSpec {
            name: "blob".into(),
            family: ShapeFamily::ConvexBlob,
            size: Range::new(0.06, 0.18),
            eccentricity: Range::new(0.4, 0.8),
            interior_mean: 0.12,
            exterior_mean: 0.5,
            shadow: ShadowParams {
                probability: 0.4,
                angular_width: Range::new(0.15, 0.35),
                attenuation: Range::new(0.45, 0.75),
            },
            speckle: 0.2,
            blur_sigma: 1.2,
        }
    }

    pub fn bilobed() -> Self {
        DomainSpec {
            name: "bilobed".into(),
            family: ShapeFamily::BilobedBlob,
            size: Range::new(0.08, 0.2),
            eccentricity: Range::new(0.0, 0.6),
            interior_mean: 0.15,
            exterior_mean: 0.55,
            shadow: ShadowParams {
                probability: 0.4,
                angular_width: Range::new(0.15, 0.35),
                attenuation: Range::new(0.45, 0.75),
            },
            speckle: 0.25,
            blur_sigma: 1.2,
        }
    }
}

/// Named dataset layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetPreset {
    /// Three domains, 500 train / 100 test each, 64×64.
    Default,
    /// As `Default` but the third domain has only 20 training images.
    Scarce,
    /// Two domains, 50 train / 20 test each, 64×64.
    Toy,
}

impl std::str::FromStr for DatasetPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(DatasetPreset::Default),
            "scarce" => Ok(DatasetPreset::Scarce),
            "toy" => Ok(DatasetPreset::Toy),
            _ => Err(Error::Config(format!(
                "unknown dataset preset {s:?} (default|scarce|toy)"
            ))),
        }
    }
}
