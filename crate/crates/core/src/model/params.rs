use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, LayerKind, LayerSpec, Scalar};

/// Which of the three network layouts a [`ModelParams`] follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Multi-label: one trunk, one head with `D + 1` classes, trained on all domains.
    Ml,
    /// Single-domain: one trunk and one binary head trained on one domain.
    Sd,
    /// Multi-domain: a shared trunk and one binary head per domain.
    Md,
}

impl Variant {
    pub fn tag(self) -> u8 {
        match self {
            Variant::Ml => 0,
            Variant::Sd => 1,
            Variant::Md => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Variant::Ml),
            1 => Some(Variant::Sd),
            2 => Some(Variant::Md),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Ml => "ML-FCN",
            Variant::Sd => "SD-FCN",
            Variant::Md => "MD-FCN",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml" | "ml-fcn" => Ok(Variant::Ml),
            "sd" | "sd-fcn" => Ok(Variant::Sd),
            "md" | "md-fcn" => Ok(Variant::Md),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected ml, sd, md)"
            ))),
        }
    }
}

/// Layer inventories for the trunk and each head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchPreset {
    /// Two 2× poolings in the trunk, two 2× deconvolutions in each head.
    #[default]
    Default,
    /// Same topology with two channels everywhere; small enough for
    /// exhaustive finite-difference checks.
    Tiny,
}

impl ArchPreset {
    pub fn trunk(self) -> Vec<LayerSpec> {
        let (a, b, c) = self.widths();
        vec![
            LayerSpec::conv(1, a, 3, 1),
            LayerSpec::relu(a),
            LayerSpec::maxpool(a, 2, 2),
            LayerSpec::conv(a, b, 3, 1),
            LayerSpec::relu(b),
            LayerSpec::maxpool(b, 2, 2),
            LayerSpec::conv(b, c, 3, 1),
            LayerSpec::relu(c),
        ]
    }

    pub fn head(self, num_classes: usize) -> Vec<LayerSpec> {
        let (a, b, c) = self.widths();
        vec![
            LayerSpec::conv(c, b, 3, 1),
            LayerSpec::relu(b),
            LayerSpec::deconv(b, b, 4, 2, 1),
            LayerSpec::relu(b),
            LayerSpec::deconv(b, a, 4, 2, 1),
            LayerSpec::relu(a),
            LayerSpec::conv(a, num_classes, 1, 0),
        ]
    }

    fn widths(self) -> (usize, usize, usize) {
        match self {
            ArchPreset::Default => (16, 32, 64),
            ArchPreset::Tiny => (2, 2, 2),
        }
    }
}

impl std::str::FromStr for ArchPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(ArchPreset::Default),
            "tiny" => Ok(ArchPreset::Tiny),
            other => Err(Error::Config(format!("unknown arch preset {other:?}"))),
        }
    }
}

/// Network parameters: a shared trunk and one head per domain.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F = f32> {
    pub variant: Variant,
    pub num_domains: usize,
    /// Square input extent images are resized to before the forward pass.
    pub working_resolution: usize,
    pub trunk: Vec<Layer<F>>,
    pub heads: Vec<Vec<Layer<F>>>,
}

/// Output classes of a head for `variant` over `num_domains` domains.
pub fn num_classes_for(variant: Variant, num_domains: usize) -> usize {
    match variant {
        Variant::Ml => num_domains + 1,
        Variant::Sd | Variant::Md => 2,
    }
}

fn check_variant(variant: Variant, num_domains: usize) -> Result<usize> {
    if num_domains == 0 {
        return Err(Error::Config("num_domains must be >= 1".into()));
    }
    if num_domains > u8::MAX as usize - 1 {
        return Err(Error::Config(format!("num_domains {num_domains} too large")));
    }
    match variant {
        Variant::Sd if num_domains != 1 => Err(Error::Config(format!(
            "SD variant trains a single domain, got num_domains = {num_domains}"
        ))),
        Variant::Md => Ok(num_domains),
        _ => Ok(1),
    }
}

/// Build a freshly initialised model. Identical arguments give bit-identical
/// parameters.
pub fn build_model(
    variant: Variant,
    num_domains: usize,
    preset: ArchPreset,
    working_resolution: usize,
    seed: u64,
) -> Result<ModelParams> {
    build_model_from_specs(
        variant,
        num_domains,
        &preset.trunk(),
        &preset.head(num_classes_for(variant, num_domains)),
        working_resolution,
        seed,
    )
}

pub fn build_model_from_specs<F: Scalar>(
    variant: Variant,
    num_domains: usize,
    trunk: &[LayerSpec],
    head: &[LayerSpec],
    working_resolution: usize,
    seed: u64,
) -> Result<ModelParams<F>> {
    let n_heads = check_variant(variant, num_domains)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trunk = trunk.iter().map(|&s| Layer::init(s, &mut rng)).collect();
    let heads = (0..n_heads)
        .map(|_| head.iter().map(|&s| Layer::init(s, &mut rng)).collect())
        .collect();
    let params = ModelParams {
        variant,
        num_domains,
        working_resolution,
        trunk,
        heads,
    };
    params.validate()?;
    Ok(params)
}

impl<F: Scalar> ModelParams<F> {
    pub fn num_classes(&self) -> usize {
        self.heads[0].last().map_or(0, |l| l.spec.out_channels)
    }

    /// Head index serving `domain`.
    pub fn head_index(&self, domain: usize) -> Result<usize> {
        match self.variant {
            Variant::Md => {
                if domain >= self.num_domains {
                    Err(Error::Index {
                        what: "domain id",
                        index: domain,
                        limit: self.num_domains,
                    })
                } else {
                    Ok(domain)
                }
            }
            Variant::Sd if domain != 0 => Err(Error::Index {
                what: "domain id",
                index: domain,
                limit: 1,
            }),
            _ => Ok(0),
        }
    }

    /// Total spatial downsampling of the trunk.
    pub fn downsampling_factor(&self) -> usize {
        self.trunk
            .iter()
            .filter(|l| l.spec.kind == LayerKind::MaxPool)
            .map(|l| l.spec.stride)
            .product()
    }

    pub fn trunk_param_count(&self) -> usize {
        self.trunk.iter().map(Layer::param_count).sum()
    }

    pub fn head_param_count(&self) -> usize {
        self.heads[0].iter().map(Layer::param_count).sum()
    }

    pub fn param_count(&self) -> usize {
        self.trunk_param_count() + self.heads.len() * self.head_param_count()
    }

    /// Squared L2 norm of the trunk plus one head, weights and biases alike.
    pub fn active_sq_norm(&self, head: usize) -> f64 {
        self.trunk.iter().chain(&self.heads[head]).map(layer_sq_norm).sum()
    }

    /// Squared L2 norm of every parameter.
    pub fn sq_norm(&self) -> f64 {
        self.trunk
            .iter()
            .chain(self.heads.iter().flatten())
            .map(layer_sq_norm)
            .sum()
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            variant: self.variant,
            num_domains: self.num_domains,
            working_resolution: self.working_resolution,
            trunk: self.trunk.iter().map(Layer::cast).collect(),
            heads: self.heads.iter().map(|h| h.iter().map(Layer::cast).collect()).collect(),
        }
    }

    /// Same layout, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            variant: self.variant,
            num_domains: self.num_domains,
            working_resolution: self.working_resolution,
            trunk: self.trunk.iter().map(|l| Layer::zeroed(l.spec)).collect(),
            heads: self
                .heads
                .iter()
                .map(|h| h.iter().map(|l| Layer::zeroed(l.spec)).collect())
                .collect(),
        }
    }

    /// Check head count, channel chaining, and that the working resolution
    /// maps back onto itself.
    pub fn validate(&self) -> Result<()> {
        let n_heads = check_variant(self.variant, self.num_domains)?;
        if self.heads.len() != n_heads {
            return Err(Error::Config(format!(
                "{:?} with {} domains needs {n_heads} heads, found {}",
                self.variant,
                self.num_domains,
                self.heads.len()
            )));
        }
        if self.trunk.is_empty() || self.heads[0].is_empty() {
            return Err(Error::Config("trunk and heads must be non-empty".into()));
        }
        let head_specs: Vec<LayerSpec> = self.heads[0].iter().map(|l| l.spec).collect();
        if self
            .heads
            .iter()
            .any(|h| h.iter().map(|l| l.spec).ne(head_specs.iter().copied()))
        {
            return Err(Error::Config("all heads must share one layout".into()));
        }
        let expected_classes = num_classes_for(self.variant, self.num_domains);
        if self.num_classes() != expected_classes {
            return Err(Error::Config(format!(
                "{:?} over {} domains needs {expected_classes} output classes, head has {}",
                self.variant,
                self.num_domains,
                self.num_classes()
            )));
        }
        let factor = self.downsampling_factor();
        let res = self.working_resolution;
        if res == 0 || res % factor != 0 {
            return Err(Error::Config(format!(
                "working resolution {res} must be a positive multiple of the downsampling factor {factor}"
            )));
        }
        let mut channels = 1;
        let (mut h, mut w) = (res, res);
        for layer in self.trunk.iter().chain(&self.heads[0]) {
            layer.spec.validate()?;
            if layer.spec.in_channels != channels {
                return Err(Error::Config(format!(
                    "layer {:?} expects {} input channels, previous layer yields {channels}",
                    layer.spec, layer.spec.in_channels
                )));
            }
            (h, w) = layer.spec.output_extent(h, w)?;
            channels = layer.spec.out_channels;
        }
        if (h, w) != (res, res) {
            return Err(Error::Config(format!(
                "network maps {res}x{res} to {h}x{w}; output must match input"
            )));
        }
        Ok(())
    }
}

fn layer_sq_norm<F: Scalar>(l: &Layer<F>) -> f64 {
    l.weights.as_ref().map_or(0.0, |w| w.sum_squares()) + l.bias.iter().map(|&b| b.as_f64() * b.as_f64()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form parameter counts of the default preset.
    fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
        cin * cout * k * k + cout
    }

    #[test]
    fn md_parameter_count_is_trunk_plus_heads() {
        let m = build_model(Variant::Md, 3, ArchPreset::Default, 64, 7).unwrap();
        let trunk = conv_params(1, 16, 3) + conv_params(16, 32, 3) + conv_params(32, 64, 3);
        let head = conv_params(64, 32, 3) + conv_params(32, 32, 4) + conv_params(32, 16, 4) + conv_params(16, 2, 1);
        assert_eq!(trunk, 23_296);
        assert_eq!(head, 43_122);
        assert_eq!(m.trunk_param_count(), trunk);
        assert_eq!(m.heads.len(), 3);
        assert_eq!(m.param_count(), trunk + 3 * head);
    }

    #[test]
    fn sd_has_two_classes_and_ml_has_d_plus_one() {
        let sd = build_model(Variant::Sd, 1, ArchPreset::Default, 64, 7).unwrap();
        assert_eq!(sd.num_classes(), 2);
        assert_eq!(sd.heads.len(), 1);
        let ml = build_model(Variant::Ml, 3, ArchPreset::Default, 64, 7).unwrap();
        assert_eq!(ml.num_classes(), 4);
        assert_eq!(ml.heads.len(), 1);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model(Variant::Md, 2, ArchPreset::Default, 32, 11).unwrap();
        let b = build_model(Variant::Md, 2, ArchPreset::Default, 32, 11).unwrap();
        let c = build_model(Variant::Md, 2, ArchPreset::Default, 32, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_inconsistent_configuration() {
        assert!(build_model(Variant::Sd, 2, ArchPreset::Default, 64, 0).is_err());
        assert!(build_model(Variant::Md, 0, ArchPreset::Default, 64, 0).is_err());
        assert!(matches!(
            build_model(Variant::Md, 2, ArchPreset::Default, 66, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tiny_preset_is_small() {
        let m = build_model(Variant::Md, 2, ArchPreset::Tiny, 8, 0).unwrap();
        assert!(m.param_count() <= 500, "{}", m.param_count());
    }

    #[test]
    fn deconv_extents_in_default_preset() {
        for res in [32usize, 64, 128, 480] {
            let mut h = res;
            for spec in ArchPreset::Default.trunk().iter().chain(&ArchPreset::Default.head(2)) {
                if spec.kind == LayerKind::Deconv {
                    let full = crate::nn::deconv::deconv_extent(h, spec.kernel_h, spec.stride, 0).unwrap();
                    assert_eq!(full, (h - 1) * spec.stride + spec.kernel_h);
                }
                h = spec.output_extent(h, h).unwrap().0;
            }
            assert_eq!(h, res);
        }
    }
}
