use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{relu, relu_backward};
use super::conv::{conv2d_backward_impl, conv2d_forward};
use super::deconv::{deconv2d_backward_impl, deconv2d_forward};
use super::pool::{maxpool_backward, maxpool_forward, ArgmaxMap};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Deconv,
    MaxPool,
    Relu,
}

impl LayerKind {
    pub fn tag(self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::Deconv => 1,
            LayerKind::MaxPool => 2,
            LayerKind::Relu => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => LayerKind::Conv,
            1 => LayerKind::Deconv,
            2 => LayerKind::MaxPool,
            3 => LayerKind::Relu,
            _ => return None,
        })
    }
}

/// Static description of one layer.
///
/// For `Deconv`, `padding` trims that many pixels from every border of the
/// full transposed-convolution output. For `MaxPool`, the kernel extents are
/// the pooling window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl LayerSpec {
    /// Square stride-1 convolution.
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding,
        }
    }

    pub fn deconv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Deconv,
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        }
    }

    pub fn maxpool(channels: usize, window: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool,
            in_channels: channels,
            out_channels: channels,
            kernel_h: window,
            kernel_w: window,
            stride,
            padding: 0,
        }
    }

    pub fn relu(channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Relu,
            in_channels: channels,
            out_channels: channels,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            padding: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::Config(format!(
                "layer {self:?}: stride and kernel extents must be >= 1"
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("layer {self:?}: channel counts must be >= 1")));
        }
        if !self.has_weights() && self.in_channels != self.out_channels {
            return Err(Error::Config(format!(
                "layer {self:?}: weightless layers keep the channel count"
            )));
        }
        Ok(())
    }

    pub fn has_weights(&self) -> bool {
        matches!(self.kind, LayerKind::Conv | LayerKind::Deconv)
    }

    /// Weight tensor shape: `(C_out, C_in, kH, kW)` for convolution,
    /// `(C_in, C_out, kH, kW)` for deconvolution.
    pub fn weight_shape(&self) -> Option<[usize; 4]> {
        match self.kind {
            LayerKind::Conv => Some([self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]),
            LayerKind::Deconv => Some([self.in_channels, self.out_channels, self.kernel_h, self.kernel_w]),
            _ => None,
        }
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.weight_shape()
            .map(|s| s.iter().product::<usize>() + self.out_channels)
            .unwrap_or(0)
    }

    /// Number of inputs feeding one output unit, used for initialisation.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.in_channels * self.kernel_h * self.kernel_w,
            // each output pixel sees roughly (k / s)^2 input taps per channel
            LayerKind::Deconv => {
                let taps = |k: usize| k.div_ceil(self.stride).max(1);
                self.in_channels * taps(self.kernel_h) * taps(self.kernel_w)
            }
            _ => 0,
        }
    }

    /// Spatial output extent for an `(h, w)` input.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.kind {
            LayerKind::Conv => Ok((
                super::conv::conv_extent(h, self.kernel_h, self.stride, self.padding)?,
                super::conv::conv_extent(w, self.kernel_w, self.stride, self.padding)?,
            )),
            LayerKind::Deconv => Ok((
                super::deconv::deconv_extent(h, self.kernel_h, self.stride, self.padding)?,
                super::deconv::deconv_extent(w, self.kernel_w, self.stride, self.padding)?,
            )),
            LayerKind::MaxPool => Ok((
                super::pool::pool_extent(h, self.kernel_h, self.stride)?,
                super::pool::pool_extent(w, self.kernel_w, self.stride)?,
            )),
            LayerKind::Relu => Ok((h, w)),
        }
    }
}

/// A layer together with its parameters. Weightless layers carry
/// `weights: None` and an empty bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<F = f32> {
    pub spec: LayerSpec,
    pub weights: Option<Tensor<F>>,
    pub bias: Vec<F>,
}

/// State a forward pass leaves behind for the matching backward pass.
#[derive(Clone, Debug)]
pub enum LayerCache {
    None,
    Pool(ArgmaxMap),
}

/// Gradients produced by [`Layer::backward`].
#[derive(Clone, Debug)]
pub struct LayerGrad<F> {
    pub input: Option<Tensor<F>>,
    pub weights: Option<Tensor<F>>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Layer<F> {
    pub fn zeroed(spec: LayerSpec) -> Self {
        Layer {
            spec,
            weights: spec.weight_shape().map(|s| Tensor::zeros(&s)),
            bias: vec![F::zero(); if spec.has_weights() { spec.out_channels } else { 0 }],
        }
    }

    /// Fan-in scaled uniform initialisation, `U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`,
    /// zero biases.
    pub fn init(spec: LayerSpec, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeroed(spec);
        if let Some(w) = layer.weights.as_mut() {
            let bound = (6.0 / spec.fan_in() as f64).sqrt();
            for v in w.data_mut() {
                *v = F::of(rng.gen_range(-bound..bound));
            }
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weights.as_ref().map_or(0, |w| w.len()) + self.bias.len()
    }

    pub fn forward(&self, input: &Tensor<F>) -> Result<(Tensor<F>, LayerCache)> {
        let s = &self.spec;
        let (c, _, _) = input.chw()?;
        if c != s.in_channels {
            return Err(Error::dim("layer input channels", s.in_channels, c));
        }
        match s.kind {
            LayerKind::Conv => Ok((
                conv2d_forward(input, self.weights(), &self.bias, s.stride, s.padding)?,
                LayerCache::None,
            )),
            LayerKind::Deconv => Ok((
                deconv2d_forward(input, self.weights(), &self.bias, s.stride, s.padding)?,
                LayerCache::None,
            )),
            LayerKind::MaxPool => {
                let (y, am) = maxpool_forward(input, s.kernel_h, s.stride)?;
                Ok((y, LayerCache::Pool(am)))
            }
            LayerKind::Relu => Ok((relu(input), LayerCache::None)),
        }
    }

    pub fn backward(
        &self,
        input: &Tensor<F>,
        cache: &LayerCache,
        grad_out: &Tensor<F>,
        want_input: bool,
    ) -> Result<LayerGrad<F>> {
        let s = &self.spec;
        match (s.kind, cache) {
            (LayerKind::Conv, _) => {
                let g = conv2d_backward_impl(input, self.weights(), grad_out, s.stride, s.padding, want_input)?;
                Ok(LayerGrad {
                    input: g.input,
                    weights: Some(g.weights),
                    bias: g.bias,
                })
            }
            (LayerKind::Deconv, _) => {
                let g = deconv2d_backward_impl(input, self.weights(), grad_out, s.stride, s.padding, want_input)?;
                Ok(LayerGrad {
                    input: g.input,
                    weights: Some(g.weights),
                    bias: g.bias,
                })
            }
            (LayerKind::MaxPool, LayerCache::Pool(am)) => Ok(LayerGrad {
                input: Some(maxpool_backward(am, grad_out, input.shape())?),
                weights: None,
                bias: Vec::new(),
            }),
            (LayerKind::MaxPool, LayerCache::None) => {
                Err(Error::Config("maxpool backward called without its argmax map".into()))
            }
            (LayerKind::Relu, _) => Ok(LayerGrad {
                input: Some(relu_backward(input, grad_out)?),
                weights: None,
                bias: Vec::new(),
            }),
        }
    }

    fn weights(&self) -> &Tensor<F> {
        self.weights
            .as_ref()
            .expect("weighted layer constructed without weights")
    }

    pub fn cast<G: Scalar>(&self) -> Layer<G> {
        Layer {
            spec: self.spec,
            weights: self.weights.as_ref().map(|w| w.cast()),
            bias: self.bias.iter().map(|&b| G::of(b.as_f64())).collect(),
        }
    }
}
