//! Forward and backward passes through trunk and head stacks.

use rayon::prelude::*;

use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::nn::{softmax, softmax_cross_entropy, Layer, LayerCache, Scalar, Tensor};

/// Activations retained by a forward pass over a layer stack.
pub(crate) struct StackTrace<F> {
    inputs: Vec<Tensor<F>>,
    caches: Vec<LayerCache>,
    pub output: Tensor<F>,
}

pub(crate) fn stack_forward<F: Scalar>(layers: &[Layer<F>], x: Tensor<F>) -> Result<StackTrace<F>> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut caches = Vec::with_capacity(layers.len());
    let mut cur = x;
    for layer in layers {
        let (y, cache) = layer.forward(&cur)?;
        inputs.push(cur);
        caches.push(cache);
        cur = y;
    }
    Ok(StackTrace {
        inputs,
        caches,
        output: cur,
    })
}

fn stack_infer<F: Scalar>(layers: &[Layer<F>], x: &Tensor<F>) -> Result<Tensor<F>> {
    let mut cur: Option<Tensor<F>> = None;
    for layer in layers {
        let (y, _) = layer.forward(cur.as_ref().unwrap_or(x))?;
        cur = Some(y);
    }
    Ok(cur.unwrap_or_else(|| x.clone()))
}

/// Backpropagates `grad` through a stack, accumulating parameter gradients
/// into `acc` (same layout as `layers`). Returns the input gradient when
/// `want_input` is set.
pub(crate) fn stack_backward<F: Scalar>(
    layers: &[Layer<F>],
    trace: &StackTrace<F>,
    grad: Tensor<F>,
    acc: &mut [Layer<F>],
    want_input: bool,
) -> Result<Option<Tensor<F>>> {
    let mut grad = grad;
    for i in (0..layers.len()).rev() {
        let need = want_input || i > 0;
        let g = layers[i].backward(&trace.inputs[i], &trace.caches[i], &grad, need)?;
        if let (Some(gw), Some(aw)) = (g.weights.as_ref(), acc[i].weights.as_mut()) {
            for (a, &v) in aw.data_mut().iter_mut().zip(gw.data()) {
                *a += v;
            }
        }
        for (a, &v) in acc[i].bias.iter_mut().zip(&g.bias) {
            *a += v;
        }
        match g.input {
            Some(gi) => grad = gi,
            None => return Ok(None),
        }
    }
    Ok(Some(grad))
}

fn check_image<F: Scalar>(params: &ModelParams<F>, image: &Tensor<F>) -> Result<()> {
    let (c, h, w) = image.chw()?;
    if c != 1 {
        return Err(Error::dim("image channels", 1, c));
    }
    let f = params.downsampling_factor();
    if h % f != 0 || w % f != 0 {
        return Err(Error::dim(
            "image (H, W)",
            format!("multiples of {f}"),
            format!("({h}, {w})"),
        ));
    }
    Ok(())
}

/// Raw class scores `(C, H, W)` for one `(1, H, W)` image.
pub fn logits<F: Scalar>(params: &ModelParams<F>, domain: usize, image: &Tensor<F>) -> Result<Tensor<F>> {
    let head = params.head_index(domain)?;
    check_image(params, image)?;
    let feats = stack_infer(&params.trunk, image)?;
    stack_infer(&params.heads[head], &feats)
}

/// Per-pixel class probabilities `(C, H, W)` for one `(1, H, W)` image.
///
/// Multi-domain and single-domain models route through the domain's head;
/// the multi-label model ignores `domain`.
pub fn forward<F: Scalar>(params: &ModelParams<F>, domain: usize, image: &Tensor<F>) -> Result<Tensor<F>> {
    softmax(&logits(params, domain, image)?)
}

/// Gradient of the loss with respect to the trunk and one head.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F = f32> {
    pub head: usize,
    pub trunk: Vec<Layer<F>>,
    pub head_layers: Vec<Layer<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros(params: &ModelParams<F>, head: usize) -> Self {
        Gradients {
            head,
            trunk: params.trunk.iter().map(|l| Layer::zeroed(l.spec)).collect(),
            head_layers: params.heads[head].iter().map(|l| Layer::zeroed(l.spec)).collect(),
        }
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<F>> {
        self.trunk.iter_mut().chain(self.head_layers.iter_mut())
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer<F>> {
        self.trunk.iter().chain(self.head_layers.iter())
    }

    pub(crate) fn add_assign(&mut self, other: &Gradients<F>) {
        for (a, b) in self.layers_mut().zip(other.layers()) {
            if let (Some(aw), Some(bw)) = (a.weights.as_mut(), b.weights.as_ref()) {
                for (x, &y) in aw.data_mut().iter_mut().zip(bw.data()) {
                    *x += y;
                }
            }
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    /// Adds `lambda * w` for every trunk and active-head parameter.
    pub(crate) fn add_weight_decay(&mut self, params: &ModelParams<F>, lambda: F) {
        let head = self.head;
        let sources = params.trunk.iter().chain(params.heads[head].iter());
        for (g, p) in self.layers_mut().zip(sources) {
            if let (Some(gw), Some(pw)) = (g.weights.as_mut(), p.weights.as_ref()) {
                for (x, &w) in gw.data_mut().iter_mut().zip(pw.data()) {
                    *x += lambda * w;
                }
            }
            for (x, &b) in g.bias.iter_mut().zip(&p.bias) {
                *x += lambda * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(|l| {
            l.weights
                .as_ref()
                .map_or(true, |w| w.data().iter().all(|v| v.is_finite()))
                && l.bias.iter().all(|v| v.is_finite())
        })
    }
}

/// Summed pixel cross-entropy of one image and its gradient.
pub(crate) fn sample_gradients<F: Scalar>(
    params: &ModelParams<F>,
    head: usize,
    image: &Tensor<F>,
    labels: &Mask,
) -> Result<(f64, Gradients<F>)> {
    check_image(params, image)?;
    let trunk = stack_forward(&params.trunk, image.clone())?;
    let head_trace = stack_forward(&params.heads[head], trunk.output.clone())?;
    let sce = softmax_cross_entropy(&head_trace.output, labels)?;
    let mut grads = Gradients::zeros(params, head);
    let g_feats = stack_backward(
        &params.heads[head],
        &head_trace,
        sce.grad_logits,
        &mut grads.head_layers,
        true,
    )?
    .expect("input gradient requested");
    stack_backward(&params.trunk, &trunk, g_feats, &mut grads.trunk, false)?;
    Ok((sce.loss, grads))
}

/// One mini-batch: images `(B, 1, H, W)` with per-image label maps.
///
/// Multi-domain and single-domain batches hold one domain; multi-label
/// batches mix domains and carry labels in `0..=D`.
#[derive(Clone, Debug)]
pub struct Batch<F = f32> {
    pub images: Tensor<F>,
    pub labels: Vec<Mask>,
    pub domain: usize,
}

impl<F: Scalar> Batch<F> {
    pub fn new(images: Vec<Tensor<F>>, labels: Vec<Mask>, domain: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::dim("batch labels", images.len(), labels.len()));
        }
        let shape = match images.first() {
            Some(t) => t.shape().to_vec(),
            None => {
                return Err(Error::Data("empty batch".into()));
            }
        };
        let mut data = Vec::with_capacity(images.len() * images[0].len());
        for img in &images {
            img.ensure_shape("batch image", &shape)?;
            data.extend_from_slice(img.data());
        }
        let mut full = vec![images.len()];
        full.extend_from_slice(&shape);
        Ok(Batch {
            images: Tensor::from_vec(&full, data)?,
            labels,
            domain,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> Tensor<F> {
        let s = self.images.shape();
        let n = s[1] * s[2] * s[3];
        Tensor::from_vec(&s[1..], self.images.data()[i * n..(i + 1) * n].to_vec()).expect("batch slice shape")
    }

    pub fn cast<G: Scalar>(&self) -> Batch<G> {
        Batch {
            images: self.images.cast(),
            labels: self.labels.clone(),
            domain: self.domain,
        }
    }

    fn validate_for(&self, params: &ModelParams<F>) -> Result<usize> {
        let head = params.head_index(self.domain)?;
        let classes = params.num_classes() as u8;
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(&bad) = l.data().iter().find(|&&v| v >= classes) {
                return Err(Error::Data(format!(
                    "batch sample {i} has label {bad}, {:?} model has {classes} classes",
                    params.variant
                )));
            }
        }
        Ok(head)
    }
}

/// The three parts of the multi-domain objective for one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// `-Σ log p(y_x | x)` over every pixel of every image.
    pub fidelity: f64,
    /// `λ/2` times the squared norm of the trunk and the batch's head.
    pub regularizer: f64,
}

pub fn compute_loss<F: Scalar>(params: &ModelParams<F>, batch: &Batch<F>, lambda: f64) -> Result<LossBreakdown> {
    let head = batch.validate_for(params)?;
    let mut fidelity = 0.0;
    for i in 0..batch.len() {
        let z = logits(params, batch.domain, &batch.image(i))?;
        fidelity += softmax_cross_entropy(&z, &batch.labels[i])?.loss;
    }
    let regularizer = 0.5 * lambda * params.active_sq_norm(head);
    Ok(LossBreakdown {
        total: fidelity + regularizer,
        fidelity,
        regularizer,
    })
}

/// Loss, per-image fidelities, and the gradient of the total loss.
///
/// Images are processed in parallel; per-image gradients are reduced in
/// batch order so the result does not depend on the thread count.
pub fn loss_and_gradients<F: Scalar>(
    params: &ModelParams<F>,
    batch: &Batch<F>,
    lambda: f64,
) -> Result<(LossBreakdown, Vec<f64>, Gradients<F>)> {
    let head = batch.validate_for(params)?;
    let per_sample: Vec<(f64, Gradients<F>)> = (0..batch.len())
        .into_par_iter()
        .map(|i| sample_gradients(params, head, &batch.image(i), &batch.labels[i]))
        .collect::<Result<_>>()?;
    let mut grads = Gradients::zeros(params, head);
    let mut fidelities = Vec::with_capacity(per_sample.len());
    for (f, g) in &per_sample {
        fidelities.push(*f);
        grads.add_assign(g);
    }
    if lambda != 0.0 {
        grads.add_weight_decay(params, F::of(lambda));
    }
    let fidelity: f64 = fidelities.iter().sum();
    let regularizer = 0.5 * lambda * params.active_sq_norm(head);
    Ok((
        LossBreakdown {
            total: fidelity + regularizer,
            fidelity,
            regularizer,
        },
        fidelities,
        grads,
    ))
}
