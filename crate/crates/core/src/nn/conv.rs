//! 2-D cross-correlation and its adjoints via patch unfolding and GEMM.
//!
//! Tensors are `(C, H, W)`; weights are `(C_out, C_in, kH, kW)`. The kernel is
//! not flipped.

use super::gemm::{gemm, Op, Patches};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Output extent of a convolution along one axis.
pub fn conv_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 {
        return Err(Error::Config("stride and kernel must be >= 1".into()));
    }
    if padded < kernel {
        return Err(Error::Config(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    if (padded - kernel) % stride != 0 {
        return Err(Error::Config(format!(
            "non-integral output size: ({input} + 2*{padding} - {kernel}) / {stride}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn geometry<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    stride: usize,
    padding: usize,
) -> Result<(usize, Patches)> {
    let (c, h, w) = input.chw()?;
    let ws: [usize; 4] = weights
        .shape()
        .try_into()
        .map_err(|_| Error::dim("weights rank", 4, weights.shape().len()))?;
    let [c_out, c_in, kh, kw] = ws;
    if c_in != c {
        return Err(Error::dim("input channels vs weights axis 1", c_in, c));
    }
    let ho = conv_extent(h, kh, stride, padding)?;
    let wo = conv_extent(w, kw, stride, padding)?;
    Ok((
        c_out,
        Patches {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            ho,
            wo,
        },
    ))
}

/// Unfolded input, borrowed when unfolding would be the identity.
fn unfold<'a, F: Scalar>(g: &Patches, input: &'a Tensor<F>, buf: &'a mut Vec<F>) -> &'a [F] {
    if g.is_pointwise() {
        return input.data();
    }
    buf.resize(g.rows() * g.cols(), F::zero());
    g.im2col(input.data(), buf);
    buf
}

pub fn conv2d_forward<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    bias: &[F],
    stride: usize,
    padding: usize,
) -> Result<Tensor<F>> {
    let (c_out, g) = geometry(input, weights, stride, padding)?;
    if bias.len() != c_out {
        return Err(Error::dim("bias length vs weights axis 0", c_out, bias.len()));
    }
    let mut out = Tensor::zeros(&[c_out, g.ho, g.wo]);
    for (co, &b) in bias.iter().enumerate() {
        out.plane_mut(co).fill(b);
    }
    let mut buf = Vec::new();
    let cols = unfold(&g, input, &mut buf);
    gemm(
        Op::new(weights.data(), c_out, g.rows()),
        Op::new(cols, g.rows(), g.cols()),
        F::one(),
        out.data_mut(),
    );
    Ok(out)
}

/// Gradients of a convolution. `input` is `None` when it was not requested.
#[derive(Clone, Debug)]
pub struct ConvGrads<F> {
    pub input: Option<Tensor<F>>,
    pub weights: Tensor<F>,
    pub bias: Vec<F>,
}

/// Exact adjoint of [`conv2d_forward`]: returns `(grad_input, grad_weights, grad_bias)`.
pub fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    grad_out: &Tensor<F>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<F>, Tensor<F>, Vec<F>)> {
    let g = conv2d_backward_impl(input, weights, grad_out, stride, padding, true)?;
    Ok((g.input.expect("requested"), g.weights, g.bias))
}

pub(crate) fn conv2d_backward_impl<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    grad_out: &Tensor<F>,
    stride: usize,
    padding: usize,
    want_input: bool,
) -> Result<ConvGrads<F>> {
    let (c_out, g) = geometry(input, weights, stride, padding)?;
    grad_out.ensure_shape("grad_out (C_out, H_out, W_out)", &[c_out, g.ho, g.wo])?;
    let gb: Vec<F> = (0..c_out).map(|co| grad_out.plane(co).iter().copied().sum()).collect();
    let gout = Op::new(grad_out.data(), c_out, g.cols());

    let mut buf = Vec::new();
    let cols = unfold(&g, input, &mut buf);
    let mut gw = Tensor::zeros(weights.shape());
    gemm(gout, Op::new(cols, g.rows(), g.cols()).t(), F::zero(), gw.data_mut());

    let gi = want_input.then(|| {
        let wmat = Op::new(weights.data(), c_out, g.rows()).t();
        let mut gi = Tensor::zeros(input.shape());
        if g.is_pointwise() {
            gemm(wmat, gout, F::zero(), gi.data_mut());
        } else {
            let mut gcols = vec![F::zero(); g.rows() * g.cols()];
            gemm(wmat, gout, F::zero(), &mut gcols);
            g.col2im(&gcols, gi.data_mut());
        }
        gi
    });
    Ok(ConvGrads {
        input: gi,
        weights: gw,
        bias: gb,
    })
}
