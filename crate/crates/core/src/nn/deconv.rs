//! Transposed ("backwards strided") convolution.
//!
//! Weights are `(C_in, C_out, kH, kW)`. The full output has spatial extent
//! `(in - 1) * stride + k`; a nonzero `padding` trims that many pixels from
//! each border of the full output.
//!
//! The forward pass is the input-gradient of a convolution over the output
//! grid with the same kernel, stride and padding, so it is computed as a GEMM
//! followed by a patch fold.

use super::gemm::{gemm, Op, Patches};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Output extent of a transposed convolution along one axis.
pub fn deconv_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 || input == 0 {
        return Err(Error::Config("stride, kernel and input extent must be >= 1".into()));
    }
    let full = (input - 1) * stride + kernel;
    if full <= 2 * padding {
        return Err(Error::Config(format!(
            "padding {padding} trims the whole {full}-pixel deconvolution output"
        )));
    }
    Ok(full - 2 * padding)
}

/// `(C_in, patch geometry over the output grid)`.
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
    let [c_in, c_out, kh, kw] = ws;
    if c_in != c {
        return Err(Error::dim("input channels vs weights axis 0", c_in, c));
    }
    Ok((
        c_in,
        Patches {
            c: c_out,
            h: deconv_extent(h, kh, stride, padding)?,
            w: deconv_extent(w, kw, stride, padding)?,
            kh,
            kw,
            stride,
            padding,
            ho: h,
            wo: w,
        },
    ))
}

pub fn deconv2d_forward<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    bias: &[F],
    stride: usize,
    padding: usize,
) -> Result<Tensor<F>> {
    let (c_in, g) = geometry(input, weights, stride, padding)?;
    if bias.len() != g.c {
        return Err(Error::dim("bias length vs weights axis 1", g.c, bias.len()));
    }
    let mut cols = vec![F::zero(); g.rows() * g.cols()];
    gemm(
        Op::new(weights.data(), c_in, g.rows()).t(),
        Op::new(input.data(), c_in, g.cols()),
        F::zero(),
        &mut cols,
    );
    let mut out = Tensor::zeros(&[g.c, g.h, g.w]);
    for (co, &b) in bias.iter().enumerate() {
        out.plane_mut(co).fill(b);
    }
    g.col2im(&cols, out.data_mut());
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct DeconvGrads<F> {
    pub input: Option<Tensor<F>>,
    pub weights: Tensor<F>,
    pub bias: Vec<F>,
}

/// Exact adjoint of [`deconv2d_forward`]: `(grad_input, grad_weights, grad_bias)`.
pub fn deconv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    grad_out: &Tensor<F>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<F>, Tensor<F>, Vec<F>)> {
    let g = deconv2d_backward_impl(input, weights, grad_out, stride, padding, true)?;
    Ok((g.input.expect("requested"), g.weights, g.bias))
}

pub(crate) fn deconv2d_backward_impl<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    grad_out: &Tensor<F>,
    stride: usize,
    padding: usize,
    want_input: bool,
) -> Result<DeconvGrads<F>> {
    let (c_in, g) = geometry(input, weights, stride, padding)?;
    grad_out.ensure_shape("grad_out (C_out, H_out, W_out)", &[g.c, g.h, g.w])?;
    let gb: Vec<F> = (0..g.c).map(|co| grad_out.plane(co).iter().copied().sum()).collect();
    let mut gcols = vec![F::zero(); g.rows() * g.cols()];
    g.im2col(grad_out.data(), &mut gcols);
    let gcols = Op::new(&gcols[..], g.rows(), g.cols());

    let mut gw = Tensor::zeros(weights.shape());
    gemm(
        Op::new(input.data(), c_in, g.cols()),
        gcols.t(),
        F::zero(),
        gw.data_mut(),
    );
    let gi = want_input.then(|| {
        let mut gi = Tensor::zeros(input.shape());
        gemm(Op::new(weights.data(), c_in, g.rows()), gcols, F::zero(), gi.data_mut());
        gi
    });
    Ok(DeconvGrads {
        input: gi,
        weights: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv::conv2d_forward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scatter-accumulate oracle straight from the definition.
    fn naive_deconv(x: &Tensor<f64>, wt: &Tensor<f64>, b: &[f64], s: usize, p: usize) -> Tensor<f64> {
        let (c_in, h, w) = x.chw().unwrap();
        let [_, c_out, kh, kw]: [usize; 4] = wt.shape().try_into().unwrap();
        let (hf, wf) = ((h - 1) * s + kh, (w - 1) * s + kw);
        let mut full = vec![0.0; c_out * hf * wf];
        for ci in 0..c_in {
            for co in 0..c_out {
                for iy in 0..h {
                    for ix in 0..w {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                full[(co * hf + iy * s + ky) * wf + ix * s + kx] += x.data()[(ci * h + iy) * w + ix]
                                    * wt.data()[((ci * c_out + co) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
        let (ho, wo) = (hf - 2 * p, wf - 2 * p);
        let mut out = Vec::new();
        for co in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    out.push(full[(co * hf + oy + p) * wf + ox + p] + b[co]);
                }
            }
        }
        Tensor::from_vec(&[c_out, ho, wo], out).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_pixel_stamps_the_kernel() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 1], vec![3.0]).unwrap();
        let k = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = deconv2d_forward(&x, &k, &[0.0], 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[3.0, 6.0, 9.0, 12.0]);
    }

    #[test]
    fn zero_input_gives_bias_map() {
        let x = Tensor::<f32>::zeros(&[2, 3, 3]);
        let k = Tensor::full(&[2, 2, 4, 4], 0.3);
        let y = deconv2d_forward(&x, &k, &[1.5, -2.0], 2, 1).unwrap();
        assert!(y.plane(0).iter().all(|&v| v == 1.5));
        assert!(y.plane(1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn matches_scatter_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(h, k, s, p) in &[
            (3, 4, 2, 1),
            (4, 4, 2, 0),
            (3, 3, 2, 0),
            (5, 3, 1, 1),
            (2, 5, 3, 2),
            (4, 1, 1, 0),
        ] {
            let x = random(&[2, h, h + 1], &mut rng);
            let wt = random(&[2, 3, k, k], &mut rng);
            let b = [0.2, 0.0, -0.4];
            let y = deconv2d_forward(&x, &wt, &b, s, p).unwrap();
            let oracle = naive_deconv(&x, &wt, &b, s, p);
            assert_eq!(y.shape(), oracle.shape());
            for (a, o) in y.data().iter().zip(oracle.data()) {
                assert!((a - o).abs() < 1e-12, "h={h} k={k} s={s} p={p}");
            }
        }
    }

    #[test]
    fn stride_one_unit_kernel_is_transposed_pointwise_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[3, 5, 4], &mut rng);
        let wt = random(&[3, 2, 1, 1], &mut rng);
        let b = [0.1, 0.2];
        let y = deconv2d_forward(&x, &wt, &b, 1, 0).unwrap();
        // swap axes 0 and 1 of the kernel
        let mut tw = vec![0.0; 6];
        for ci in 0..3 {
            for co in 0..2 {
                tw[co * 3 + ci] = wt.data()[ci * 2 + co];
            }
        }
        let tw = Tensor::from_vec(&[2, 3, 1, 1], tw).unwrap();
        let z = conv2d_forward(&x, &tw, &b, 1, 0).unwrap();
        for (a, o) in y.data().iter().zip(z.data()) {
            assert!((a - o).abs() < 1e-12);
        }
    }

    #[test]
    fn input_gradient_is_strided_convolution_of_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(s, p) in &[(2, 1), (2, 0), (1, 0)] {
            let x = random(&[3, 4, 4], &mut rng);
            let wt = random(&[3, 2, 4, 4], &mut rng);
            let y = deconv2d_forward(&x, &wt, &[0.0, 0.0], s, p).unwrap();
            let g = random(y.shape(), &mut rng);
            let (gi, _, _) = deconv2d_backward(&x, &wt, &g, s, p).unwrap();
            // weights (C_in, C_out, k, k) read as conv weights (C_out', C_in', k, k)
            let z = conv2d_forward(&g, &wt, &[0.0, 0.0, 0.0], s, p).unwrap();
            assert_eq!(z.shape(), gi.shape());
            for (a, o) in gi.data().iter().zip(z.data()) {
                assert!((a - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[2, 3, 3], &mut rng);
        let wt = random(&[2, 2, 4, 4], &mut rng);
        let g = Tensor::zeros(&[2, 6, 6]);
        let (gi, gw, gb) = deconv2d_backward(&x, &wt, &g, 2, 1).unwrap();
        assert!(gi.data().iter().chain(gw.data()).chain(&gb).all(|&v| v == 0.0));
    }

    #[test]
    fn output_extent_formula() {
        for input in 1..10 {
            for k in 1..6 {
                for s in 1..4 {
                    assert_eq!(deconv_extent(input, k, s, 0).unwrap(), (input - 1) * s + k);
                }
            }
        }
        assert!(deconv_extent(1, 2, 2, 1).is_err());
    }
}
