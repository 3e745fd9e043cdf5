use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn pool_extent(input: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("pool window and stride must be >= 1".into()));
    }
    if input < window {
        return Err(Error::dim("pool input extent", format!(">= {window}"), input));
    }
    Ok((input - window) / stride + 1)
}

/// Flat input index of the winning element for every pooled output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArgmaxMap {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Windowed maximum. Ties go to the first element in row-major scan order.
pub fn maxpool_forward<F: Scalar>(input: &Tensor<F>, window: usize, stride: usize) -> Result<(Tensor<F>, ArgmaxMap)> {
    let (c, h, w) = input.chw()?;
    let ho = pool_extent(h, window, stride)?;
    let wo = pool_extent(w, window, stride)?;
    let mut out = Tensor::zeros(&[c, ho, wo]);
    let mut indices = Vec::with_capacity(c * ho * wo);
    let data = input.data();
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_idx = base + oy * stride * w + ox * stride;
                let mut best = data[best_idx];
                for dy in 0..window {
                    let row = base + (oy * stride + dy) * w + ox * stride;
                    for (dx, &v) in data[row..row + window].iter().enumerate() {
                        if v > best {
                            best = v;
                            best_idx = row + dx;
                        }
                    }
                }
                out.data_mut()[(ch * ho + oy) * wo + ox] = best;
                indices.push(best_idx);
            }
        }
    }
    let map = ArgmaxMap {
        input_shape: input.shape().to_vec(),
        output_shape: out.shape().to_vec(),
        indices,
    };
    Ok((out, map))
}

/// Routes each upstream gradient to its argmax; overlapping windows accumulate.
pub fn maxpool_backward<F: Scalar>(
    argmax: &ArgmaxMap,
    grad_out: &Tensor<F>,
    input_shape: &[usize],
) -> Result<Tensor<F>> {
    grad_out.ensure_shape("grad_out vs pooled output", &argmax.output_shape)?;
    if argmax.input_shape != input_shape {
        return Err(Error::dim(
            "input shape vs argmax map",
            format!("{:?}", argmax.input_shape),
            format!("{input_shape:?}"),
        ));
    }
    let mut gi = Tensor::zeros(input_shape);
    let gd = gi.data_mut();
    for (&idx, &g) in argmax.indices.iter().zip(grad_out.data()) {
        gd[idx] += g;
    }
    Ok(gi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn max_of_four() {
        let x = Tensor::<f32>::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, am) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(am.indices, vec![3]);
    }

    #[test]
    fn constant_input_picks_first_of_each_window() {
        let x = Tensor::<f32>::full(&[1, 4, 4], 0.5);
        let (y, am) = maxpool_forward(&x, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        assert_eq!(am.indices, vec![0, 2, 8, 10]);
    }

    #[test]
    fn matches_brute_force_windowed_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..72).map(|_| rng.gen()).collect();
        let t = Tensor::from_vec(&[2, 6, 6], x.clone()).unwrap();
        let (y, _) = maxpool_forward(&t, 2, 2).unwrap();
        for c in 0..2 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(dy, dx)| x[c * 36 + (2 * oy + dy) * 6 + 2 * ox + dx])
                        .fold(f64::MIN, f64::max);
                    assert_eq!(y.data()[c * 9 + oy * 3 + ox], m);
                }
            }
        }
    }

    #[test]
    fn window_larger_than_input_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 2]);
        assert!(matches!(maxpool_forward(&x, 3, 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = Tensor::<f32>::from_vec(&[1, 2, 2], vec![1.0, 5.0, 3.0, 4.0]).unwrap();
        let (_, am) = maxpool_forward(&x, 2, 2).unwrap();
        let g = Tensor::from_vec(&[1, 1, 1], vec![2.5]).unwrap();
        let gi = maxpool_backward(&am, &g, x.shape()).unwrap();
        assert_eq!(gi.data(), &[0.0, 2.5, 0.0, 0.0]);
        let z = maxpool_backward(&am, &Tensor::<f32>::zeros(&[1, 1, 1]), x.shape()).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overlapping_windows_accumulate() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 3], vec![0.0, 9.0, 0.0]).unwrap();
        let x = Tensor::from_vec(&[1, 3, 3], [x.data(), x.data(), x.data()].concat()).unwrap();
        let (_, am) = maxpool_forward(&x, 2, 1).unwrap();
        let gi = maxpool_backward(&am, &Tensor::full(&[1, 2, 2], 1.0), x.shape()).unwrap();
        assert_eq!(gi.data().iter().sum::<f32>(), 4.0);
        assert_eq!(gi.data()[1], 2.0);
    }

    #[test]
    fn one_hot_upstream_moves_exactly_one_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f32> = (0..64).map(|_| rng.gen()).collect();
        let x = Tensor::from_vec(&[1, 8, 8], x).unwrap();
        let (_, am) = maxpool_forward(&x, 2, 2).unwrap();
        for k in 0..16 {
            let mut g = Tensor::zeros(&[1, 4, 4]);
            g.data_mut()[k] = 1.0;
            let gi = maxpool_backward(&am, &g, x.shape()).unwrap();
            assert_eq!(gi.data().iter().filter(|&&v| v != 0.0).count(), 1);
            assert_eq!(gi.data().iter().sum::<f32>(), 1.0);
        }
    }
}
