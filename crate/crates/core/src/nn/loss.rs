use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::mask::Mask;

/// Result of a per-pixel softmax followed by cross-entropy.
#[derive(Clone, Debug)]
pub struct SoftmaxCrossEntropy<F> {
    /// `-Σ_x log p(y_x | x)`, summed over all pixels.
    pub loss: f64,
    pub probs: Tensor<F>,
    /// `p - onehot(y)` per pixel.
    pub grad_logits: Tensor<F>,
}

/// Channel-wise softmax of `(C, H, W)` logits.
pub fn softmax<F: Scalar>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    let (c, h, w) = logits.chw()?;
    let hw = h * w;
    let src = logits.data();
    let mut probs = Tensor::zeros(logits.shape());
    let dst = probs.data_mut();
    for px in 0..hw {
        let mut m = src[px];
        for ch in 1..c {
            m = m.max(src[ch * hw + px]);
        }
        let mut denom = F::zero();
        for ch in 0..c {
            let e = (src[ch * hw + px] - m).exp();
            dst[ch * hw + px] = e;
            denom += e;
        }
        for ch in 0..c {
            dst[ch * hw + px] = dst[ch * hw + px] / denom;
        }
    }
    Ok(probs)
}

pub fn softmax_cross_entropy<F: Scalar>(logits: &Tensor<F>, labels: &Mask) -> Result<SoftmaxCrossEntropy<F>> {
    let (c, h, w) = logits.chw()?;
    if c < 2 {
        return Err(Error::Config(format!("softmax needs >= 2 classes, got {c}")));
    }
    if labels.height() != h || labels.width() != w {
        return Err(Error::dim(
            "labels (H, W) vs logits",
            format!("({h}, {w})"),
            format!("({}, {})", labels.height(), labels.width()),
        ));
    }
    let hw = h * w;
    let src = logits.data();
    let mut probs = Tensor::zeros(logits.shape());
    let mut loss = 0.0f64;
    {
        let dst = probs.data_mut();
        for (px, &y) in labels.data().iter().enumerate() {
            let y = y as usize;
            if y >= c {
                return Err(Error::Data(format!(
                    "label {y} at pixel (x={}, y={}) outside [0, {}]",
                    px % w,
                    px / w,
                    c - 1
                )));
            }
            let mut m = src[px];
            for ch in 1..c {
                m = m.max(src[ch * hw + px]);
            }
            let mut denom = F::zero();
            for ch in 0..c {
                let e = (src[ch * hw + px] - m).exp();
                dst[ch * hw + px] = e;
                denom += e;
            }
            loss -= (src[y * hw + px] - m).as_f64() - denom.as_f64().ln();
            for ch in 0..c {
                dst[ch * hw + px] = dst[ch * hw + px] / denom;
            }
        }
    }
    let mut grad = probs.clone();
    {
        let gd = grad.data_mut();
        for (px, &y) in labels.data().iter().enumerate() {
            gd[y as usize * hw + px] -= F::one();
        }
    }
    Ok(SoftmaxCrossEntropy {
        loss,
        probs,
        grad_logits: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_logits_cost_ln2() {
        let z = Tensor::<f32>::zeros(&[2, 1, 1]);
        let out = softmax_cross_entropy(&z, &Mask::new(1, 1)).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-7);
        assert_eq!(out.probs.data(), &[0.5, 0.5]);
        assert_eq!(out.grad_logits.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn confident_correct_logits_cost_nothing() {
        for gap in [10.0f64, 50.0, 500.0] {
            let z = Tensor::from_vec(&[2, 1, 1], vec![0.0, gap]).unwrap();
            let out = softmax_cross_entropy(&z, &Mask::filled(1, 1)).unwrap();
            assert!(out.loss < 1e-4 && out.loss >= 0.0, "gap {gap}: {}", out.loss);
        }
    }

    #[test]
    fn matches_direct_formula_in_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z: Vec<f32> = (0..32).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let labels = Mask::from_vec(4, 4, (0..16).map(|_| rng.gen_range(0..2)).collect()).unwrap();
        let out = softmax_cross_entropy(&Tensor::from_vec(&[2, 4, 4], z.clone()).unwrap(), &labels).unwrap();
        let mut direct = 0.0f64;
        for px in 0..16 {
            let (a, b) = (z[px] as f64, z[16 + px] as f64);
            let zy = if labels.data()[px] == 0 { a } else { b };
            direct -= zy - (a.exp() + b.exp()).ln();
        }
        assert!((out.loss - direct).abs() <= 1e-6 * direct.abs().max(1.0));
        for px in 0..16 {
            let s = out.probs.data()[px] + out.probs.data()[16 + px];
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn label_out_of_range_names_the_pixel() {
        let z = Tensor::<f32>::zeros(&[2, 2, 2]);
        let labels = Mask::from_vec(2, 2, vec![0, 0, 0, 2]).unwrap();
        let err = softmax_cross_entropy(&z, &labels).unwrap_err().to_string();
        assert!(err.contains("x=1, y=1"), "{err}");
    }
}
