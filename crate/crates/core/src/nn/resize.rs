use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::mask::aligned_source;

/// Bilinear resize of every `(H, W)` plane with corner-aligned sampling.
///
/// Resizing to the current extents returns an exact copy.
pub fn bilinear_resize<F: Scalar>(image: &Tensor<F>, target_h: usize, target_w: usize) -> Result<Tensor<F>> {
    let (c, h, w) = image.chw()?;
    if target_h == 0 || target_w == 0 {
        return Err(Error::Config("resize target extents must be >= 1".into()));
    }
    if (h, w) == (target_h, target_w) {
        return Ok(image.clone());
    }
    let taps = |dst: usize, src: usize| -> Vec<(usize, usize, F)> {
        (0..dst)
            .map(|i| {
                let s = aligned_source(i, dst, src);
                let lo = (s.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                (lo, hi, F::of(s - lo as f64))
            })
            .collect()
    };
    let ys = taps(target_h, h);
    let xs = taps(target_w, w);
    let mut out = Tensor::zeros(&[c, target_h, target_w]);
    for ch in 0..c {
        let src = image.plane(ch);
        let dst = out.plane_mut(ch);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
                dst[oy * target_w + ox] = top + (bottom - top) * fy;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_bitwise_identity() {
        let x = Tensor::<f32>::from_vec(&[1, 2, 3], vec![0.1, 0.7, -3.0, 1e-7, 5.5, 2.0]).unwrap();
        assert_eq!(bilinear_resize(&x, 2, 3).unwrap(), x);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f32>::full(&[2, 3, 5], 0.25);
        for (h, w) in [(1, 1), (7, 2), (10, 13)] {
            let y = bilinear_resize(&x, h, w).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        }
    }

    #[test]
    fn corner_aligned_midpoint() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = bilinear_resize(&x, 2, 3).unwrap();
        assert_eq!(y.data(), &[0.0, 0.5, 1.0, 0.0, 0.5, 1.0]);
    }
}
