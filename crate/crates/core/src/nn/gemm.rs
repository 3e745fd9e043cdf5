//! Patch unfolding and a thin safe wrapper over a packed GEMM.

use super::tensor::Scalar;

/// Output indices `lo..hi` whose tap `k` lands inside an input of length `len`.
#[inline]
pub(crate) fn valid_range(k: usize, padding: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    if len + padding <= k {
        return (lo, lo);
    }
    let hi = ((len - 1 + padding - k) / stride + 1).min(out_len);
    (lo, hi.max(lo))
}

/// Geometry of a strided, zero-padded patch grid over a `(c, h, w)` image.
/// The unfolded matrix has `c·kh·kw` rows and `ho·wo` columns.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Patches {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Patches {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// True when unfolding is the identity (1×1 taps, unit stride, no padding).
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    /// Visit every in-bounds (column run, image run) pair: `f(row, out_offset,
    /// in_offset, len)` where the run is contiguous in the output and strided
    /// by `stride` in the image.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (s, p) = (self.stride, self.padding);
        for ch in 0..self.c {
            for ky in 0..self.kh {
                let (oy_lo, oy_hi) = valid_range(ky, p, s, self.h, self.ho);
                for kx in 0..self.kw {
                    let row = (ch * self.kh + ky) * self.kw + kx;
                    let (ox_lo, ox_hi) = valid_range(kx, p, s, self.w, self.wo);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let ix = ox_lo * s + kx - p;
                        f(
                            row,
                            oy * self.wo + ox_lo,
                            (ch * self.h + iy) * self.w + ix,
                            ox_hi - ox_lo,
                        );
                    }
                }
            }
        }
    }

    /// Unfold `image` into `cols` (overwritten; out-of-bounds taps are zero).
    pub fn im2col<F: Scalar>(&self, image: &[F], cols: &mut [F]) {
        debug_assert_eq!(image.len(), self.c * self.h * self.w);
        debug_assert_eq!(cols.len(), self.rows() * self.cols());
        cols.fill(F::zero());
        let (n, s) = (self.cols(), self.stride);
        self.for_each_run(|row, out, inp, len| {
            let dst = &mut cols[row * n + out..row * n + out + len];
            if s == 1 {
                dst.copy_from_slice(&image[inp..inp + len]);
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = image[inp + j * s];
                }
            }
        });
    }

    /// Adjoint of [`Patches::im2col`]: accumulate `cols` into `image`.
    pub fn col2im<F: Scalar>(&self, cols: &[F], image: &mut [F]) {
        debug_assert_eq!(image.len(), self.c * self.h * self.w);
        debug_assert_eq!(cols.len(), self.rows() * self.cols());
        let (n, s) = (self.cols(), self.stride);
        self.for_each_run(|row, out, inp, len| {
            let src = &cols[row * n + out..row * n + out + len];
            if s == 1 {
                for (d, &v) in image[inp..inp + len].iter_mut().zip(src) {
                    *d += v;
                }
            } else {
                for (j, &v) in src.iter().enumerate() {
                    image[inp + j * s] += v;
                }
            }
        });
    }
}

/// Row-major operand, optionally used transposed.
#[derive(Clone, Copy)]
pub(crate) struct Op<'a, F> {
    pub data: &'a [F],
    /// Rows and columns as stored.
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, F> Op<'a, F> {
    pub fn new(data: &'a [F], rows: usize, cols: usize) -> Self {
        Op {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Op {
            transposed: !self.transposed,
            ..self
        }
    }

    /// `(rows, cols, row_stride, col_stride)` of the logical matrix.
    fn view(&self) -> (usize, usize, isize, isize) {
        if self.transposed {
            (self.cols, self.rows, 1, self.cols as isize)
        } else {
            (self.rows, self.cols, self.cols as isize, 1)
        }
    }
}

/// `c ← a·b + beta·c` with `c` row-major `m × n`.
pub(crate) fn gemm<F: Scalar>(a: Op<'_, F>, b: Op<'_, F>, beta: F, c: &mut [F]) {
    let (m, k, rsa, csa) = a.view();
    let (k2, n, rsb, csb) = b.view();
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every operand length was checked against its logical extent and
    // strides, and `c` is an exclusive borrow disjoint from `a` and `b`.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|i| i as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64) * 0.5 - 1.0).collect(); // 3x4
        let mut c = vec![1.0; 8];
        gemm(Op::new(&a, 2, 3), Op::new(&b, 3, 4), 1.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = 1.0 + (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum::<f64>();
                assert_eq!(c[i * 4 + j], want);
            }
        }
        // (aᵀ)ᵀ with a stored 3x2
        let at: Vec<f64> = vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0];
        let mut c2 = vec![0.0; 8];
        gemm(Op::new(&at, 3, 2).t(), Op::new(&b, 3, 4), 0.0, &mut c2);
        let mut c3 = c.clone();
        c3.iter_mut().for_each(|v| *v -= 1.0);
        assert_eq!(c2, c3);
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        let g = Patches {
            c: 2,
            h: 5,
            w: 4,
            kh: 3,
            kw: 2,
            stride: 2,
            padding: 1,
            ho: 3,
            wo: 3,
        };
        let x: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..g.rows() * g.cols()).map(|i| ((i * 5) % 13) as f64 - 6.0).collect();
        let mut cols = vec![0.0; y.len()];
        g.im2col(&x, &mut cols);
        let mut back = vec![0.0; x.len()];
        g.col2im(&y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
