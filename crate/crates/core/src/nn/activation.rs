use super::tensor::{Scalar, Tensor};
use crate::error::Result;

pub fn relu<F: Scalar>(input: &Tensor<F>) -> Tensor<F> {
    input.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Passes gradient only where the input was strictly positive.
pub fn relu_backward<F: Scalar>(input: &Tensor<F>, grad_out: &Tensor<F>) -> Result<Tensor<F>> {
    grad_out.ensure_shape("grad_out vs relu input", input.shape())?;
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= F::zero() {
            *gv = F::zero();
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let x = Tensor::<f32>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn positive_input_is_identity() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 2], vec![0.1, 2.0, 3.5, 1e-9]).unwrap();
        assert_eq!(relu(&x), x);
    }
}
