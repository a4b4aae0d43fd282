//! Affine map along the last axis: `[.., D] x [D, C] + [C] -> [.., C]`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check_linear_args<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<(usize, usize, usize)> {
    if input.rank() == 0 || weights.rank() != 2 {
        return Err(Error::shape(format!(
            "linear expects [.., D] input and [D, C] weights, got {:?} / {:?}",
            input.shape(),
            weights.shape()
        )));
    }
    let d = *input.shape().last().unwrap();
    let (wd, c) = (weights.dim(0), weights.dim(1));
    if d != wd {
        return Err(Error::shape(format!(
            "trailing extent {d} does not match weight rows {wd}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [c] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {c} columns",
                b.shape()
            )));
        }
    }
    let rows = input.len() / d;
    Ok((rows, d, c))
}

pub fn linear<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (rows, d, c) = check_linear_args(input, weights, Some(bias))?;
    let x = input.data();
    let w = weights.data();
    let b = bias.data();
    let mut out = vec![S::zero(); rows * c];
    for r in 0..rows {
        let x_base = r * d;
        let o_base = r * c;
        for j in 0..c {
            let mut acc = b[j];
            for i in 0..d {
                acc += x[x_base + i] * w[i * c + j];
            }
            out[o_base + j] = acc;
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = c;
    let out = Tensor::from_vec(&shape, out)?;
    out.check_finite("linear")?;
    Ok(out)
}

/// Gradients for input, weights, and bias.
pub fn linear_backward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let (rows, d, c) = check_linear_args(input, weights, None)?;
    if grad_out.len() != rows * c {
        return Err(Error::shape(format!(
            "grad_out has {} elements, expected {}",
            grad_out.len(),
            rows * c
        )));
    }
    let x = input.data();
    let w = weights.data();
    let go = grad_out.data();
    let mut d_x = vec![S::zero(); rows * d];
    let mut d_w = vec![S::zero(); d * c];
    let mut d_b = vec![S::zero(); c];
    for r in 0..rows {
        let x_base = r * d;
        let g_base = r * c;
        for j in 0..c {
            let g = go[g_base + j];
            d_b[j] += g;
            for i in 0..d {
                d_x[x_base + i] += w[i * c + j] * g;
                d_w[i * c + j] += x[x_base + i] * g;
            }
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), d_x)?,
        Tensor::from_vec(weights.shape(), d_w)?,
        Tensor::from_vec(&[c], d_b)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_zero_bias_is_identity() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut w = Tensor::<f64>::zeros(&[3, 3]);
        for i in 0..3 {
            w.set(&[i, i], 1.0);
        }
        let b = Tensor::zeros(&[3]);
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn forced_arithmetic_case() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![3.0, 3.0]).unwrap();
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[4.0, 5.0]);
    }

    #[test]
    fn matches_naive_loop_oracle() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(&[4, 5, 6], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[6, 3], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[3], 1.0, &mut rng);
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[4, 5, 3]);
        for r0 in 0..4 {
            for r1 in 0..5 {
                for j in 0..3 {
                    let mut acc = b.at(&[j]);
                    for i in 0..6 {
                        acc += x.at(&[r0, r1, i]) * w.at(&[i, j]);
                    }
                    assert!((y.at(&[r0, r1, j]) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let w = Tensor::<f64>::zeros(&[4, 2]);
        let b = Tensor::<f64>::zeros(&[2]);
        assert!(linear(&x, &w, &b).is_err());
    }
}
