//! Pointwise activations and the channel softmax.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let data = input.data().iter().map(|&v| v.max(S::zero())).collect();
    Tensor::from_vec(input.shape(), data).unwrap()
}

/// Gradient w.r.t. the input; zero where the input was non-positive.
pub fn relu_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu grad shape mismatch"));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

pub fn sigmoid<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let data = input
        .data()
        .iter()
        .map(|&v| S::one() / (S::one() + (-v).exp()))
        .collect();
    let out = Tensor::from_vec(input.shape(), data)?;
    out.check_finite("sigmoid")?;
    Ok(out)
}

/// Takes the forward output, not the input: d/dx sigmoid = y(1 - y).
pub fn sigmoid_backward<S: Scalar>(output: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape("sigmoid grad shape mismatch"));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| y * (S::one() - y) * g)
        .collect();
    Tensor::from_vec(output.shape(), data)
}

/// Softmax over the last axis, max-shifted for stability.
pub fn softmax_channels<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let c = *input
        .shape()
        .last()
        .ok_or_else(|| Error::shape("softmax needs rank >= 1"))?;
    let rows = input.len() / c;
    let x = input.data();
    let mut out = vec![S::zero(); x.len()];
    for r in 0..rows {
        let base = r * c;
        let mut m = x[base];
        for j in 1..c {
            m = m.max(x[base + j]);
        }
        let mut denom = S::zero();
        for j in 0..c {
            let e = (x[base + j] - m).exp();
            out[base + j] = e;
            denom += e;
        }
        for j in 0..c {
            out[base + j] /= denom;
        }
    }
    let out = Tensor::from_vec(input.shape(), out)?;
    out.check_finite("softmax")?;
    Ok(out)
}

/// Takes the forward output: dx = y * (g - sum(g * y)) per row.
pub fn softmax_channels_backward<S: Scalar>(
    output: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape("softmax grad shape mismatch"));
    }
    let c = *output.shape().last().unwrap();
    let rows = output.len() / c;
    let y = output.data();
    let g = grad_out.data();
    let mut out = vec![S::zero(); y.len()];
    for r in 0..rows {
        let base = r * c;
        let mut dot = S::zero();
        for j in 0..c {
            dot += g[base + j] * y[base + j];
        }
        for j in 0..c {
            out[base + j] = y[base + j] * (g[base + j] - dot);
        }
    }
    Tensor::from_vec(output.shape(), out)
}

/// Numerically stable log-sum-exp over a 2-element slice; used by the
/// direction loss.
pub fn log_sum_exp2<S: Scalar>(a: S, b: S) -> S {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
