//! Count-masked max pooling over the point axis of `[P, N, C]` batches.
//!
//! Only the first `counts[p]` rows of each pillar participate; padding rows
//! are never read. The backward pass routes each channel's gradient to the
//! first-encountered argmax row (ties break toward the lowest row index).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check_counts<S: Scalar>(points: &Tensor<S>, counts: &[usize]) -> Result<(usize, usize, usize)> {
    if points.rank() != 3 {
        return Err(Error::shape(format!(
            "masked_max expects [P, N, C], got {:?}",
            points.shape()
        )));
    }
    let (p, n, c) = (points.dim(0), points.dim(1), points.dim(2));
    if counts.len() != p {
        return Err(Error::shape(format!(
            "counts has {} entries for {} pillars",
            counts.len(),
            p
        )));
    }
    for (i, &cnt) in counts.iter().enumerate() {
        if cnt == 0 {
            return Err(Error::arg(format!(
                "pillar {i} has count 0; empty pillars must be filtered before encoding"
            )));
        }
        if cnt > n {
            return Err(Error::arg(format!("pillar {i} count {cnt} exceeds rows {n}")));
        }
    }
    Ok((p, n, c))
}

/// Forward max plus the argmax row per `(pillar, channel)` for the backward pass.
pub fn masked_max_with_argmax<S: Scalar>(
    points: &Tensor<S>,
    counts: &[usize],
) -> Result<(Tensor<S>, Vec<usize>)> {
    let (p, n, c) = check_counts(points, counts)?;
    let x = points.data();
    let mut out = vec![S::zero(); p * c];
    let mut argmax = vec![0usize; p * c];
    for pi in 0..p {
        let base = pi * n * c;
        for ch in 0..c {
            let mut best = x[base + ch];
            let mut best_row = 0usize;
            for row in 1..counts[pi] {
                let v = x[base + row * c + ch];
                if v > best {
                    best = v;
                    best_row = row;
                }
            }
            out[pi * c + ch] = best;
            argmax[pi * c + ch] = best_row;
        }
    }
    let out = Tensor::from_vec(&[p, c], out)?;
    out.check_finite("masked_max")?;
    Ok((out, argmax))
}

pub fn masked_max<S: Scalar>(points: &Tensor<S>, counts: &[usize]) -> Result<Tensor<S>> {
    masked_max_with_argmax(points, counts).map(|(out, _)| out)
}

/// Scatter `grad_out[p, ch]` back to the argmax rows.
pub fn masked_max_backward<S: Scalar>(
    argmax: &[usize],
    grad_out: &Tensor<S>,
    n: usize,
) -> Result<Tensor<S>> {
    if grad_out.rank() != 2 {
        return Err(Error::shape(format!(
            "masked_max grad_out must be [P, C], got {:?}",
            grad_out.shape()
        )));
    }
    let (p, c) = (grad_out.dim(0), grad_out.dim(1));
    if argmax.len() != p * c {
        return Err(Error::shape("argmax length does not match grad_out"));
    }
    let go = grad_out.data();
    let mut d_points = vec![S::zero(); p * n * c];
    for pi in 0..p {
        for ch in 0..c {
            let row = argmax[pi * c + ch];
            d_points[pi * n * c + row * c + ch] += go[pi * c + ch];
        }
    }
    Tensor::from_vec(&[p, n, c], d_points)
}
