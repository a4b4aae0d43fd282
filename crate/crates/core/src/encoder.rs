//! Per-scale pillar feature encoder and the scatter back to dense maps.
//!
//! Each decorated point is expanded to 64 features by one linear layer,
//! normalized, rectified, then max-pooled over the pillar's valid rows.
//! The pillar vectors are scattered to their stored cell positions in an
//! `[H, W, 64]` map that is zero everywhere else.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{
    linear, linear_backward, masked_max_backward, masked_max_with_argmax, relu, relu_backward,
    BatchNorm, BatchNormCache, NormMode,
};
use crate::tensor::{Scalar, Tensor};
use crate::voxelizer::CellIndex;

pub const ENCODED_CHANNELS: usize = 64;

/// Linear expansion plus normalization parameters for one pillar scale.
#[derive(Debug, Clone)]
pub struct EncoderParams<S: Scalar> {
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
    pub norm: BatchNorm<S>,
    pub input_width: usize,
}

impl<S: Scalar> EncoderParams<S> {
    pub fn new(input_width: usize, norm_mode: NormMode, rng: &mut impl Rng) -> Self {
        let std = (2.0 / input_width as f64).sqrt();
        EncoderParams {
            weights: Tensor::randn(&[input_width, ENCODED_CHANNELS], std, rng),
            bias: Tensor::zeros(&[ENCODED_CHANNELS]),
            norm: BatchNorm::new(ENCODED_CHANNELS, norm_mode),
            input_width,
        }
    }
}

/// Everything the backward pass needs from one encode call.
pub struct EncodeCache<S: Scalar> {
    decorated: Tensor<S>,
    counts: Vec<usize>,
    pre_norm: Tensor<S>,
    norm_cache: BatchNormCache<S>,
    pre_relu: Tensor<S>,
    argmax: Vec<usize>,
}

/// Pillar batch view generic over the element type (the voxelizer emits
/// f64; training casts to f32).
pub struct EncodeInput<'a, S: Scalar> {
    pub decorated: &'a Tensor<S>,
    pub counts: &'a [usize],
}

/// linear -> batch norm (masked to valid rows) -> relu -> masked max.
pub fn encode<S: Scalar>(
    input: &EncodeInput<'_, S>,
    params: &mut EncoderParams<S>,
    train: bool,
) -> Result<(Tensor<S>, EncodeCache<S>)> {
    let dec = input.decorated;
    if dec.rank() != 3 {
        return Err(Error::shape("encode expects [P, N, D] input"));
    }
    let (p, n, d) = (dec.dim(0), dec.dim(1), dec.dim(2));
    if d != params.input_width {
        return Err(Error::shape(format!(
            "scale expects {} features per point, batch has {d}",
            params.input_width
        )));
    }

    let expanded = linear(dec, &params.weights, &params.bias)?;

    // Padding rows must not pollute the batch moments.
    let mut row_mask = vec![false; p * n];
    for (pi, &cnt) in input.counts.iter().enumerate() {
        for ri in 0..cnt {
            row_mask[pi * n + ri] = true;
        }
    }
    let (normed, norm_cache) = if train {
        params.norm.forward_train(&expanded, Some(&row_mask))?
    } else {
        (
            params.norm.forward_eval(&expanded)?,
            BatchNormCache::default(),
        )
    };

    let activated = relu(&normed);
    let (pooled, argmax) = masked_max_with_argmax(&activated, input.counts)?;
    Ok((
        pooled,
        EncodeCache {
            decorated: dec.clone(),
            counts: input.counts.to_vec(),
            pre_norm: expanded,
            norm_cache,
            pre_relu: normed,
            argmax,
        },
    ))
}

/// Backward through max, relu, norm, and the linear layer; accumulates
/// parameter gradients and returns the gradient w.r.t. decorated inputs.
pub fn encode_backward<S: Scalar>(
    cache: &EncodeCache<S>,
    params: &mut EncoderParams<S>,
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let n = cache.decorated.dim(1);
    let d_act = masked_max_backward(&cache.argmax, grad_out, n)?;
    let d_norm = relu_backward(&cache.pre_relu, &d_act)?;
    let d_lin = params.norm.backward(&cache.norm_cache, &d_norm)?;
    let (d_input, d_w, d_b) = linear_backward(&cache.decorated, &params.weights, &d_lin)?;
    params.weights.accumulate_grad(d_w.data());
    params.bias.accumulate_grad(d_b.data());
    Ok(d_input)
}

/// Place each pillar vector at its cell position of an `[H, W, C]` map.
pub fn scatter<S: Scalar>(
    vectors: &Tensor<S>,
    indices: &[CellIndex],
    h: usize,
    w: usize,
) -> Result<Tensor<S>> {
    if vectors.rank() != 2 {
        return Err(Error::shape("scatter expects [P, C] vectors"));
    }
    let (p, c) = (vectors.dim(0), vectors.dim(1));
    if indices.len() != p {
        return Err(Error::shape(format!(
            "{} indices for {p} pillar vectors",
            indices.len()
        )));
    }
    let mut out = Tensor::zeros(&[h, w, c]);
    let mut seen = vec![false; h * w];
    let data = out.data_mut();
    for (pi, cell) in indices.iter().enumerate() {
        if cell.row >= h || cell.col >= w {
            return Err(Error::arg(format!(
                "cell ({}, {}) outside {h}x{w} grid",
                cell.row, cell.col
            )));
        }
        let flat = cell.row * w + cell.col;
        if seen[flat] {
            return Err(Error::arg(format!(
                "duplicate cell index ({}, {})",
                cell.row, cell.col
            )));
        }
        seen[flat] = true;
        data[flat * c..flat * c + c].copy_from_slice(&vectors.data()[pi * c..pi * c + c]);
    }
    Ok(out)
}

/// Pull the map gradient back to the pillar vector rows.
pub fn scatter_backward<S: Scalar>(
    grad_map: &Tensor<S>,
    indices: &[CellIndex],
) -> Result<Tensor<S>> {
    let (_, w, c) = (grad_map.dim(0), grad_map.dim(1), grad_map.dim(2));
    let mut out = Tensor::zeros(&[indices.len(), c]);
    let data = out.data_mut();
    for (pi, cell) in indices.iter().enumerate() {
        let flat = cell.row * w + cell.col;
        data[pi * c..pi * c + c].copy_from_slice(&grad_map.data()[flat * c..flat * c + c]);
    }
    Ok(out)
}

/// Gather the vectors stored at the listed positions (the exact inverse of
/// scatter on those positions).
pub fn gather_at<S: Scalar>(map: &Tensor<S>, indices: &[CellIndex]) -> Result<Tensor<S>> {
    scatter_backward(map, indices)
}
