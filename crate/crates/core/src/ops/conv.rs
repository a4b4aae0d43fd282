//! 2D convolution over `[h, w, c]` maps with `[s, s, c, c']` kernels,
//! plus the transposed variant used for decoder upsampling.
//!
//! Accumulation order is fixed (ky, kx, ci innermost-last) so outputs are
//! bit-identical across runs and thread counts; the forward pass may
//! parallelize over output rows because each row owns a disjoint slice.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial extent `ceil(in / stride)`; symmetric zero padding of
    /// `(s - 1) / 2` on each side (kernel extent must be odd).
    Same,
    /// No padding; spatial extent shrinks by `s - 1` before striding.
    Valid,
}

fn check_conv_args<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    stride: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    if input.rank() != 3 {
        return Err(Error::shape(format!(
            "conv2d input must be [h, w, c], got {:?}",
            input.shape()
        )));
    }
    if weights.rank() != 4 || weights.dim(0) != weights.dim(1) {
        return Err(Error::shape(format!(
            "conv2d weights must be [s, s, c, c'], got {:?}",
            weights.shape()
        )));
    }
    let (h, w, c) = (input.dim(0), input.dim(1), input.dim(2));
    let (s, cin, cout) = (weights.dim(0), weights.dim(2), weights.dim(3));
    if s % 2 == 0 {
        return Err(Error::arg(format!("kernel extent must be odd, got {s}")));
    }
    if cin != c {
        return Err(Error::shape(format!(
            "channel mismatch: input has {c}, kernel expects {cin}"
        )));
    }
    if stride == 0 {
        return Err(Error::arg("stride must be positive"));
    }
    let _ = (h, w, cout);
    Ok((h, w, c, s, cout))
}

/// Output spatial extents for the given input extents, kernel, stride, padding.
pub fn conv2d_out_dims(
    h: usize,
    w: usize,
    s: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => Ok((h.div_ceil(stride), w.div_ceil(stride))),
        Padding::Valid => {
            if h < s || w < s {
                return Err(Error::shape(format!(
                    "valid conv needs input >= kernel, got {h}x{w} vs {s}"
                )));
            }
            Ok(((h - s) / stride + 1, (w - s) / stride + 1))
        }
    }
}

/// `out[oy, ox, co] = sum_{ky, kx, ci} w[ky, kx, ci, co] * in[oy*stride + ky - pad, ...]`
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<S>> {
    let (h, w, c, s, cout) = check_conv_args(input, weights, stride)?;
    let (oh, ow) = conv2d_out_dims(h, w, s, stride, padding)?;
    let pad = match padding {
        Padding::Same => (s - 1) / 2,
        Padding::Valid => 0,
    };

    let inp = input.data();
    let ker = weights.data();
    let mut out = vec![S::zero(); oh * ow * cout];

    out.par_chunks_mut(ow * cout)
        .enumerate()
        .for_each(|(oy, row)| {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = S::zero();
                    for ky in 0..s {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..s {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let in_base = (iy as usize * w + ix as usize) * c;
                            let k_base = ((ky * s + kx) * c) * cout + co;
                            for ci in 0..c {
                                acc += ker[k_base + ci * cout] * inp[in_base + ci];
                            }
                        }
                    }
                    row[ox * cout + co] = acc;
                }
            }
        });

    let out = Tensor::from_vec(&[oh, ow, cout], out)?;
    out.check_finite("conv2d")?;
    Ok(out)
}

/// Gradients of `conv2d` with respect to input and weights.
pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (h, w, c, s, cout) = check_conv_args(input, weights, stride)?;
    let (oh, ow) = conv2d_out_dims(h, w, s, stride, padding)?;
    if grad_out.shape() != [oh, ow, cout] {
        return Err(Error::shape(format!(
            "grad_out shape {:?} does not match conv output [{oh}, {ow}, {cout}]",
            grad_out.shape()
        )));
    }
    let pad = match padding {
        Padding::Same => (s - 1) / 2,
        Padding::Valid => 0,
    };

    let inp = input.data();
    let ker = weights.data();
    let go = grad_out.data();
    let mut d_in = vec![S::zero(); inp.len()];
    let mut d_w = vec![S::zero(); ker.len()];

    for oy in 0..oh {
        for ox in 0..ow {
            for ky in 0..s {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..s {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let in_base = (iy as usize * w + ix as usize) * c;
                    let go_base = (oy * ow + ox) * cout;
                    for ci in 0..c {
                        let k_base = ((ky * s + kx) * c + ci) * cout;
                        let x = inp[in_base + ci];
                        let mut acc = S::zero();
                        for co in 0..cout {
                            let g = go[go_base + co];
                            acc += ker[k_base + co] * g;
                            d_w[k_base + co] += x * g;
                        }
                        d_in[in_base + ci] += acc;
                    }
                }
            }
        }
    }

    Ok((
        Tensor::from_vec(input.shape(), d_in)?,
        Tensor::from_vec(weights.shape(), d_w)?,
    ))
}

/// Transposed convolution: `[h, w, c]` -> `[(h-1)*stride + k, (w-1)*stride + k, c']`
/// with weights `[k, k, c, c']`. Written in gather form so each output
/// element is produced by exactly one accumulation chain.
pub fn conv2d_transpose<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    stride: usize,
) -> Result<Tensor<S>> {
    if input.rank() != 3 || weights.rank() != 4 || weights.dim(0) != weights.dim(1) {
        return Err(Error::shape(format!(
            "conv2d_transpose expects [h,w,c] input and [k,k,c,c'] weights, got {:?} / {:?}",
            input.shape(),
            weights.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::arg("stride must be positive"));
    }
    let (h, w, c) = (input.dim(0), input.dim(1), input.dim(2));
    let (k, cin, cout) = (weights.dim(0), weights.dim(2), weights.dim(3));
    if cin != c {
        return Err(Error::shape(format!(
            "channel mismatch: input has {c}, kernel expects {cin}"
        )));
    }
    let oh = (h - 1) * stride + k;
    let ow = (w - 1) * stride + k;

    let inp = input.data();
    let ker = weights.data();
    let mut out = vec![S::zero(); oh * ow * cout];

    out.par_chunks_mut(ow * cout)
        .enumerate()
        .for_each(|(oy, row)| {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = S::zero();
                    for ky in 0..k {
                        if oy < ky || (oy - ky) % stride != 0 {
                            continue;
                        }
                        let iy = (oy - ky) / stride;
                        if iy >= h {
                            continue;
                        }
                        for kx in 0..k {
                            if ox < kx || (ox - kx) % stride != 0 {
                                continue;
                            }
                            let ix = (ox - kx) / stride;
                            if ix >= w {
                                continue;
                            }
                            let in_base = (iy * w + ix) * c;
                            let k_base = ((ky * k + kx) * c) * cout + co;
                            for ci in 0..c {
                                acc += ker[k_base + ci * cout] * inp[in_base + ci];
                            }
                        }
                    }
                    row[ox * cout + co] = acc;
                }
            }
        });

    let out = Tensor::from_vec(&[oh, ow, cout], out)?;
    out.check_finite("conv2d_transpose")?;
    Ok(out)
}

pub fn conv2d_transpose_backward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    stride: usize,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (h, w, c) = (input.dim(0), input.dim(1), input.dim(2));
    let (k, cout) = (weights.dim(0), weights.dim(3));
    let oh = (h - 1) * stride + k;
    let ow = (w - 1) * stride + k;
    if grad_out.shape() != [oh, ow, cout] {
        return Err(Error::shape(format!(
            "grad_out shape {:?} does not match transpose output [{oh}, {ow}, {cout}]",
            grad_out.shape()
        )));
    }

    let inp = input.data();
    let ker = weights.data();
    let go = grad_out.data();
    let mut d_in = vec![S::zero(); inp.len()];
    let mut d_w = vec![S::zero(); ker.len()];

    for iy in 0..h {
        for ix in 0..w {
            let in_base = (iy * w + ix) * c;
            for ky in 0..k {
                let oy = iy * stride + ky;
                for kx in 0..k {
                    let ox = ix * stride + kx;
                    let go_base = (oy * ow + ox) * cout;
                    for ci in 0..c {
                        let k_base = ((ky * k + kx) * c + ci) * cout;
                        let x = inp[in_base + ci];
                        let mut acc = S::zero();
                        for co in 0..cout {
                            let g = go[go_base + co];
                            acc += ker[k_base + co] * g;
                            d_w[k_base + co] += x * g;
                        }
                        d_in[in_base + ci] += acc;
                    }
                }
            }
        }
    }

    Ok((
        Tensor::from_vec(input.shape(), d_in)?,
        Tensor::from_vec(weights.shape(), d_w)?,
    ))
}
