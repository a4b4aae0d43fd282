//! Decomposable dynamic convolution.
//!
//! The effective kernel at each output position is a shared kernel plus a
//! coefficient-weighted sum of M representative basis tensors. Coefficients
//! come from a two-layer 1x1 bottleneck network over the input, so the
//! filters are both input- and position-dependent while the parameter cost
//! stays at `s*s*c*c'*(M+1)` kernel entries plus `h*w*M` generated
//! coefficients.
//!
//! The forward pass exploits linearity of convolution in the kernel:
//! `out = conv(I, W_s) + sum_m C_m .* conv(I, v_m)`, which is algebraically
//! identical to materializing the per-position kernels but costs M+1
//! ordinary convolutions.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{
    bias_add, bias_add_backward, conv2d, conv2d_backward, relu, relu_backward, Padding,
};
use crate::tensor::{sc, Scalar, Tensor};

/// Shared kernel, M representative basis tensors, and the coefficient
/// bottleneck network. Bases and shared weights are plain model parameters.
#[derive(Debug, Clone)]
pub struct DdConvParams<S: Scalar> {
    /// `[s, s, c, c']` position-independent kernel.
    pub shared: Tensor<S>,
    /// M basis tensors, each the same shape as `shared`.
    pub bases: Vec<Tensor<S>>,
    /// 1x1 bottleneck conv `c -> b`.
    pub coeff_w1: Tensor<S>,
    pub coeff_b1: Tensor<S>,
    /// 1x1 output conv `b -> M`, no activation: coefficients are signed.
    pub coeff_w2: Tensor<S>,
    pub coeff_b2: Tensor<S>,
}

/// Bottleneck width for a given input channel count.
pub fn bottleneck_width(c: usize) -> usize {
    (c / 8).max(8)
}

impl<S: Scalar> DdConvParams<S> {
    /// Gaussian init: shared and coefficient layers at fan-in scale, bases
    /// at std 0.05 so early dynamics stay close to the shared path.
    pub fn new(kernel: usize, c_in: usize, c_out: usize, m: usize, rng: &mut impl Rng) -> Self {
        assert!(m >= 1, "need at least one basis tensor");
        let b = bottleneck_width(c_in);
        let fan_in = kernel * kernel * c_in;
        let shared_std = (2.0 / fan_in as f64).sqrt();
        DdConvParams {
            shared: Tensor::randn(&[kernel, kernel, c_in, c_out], shared_std, rng),
            bases: (0..m)
                .map(|_| Tensor::randn(&[kernel, kernel, c_in, c_out], 0.05, rng))
                .collect(),
            coeff_w1: Tensor::randn(&[1, 1, c_in, b], (2.0 / c_in as f64).sqrt(), rng),
            coeff_b1: Tensor::zeros(&[b]),
            coeff_w2: Tensor::randn(&[1, 1, b, m], (2.0 / b as f64).sqrt(), rng),
            coeff_b2: Tensor::zeros(&[m]),
        }
    }

    pub fn num_bases(&self) -> usize {
        self.bases.len()
    }

    pub fn kernel_extent(&self) -> usize {
        self.shared.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.shared.dim(2)
    }

    pub fn out_channels(&self) -> usize {
        self.shared.dim(3)
    }

    fn check(&self) -> Result<()> {
        for (i, v) in self.bases.iter().enumerate() {
            if v.shape() != self.shared.shape() {
                return Err(Error::shape(format!(
                    "basis {i} shape {:?} differs from shared {:?}",
                    v.shape(),
                    self.shared.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Cache for the backward pass of one dynamic convolution.
pub struct DdConvCache<S: Scalar> {
    input: Tensor<S>,
    pre_relu: Tensor<S>,
    hidden: Tensor<S>,
    pub coeffs: Tensor<S>,
    basis_maps: Vec<Tensor<S>>,
}

/// Coefficient map `[h, w, M]`: bottleneck 1x1 conv, relu, output 1x1 conv,
/// no final activation.
pub fn coefficients<S: Scalar>(
    input: &Tensor<S>,
    params: &DdConvParams<S>,
) -> Result<Tensor<S>> {
    let (coeffs, _, _) = coefficients_with_cache(input, params)?;
    Ok(coeffs)
}

fn coefficients_with_cache<S: Scalar>(
    input: &Tensor<S>,
    params: &DdConvParams<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let pre = bias_add(&conv2d(input, &params.coeff_w1, 1, Padding::Same)?, &params.coeff_b1)?;
    let hidden = relu(&pre);
    let coeffs = bias_add(&conv2d(&hidden, &params.coeff_w2, 1, Padding::Same)?, &params.coeff_b2)?;
    Ok((coeffs, pre, hidden))
}

/// Materialize the per-position dynamic kernels
/// `W_d[i, j] = sum_m coeffs[i, j, m] * v_m` as `[h, w, s, s, c, c']`.
/// Inspection and oracle use; the forward path never builds this.
pub fn combine<S: Scalar>(coeffs: &Tensor<S>, bases: &[Tensor<S>]) -> Result<Tensor<S>> {
    if coeffs.rank() != 3 || coeffs.dim(2) != bases.len() {
        return Err(Error::shape(format!(
            "coefficients {:?} do not match {} bases",
            coeffs.shape(),
            bases.len()
        )));
    }
    let (h, w, m) = (coeffs.dim(0), coeffs.dim(1), coeffs.dim(2));
    let kshape = bases[0].shape();
    let ksize = bases[0].len();
    let mut shape = vec![h, w];
    shape.extend_from_slice(kshape);
    let mut out = Tensor::zeros(&shape);
    let data = out.data_mut();
    for pos in 0..h * w {
        let base = pos * ksize;
        for mi in 0..m {
            let cm = coeffs.data()[pos * m + mi];
            let v = bases[mi].data();
            for e in 0..ksize {
                data[base + e] += cm * v[e];
            }
        }
    }
    Ok(out)
}

/// Dynamic convolution forward pass, stride 1, same padding.
pub fn ddconv_forward<S: Scalar>(
    input: &Tensor<S>,
    params: &DdConvParams<S>,
) -> Result<(Tensor<S>, DdConvCache<S>)> {
    params.check()?;
    if input.rank() != 3 || input.dim(2) != params.in_channels() {
        return Err(Error::shape(format!(
            "input {:?} does not match {} channels",
            input.shape(),
            params.in_channels()
        )));
    }
    let (coeffs, pre_relu, hidden) = coefficients_with_cache(input, params)?;
    let mut out = conv2d(input, &params.shared, 1, Padding::Same)?;
    let m = params.num_bases();
    let cout = params.out_channels();
    let mut basis_maps = Vec::with_capacity(m);
    for (mi, v) in params.bases.iter().enumerate() {
        let bm = conv2d(input, v, 1, Padding::Same)?;
        {
            let data = out.data_mut();
            let c = coeffs.data();
            let b = bm.data();
            for pos in 0..data.len() / cout {
                let cm = c[pos * m + mi];
                for co in 0..cout {
                    data[pos * cout + co] += cm * b[pos * cout + co];
                }
            }
        }
        basis_maps.push(bm);
    }
    out.check_finite("ddconv_forward")?;
    Ok((
        out,
        DdConvCache {
            input: input.clone(),
            pre_relu,
            hidden,
            coeffs,
            basis_maps,
        },
    ))
}

/// Full backward: accumulates gradients for shared, every basis, and the
/// coefficient network, and returns the input gradient.
pub fn ddconv_backward<S: Scalar>(
    cache: &DdConvCache<S>,
    params: &mut DdConvParams<S>,
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let input = &cache.input;
    let m = params.num_bases();
    let cout = params.out_channels();
    let positions = grad_out.len() / cout;

    // Shared path.
    let (mut d_input, d_shared) =
        conv2d_backward(input, &params.shared, 1, Padding::Same, grad_out)?;
    params.shared.accumulate_grad(d_shared.data());

    // Basis paths: out += C_m .* conv(I, v_m).
    let mut d_coeffs = Tensor::zeros(cache.coeffs.shape());
    for (mi, v) in params.bases.iter_mut().enumerate() {
        let bm = &cache.basis_maps[mi];
        let mut d_bm = Tensor::zeros(bm.shape());
        {
            let go = grad_out.data();
            let c = cache.coeffs.data();
            let b = bm.data();
            let dbm = d_bm.data_mut();
            let dc = d_coeffs.data_mut();
            for pos in 0..positions {
                let cm = c[pos * m + mi];
                let mut acc = S::zero();
                for co in 0..cout {
                    let g = go[pos * cout + co];
                    dbm[pos * cout + co] = cm * g;
                    acc += b[pos * cout + co] * g;
                }
                dc[pos * m + mi] = acc;
            }
        }
        let (d_in_m, d_v) = conv2d_backward(input, v, 1, Padding::Same, &d_bm)?;
        v.accumulate_grad(d_v.data());
        for (a, b) in d_input.data_mut().iter_mut().zip(d_in_m.data()) {
            *a += *b;
        }
    }

    // Coefficient network: conv1x1 -> relu -> conv1x1 with biases.
    let (d_c2, d_b2) = bias_add_backward(&d_coeffs, m);
    let (d_hidden, d_w2) =
        conv2d_backward(&cache.hidden, &params.coeff_w2, 1, Padding::Same, &d_c2)?;
    let d_pre = relu_backward(&cache.pre_relu, &d_hidden)?;
    let (d_c1, d_b1) = bias_add_backward(&d_pre, params.coeff_b1.len());
    let (d_in_coeff, d_w1) =
        conv2d_backward(input, &params.coeff_w1, 1, Padding::Same, &d_c1)?;
    params.coeff_w2.accumulate_grad(d_w2.data());
    params.coeff_b2.accumulate_grad(d_b2.data());
    params.coeff_w1.accumulate_grad(d_w1.data());
    params.coeff_b1.accumulate_grad(d_b1.data());
    for (a, b) in d_input.data_mut().iter_mut().zip(d_in_coeff.data()) {
        *a += *b;
    }

    Ok(d_input)
}

/// Mean absolute pairwise cosine between the basis tensors:
/// `(1/M) * sum_{i<j} |v_i . v_j| / (|v_i| |v_j|)`.
pub fn similarity_loss<S: Scalar>(bases: &[Tensor<S>]) -> Result<S> {
    similarity_loss_and_grads(bases).map(|(l, _)| l)
}

/// Loss plus the gradient for each basis tensor.
pub fn similarity_loss_and_grads<S: Scalar>(bases: &[Tensor<S>]) -> Result<(S, Vec<Vec<S>>)> {
    let m = bases.len();
    if m < 2 {
        return Err(Error::arg(format!("similarity loss needs M >= 2, got {m}")));
    }
    let norms: Vec<S> = bases
        .iter()
        .map(|v| {
            v.data()
                .iter()
                .map(|&x| x * x)
                .fold(S::zero(), |a, b| a + b)
                .sqrt()
        })
        .collect();
    for (i, &n) in norms.iter().enumerate() {
        if n == S::zero() {
            return Err(Error::arg(format!("basis {i} has zero norm")));
        }
    }
    let inv_m = S::one() / sc::<S>(m as f64);
    let mut loss = S::zero();
    let mut grads: Vec<Vec<S>> = bases.iter().map(|v| vec![S::zero(); v.len()]).collect();
    for i in 0..m {
        for j in (i + 1)..m {
            let dot = bases[i]
                .data()
                .iter()
                .zip(bases[j].data())
                .map(|(&a, &b)| a * b)
                .fold(S::zero(), |a, b| a + b);
            let denom = norms[i] * norms[j];
            let abs_cos = dot.abs() / denom;
            loss += inv_m * abs_cos;
            let sign = if dot >= S::zero() { S::one() } else { -S::one() };
            // d|cos|/dv_i = sign * v_j / (n_i n_j) - |cos| * v_i / n_i^2
            for e in 0..bases[i].len() {
                let vi = bases[i].data()[e];
                let vj = bases[j].data()[e];
                grads[i][e] += inv_m * (sign * vj / denom - abs_cos * vi / (norms[i] * norms[i]));
                grads[j][e] += inv_m * (sign * vi / denom - abs_cos * vj / (norms[j] * norms[j]));
            }
        }
    }
    Ok((loss, grads))
}

/// Parameter accounting for one dynamic layer configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    /// Basis kernel entries: `s^2 * c * c' * M`.
    pub dynamic_basis: u64,
    /// Basis entries plus per-position coefficients: `+ h * w * M`.
    pub dynamic_total: u64,
    /// Shared kernel entries: `s^2 * c * c'`.
    pub shared: u64,
    /// Everything the layer generates: `s^2 * c * c' * (M+1) + h * w * M`.
    pub generated_total: u64,
    /// Comparator: a dense per-position filter bank `s^2 * c * c' * h * w`.
    pub dfn: u64,
}

pub fn param_count(s: usize, c: usize, c_out: usize, h: usize, w: usize, m: usize) -> ParamCount {
    let kernel = (s * s * c * c_out) as u64;
    let coeffs = (h * w * m) as u64;
    let dynamic_basis = kernel * m as u64;
    ParamCount {
        dynamic_basis,
        dynamic_total: dynamic_basis + coeffs,
        shared: kernel,
        generated_total: kernel * (m as u64 + 1) + coeffs,
        dfn: kernel * (h * w) as u64,
    }
}

/// Memory ratio of the decomposed layer against a dense per-position
/// filter bank: `(M+1)/(h*w) + M/(s^2*c*c')`.
pub fn memory_ratio(s: usize, c: usize, c_out: usize, h: usize, w: usize, m: usize) -> f64 {
    (m as f64 + 1.0) / (h * w) as f64 + m as f64 / (s * s * c * c_out) as f64
}
