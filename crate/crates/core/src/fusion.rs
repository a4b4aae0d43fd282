//! Top-down fusion backbone and the detection head.
//!
//! The backbone consumes the K same-resolution dense maps. Block 1
//! processes the scale-1 map; each later block downsamples the previous
//! block's output with its first strided conv and adds a one-conv reduction
//! of the matching scale's map, after which that map receives no further
//! processing. Every block output is upsampled by a transposed conv to the
//! block-1 resolution and channel-concatenated for the head.

use rand::Rng;

use crate::ddconv::{ddconv_backward, ddconv_forward, DdConvCache, DdConvParams};
use crate::error::{Error, Result};
use crate::ops::{
    add, bias_add, bias_add_backward, concat_channels, concat_channels_backward, conv2d,
    conv2d_backward, conv2d_transpose, conv2d_transpose_backward, relu, relu_backward, sigmoid,
    BatchNorm, BatchNormCache, NormMode, Padding,
};
use crate::tensor::{Scalar, Tensor};

pub const ANCHORS_PER_CELL: usize = 2;
pub const BOX_CODE: usize = 7;
pub const DIR_BINS: usize = 2;

/// conv -> bias -> batch norm -> optional relu.
#[derive(Debug, Clone)]
pub struct ConvLayer<S: Scalar> {
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
    pub norm: BatchNorm<S>,
    pub stride: usize,
    pub relu: bool,
}

pub struct ConvLayerCache<S: Scalar> {
    input: Tensor<S>,
    norm_cache: BatchNormCache<S>,
    pre_relu: Tensor<S>,
}

impl<S: Scalar> ConvLayer<S> {
    pub fn new(
        kernel: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        norm_mode: NormMode,
        use_relu: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let std = (2.0 / (kernel * kernel * c_in) as f64).sqrt();
        ConvLayer {
            weights: Tensor::randn(&[kernel, kernel, c_in, c_out], std, rng),
            bias: Tensor::zeros(&[c_out]),
            norm: BatchNorm::new(c_out, norm_mode),
            stride,
            relu: use_relu,
        }
    }

    pub fn forward(&mut self, input: &Tensor<S>, train: bool) -> Result<(Tensor<S>, ConvLayerCache<S>)> {
        let pre = bias_add(&conv2d(input, &self.weights, self.stride, Padding::Same)?, &self.bias)?;
        let (normed, norm_cache) = if train {
            self.norm.forward_train(&pre, None)?
        } else {
            (self.norm.forward_eval(&pre)?, BatchNormCache::default())
        };
        let out = if self.relu { relu(&normed) } else { normed.clone() };
        Ok((
            out,
            ConvLayerCache {
                input: input.clone(),
                norm_cache,
                pre_relu: normed,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ConvLayerCache<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let g = if self.relu {
            relu_backward(&cache.pre_relu, grad_out)?
        } else {
            grad_out.clone()
        };
        let g = self.norm.backward(&cache.norm_cache, &g)?;
        let (g, d_bias) = bias_add_backward(&g, self.bias.len());
        let (d_input, d_w) =
            conv2d_backward(&cache.input, &self.weights, self.stride, Padding::Same, &g)?;
        self.weights.accumulate_grad(d_w.data());
        self.bias.accumulate_grad(d_bias.data());
        Ok(d_input)
    }
}

/// Transposed conv -> bias -> batch norm -> relu, used as the decoder
/// upsample. Kernel extent equals the stride so the output is exactly
/// `in * stride`.
#[derive(Debug, Clone)]
pub struct UpsampleLayer<S: Scalar> {
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
    pub norm: BatchNorm<S>,
    pub stride: usize,
}

pub struct UpsampleLayerCache<S: Scalar> {
    input: Tensor<S>,
    norm_cache: BatchNormCache<S>,
    pre_relu: Tensor<S>,
}

impl<S: Scalar> UpsampleLayer<S> {
    pub fn new(c_in: usize, c_out: usize, stride: usize, norm_mode: NormMode, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (stride * stride * c_in) as f64).sqrt();
        UpsampleLayer {
            weights: Tensor::randn(&[stride, stride, c_in, c_out], std, rng),
            bias: Tensor::zeros(&[c_out]),
            norm: BatchNorm::new(c_out, norm_mode),
            stride,
        }
    }

    pub fn forward(&mut self, input: &Tensor<S>, train: bool) -> Result<(Tensor<S>, UpsampleLayerCache<S>)> {
        let pre = bias_add(&conv2d_transpose(input, &self.weights, self.stride)?, &self.bias)?;
        let (normed, norm_cache) = if train {
            self.norm.forward_train(&pre, None)?
        } else {
            (self.norm.forward_eval(&pre)?, BatchNormCache::default())
        };
        let out = relu(&normed);
        Ok((
            out,
            UpsampleLayerCache {
                input: input.clone(),
                norm_cache,
                pre_relu: normed,
            },
        ))
    }

    pub fn backward(&mut self, cache: &UpsampleLayerCache<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let g = relu_backward(&cache.pre_relu, grad_out)?;
        let g = self.norm.backward(&cache.norm_cache, &g)?;
        let (g, d_bias) = bias_add_backward(&g, self.bias.len());
        let (d_input, d_w) =
            conv2d_transpose_backward(&cache.input, &self.weights, self.stride, &g)?;
        self.weights.accumulate_grad(d_w.data());
        self.bias.accumulate_grad(d_bias.data());
        Ok(d_input)
    }
}

#[derive(Debug, Clone)]
pub struct FusionConfig {
    /// Stride of block 1 relative to the base grid (2 for car, 1 for
    /// cyclist-scale detection).
    pub base_stride: usize,
    pub block_channels: Vec<usize>,
    pub block_layers: Vec<usize>,
    pub up_channels: usize,
    pub norm: NormMode,
    /// Number of input dense maps (pillar scales).
    pub scales: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            base_stride: 2,
            block_channels: vec![64, 128, 256],
            block_layers: vec![3, 5, 5],
            up_channels: 128,
            norm: NormMode::Batch,
            scales: 3,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_channels.len() != self.block_layers.len() || self.block_channels.is_empty() {
            return Err(Error::arg("block channel and layer lists must match"));
        }
        if self.scales > 1 && self.block_channels.len() != self.scales {
            return Err(Error::arg(format!(
                "{} blocks for {} pillar scales; they must match when multi-scale",
                self.block_channels.len(),
                self.scales
            )));
        }
        if self.base_stride == 0 || self.up_channels == 0 {
            return Err(Error::arg("strides and widths must be positive"));
        }
        Ok(())
    }

    /// Cumulative stride of block `bi` (0-based) relative to the base grid.
    pub fn block_stride(&self, bi: usize) -> usize {
        self.base_stride << bi
    }

    pub fn head_channels(&self) -> usize {
        self.block_channels.len() * self.up_channels
    }
}

/// Spatial dims of the fused feature map for an `[h, w]` base grid.
pub fn fusion_output_dims(config: &FusionConfig, h: usize, w: usize) -> (usize, usize) {
    (
        h.div_ceil(config.base_stride),
        w.div_ceil(config.base_stride),
    )
}

#[derive(Debug)]
pub struct FusionNet<S: Scalar> {
    pub blocks: Vec<Vec<ConvLayer<S>>>,
    /// One reduction conv per scale past the first (empty when K = 1).
    pub injections: Vec<ConvLayer<S>>,
    pub ups: Vec<UpsampleLayer<S>>,
    pub config: FusionConfig,
}

pub struct FusionCache<S: Scalar> {
    block_caches: Vec<Vec<ConvLayerCache<S>>>,
    injection_caches: Vec<ConvLayerCache<S>>,
    up_caches: Vec<UpsampleLayerCache<S>>,
    pub block_shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> FusionNet<S> {
    pub fn new(config: FusionConfig, in_channels: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::new();
        for (bi, (&ch, &layers)) in config
            .block_channels
            .iter()
            .zip(&config.block_layers)
            .enumerate()
        {
            let mut block = Vec::new();
            let (first_in, first_stride) = if bi == 0 {
                (in_channels, config.base_stride)
            } else {
                (config.block_channels[bi - 1], 2)
            };
            block.push(ConvLayer::new(3, first_in, ch, first_stride, config.norm, true, rng));
            for _ in 1..layers {
                block.push(ConvLayer::new(3, ch, ch, 1, config.norm, true, rng));
            }
            blocks.push(block);
        }
        let mut injections = Vec::new();
        if config.scales > 1 {
            for bi in 1..config.block_channels.len() {
                injections.push(ConvLayer::new(
                    3,
                    in_channels,
                    config.block_channels[bi],
                    config.block_stride(bi),
                    config.norm,
                    false,
                    rng,
                ));
            }
        }
        let ups = config
            .block_channels
            .iter()
            .enumerate()
            .map(|(bi, &ch)| UpsampleLayer::new(ch, config.up_channels, 1 << bi, config.norm, rng))
            .collect();
        Ok(FusionNet {
            blocks,
            injections,
            ups,
            config,
        })
    }

    /// Fuse the K dense maps into one `[h/s, w/s, blocks * up_channels]`
    /// feature map.
    pub fn forward(&mut self, maps: &[Tensor<S>], train: bool) -> Result<(Tensor<S>, FusionCache<S>)> {
        if maps.len() != self.config.scales {
            return Err(Error::shape(format!(
                "fusion expects {} maps, got {}",
                self.config.scales,
                maps.len()
            )));
        }
        for m in maps {
            if m.shape() != maps[0].shape() {
                return Err(Error::shape("dense maps must share one resolution"));
            }
        }

        let mut block_caches = Vec::new();
        let mut injection_caches = Vec::new();
        let mut block_outputs: Vec<Tensor<S>> = Vec::new();
        let mut block_shapes = Vec::new();
        let mut x = maps[0].clone();
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            let mut caches = Vec::new();
            let (mut out, first_cache) = block[0].forward(&x, train)?;
            caches.push(first_cache);
            if bi > 0 && !self.injections.is_empty() {
                let (inj, inj_cache) = self.injections[bi - 1].forward(&maps[bi], train)?;
                injection_caches.push(inj_cache);
                out = add(&out, &inj)?;
            }
            for layer in block.iter_mut().skip(1) {
                let (next, cache) = layer.forward(&out, train)?;
                caches.push(cache);
                out = next;
            }
            block_caches.push(caches);
            block_shapes.push(out.shape().to_vec());
            block_outputs.push(out.clone());
            x = out;
        }

        let mut up_caches = Vec::new();
        let mut upsampled = Vec::new();
        for (bi, up) in self.ups.iter_mut().enumerate() {
            let (u, cache) = up.forward(&block_outputs[bi], train)?;
            if u.dim(0) != block_shapes[0][0] || u.dim(1) != block_shapes[0][1] {
                return Err(Error::shape(format!(
                    "upsampled block {bi} is {:?}, expected {}x{}: grid dims must be \
                     divisible by the block strides",
                    u.shape(),
                    block_shapes[0][0],
                    block_shapes[0][1]
                )));
            }
            up_caches.push(cache);
            upsampled.push(u);
        }
        let refs: Vec<&Tensor<S>> = upsampled.iter().collect();
        let fused = concat_channels(&refs)?;
        Ok((
            fused,
            FusionCache {
                block_caches,
                injection_caches,
                up_caches,
                block_shapes,
            },
        ))
    }

    /// Backward through concat, upsamples, and blocks; returns gradients
    /// for each input dense map.
    pub fn backward(&mut self, cache: &FusionCache<S>, grad_out: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        let n_blocks = self.blocks.len();
        let widths = vec![self.config.up_channels; n_blocks];
        let up_grads = concat_channels_backward(grad_out, &widths)?;

        let mut block_out_grads: Vec<Tensor<S>> = Vec::with_capacity(n_blocks);
        for (bi, up) in self.ups.iter_mut().enumerate() {
            block_out_grads.push(up.backward(&cache.up_caches[bi], &up_grads[bi])?);
        }

        let mut map_grads: Vec<Option<Tensor<S>>> = vec![None; self.config.scales.max(1)];
        let mut carry: Option<Tensor<S>> = None;
        for bi in (0..n_blocks).rev() {
            let mut g = block_out_grads[bi].clone();
            if let Some(c) = carry.take() {
                g = add(&g, &c)?;
            }
            let caches = &cache.block_caches[bi];
            for (li, layer) in self.blocks[bi].iter_mut().enumerate().skip(1).rev() {
                g = layer.backward(&caches[li], &g)?;
            }
            if bi > 0 && !self.injections.is_empty() {
                let d_map = self.injections[bi - 1].backward(&cache.injection_caches[bi - 1], &g)?;
                map_grads[bi] = Some(d_map);
            }
            g = self.blocks[bi][0].backward(&caches[0], &g)?;
            carry = Some(g);
        }
        map_grads[0] = carry;

        let zero_like = |shape: &[usize]| Tensor::<S>::zeros(shape);
        let first_shape = cache.block_caches[0][0].input.shape().to_vec();
        Ok(map_grads
            .into_iter()
            .map(|g| g.unwrap_or_else(|| zero_like(&first_shape)))
            .collect())
    }
}

/// One head branch: a plain 1x1 conv or a dynamic convolution, plus bias.
#[derive(Debug)]
pub enum HeadConv<S: Scalar> {
    Standard { weights: Tensor<S>, bias: Tensor<S> },
    Dynamic { params: DdConvParams<S>, bias: Tensor<S> },
}

pub enum HeadConvCache<S: Scalar> {
    Standard { input: Tensor<S> },
    Dynamic { cache: DdConvCache<S> },
}

impl<S: Scalar> HeadConv<S> {
    fn new(c_in: usize, c_out: usize, ddconv: Option<usize>, rng: &mut impl Rng) -> Self {
        match ddconv {
            Some(m) => HeadConv::Dynamic {
                params: DdConvParams::new(1, c_in, c_out, m, rng),
                bias: Tensor::zeros(&[c_out]),
            },
            None => {
                let std = (2.0 / c_in as f64).sqrt();
                HeadConv::Standard {
                    weights: Tensor::randn(&[1, 1, c_in, c_out], std, rng),
                    bias: Tensor::zeros(&[c_out]),
                }
            }
        }
    }

    fn forward(&self, input: &Tensor<S>) -> Result<(Tensor<S>, HeadConvCache<S>)> {
        match self {
            HeadConv::Standard { weights, bias } => {
                let out = bias_add(&conv2d(input, weights, 1, Padding::Same)?, bias)?;
                Ok((out, HeadConvCache::Standard { input: input.clone() }))
            }
            HeadConv::Dynamic { params, bias } => {
                let (out, cache) = ddconv_forward(input, params)?;
                let out = bias_add(&out, bias)?;
                Ok((out, HeadConvCache::Dynamic { cache }))
            }
        }
    }

    fn backward(&mut self, cache: &HeadConvCache<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        match (self, cache) {
            (HeadConv::Standard { weights, bias }, HeadConvCache::Standard { input }) => {
                let (g, d_bias) = bias_add_backward(grad_out, bias.len());
                bias.accumulate_grad(d_bias.data());
                let (d_input, d_w) = conv2d_backward(input, weights, 1, Padding::Same, &g)?;
                weights.accumulate_grad(d_w.data());
                Ok(d_input)
            }
            (HeadConv::Dynamic { params, bias }, HeadConvCache::Dynamic { cache }) => {
                let (g, d_bias) = bias_add_backward(grad_out, bias.len());
                bias.accumulate_grad(d_bias.data());
                ddconv_backward(cache, params, &g)
            }
            _ => Err(Error::arg("head cache does not match head kind")),
        }
    }

    pub fn bases(&self) -> Option<&[Tensor<S>]> {
        match self {
            HeadConv::Dynamic { params, .. } => Some(&params.bases),
            HeadConv::Standard { .. } => None,
        }
    }
}

/// Box, classification, and direction outputs for 2 anchors per position.
#[derive(Debug, Clone)]
pub struct HeadOutput<S: Scalar> {
    /// `[h, w, 2 * 7]` box residual logits.
    pub boxes: Tensor<S>,
    /// `[h, w, 2]` objectness logits (sigmoid gives the probability).
    pub cls: Tensor<S>,
    /// `[h, w, 2 * 2]` direction logits.
    pub dir: Tensor<S>,
}

impl<S: Scalar> HeadOutput<S> {
    pub fn total_channels(&self) -> usize {
        self.boxes.dim(2) + self.cls.dim(2) + self.dir.dim(2)
    }

    pub fn cls_probabilities(&self) -> Result<Tensor<S>> {
        sigmoid(&self.cls)
    }
}

/// Three parallel 1x1 convolutions over the fused features.
#[derive(Debug)]
pub struct DetectionHead<S: Scalar> {
    pub box_conv: HeadConv<S>,
    pub cls_conv: HeadConv<S>,
    pub dir_conv: HeadConv<S>,
}

pub struct HeadCache<S: Scalar> {
    box_cache: HeadConvCache<S>,
    cls_cache: HeadConvCache<S>,
    dir_cache: HeadConvCache<S>,
}

impl<S: Scalar> HeadCache<S> {
    /// Coefficient maps of the dynamic branches (box, cls, dir order).
    pub fn coefficient_maps(&self) -> Vec<(&'static str, &Tensor<S>)> {
        let mut out = Vec::new();
        for (name, c) in [
            ("box", &self.box_cache),
            ("cls", &self.cls_cache),
            ("dir", &self.dir_cache),
        ] {
            if let HeadConvCache::Dynamic { cache } = c {
                out.push((name, &cache.coeffs));
            }
        }
        out
    }
}

impl<S: Scalar> DetectionHead<S> {
    /// `ddconv = Some(M)` makes all three branches dynamic.
    pub fn new(c_in: usize, ddconv: Option<usize>, rng: &mut impl Rng) -> Self {
        DetectionHead {
            box_conv: HeadConv::new(c_in, ANCHORS_PER_CELL * BOX_CODE, ddconv, rng),
            cls_conv: HeadConv::new(c_in, ANCHORS_PER_CELL, ddconv, rng),
            dir_conv: HeadConv::new(c_in, ANCHORS_PER_CELL * DIR_BINS, ddconv, rng),
        }
    }

    pub fn forward(&self, features: &Tensor<S>) -> Result<(HeadOutput<S>, HeadCache<S>)> {
        let (boxes, box_cache) = self.box_conv.forward(features)?;
        let (cls, cls_cache) = self.cls_conv.forward(features)?;
        let (dir, dir_cache) = self.dir_conv.forward(features)?;
        Ok((
            HeadOutput { boxes, cls, dir },
            HeadCache {
                box_cache,
                cls_cache,
                dir_cache,
            },
        ))
    }

    /// Sum of the three branches' gradients w.r.t. the shared features.
    pub fn backward(
        &mut self,
        cache: &HeadCache<S>,
        d_boxes: &Tensor<S>,
        d_cls: &Tensor<S>,
        d_dir: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let g_box = self.box_conv.backward(&cache.box_cache, d_boxes)?;
        let g_cls = self.cls_conv.backward(&cache.cls_cache, d_cls)?;
        let g_dir = self.dir_conv.backward(&cache.dir_cache, d_dir)?;
        add(&add(&g_box, &g_cls)?, &g_dir)
    }

    /// Basis tensors of every dynamic branch.
    pub fn all_bases(&self) -> Vec<&[Tensor<S>]> {
        [&self.box_conv, &self.cls_conv, &self.dir_conv]
            .into_iter()
            .filter_map(|c| c.bases())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn toy_config(norm: NormMode) -> FusionConfig {
        FusionConfig {
            base_stride: 2,
            block_channels: vec![64, 128, 256],
            block_layers: vec![3, 5, 5],
            up_channels: 128,
            norm,
            scales: 3,
        }
    }

    #[test]
    fn paper_scale_output_dims() {
        let cfg = toy_config(NormMode::Batch);
        assert_eq!(fusion_output_dims(&cfg, 496, 432), (248, 216));
    }

    #[test]
    fn zero_maps_and_zero_biases_stay_zero() {
        let mut r = rng(0);
        let cfg = toy_config(NormMode::Identity);
        let mut net = FusionNet::<f64>::new(cfg, 64, &mut r).unwrap();
        let maps: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::zeros(&[16, 16, 64])).collect();
        let (out, cache) = net.forward(&maps, true).unwrap();
        assert_eq!(out.shape(), &[8, 8, 384]);
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(cache.block_shapes[0], vec![8, 8, 64]);
        assert_eq!(cache.block_shapes[1], vec![4, 4, 128]);
        assert_eq!(cache.block_shapes[2], vec![2, 2, 256]);
    }

    #[test]
    fn single_scale_fallback_runs_without_injections() {
        let mut r = rng(1);
        let mut cfg = toy_config(NormMode::Identity);
        cfg.scales = 1;
        let mut net = FusionNet::<f64>::new(cfg, 64, &mut r).unwrap();
        assert!(net.injections.is_empty());
        let maps = vec![Tensor::randn(&[16, 16, 64], 0.5, &mut r)];
        let (out, _) = net.forward(&maps, true).unwrap();
        assert_eq!(out.shape(), &[8, 8, 384]);
    }

    #[test]
    fn backward_produces_a_gradient_per_map() {
        let mut r = rng(2);
        let mut cfg = toy_config(NormMode::Identity);
        cfg.block_channels = vec![8, 12, 16];
        cfg.block_layers = vec![2, 2, 2];
        cfg.up_channels = 8;
        let mut net = FusionNet::<f64>::new(cfg, 16, &mut r).unwrap();
        let maps: Vec<Tensor<f64>> = (0..3)
            .map(|_| Tensor::randn(&[8, 8, 16], 0.5, &mut r))
            .collect();
        let (out, cache) = net.forward(&maps, true).unwrap();
        let grad = Tensor::filled(out.shape(), 1.0);
        let map_grads = net.backward(&cache, &grad).unwrap();
        assert_eq!(map_grads.len(), 3);
        for (g, m) in map_grads.iter().zip(&maps) {
            assert_eq!(g.shape(), m.shape());
            assert!(g.data().iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn head_zero_features_zero_biases_give_half_probability() {
        let mut r = rng(3);
        let mut head = DetectionHead::<f64>::new(384, None, &mut r);
        if let HeadConv::Standard { bias, .. } = &mut head.cls_conv {
            assert!(bias.data().iter().all(|&v| v == 0.0));
        }
        let features = Tensor::zeros(&[4, 4, 384]);
        let (out, _) = head.forward(&features).unwrap();
        assert!(out.boxes.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.total_channels(), 20);
        let probs = out.cls_probabilities().unwrap();
        assert!(probs.data().iter().all(|&p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn dynamic_head_with_zero_coefficients_matches_standard() {
        let mut r = rng(4);
        let mut dyn_head = DetectionHead::<f64>::new(32, Some(3), &mut r);
        let mut std_head = DetectionHead::<f64>::new(32, None, &mut r);
        // Force identical shared kernels and kill the coefficient nets.
        for (d, s) in [
            (&mut dyn_head.box_conv, &mut std_head.box_conv),
            (&mut dyn_head.cls_conv, &mut std_head.cls_conv),
            (&mut dyn_head.dir_conv, &mut std_head.dir_conv),
        ] {
            if let (HeadConv::Dynamic { params, .. }, HeadConv::Standard { weights, .. }) = (d, s) {
                params.coeff_w2 = Tensor::zeros(params.coeff_w2.shape());
                params.coeff_b2 = Tensor::zeros(params.coeff_b2.shape());
                *weights = params.shared.clone();
            } else {
                panic!("unexpected head kinds");
            }
        }
        let features = Tensor::randn(&[5, 5, 32], 0.7, &mut r);
        let (a, _) = dyn_head.forward(&features).unwrap();
        let (b, _) = std_head.forward(&features).unwrap();
        assert_eq!(a.boxes.data(), b.boxes.data());
        assert_eq!(a.cls.data(), b.cls.data());
        assert_eq!(a.dir.data(), b.dir.data());
    }
}
