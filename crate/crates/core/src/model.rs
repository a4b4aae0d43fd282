//! Full pipeline assembly: per-scale encoders, scatter, fusion backbone,
//! and detection head, with one backward pass threading gradients from the
//! head outputs down to every parameter tensor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ddconv::similarity_loss_and_grads;
use crate::encoder::{encode, encode_backward, scatter, scatter_backward, EncodeCache, EncodeInput, EncoderParams, ENCODED_CHANNELS};
use crate::error::{Error, Result};
use crate::fusion::{DetectionHead, FusionCache, FusionConfig, FusionNet, HeadCache, HeadConv, HeadOutput};
use crate::losses::HeadGrads;
use crate::ops::NormMode;
use crate::tensor::{Scalar, Tensor};
use crate::voxelizer::{CellIndex, PillarBatch, VoxelConfig};

#[derive(Debug, Clone)]
pub struct NetworkConfig {
    /// Number of pillar scales K.
    pub scales: usize,
    /// Base grid (H, W).
    pub grid: (usize, usize),
    /// Decorated feature width per scale.
    pub feature_widths: Vec<usize>,
    pub fusion: FusionConfig,
    /// `Some(M)` switches the head convolutions to dynamic ones.
    pub ddconv_bases: Option<usize>,
    /// Normalization mode of the pillar encoders.
    pub encoder_norm: NormMode,
}

impl NetworkConfig {
    pub fn from_voxel(voxel: &VoxelConfig, fusion: FusionConfig, ddconv_bases: Option<usize>) -> Self {
        let (h, w) = crate::voxelizer::grid_dims(voxel);
        NetworkConfig {
            scales: voxel.scales,
            grid: (h, w),
            feature_widths: (1..=voxel.scales).map(|k| voxel.feature_width(k)).collect(),
            fusion,
            ddconv_bases,
            encoder_norm: NormMode::Batch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_widths.len() != self.scales {
            return Err(Error::arg("one feature width per scale required"));
        }
        self.fusion.validate()
    }
}

/// Typed view of one scale's pillar batch for the network.
#[derive(Debug, Clone)]
pub struct ScaleInput<S: Scalar> {
    pub decorated: Tensor<S>,
    pub counts: Vec<usize>,
    pub indices: Vec<CellIndex>,
}

impl PillarBatch {
    pub fn to_scale_input<S: Scalar>(&self) -> ScaleInput<S> {
        ScaleInput {
            decorated: self.decorated.cast::<S>(),
            counts: self.counts.clone(),
            indices: self.indices.clone(),
        }
    }
}

pub struct Network<S: Scalar> {
    pub config: NetworkConfig,
    pub encoders: Vec<EncoderParams<S>>,
    pub fusion: FusionNet<S>,
    pub head: DetectionHead<S>,
}

pub struct ForwardCache<S: Scalar> {
    encode_caches: Vec<Option<EncodeCache<S>>>,
    indices: Vec<Vec<CellIndex>>,
    fusion_cache: FusionCache<S>,
    head_cache: HeadCache<S>,
    /// Dense maps and fused features, kept for inspection dumps.
    pub maps: Vec<Tensor<S>>,
    pub fused: Tensor<S>,
}

impl<S: Scalar> ForwardCache<S> {
    pub fn coefficient_maps(&self) -> Vec<(&'static str, &Tensor<S>)> {
        self.head_cache.coefficient_maps()
    }
}

impl<S: Scalar> Network<S> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoders = config
            .feature_widths
            .iter()
            .map(|&d| EncoderParams::new(d, config.encoder_norm, &mut rng))
            .collect();
        let fusion = FusionNet::new(config.fusion.clone(), ENCODED_CHANNELS, &mut rng)?;
        let head = DetectionHead::new(config.fusion.head_channels(), config.ddconv_bases, &mut rng);
        Ok(Network {
            config,
            encoders,
            fusion,
            head,
        })
    }

    /// Encode each scale, scatter to dense maps, fuse, and run the head.
    pub fn forward(
        &mut self,
        inputs: &[ScaleInput<S>],
        train: bool,
    ) -> Result<(HeadOutput<S>, ForwardCache<S>)> {
        if inputs.len() != self.config.scales {
            return Err(Error::shape(format!(
                "network expects {} scales, got {}",
                self.config.scales,
                inputs.len()
            )));
        }
        let (h, w) = self.config.grid;
        let mut maps = Vec::with_capacity(inputs.len());
        let mut encode_caches = Vec::with_capacity(inputs.len());
        let mut indices = Vec::with_capacity(inputs.len());
        for (scale, input) in inputs.iter().enumerate() {
            if input.indices.is_empty() {
                maps.push(Tensor::zeros(&[h, w, ENCODED_CHANNELS]));
                encode_caches.push(None);
            } else {
                let view = EncodeInput {
                    decorated: &input.decorated,
                    counts: &input.counts,
                };
                let (vectors, cache) = encode(&view, &mut self.encoders[scale], train)?;
                maps.push(scatter(&vectors, &input.indices, h, w)?);
                encode_caches.push(Some(cache));
            }
            indices.push(input.indices.clone());
        }

        let (fused, fusion_cache) = self.fusion.forward(&maps, train)?;
        let (output, head_cache) = self.head.forward(&fused)?;
        Ok((
            output,
            ForwardCache {
                encode_caches,
                indices,
                fusion_cache,
                head_cache,
                maps,
                fused,
            },
        ))
    }

    /// Backward from head-output gradients into every parameter tensor.
    pub fn backward(&mut self, cache: &ForwardCache<S>, grads: &HeadGrads<S>) -> Result<()> {
        let d_features = self
            .head
            .backward(&cache.head_cache, &grads.d_boxes, &grads.d_cls, &grads.d_dir)?;
        let map_grads = self.fusion.backward(&cache.fusion_cache, &d_features)?;
        for (scale, map_grad) in map_grads.iter().enumerate() {
            if let Some(ecache) = &cache.encode_caches[scale] {
                let d_vectors = scatter_backward(map_grad, &cache.indices[scale])?;
                let _ = encode_backward(ecache, &mut self.encoders[scale], &d_vectors)?;
            }
        }
        Ok(())
    }

    /// Mean per-layer similarity loss of the dynamic head branches, with
    /// `scale`-weighted gradients accumulated into the basis tensors.
    /// Returns `None` when the head is not dynamic.
    pub fn accumulate_similarity(&mut self, scale: f64) -> Result<Option<f64>> {
        let mut convs: Vec<&mut HeadConv<S>> = vec![
            &mut self.head.box_conv,
            &mut self.head.cls_conv,
            &mut self.head.dir_conv,
        ];
        let mut losses = Vec::new();
        let n_dynamic = convs
            .iter()
            .filter(|c| matches!(c, HeadConv::Dynamic { .. }))
            .count();
        if n_dynamic == 0 {
            return Ok(None);
        }
        for conv in convs.iter_mut() {
            if let HeadConv::Dynamic { params, .. } = conv {
                if params.bases.len() < 2 {
                    continue;
                }
                let (loss, grads) = similarity_loss_and_grads(&params.bases)?;
                losses.push(loss.into_f64());
                let factor = S::from_f64(scale / n_dynamic as f64);
                for (basis, g) in params.bases.iter_mut().zip(grads) {
                    let gb = basis.grad_mut();
                    for (dst, src) in gb.iter_mut().zip(g) {
                        *dst += factor * src;
                    }
                }
            }
        }
        if losses.is_empty() {
            return Ok(None);
        }
        Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
    }

    /// Mean per-layer similarity loss without touching any gradient;
    /// `None` when the head is not dynamic.
    pub fn mean_similarity_loss(&self) -> Result<Option<f64>> {
        let mut losses = Vec::new();
        for bases in self.head.all_bases() {
            if bases.len() >= 2 {
                losses.push(crate::ddconv::similarity_loss(bases)?.into_f64());
            }
        }
        if losses.is_empty() {
            Ok(None)
        } else {
            Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
        }
    }

    /// Mean absolute pairwise cosine over every dynamic branch's bases.
    pub fn mean_pairwise_abs_cosine(&self) -> Option<f64> {
        let mut values = Vec::new();
        for bases in self.head.all_bases() {
            for i in 0..bases.len() {
                for j in (i + 1)..bases.len() {
                    let dot: f64 = bases[i]
                        .data()
                        .iter()
                        .zip(bases[j].data())
                        .map(|(&a, &b)| a.into_f64() * b.into_f64())
                        .sum();
                    let ni: f64 = bases[i].data().iter().map(|&v| v.into_f64().powi(2)).sum::<f64>().sqrt();
                    let nj: f64 = bases[j].data().iter().map(|&v| v.into_f64().powi(2)).sum::<f64>().sqrt();
                    if ni > 0.0 && nj > 0.0 {
                        values.push((dot / (ni * nj)).abs());
                    }
                }
            }
        }
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.named_params_mut() {
            t.zero_grad();
        }
    }

    /// Trainable tensors in a fixed, stable order.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<(String, &mut Tensor<S>)> = Vec::new();
        for (k, enc) in self.encoders.iter_mut().enumerate() {
            out.push((format!("encoder{k}.weights"), &mut enc.weights));
            out.push((format!("encoder{k}.bias"), &mut enc.bias));
            out.push((format!("encoder{k}.norm.gamma"), &mut enc.norm.gamma));
            out.push((format!("encoder{k}.norm.beta"), &mut enc.norm.beta));
        }
        for (bi, block) in self.fusion.blocks.iter_mut().enumerate() {
            for (li, layer) in block.iter_mut().enumerate() {
                out.push((format!("fusion.block{bi}.layer{li}.weights"), &mut layer.weights));
                out.push((format!("fusion.block{bi}.layer{li}.bias"), &mut layer.bias));
                out.push((format!("fusion.block{bi}.layer{li}.norm.gamma"), &mut layer.norm.gamma));
                out.push((format!("fusion.block{bi}.layer{li}.norm.beta"), &mut layer.norm.beta));
            }
        }
        for (ii, inj) in self.fusion.injections.iter_mut().enumerate() {
            out.push((format!("fusion.inject{ii}.weights"), &mut inj.weights));
            out.push((format!("fusion.inject{ii}.bias"), &mut inj.bias));
            out.push((format!("fusion.inject{ii}.norm.gamma"), &mut inj.norm.gamma));
            out.push((format!("fusion.inject{ii}.norm.beta"), &mut inj.norm.beta));
        }
        for (ui, up) in self.fusion.ups.iter_mut().enumerate() {
            out.push((format!("fusion.up{ui}.weights"), &mut up.weights));
            out.push((format!("fusion.up{ui}.bias"), &mut up.bias));
            out.push((format!("fusion.up{ui}.norm.gamma"), &mut up.norm.gamma));
            out.push((format!("fusion.up{ui}.norm.beta"), &mut up.norm.beta));
        }
        for (name, conv) in [
            ("head.box", &mut self.head.box_conv),
            ("head.cls", &mut self.head.cls_conv),
            ("head.dir", &mut self.head.dir_conv),
        ] {
            match conv {
                HeadConv::Standard { weights, bias } => {
                    out.push((format!("{name}.weights"), weights));
                    out.push((format!("{name}.bias"), bias));
                }
                HeadConv::Dynamic { params, bias } => {
                    out.push((format!("{name}.shared"), &mut params.shared));
                    for (mi, basis) in params.bases.iter_mut().enumerate() {
                        out.push((format!("{name}.basis{mi}"), basis));
                    }
                    out.push((format!("{name}.coeff_w1"), &mut params.coeff_w1));
                    out.push((format!("{name}.coeff_b1"), &mut params.coeff_b1));
                    out.push((format!("{name}.coeff_w2"), &mut params.coeff_w2));
                    out.push((format!("{name}.coeff_b2"), &mut params.coeff_b2));
                    out.push((format!("{name}.bias"), bias));
                }
            }
        }
        out
    }

    /// Non-trainable buffers (running statistics), for checkpointing.
    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<(String, &mut Tensor<S>)> = Vec::new();
        for (k, enc) in self.encoders.iter_mut().enumerate() {
            out.push((format!("encoder{k}.norm.running_mean"), &mut enc.norm.running_mean));
            out.push((format!("encoder{k}.norm.running_var"), &mut enc.norm.running_var));
        }
        for (bi, block) in self.fusion.blocks.iter_mut().enumerate() {
            for (li, layer) in block.iter_mut().enumerate() {
                out.push((format!("fusion.block{bi}.layer{li}.norm.running_mean"), &mut layer.norm.running_mean));
                out.push((format!("fusion.block{bi}.layer{li}.norm.running_var"), &mut layer.norm.running_var));
            }
        }
        for (ii, inj) in self.fusion.injections.iter_mut().enumerate() {
            out.push((format!("fusion.inject{ii}.norm.running_mean"), &mut inj.norm.running_mean));
            out.push((format!("fusion.inject{ii}.norm.running_var"), &mut inj.norm.running_var));
        }
        for (ui, up) in self.fusion.ups.iter_mut().enumerate() {
            out.push((format!("fusion.up{ui}.norm.running_mean"), &mut up.norm.running_mean));
            out.push((format!("fusion.up{ui}.norm.running_var"), &mut up.norm.running_var));
        }
        out
    }

    /// Write every parameter and buffer as one dump per tensor plus a
    /// manifest of name, file, and shape.
    pub fn save_checkpoint(&mut self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        let mut entries: Vec<(String, Tensor<S>)> = Vec::new();
        for (name, t) in self.named_params_mut() {
            entries.push((name, t.clone()));
        }
        for (name, t) in self.named_buffers_mut() {
            entries.push((name, t.clone()));
        }
        for (name, t) in entries {
            let file = format!("{}.pipt", name.replace('.', "_"));
            t.write_pipt(dir.join(&file))?;
            manifest.push_str(&format!("{name},{file},{:?}\n", t.shape()));
        }
        std::fs::write(dir.join("manifest.csv"), manifest)?;
        Ok(())
    }
}
