//! Per-channel batch normalization over the last axis.
//!
//! `BatchNorm` owns the affine parameters and running statistics. Training
//! mode normalizes with batch moments and updates the running buffers; eval
//! mode uses the running buffers. `NormMode::Identity` turns the layer into
//! a pass-through, which is how gradient checks run.

use crate::error::{Error, Result};
use crate::tensor::{sc, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Batch,
    Identity,
}

#[derive(Debug, Clone)]
pub struct BatchNorm<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: NormMode,
}

/// Cache produced by the training-mode forward pass. The default value is
/// an empty cache, valid only for identity-mode or eval passes that never
/// read it.
#[derive(Debug, Clone)]
pub struct BatchNormCache<S: Scalar> {
    normalized: Vec<S>,
    inv_std: Vec<S>,
    /// Row indices that participated in the moments (all rows for maps).
    mask: Option<Vec<bool>>,
    m: usize,
}

impl<S: Scalar> Default for BatchNormCache<S> {
    fn default() -> Self {
        BatchNormCache {
            normalized: Vec::new(),
            inv_std: Vec::new(),
            mask: None,
            m: 0,
        }
    }
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(channels: usize, mode: NormMode) -> Self {
        BatchNorm {
            gamma: Tensor::filled(&[channels], S::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], S::one()),
            momentum: 0.9,
            eps: 1e-5,
            mode,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check_input(&self, input: &Tensor<S>) -> Result<(usize, usize)> {
        let c = *input
            .shape()
            .last()
            .ok_or_else(|| Error::shape("batchnorm needs rank >= 1"))?;
        if c != self.channels() {
            return Err(Error::shape(format!(
                "batchnorm has {} channels, input has {c}",
                self.channels()
            )));
        }
        Ok((input.len() / c, c))
    }

    /// Training-mode forward over all rows. `row_mask[r] = false` excludes a
    /// row from the moments and zeroes its cache entry (used for padded
    /// pillar rows).
    pub fn forward_train(
        &mut self,
        input: &Tensor<S>,
        row_mask: Option<&[bool]>,
    ) -> Result<(Tensor<S>, BatchNormCache<S>)> {
        let (rows, c) = self.check_input(input)?;
        if self.mode == NormMode::Identity {
            return Ok((
                input.clone(),
                BatchNormCache {
                    normalized: Vec::new(),
                    inv_std: Vec::new(),
                    mask: None,
                    m: 0,
                },
            ));
        }
        if let Some(mask) = row_mask {
            if mask.len() != rows {
                return Err(Error::shape("row mask length mismatch"));
            }
        }
        let m = match row_mask {
            Some(mask) => mask.iter().filter(|&&b| b).count(),
            None => rows,
        };
        if m == 0 {
            return Err(Error::arg("batchnorm needs at least one active row"));
        }
        let x = input.data();
        let m_s = sc::<S>(m as f64);

        let mut mean = vec![S::zero(); c];
        for r in 0..rows {
            if row_mask.is_some_and(|mask| !mask[r]) {
                continue;
            }
            for j in 0..c {
                mean[j] += x[r * c + j];
            }
        }
        for v in mean.iter_mut() {
            *v /= m_s;
        }
        let mut var = vec![S::zero(); c];
        for r in 0..rows {
            if row_mask.is_some_and(|mask| !mask[r]) {
                continue;
            }
            for j in 0..c {
                let d = x[r * c + j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= m_s;
        }

        let mom = sc::<S>(self.momentum);
        let inv_mom = S::one() - mom;
        for j in 0..c {
            let rm = self.running_mean.data_mut();
            rm[j] = mom * rm[j] + inv_mom * mean[j];
            let rv = self.running_var.data_mut();
            rv[j] = mom * rv[j] + inv_mom * var[j];
        }

        let eps = sc::<S>(self.eps);
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let g = self.gamma.data();
        let b = self.beta.data();
        let mut out = vec![S::zero(); x.len()];
        let mut normalized = vec![S::zero(); x.len()];
        for r in 0..rows {
            if row_mask.is_some_and(|mask| !mask[r]) {
                continue;
            }
            for j in 0..c {
                let xh = (x[r * c + j] - mean[j]) * inv_std[j];
                normalized[r * c + j] = xh;
                out[r * c + j] = g[j] * xh + b[j];
            }
        }
        let out = Tensor::from_vec(input.shape(), out)?;
        out.check_finite("batchnorm")?;
        Ok((
            out,
            BatchNormCache {
                normalized,
                inv_std,
                mask: row_mask.map(|mask| mask.to_vec()),
                m,
            },
        ))
    }

    /// Eval-mode forward using running statistics.
    pub fn forward_eval(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let (rows, c) = self.check_input(input)?;
        if self.mode == NormMode::Identity {
            return Ok(input.clone());
        }
        let eps = sc::<S>(self.eps);
        let x = input.data();
        let rm = self.running_mean.data();
        let rv = self.running_var.data();
        let g = self.gamma.data();
        let b = self.beta.data();
        let mut out = vec![S::zero(); x.len()];
        for r in 0..rows {
            for j in 0..c {
                let inv = S::one() / (rv[j] + eps).sqrt();
                out[r * c + j] = g[j] * (x[r * c + j] - rm[j]) * inv + b[j];
            }
        }
        let out = Tensor::from_vec(input.shape(), out)?;
        out.check_finite("batchnorm_eval")?;
        Ok(out)
    }

    /// Training-mode backward; accumulates gamma/beta grads and returns the
    /// input gradient.
    pub fn backward(&mut self, cache: &BatchNormCache<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        if self.mode == NormMode::Identity {
            return Ok(grad_out.clone());
        }
        let c = self.channels();
        let rows = grad_out.len() / c;
        let go = grad_out.data();
        let m_s = sc::<S>(cache.m as f64);

        let mut d_gamma = vec![S::zero(); c];
        let mut d_beta = vec![S::zero(); c];
        for r in 0..rows {
            if cache.mask.as_ref().is_some_and(|mask| !mask[r]) {
                continue;
            }
            for j in 0..c {
                let g = go[r * c + j];
                d_gamma[j] += g * cache.normalized[r * c + j];
                d_beta[j] += g;
            }
        }

        let gamma = self.gamma.data().to_vec();
        let mut d_in = vec![S::zero(); go.len()];
        for r in 0..rows {
            if cache.mask.as_ref().is_some_and(|mask| !mask[r]) {
                continue;
            }
            for j in 0..c {
                let g = go[r * c + j];
                let xh = cache.normalized[r * c + j];
                d_in[r * c + j] = gamma[j] * cache.inv_std[j]
                    * (g - d_beta[j] / m_s - xh * d_gamma[j] / m_s);
            }
        }

        self.gamma.accumulate_grad(&d_gamma);
        self.beta.accumulate_grad(&d_beta);
        Tensor::from_vec(grad_out.shape(), d_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_mode_is_a_pass_through() {
        let mut bn = BatchNorm::<f64>::new(3, NormMode::Identity);
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        let (y, cache) = bn.forward_train(&x, None).unwrap();
        assert_eq!(y.data(), x.data());
        let g = Tensor::filled(&[2, 3], 1.0);
        let d = bn.backward(&cache, &g).unwrap();
        assert_eq!(d.data(), g.data());
    }

    #[test]
    fn train_mode_zero_mean_unit_var() {
        let mut bn = BatchNorm::<f64>::new(1, NormMode::Batch);
        let x = Tensor::from_vec(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = bn.forward_train(&x, None).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        let var: f64 = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-4); // eps shrinks it slightly
    }

    #[test]
    fn masked_rows_do_not_contaminate_moments() {
        let mut bn = BatchNorm::<f64>::new(1, NormMode::Batch);
        let x = Tensor::from_vec(&[3, 1], vec![1.0, 3.0, 1e9]).unwrap();
        let mask = [true, true, false];
        let (y, _) = bn.forward_train(&x, Some(&mask)).unwrap();
        // mean 2, var 1 over the two active rows
        assert!((y.at(&[0, 0]) + 1.0).abs() < 1e-4);
        assert!((y.at(&[1, 0]) - 1.0).abs() < 1e-4);
        assert_eq!(y.at(&[2, 0]), 0.0);
    }

    #[test]
    fn running_stats_feed_eval_mode() {
        let mut bn = BatchNorm::<f64>::new(1, NormMode::Batch);
        bn.momentum = 0.0; // running stats become the batch stats directly
        let x = Tensor::from_vec(&[2, 1], vec![0.0, 2.0]).unwrap();
        let _ = bn.forward_train(&x, None).unwrap();
        assert_eq!(bn.running_mean.data(), &[1.0]);
        let y = bn.forward_eval(&x).unwrap();
        assert!((y.at(&[0, 0]) + 1.0).abs() < 1e-2);
    }
}
