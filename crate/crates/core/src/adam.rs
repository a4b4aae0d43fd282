//! Adam optimizer with a stepped learning-rate decay.
//!
//! Defaults: lr 0.0002, decayed by 0.8 every 15 epochs; beta1 0.9,
//! beta2 0.999, eps 1e-8.

use crate::error::{Error, Result};
use crate::tensor::{sc, Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    pub step: u64,
    pub epoch: u64,
    pub base_lr: f64,
    pub decay: f64,
    pub decay_every_epochs: u64,
    first_moment: Vec<Vec<S>>,
    second_moment: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(base_lr: f64) -> Self {
        AdamState {
            step: 0,
            epoch: 0,
            base_lr,
            decay: 0.8,
            decay_every_epochs: 15,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Learning rate after the stepped decay schedule.
    pub fn effective_lr(&self) -> f64 {
        let drops = if self.decay_every_epochs == 0 {
            0
        } else {
            self.epoch / self.decay_every_epochs
        };
        self.base_lr * self.decay.powi(drops as i32)
    }

    pub fn set_epoch(&mut self, epoch: u64) {
        self.epoch = epoch;
    }

    /// One Adam update over a fixed-order parameter list. Gradients are read
    /// from each tensor's grad buffer; tensors without a gradient are
    /// treated as zero-gradient (their moments still decay).
    pub fn step(&mut self, params: &mut [&mut Tensor<S>]) -> Result<()> {
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![S::zero(); p.len()]).collect();
            self.second_moment = params.iter().map(|p| vec![S::zero(); p.len()]).collect();
        }
        if self.first_moment.len() != params.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step;
        let lr = sc::<S>(self.effective_lr());
        let b1 = sc::<S>(ADAM_BETA1);
        let b2 = sc::<S>(ADAM_BETA2);
        let eps = sc::<S>(ADAM_EPS);
        let corr1 = S::one() - sc::<S>(ADAM_BETA1.powi(t as i32));
        let corr2 = S::one() - sc::<S>(ADAM_BETA2.powi(t as i32));

        for (pi, p) in params.iter_mut().enumerate() {
            if self.first_moment[pi].len() != p.len() {
                return Err(Error::shape(format!(
                    "moment buffer {pi} has {} entries, parameter has {}",
                    self.first_moment[pi].len(),
                    p.len()
                )));
            }
            let grad: Vec<S> = match p.grad() {
                Some(g) => g.to_vec(),
                None => vec![S::zero(); p.len()],
            };
            let m = &mut self.first_moment[pi];
            let v = &mut self.second_moment[pi];
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (S::one() - b1) * g;
                v[i] = b2 * v[i] + (S::one() - b2) * g * g;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::from_vec(&[2], vec![1.0f64, -2.0]).unwrap();
        p.grad_mut(); // allocated, all zero
        let mut state = AdamState::new(0.0002);
        state.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn single_step_matches_textbook_update() {
        // g = 1: m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let mut p = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        p.accumulate_grad(&[1.0]);
        let mut state = AdamState::new(0.0002);
        state.step(&mut [&mut p]).unwrap();
        let expected = -0.0002 * 1.0 / (1.0 + ADAM_EPS);
        assert!((p.data()[0] - expected).abs() < 1e-15, "{}", p.data()[0]);
    }

    #[test]
    fn two_steps_match_scalar_hand_computation() {
        let mut p = Tensor::from_vec(&[1], vec![0.5f64]).unwrap();
        let lr = 0.0002;
        let mut state = AdamState::new(lr);

        // Hand-rolled reference for constant gradient 2.0.
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.5f64);
        for t in 1..=2u32 {
            let g = 2.0;
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g;
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m / (1.0 - ADAM_BETA1.powi(t as i32));
            let v_hat = v / (1.0 - ADAM_BETA2.powi(t as i32));
            x -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }

        for _ in 0..2 {
            p.zero_grad();
            p.accumulate_grad(&[2.0]);
            state.step(&mut [&mut p]).unwrap();
        }
        assert!((p.data()[0] - x).abs() < 1e-15);
    }

    #[test]
    fn lr_decays_by_0_8_every_15_epochs() {
        let mut state = AdamState::<f64>::new(0.0002);
        assert_eq!(state.effective_lr(), 0.0002);
        state.set_epoch(14);
        assert_eq!(state.effective_lr(), 0.0002);
        state.set_epoch(15);
        assert!((state.effective_lr() - 0.0002 * 0.8).abs() < 1e-18);
        state.set_epoch(30);
        assert!((state.effective_lr() - 0.0002 * 0.8 * 0.8).abs() < 1e-18);
    }
}
