//! Adam and SGD-with-momentum over groups of shared-storage tensors.

use crate::tensor::{Element, Tensor};

/// Adam with bias correction. Missing gradients count as zero.
pub struct Adam<E: Element> {
    params: Vec<Tensor<E>>,
    lr: E,
    beta1: E,
    beta2: E,
    eps: E,
    step: u64,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(params: Vec<Tensor<E>>, lr: f64) -> Self {
        let m = params.iter().map(|p| vec![E::zero(); p.numel()]).collect();
        let v = params.iter().map(|p| vec![E::zero(); p.numel()]).collect();
        Adam {
            params,
            lr: E::from_f64(lr),
            beta1: E::from_f64(0.9),
            beta2: E::from_f64(0.999),
            eps: E::from_f64(1e-8),
            step: 0,
            m,
            v,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = E::from_f64(lr);
    }

    pub fn lr(&self) -> f64 {
        self.lr.to_f64_lossy()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = E::one() - self.beta1.powi(t);
        let bc2 = E::one() - self.beta2.powi(t);
        for (i, p) in self.params.iter().enumerate() {
            let grad = p.grad().unwrap_or_else(|| vec![E::zero(); p.numel()]);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.update_data(|data| {
                for j in 0..data.len() {
                    let g = grad[j];
                    m[j] = self.beta1 * m[j] + (E::one() - self.beta1) * g;
                    v[j] = self.beta2 * v[j] + (E::one() - self.beta2) * g * g;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    data[j] = data[j] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            });
        }
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}

/// SGD with classical momentum: `v <- mu*v + g`, `p <- p - lr*v`.
pub struct SgdMomentum<E: Element> {
    params: Vec<Tensor<E>>,
    lr: E,
    momentum: E,
    step: u64,
    velocity: Vec<Vec<E>>,
}

impl<E: Element> SgdMomentum<E> {
    pub fn new(params: Vec<Tensor<E>>, lr: f64, momentum: f64) -> Self {
        let velocity = params.iter().map(|p| vec![E::zero(); p.numel()]).collect();
        SgdMomentum {
            params,
            lr: E::from_f64(lr),
            momentum: E::from_f64(momentum),
            step: 0,
            velocity,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = E::from_f64(lr);
    }

    pub fn lr(&self) -> f64 {
        self.lr.to_f64_lossy()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self) {
        self.step += 1;
        for (i, p) in self.params.iter().enumerate() {
            let grad = p.grad().unwrap_or_else(|| vec![E::zero(); p.numel()]);
            let v = &mut self.velocity[i];
            p.update_data(|data| {
                for j in 0..data.len() {
                    v[j] = self.momentum * v[j] + grad[j];
                    data[j] = data[j] - self.lr * v[j];
                }
            });
        }
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
