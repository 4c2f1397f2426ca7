//! Adam and parameter averaging.

use sgg_autodiff::{Float, Tensor};

use crate::nn::ParamSet;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Float> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Float> Adam<T> {
    pub fn new(params: &ParamSet<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { lr, beta1, beta2, eps, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step = T::of(self.lr / c1);
        let inv_c2 = T::of(1.0 / c2);
        let eps = T::of(self.eps);
        for (((p, g), m), v) in params.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            let pd = p.data_mut();
            for (((pi, &gi), mi), vi) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                *pi = *pi - step * *mi / ((*vi * inv_c2).sqrt() + eps);
            }
        }
    }
}

/// ema ← decay·ema + (1 − decay)·params
pub fn ema_update<T: Float>(ema: &mut ParamSet<T>, params: &ParamSet<T>, decay: f64) {
    let (d, one_d) = (T::of(decay), T::of(1.0 - decay));
    for (e, p) in ema.values_mut().iter_mut().zip(params.values()) {
        for (ei, &pi) in e.data_mut().iter_mut().zip(p.data()) {
            *ei = d * *ei + one_d * pi;
        }
    }
}
