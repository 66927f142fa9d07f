//! First-order optimizers over a [`ParamStore`].

use crate::autograd::{Grads, ParamStore};
use crate::tensor::Real;

pub trait Optimizer<T: Real> {
    /// Updates every trainable parameter that has a gradient.
    fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>);
}

/// SGD with heavy-ball momentum and coupled L2 weight decay:
/// `g ← g + wd·θ; v ← μ·v + g; θ ← θ − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Vec<T>>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self { lr, momentum, weight_decay, velocity: Vec::new() }
    }
}

impl<T: Real> Optimizer<T> for Sgd<T> {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>) {
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), None);
        }
        let (lr, mu, wd) = (T::of(self.lr), T::of(self.momentum), T::of(self.weight_decay));
        for (id, g) in grads.iter() {
            let entry = &mut params.entries_mut()[id.index()];
            if !entry.trainable {
                continue;
            }
            let theta = entry.value.data_mut();
            let v = self.velocity[id.index()].get_or_insert_with(|| vec![T::zero(); theta.len()]);
            for ((t, vi), &gi) in theta.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                let d = gi + wd * *t;
                *vi = mu * *vi + d;
                *t -= lr * *vi;
            }
        }
    }
}

/// Adam with bias correction; no weight decay unless `weight_decay > 0`
/// (then added to the gradient).
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, weight_decay: 0.0, step: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

impl<T: Real> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>) {
        if self.moments.len() < params.len() {
            self.moments.resize(params.len(), None);
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (lr, eps, wd) = (T::of(self.lr), T::of(self.eps), T::of(self.weight_decay));
        for (id, g) in grads.iter() {
            let entry = &mut params.entries_mut()[id.index()];
            if !entry.trainable {
                continue;
            }
            let theta = entry.value.data_mut();
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (vec![T::zero(); theta.len()], vec![T::zero(); theta.len()]));
            for (((th, mi), vi), &gi) in theta.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                let gi = gi + wd * *th;
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *th -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
