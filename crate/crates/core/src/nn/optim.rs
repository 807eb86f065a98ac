//! Adam and the multi-step learning-rate schedule.

use super::params::{ParamId, ParamKind, ParamStore};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    moments: Vec<Option<(Vec<f32>, Vec<f32>)>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every trainable parameter of `store` from its gradient.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        for id in store.ids().collect::<Vec<_>>() {
            if store.entry(id).kind != ParamKind::Trainable {
                continue;
            }
            let n = store.value(id).numel();
            let (m, v) = self.moments[id.index()].get_or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let grad = store.grad(id).data().to_vec();
            let value = store.value_mut(id).data_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                value[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }

    /// First and second moments of a parameter, if it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(&[f32], &[f32])> {
        self.moments.get(id.index()).and_then(|m| m.as_ref()).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    pub fn restore(&mut self, step: u64, id: ParamId, m: Vec<f32>, v: Vec<f32>) {
        self.step = step;
        if self.moments.len() <= id.index() {
            self.moments.resize(id.index() + 1, None);
        }
        self.moments[id.index()] = Some((m, v));
    }
}

/// Piecewise-constant schedule: the rate is multiplied by `factor` once for
/// every milestone that has been reached. Epochs count from zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiStepLr {
    pub initial: f32,
    pub milestones: Vec<usize>,
    pub factor: f32,
}

impl MultiStepLr {
    pub fn lr_at(&self, epoch: usize) -> f32 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.initial * self.factor.powi(passed as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_examples() {
        let s = MultiStepLr { initial: 1e-4, milestones: vec![20, 32, 40, 48, 56], factor: 0.5 };
        assert_eq!(s.lr_at(10), 1e-4);
        assert!((s.lr_at(33) - 2.5e-5).abs() < 1e-12);
        assert!((s.lr_at(63) - 1e-4 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap(), ParamKind::Trainable).unwrap();
        store.grad_mut(id).data_mut().copy_from_slice(&[3.0, -0.5]);
        let mut adam = Adam::new(0.01);
        adam.step(&mut store);
        let v = store.value(id).data();
        assert!((v[0] - 0.99).abs() < 1e-6);
        assert!((v[1] + 0.99).abs() < 1e-6);
    }
}
