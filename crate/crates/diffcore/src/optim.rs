use std::collections::BTreeMap;

use crate::exec::Gradients;
use crate::params::ParamSet;

/// Adam with bias correction. Moment buffers are created lazily per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter that has a gradient entry.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in &grads.params {
            let Some(p) = params.get_mut(name) else {
                continue;
            };
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![1.0, -1.0]));
        let mut g = Gradients::default();
        g.params.insert("w".into(), Tensor::vector(vec![0.5, -2.0]));
        let mut adam = Adam::new(0.1);
        adam.step(&mut p, &g);
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_params_untouched() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![0.25]));
        let mut g = Gradients::default();
        g.params.insert("w".into(), Tensor::vector(vec![0.0]));
        let mut adam = Adam::new(1e-3);
        for _ in 0..5 {
            adam.step(&mut p, &g);
        }
        assert_eq!(p.get("w").unwrap().data(), &[0.25]);
    }
}
