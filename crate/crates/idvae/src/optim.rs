//! Adam optimizer with bias correction, one moment slot per named parameter.
//!
//! Slots are created lazily on first update, so a parameter set that is
//! never trained (e.g. the discriminator head in plain VAE mode) never
//! allocates state. The per-slot step counter makes bias correction exact
//! for phase-split schedules where different sets update at different times.

use std::collections::HashMap;

use crate::nets::NamedParam;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamParams {
    fn default() -> Self {
        // Betas (0.5, 0.999): the usual choice for adversarial training.
        AdamParams { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Slot {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

pub struct Adam {
    pub hyper: AdamParams,
    slots: HashMap<String, Slot>,
}

impl Adam {
    pub fn new(hyper: AdamParams) -> Adam {
        Adam { hyper, slots: HashMap::new() }
    }

    /// Apply one update to each parameter from its accumulated gradient.
    pub fn step(&mut self, params: &[NamedParam]) {
        let AdamParams { lr, beta1, beta2, eps } = self.hyper;
        for p in params {
            let grad = match p.tensor.grad() {
                Some(g) => g,
                None => continue,
            };
            let n = grad.len();
            let slot = self
                .slots
                .entry(p.name.clone())
                .or_insert_with(|| Slot { m: vec![0.0; n], v: vec![0.0; n], t: 0 });
            slot.t += 1;
            let bc1 = 1.0 - beta1.powi(slot.t as i32);
            let bc2 = 1.0 - beta2.powi(slot.t as i32);
            let mut values = p.tensor.value();
            for i in 0..n {
                let g = grad[i];
                slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
                slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.tensor.set_value(&values);
        }
    }

    /// Moment slots sorted by name, for checkpointing.
    pub fn entries(&self) -> Vec<(&str, &Slot)> {
        let mut v: Vec<_> = self.slots.iter().map(|(k, s)| (k.as_str(), s)).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    pub fn restore(&mut self, name: &str, slot: Slot) {
        self.slots.insert(name.to_string(), slot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn named(name: &str, shape: &[usize], data: Vec<f32>) -> NamedParam {
        NamedParam { name: name.into(), tensor: Tensor::param(shape, data) }
    }

    #[test]
    fn zero_grad_moves_nothing_from_fresh_state() {
        let p = named("w", &[3], vec![1.0, 2.0, 3.0]);
        let mut opt = Adam::new(AdamParams::default());
        opt.step(std::slice::from_ref(&p));
        assert_eq!(p.tensor.value(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        let p = named("w", &[1], vec![0.0]);
        p.tensor.accumulate_grad(&[1.0]);
        let mut opt = Adam::new(AdamParams { lr: 0.1, ..AdamParams::default() });
        opt.step(std::slice::from_ref(&p));
        let v = p.tensor.value()[0];
        assert!((v + 0.1).abs() < 1e-6, "first update {v}, expected -0.1");
    }

    #[test]
    fn matches_reference_over_random_steps() {
        // Independent straightforward re-implementation of the update rule.
        let mut rng = crate::rng::Rng::new(123);
        let hyper = AdamParams { lr: 3e-3, beta1: 0.9, beta2: 0.99, eps: 1e-8 };
        let p = named("w", &[4], vec![0.5, -0.5, 1.5, 0.0]);
        let mut opt = Adam::new(hyper);

        let mut theta = [0.5f32, -0.5, 1.5, 0.0];
        let mut m = [0.0f32; 4];
        let mut v = [0.0f32; 4];
        for t in 1..=100u64 {
            let grads: Vec<f32> = (0..4).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            p.tensor.zero_grad();
            p.tensor.accumulate_grad(&grads);
            opt.step(std::slice::from_ref(&p));
            for i in 0..4 {
                m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * grads[i];
                v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
                let mh = m[i] / (1.0 - hyper.beta1.powi(t as i32));
                let vh = v[i] / (1.0 - hyper.beta2.powi(t as i32));
                theta[i] -= hyper.lr * mh / (vh.sqrt() + hyper.eps);
            }
            let got = p.tensor.value();
            for i in 0..4 {
                assert!((got[i] - theta[i]).abs() < 1e-6, "step {t} coord {i}");
            }
        }
    }

    #[test]
    fn slots_survive_roundtrip() {
        let p = named("w", &[2], vec![0.0, 0.0]);
        p.tensor.accumulate_grad(&[0.3, -0.7]);
        let mut opt = Adam::new(AdamParams::default());
        opt.step(std::slice::from_ref(&p));
        let entries = opt.entries();
        assert_eq!(entries.len(), 1);
        let (name, slot) = (&entries[0].0, entries[0].1.clone());
        assert_eq!(*name, "w");
        assert_eq!(slot.t, 1);

        let mut opt2 = Adam::new(AdamParams::default());
        opt2.restore("w", slot);
        assert_eq!(opt2.entries().len(), 1);
    }
}
