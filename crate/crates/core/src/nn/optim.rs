use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::{Parameterized, Real};

/// `lr(t) = base · ½(1 + cos(π·t/T))`, held at 0 past `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, total_steps: usize) -> Self {
        Self {
            base_lr,
            total_steps,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.base_lr;
        }
        if step == 0 {
            return self.base_lr;
        }
        let t = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter name and
/// created lazily on first update.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (ArrayD<F>, ArrayD<F>)>,
}

impl<F: Real> Default for Adam<F> {
    fn default() -> Self {
        Self::new(AdamConfig::default())
    }
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` to every parameter whose
    /// full name satisfies `include`. Others are not touched.
    pub fn step(
        &mut self,
        module: &mut dyn Parameterized<F>,
        prefix: &str,
        lr: f64,
        include: &dyn Fn(&str) -> bool,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (F::of(beta1), F::of(beta2));
        let (one_b1, one_b2) = (F::of(1.0 - beta1), F::of(1.0 - beta2));
        let step_size = F::of(lr / bc1);
        let inv_bc2 = F::of(1.0 / bc2);
        let eps = F::of(eps);
        let moments = &mut self.moments;
        module.visit_params_mut(prefix, &mut |name, p| {
            if !include(name) {
                return;
            }
            let (m, v) = moments.entry(name.to_string()).or_insert_with(|| {
                (ArrayD::zeros(p.value.raw_dim()), ArrayD::zeros(p.value.raw_dim()))
            });
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    *w -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
                });
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Param, Parameterized};

    #[test]
    fn cosine_endpoints() {
        let s = CosineSchedule::new(1e-4, 100);
        assert_eq!(s.lr(0), 1e-4);
        assert!(s.lr(100).abs() < 1e-20);
        assert!((s.lr(50) - 5e-5).abs() < 1e-18);
        assert!(s.lr(500).abs() < 1e-20);
    }

    #[test]
    fn cosine_is_nonincreasing() {
        let s = CosineSchedule::new(3e-3, 37);
        for t in 0..40 {
            assert!(s.lr(t + 1) <= s.lr(t));
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // With bias correction the first step is lr · g/|g| (up to ε).
        let mut d = Dense::<f64>::zeros(1, 1);
        d.weight = Param::new(ndarray::arr2(&[[3.0]]).into_dyn());
        d.weight.grad.fill(6.0);
        let mut adam = Adam::default();
        adam.step(&mut d, "", 0.1, &|_| true);
        assert!((d.weight.value[[0, 0]] - 2.9).abs() < 1e-8);
    }

    #[test]
    fn excluded_parameters_untouched() {
        let mut d = Dense::<f64>::zeros(2, 2);
        d.weight.grad.fill(1.0);
        d.bias.grad.fill(1.0);
        let mut adam = Adam::default();
        adam.step(&mut d, "layer", 0.1, &|n| n == "layer.weight");
        assert!(d.weight.value.iter().all(|&w| w != 0.0));
        assert!(d.bias.value.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn minimizes_quadratic() {
        let mut d = Dense::<f64>::zeros(1, 1);
        d.weight.value.fill(3.0);
        let mut adam = Adam::default();
        for _ in 0..2000 {
            Parameterized::zero_grad(&mut d);
            let w = d.weight.value[[0, 0]];
            d.weight.grad.fill(2.0 * w);
            adam.step(&mut d, "", 0.05, &|_| true);
        }
        assert!(d.weight.value[[0, 0]].abs() < 1e-2);
    }
}
