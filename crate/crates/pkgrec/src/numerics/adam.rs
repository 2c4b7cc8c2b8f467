use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Adam hyperparameters. The defaults match the common published constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment state plus the shared step counter.
///
/// Slots are positional: the caller registers each parameter once (in a fixed
/// order) and then passes gradients in that same order every step.
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    names: Vec<String>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            m: Vec::new(),
            v: Vec::new(),
            names: Vec::new(),
            t: 0,
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Register a parameter slot; returns its index.
    pub fn register(&mut self, name: &str, len: usize) -> usize {
        self.m.push(vec![0.0; len]);
        self.v.push(vec![0.0; len]);
        self.names.push(name.to_string());
        self.m.len() - 1
    }

    /// One update over all registered parameters. `params` and `grads` must
    /// line up with the registration order.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::data(format!(
                "optimizer step got {} params / {} grads for {} registered slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (slot, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            if param.len() != self.m[slot].len() || grad.len() != self.m[slot].len() {
                return Err(Error::Shape {
                    name: self.names[slot].clone(),
                    expected: vec![self.m[slot].len()],
                    got: vec![param.len(), grad.len()],
                });
            }
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for ((p, g), (mi, vi)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param_adam(lr: f64) -> (Adam, Tensor) {
        let mut opt = Adam::new(AdamConfig {
            lr,
            ..AdamConfig::default()
        });
        opt.register("w", 3);
        (opt, Tensor::vector(vec![0.5, -0.25, 1.0]))
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let (mut opt, mut w) = one_param_adam(0.001);
        let before = w.data().to_vec();
        opt.step(&mut [&mut w], &[Tensor::zeros(vec![3])]).unwrap();
        assert_eq!(w.data(), &before[..]);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // With bias correction, the first step reduces to
        // -lr * g / (|g| + eps): m_hat = g and v_hat = g^2 exactly.
        let (mut opt, mut w) = one_param_adam(0.001);
        let before = w.data().to_vec();
        let g = Tensor::vector(vec![0.3, -0.7, 0.0001]);
        opt.step(&mut [&mut w], &[g.clone()]).unwrap();
        for i in 0..3 {
            let gi: f64 = g.data()[i];
            let expected = -0.001 * gi / (gi.abs() + 1e-8);
            assert!(
                (w.data()[i] - (before[i] + expected)).abs() < 1e-15,
                "elem {i}"
            );
        }
    }

    #[test]
    fn two_steps_match_reference_recurrence() {
        // Independent scalar recurrence, written out long-hand.
        let lr = 0.01;
        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let grads = [0.4, -0.2];
        let mut p_ref = 2.0;
        let (mut m, mut v) = (0.0, 0.0);
        for (step, g) in grads.iter().enumerate() {
            let t = (step + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat: f64 = v / (1.0 - b2.powi(t));
            p_ref -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut opt = Adam::new(AdamConfig {
            lr,
            ..AdamConfig::default()
        });
        opt.register("w", 1);
        let mut w = Tensor::vector(vec![2.0]);
        for g in grads {
            opt.step(&mut [&mut w], &[Tensor::vector(vec![g])]).unwrap();
        }
        assert!((w.data()[0] - p_ref).abs() < 1e-15);
        assert_eq!(opt.step_count(), 2);
    }

    #[test]
    fn shape_mismatch_names_parameter() {
        let (mut opt, mut w) = one_param_adam(0.001);
        let err = opt
            .step(&mut [&mut w], &[Tensor::zeros(vec![2])])
            .unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
    }

    #[test]
    fn slot_count_mismatch_is_an_error() {
        let (mut opt, mut w) = one_param_adam(0.001);
        let err = opt.step(&mut [&mut w], &[]).unwrap_err();
        assert!(err.to_string().contains("registered"), "{err}");
    }
}
