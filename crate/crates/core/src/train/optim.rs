//! Polynomial learning-rate decay and SGD with momentum.

use crate::model::{DualStreamModel, ParamVisitor};

/// `lr0 * (1 - iter/max_iter)^power`.
///
/// The trainer passes `max_iter = total_steps - 1`, so the rate decreases
/// strictly and reaches exactly 0 on the final step.
pub fn poly_lr(iter: usize, max_iter: usize, lr0: f64, power: f64) -> f64 {
    assert!(max_iter >= 1, "poly_lr needs max_iter >= 1");
    assert!(iter <= max_iter, "iter {iter} beyond max_iter {max_iter}");
    lr0 * (1.0 - iter as f64 / max_iter as f64).powf(power)
}

/// Plain SGD with momentum: `v = mu * v + g`, `p -= lr * v`.
/// No dampening, no Nesterov lookahead, no weight decay.
pub struct SgdMomentum {
    pub momentum: f64,
    velocities: Vec<(String, Vec<f64>)>,
}

impl SgdMomentum {
    pub fn new(momentum: f64) -> Self {
        Self { momentum, velocities: Vec::new() }
    }

    pub fn step(&mut self, model: &mut DualStreamModel, lr: f64) {
        struct Step<'a> {
            momentum: f64,
            lr: f64,
            velocities: &'a mut Vec<(String, Vec<f64>)>,
            index: usize,
        }
        impl ParamVisitor for Step<'_> {
            fn param(&mut self, name: &str, data: &mut [f64], grad: &mut [f64]) {
                if self.index == self.velocities.len() {
                    self.velocities.push((name.to_string(), vec![0.0; data.len()]));
                }
                let (vname, v) = &mut self.velocities[self.index];
                assert_eq!(vname, name, "parameter order changed under the optimizer");
                for ((p, &g), vel) in data.iter_mut().zip(grad.iter()).zip(v.iter_mut()) {
                    *vel = self.momentum * *vel + g;
                    *p -= self.lr * *vel;
                }
                self.index += 1;
            }
        }
        let mut s = Step { momentum: self.momentum, lr, velocities: &mut self.velocities, index: 0 };
        model.visit_params(&mut s);
    }

    pub fn velocities(&self) -> &[(String, Vec<f64>)] {
        &self.velocities
    }

    pub fn set_velocities(&mut self, v: Vec<(String, Vec<f64>)>) {
        self.velocities = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_lr_endpoints_and_midpoint() {
        assert_eq!(poly_lr(0, 100, 0.001, 0.9), 0.001);
        assert_eq!(poly_lr(100, 100, 0.001, 0.9), 0.0);
        assert!((poly_lr(50, 100, 0.001, 1.0) - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn poly_lr_is_strictly_decreasing() {
        let seq: Vec<f64> = (0..=40).map(|i| poly_lr(i, 40, 0.01, 0.9)).collect();
        assert!(seq.windows(2).all(|w| w[1] < w[0]));
    }
}
