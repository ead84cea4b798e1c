//! First-order optimizers over lists of parameter tensors.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in tensor {tensor} at entry {index}")]
    NonFinite { tensor: usize, index: usize },
    #[error("{grads} gradients for {params} parameter tensors")]
    Shape { params: usize, grads: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const RMSPROP_RHO: f64 = 0.99;
pub const EPS: f64 = 1e-8;

/// Moment accumulators and step counter.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

fn check(params: &[&mut Array2<f64>], grads: &[Array2<f64>]) -> Result<(), OptimError> {
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.dim() != g.dim()) {
        return Err(OptimError::Shape {
            params: params.len(),
            grads: grads.len(),
        });
    }
    for (t, g) in grads.iter().enumerate() {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(OptimError::NonFinite { tensor: t, index: i });
        }
    }
    Ok(())
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Forgets all moments, e.g. after the parameter shapes change.
    pub fn reset(&mut self) {
        *self = Optimizer::new(self.kind);
    }

    /// One descent step `θ ← θ − η·update(g)`. Pass negated gradients to ascend.
    pub fn step(&mut self, mut params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>], lr: f64) -> Result<(), OptimError> {
        check(&params, grads)?;
        if self.first.len() != grads.len() || self.first.iter().zip(grads).any(|(m, g)| m.dim() != g.dim()) {
            self.first = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
            self.second = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
            self.step = 0;
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    Zip::from(&mut **p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                    });
                }
            }
            OptimizerKind::Rmsprop => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.second) {
                    Zip::from(&mut **p).and(g).and(v).for_each(|p, &g, v| {
                        *v = RMSPROP_RHO * *v + (1.0 - RMSPROP_RHO) * g * g;
                        *p -= lr * g / (v.sqrt() + EPS);
                    });
                }
            }
        }
        Ok(())
    }
}

/// `η⁽⁰⁾ · 10^{−k/ν}`.
pub fn lr_schedule(eta0: f64, nu: f64, k: usize) -> f64 {
    eta0 * 0.1f64.powf(k as f64 / nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn schedule_values() {
        assert!((lr_schedule(3e-4, 10000.0, 10000) - 3e-5).abs() < 1e-18);
        assert_eq!(lr_schedule(3e-4, 10000.0, 0), 3e-4);
        assert!((lr_schedule(1.0, 100.0, 50) - 1.0 / 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Rmsprop] {
            let mut p = array![[1.0, -2.0]];
            let mut o = Optimizer::new(kind);
            o.step(vec![&mut p], &[Array2::zeros((1, 2))], 0.1).unwrap();
            assert_eq!(p, array![[1.0, -2.0]]);
        }
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let mut p = array![[0.0]];
        let mut o = Optimizer::new(OptimizerKind::Adam);
        o.step(vec![&mut p], &[array![[1.0]]], 1e-3).unwrap();
        assert!((p[[0, 0]] + 1e-3 / (1.0 + EPS)).abs() < 1e-18);
    }

    #[test]
    fn rmsprop_matches_reference_loop() {
        let g = 0.37;
        let lr = 1e-2;
        let mut p = array![[0.5]];
        let mut o = Optimizer::new(OptimizerKind::Rmsprop);
        let (mut x, mut v) = (0.5f64, 0.0f64);
        for _ in 0..100 {
            o.step(vec![&mut p], &[array![[g]]], lr).unwrap();
            v = 0.99 * v + 0.01 * g * g;
            x -= lr * g / (v.sqrt() + 1e-8);
        }
        assert!((p[[0, 0]] - x).abs() < 1e-15);
        // Late steps approach η·sign(g).
        let step = lr * g / ((0.99 * v + 0.01 * g * g).sqrt() + 1e-8);
        assert!((step - lr).abs() < 0.6 * lr);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = array![[0.0, 0.0]];
        let mut o = Optimizer::new(OptimizerKind::Adam);
        let e = o.step(vec![&mut p], &[array![[0.0, f64::NAN]]], 1e-3).unwrap_err();
        assert_eq!(e, OptimError::NonFinite { tensor: 0, index: 1 });
    }
}
