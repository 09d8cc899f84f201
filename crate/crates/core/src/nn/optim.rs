use serde::{Deserialize, Serialize};

use super::Param;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient before the update.
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(lr)
        }
    }
}

/// Per-parameter moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub step: u64,
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Applies one update to `params` using their current gradients.
    /// Gradients are left in place; callers zero them.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.first_moment.is_empty() {
            self.first_moment = params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect();
            self.second_moment = self.first_moment.clone();
        }
        assert_eq!(
            self.first_moment.len(),
            params.len(),
            "parameter list changed between steps"
        );
        self.step += 1;
        let OptimizerConfig {
            kind,
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let Param { value, grad, .. } = &mut **p;
            match kind {
                OptimizerKind::Sgd => {
                    for (v, &g) in value.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                        *v -= lr * (g + weight_decay * *v);
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.first_moment[i].as_mut_slice();
                    let s = self.second_moment[i].as_mut_slice();
                    for (((v, &g), m), s) in value.as_mut_slice().iter_mut().zip(grad.as_slice()).zip(m).zip(s) {
                        let g = g + weight_decay * *v;
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *s = beta2 * *s + (1.0 - beta2) * g * g;
                        let m_hat = *m / c1;
                        let s_hat = *s / c2;
                        *v -= lr * m_hat / (s_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// One bias-corrected Adam (or SGD) update.
pub fn adam_step(params: &mut [&mut Param], state: &mut Optimizer) {
    state.step(params);
}
