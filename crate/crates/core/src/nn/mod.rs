//! Dense layers with hand-written backward passes.
//!
//! Each layer's forward returns a cache holding whatever its backward needs;
//! backward accumulates into the `grad` of every [`Param`] it owns and returns
//! the gradient with respect to its input.

mod activation;
mod checkpoint;
mod dropout;
mod gradcheck;
mod layers;
mod loss;
mod optim;

pub use activation::{activation, activation_backward, Activation};
pub use checkpoint::{load_params, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use dropout::{dropout, dropout_mask};
pub use gradcheck::{grad_check, GradCheck, GRAD_CHECK_FLOOR};
pub use layers::{glorot_uniform, linear_backward, linear_forward, Linear, LinearGrads, Mlp, MlpCache};
pub(crate) use loss::softmax_in_place;
pub use loss::{argmax_rows, cross_entropy, log_softmax_rows, softmax_rows};
pub use optim::{adam_step, Optimizer, OptimizerConfig, OptimizerKind};

use crate::matrix::Matrix;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Anything that owns [`Param`]s, visited in a fixed order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
