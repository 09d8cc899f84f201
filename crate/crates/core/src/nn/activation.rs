use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

/// Elementwise nonlinearity, used both for hidden MLP layers and for the
/// attention score map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu(a) => {
                if z >= 0.0 {
                    z
                } else {
                    a * z
                }
            }
            Activation::Sigmoid => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative at the pre-activation `z`. Kinks take the right-hand slope.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if z >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Sigmoid => {
                let s = self.apply(z);
                s * (1.0 - s)
            }
        }
    }
}

pub fn activation(x: &Matrix, kind: Activation) -> Matrix {
    x.map(|z| kind.apply(z))
}

/// Gradient with respect to the pre-activation `z` given upstream `dy`.
pub fn activation_backward(z: &Matrix, dy: &Matrix, kind: Activation) -> Matrix {
    assert_eq!(z.shape(), dy.shape());
    let mut out = dy.clone();
    for (o, &zv) in out.as_mut_slice().iter_mut().zip(z.as_slice()) {
        *o *= kind.derivative(zv);
    }
    out
}
