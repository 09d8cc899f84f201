use rand::Rng;

use super::{activation_backward, dropout, Activation, Param, Parameterized};
use crate::error::{Error, Result};
use crate::matrix::{add_matmul_tn, matmul, matmul_nt, Matrix};

/// Glorot/Xavier uniform initialization on `[-√(6/(in+out)), √(6/(in+out))]`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit))
}

/// `X W + b`, with the bias broadcast over rows.
pub fn linear_forward(x: &Matrix, w: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if x.cols() != w.rows() || bias.len() != w.cols() {
        return Err(Error::shape(format!(
            "linear layer {}x{} (+{} bias) applied to {} columns",
            w.rows(),
            w.cols(),
            bias.len(),
            x.cols()
        )));
    }
    let mut out = matmul(x, w)?;
    for r in 0..out.rows() {
        for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
            *o += b;
        }
    }
    out.ensure_finite("linear layer")?;
    Ok(out)
}

/// Gradients of `X W + b` given the upstream gradient `dy`.
#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Vec<f64>,
}

pub fn linear_backward(x: &Matrix, w: &Matrix, dy: &Matrix) -> Result<LinearGrads> {
    let mut dw = Matrix::zeros(w.rows(), w.cols());
    add_matmul_tn(&mut dw, x, dy)?;
    Ok(LinearGrads {
        dx: matmul_nt(dy, w)?,
        dw,
        db: dy.column_sums(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), glorot_uniform(fan_in, fan_out, rng)),
            bias: Param::new(format!("{name}.bias"), Matrix::zeros(1, fan_out)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        linear_forward(x, &self.weight.value, self.bias.value.as_slice())
    }

    /// Accumulates parameter gradients; returns `dx`.
    pub fn backward(&mut self, x: &Matrix, dy: &Matrix) -> Result<Matrix> {
        add_matmul_tn(&mut self.weight.grad, x, dy)?;
        for (g, s) in self.bias.grad.as_mut_slice().iter_mut().zip(dy.column_sums()) {
            *g += s;
        }
        matmul_nt(dy, &self.weight.value)
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Stack of linear layers; hidden layers apply `activation` then dropout, the
/// last layer is affine only.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    masks: Vec<Option<Matrix>>,
}

impl Mlp {
    /// `dims = [in, h₁, …, out]` gives `dims.len() − 1` layers.
    pub fn new(name: &str, dims: &[usize], activation: Activation, dropout: f64, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self {
            layers,
            activation,
            dropout,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_dim)
    }

    pub fn forward(&self, x: &Matrix, rng: Option<&mut (dyn rand::RngCore + '_)>) -> Result<(Matrix, MlpCache)> {
        let mut rng = rng;
        let mut cache = MlpCache::default();
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h)?;
            cache.inputs.push(h);
            if i == last {
                h = z;
                break;
            }
            let a = z.map(|v| self.activation.apply(v));
            cache.pre.push(z);
            let (out, mask) = match rng.as_deref_mut() {
                Some(r) => dropout(&a, self.dropout, r, true)?,
                None => (a, None),
            };
            cache.masks.push(mask);
            h = out;
        }
        Ok((h, cache))
    }

    pub fn backward(&mut self, cache: &MlpCache, dy: &Matrix) -> Result<Matrix> {
        let mut grad = dy.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                if let Some(mask) = &cache.masks[i] {
                    grad.hadamard_assign(mask);
                }
                grad = activation_backward(&cache.pre[i], &grad, self.activation);
            }
            grad = self.layers[i].backward(&cache.inputs[i], &grad)?;
        }
        Ok(grad)
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
