use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Layer-wise and graph-wise combiners with fixed, node-independent weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaselineMode {
    /// Last step only.
    Sgc,
    /// Uniform average over all steps.
    S2gc,
    /// Geometric weights `β(1 − β)ˡ`.
    Gbp(f64),
    /// Column-wise concatenation of all steps.
    Sign,
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineMode::Sgc => "sgc",
            BaselineMode::S2gc => "s2gc",
            BaselineMode::Gbp(_) => "gbp",
            BaselineMode::Sign => "sign",
        })
    }
}

impl BaselineMode {
    /// Per-step weights for the averaging modes; `None` for SIGN.
    pub fn step_weights(self, steps: usize) -> Result<Option<Vec<f64>>> {
        Ok(match self {
            BaselineMode::Sgc => {
                let mut w = vec![0.0; steps + 1];
                w[steps] = 1.0;
                Some(w)
            }
            BaselineMode::S2gc => Some(vec![1.0 / (steps + 1) as f64; steps + 1]),
            BaselineMode::Gbp(b) => {
                if !(b > 0.0 && b < 1.0) {
                    return Err(Error::invalid(format!("gbp beta must lie in (0, 1), got {b}")));
                }
                Some((0..=steps).map(|l| b * (1.0 - b).powi(l as i32)).collect())
            }
            BaselineMode::Sign => None,
        })
    }

    /// Width of the combined matrix for `steps + 1` inputs of width `dim`.
    pub fn output_dim(self, dim: usize, steps: usize) -> usize {
        match self {
            BaselineMode::Sign => dim * (steps + 1),
            _ => dim,
        }
    }
}

/// Combines `[X⁽⁰⁾ … X⁽ᴷ⁾]` with the fixed weights of `mode`.
pub fn baseline_combine(stack: &[Matrix], mode: BaselineMode) -> Result<Matrix> {
    let Some(first) = stack.first() else {
        return Err(Error::invalid("cannot combine an empty stack"));
    };
    let steps = stack.len() - 1;
    match mode.step_weights(steps)? {
        None => Matrix::hconcat(&stack.iter().collect::<Vec<_>>()),
        Some(_) if mode == BaselineMode::Sgc => Ok(stack[steps].clone()),
        Some(weights) => {
            let mut out = Matrix::zeros(first.rows(), first.cols());
            for (m, w) in stack.iter().zip(weights) {
                out.add_scaled(m, w);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack() -> Vec<Matrix> {
        (0..3)
            .map(|k| Matrix::from_fn(2, 2, |r, c| (k * 4 + r * 2 + c) as f64))
            .collect()
    }

    #[test]
    fn sgc_takes_last() {
        let s = stack();
        assert_eq!(baseline_combine(&s, BaselineMode::Sgc).unwrap(), s[2]);
    }

    #[test]
    fn gbp_weights() {
        let w = BaselineMode::Gbp(0.5).step_weights(2).unwrap().unwrap();
        assert_eq!(w, vec![0.5, 0.25, 0.125]);
        assert!(BaselineMode::Gbp(0.0).step_weights(2).is_err());
    }

    #[test]
    fn s2gc_one_step_is_mean() {
        let s = stack();
        let got = baseline_combine(&s[..2], BaselineMode::S2gc).unwrap();
        let mut expect = s[0].clone();
        expect.add_scaled(&s[1], 1.0);
        expect.scale(0.5);
        assert!(got.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn sign_concatenates() {
        let s = stack();
        let got = baseline_combine(&s, BaselineMode::Sign).unwrap();
        assert_eq!(got.shape(), (2, 6));
        assert_eq!(got.row(1), &[2.0, 3.0, 6.0, 7.0, 10.0, 11.0]);
    }
}
