use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Inverted-dropout mask: entries are `0` or `1 / (1 − rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut (impl Rng + ?Sized)) -> Result<Matrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Ok(Matrix::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < keep {
            scale
        } else {
            0.0
        }
    }))
}

/// Applies inverted dropout while training. Returns the output and the mask
/// that was used, or `None` when the call was the identity.
pub fn dropout(
    x: &Matrix,
    rate: f64,
    rng: &mut (impl Rng + ?Sized),
    training: bool,
) -> Result<(Matrix, Option<Matrix>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let mask = dropout_mask(x.rows(), x.cols(), rate, rng)?;
    let mut out = x.clone();
    out.hadamard_assign(&mask);
    Ok((out, Some(mask)))
}
