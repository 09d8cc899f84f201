use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Row-wise softmax with max-shift.
pub fn softmax_rows(s: &Matrix) -> Matrix {
    let mut out = s.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub fn log_softmax_rows(s: &Matrix) -> Matrix {
    let mut out = s.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Index of the largest entry per row; ties go to the lowest column.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Mean negative log-likelihood over the rows in `mask`.
///
/// `targets[i]` is the class of logits row `i`; only masked rows are read.
/// The gradient is `(softmax − onehot) / |mask|` on masked rows and zero
/// elsewhere.
pub fn cross_entropy(logits: &Matrix, targets: &[usize], mask: &[usize]) -> Result<(f64, Matrix)> {
    if mask.is_empty() {
        return Err(Error::invalid("cross entropy over an empty mask"));
    }
    if targets.len() != logits.rows() {
        return Err(Error::shape(format!(
            "{} targets for {} logit rows",
            targets.len(),
            logits.rows()
        )));
    }
    let c = logits.cols();
    let scale = 1.0 / mask.len() as f64;
    let mut grad = Matrix::zeros(logits.rows(), c);
    let mut loss = 0.0;
    for &i in mask {
        let t = targets[i];
        if t >= c {
            return Err(Error::invalid(format!("target class {t} with {c} logits")));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[t];
        let g = grad.row_mut(i);
        for (j, gv) in g.iter_mut().enumerate() {
            *gv = ((row[j] - lse).exp() - if j == t { 1.0 } else { 0.0 }) * scale;
        }
    }
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Matrix::from_rows(&[[3.0, 3.0, 3.0, 3.0]]));
        assert!(s.row(0).iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let t = softmax_rows(&Matrix::from_rows(&[[0.0, 2f64.ln()]]));
        assert!((t[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((t[(0, 1)] - 2.0 / 3.0).abs() < 1e-15);

        let row = Matrix::from_rows(&[[0.3, -1.2, 2.5]]);
        let shifted = row.map(|v| v + 1000.0);
        assert!(softmax_rows(&row).max_abs_diff(&softmax_rows(&shifted)) < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, _) = cross_entropy(&Matrix::from_rows(&[[1.0, 0.0]]), &[0], &[0]).unwrap();
        assert!((l - 0.313_261_687_518_222_8).abs() < 1e-12);

        let (l, _) = cross_entropy(&Matrix::from_rows(&[[1000.0, 0.0]]), &[0], &[0]).unwrap();
        assert!(l <= 1e-6);

        assert!(cross_entropy(&Matrix::zeros(2, 2), &[0, 1], &[]).is_err());
    }

    #[test]
    fn unmasked_rows_get_no_gradient() {
        let logits = Matrix::from_rows(&[[0.1, 0.2], [0.5, -0.5], [2.0, 1.0]]);
        let (_, g) = cross_entropy(&logits, &[1, 0, 1], &[0, 2]).unwrap();
        assert_eq!(g.row(1), &[0.0, 0.0]);
        for r in [0, 2] {
            assert!(g.row(r).iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = Matrix::from_rows(&[[0.3, -1.1, 0.8], [1.5, 0.2, -0.4], [-0.6, 0.0, 0.9]]);
        let targets = [2, 0, 1];
        let mask = [0, 1, 2];
        let (_, g) = cross_entropy(&logits, &targets, &mask).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            for j in 0..3 {
                let mut p = logits.clone();
                p[(i, j)] += h;
                let mut m = logits.clone();
                m[(i, j)] -= h;
                let num = (cross_entropy(&p, &targets, &mask).unwrap().0
                    - cross_entropy(&m, &targets, &mask).unwrap().0)
                    / (2.0 * h);
                let rel = (num - g[(i, j)]).abs() / num.abs().max(g[(i, j)].abs());
                assert!(rel <= 1e-6, "({i},{j}) {num} vs {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn argmax_ties_prefer_lowest() {
        let m = Matrix::from_rows(&[[1.0, 3.0, 3.0], [0.0, 0.0, 0.0]]);
        assert_eq!(argmax_rows(&m), vec![1, 0]);
    }
}
