use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Parameterized;

/// Scale below which gradient magnitudes are compared in absolute terms.
///
/// Central differences at `h = 1e−5` carry roughly `1e−10` of absolute
/// error, so a pure ratio is meaningless for near-zero gradients.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(parameter, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub coordinates: usize,
}

/// Compares the gradients currently stored on `model`'s parameters against
/// central differences of `loss`.
///
/// At most `per_param` coordinates are sampled from each parameter. The
/// error for one coordinate is `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
/// `loss` must be deterministic.
pub fn grad_check<M: Parameterized>(
    model: &mut M,
    loss: impl Fn(&M) -> f64,
    h: f64,
    per_param: usize,
    seed: u64,
) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (pi, &len) in sizes.iter().enumerate() {
        let coords: Vec<usize> = if len <= per_param {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, per_param).into_vec();
            c.sort_unstable();
            c
        };
        for j in coords {
            let (original, analytic) = {
                let p = &model.params()[pi];
                (p.value.as_slice()[j], p.grad.as_slice()[j])
            };
            model.params_mut()[pi].value.as_mut_slice()[j] = original + h;
            let up = loss(model);
            model.params_mut()[pi].value.as_mut_slice()[j] = original - h;
            let down = loss(model);
            model.params_mut()[pi].value.as_mut_slice()[j] = original;

            let numeric = (up - down) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            report.coordinates += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((model.params()[pi].name.clone(), j, analytic, numeric));
            }
        }
    }
    report
}
