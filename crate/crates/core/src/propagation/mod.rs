//! Parameter-free feature and label propagation.
//!
//! Everything here runs once before training: the feature stack
//! `[X⁽⁰⁾, …, X⁽ᴷ⁾]`, the label stack `[Y⁽⁰⁾, …, Y⁽ᴸ⁾]` seeded with training
//! labels only, and the last-residual smoothing of the label stack. Training
//! reads the stacks and never touches the graph again.

mod cache;

use std::f64::consts::PI;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{spmm, NormMode, PropagationOperator};
use crate::matrix::Matrix;

pub use cache::{cache_read, cache_read_checked, cache_write, CachedStack, CACHE_MAGIC, CACHE_VERSION};

/// Deepest propagation supported by default.
pub const MAX_STEPS: usize = 128;

/// SHA-256 digest identifying the inputs a stack was computed from.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Fingerprint(pub [u8; 32]);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

impl Fingerprint {
    /// Fingerprint of a stack cut down to `steps` steps.
    pub fn truncated(&self, steps: usize) -> Fingerprint {
        Hasher::default()
            .tag("truncated")
            .bytes(&self.0)
            .u64(steps as u64)
            .finish()
    }

    /// Fingerprint after [`remove_self_labels`].
    pub fn self_removed(&self) -> Fingerprint {
        Hasher::default().tag("self-removed").bytes(&self.0).finish()
    }

    /// Fingerprint after [`apply_uniform_residual`] with `scheme`.
    pub fn uniform_smoothed(&self, scheme: ResidualScheme) -> Fingerprint {
        Hasher::default()
            .tag("uniform-residual")
            .bytes(&self.0)
            .u64(u64::from(scheme.code()))
            .f64(scheme.fixed_alpha())
            .finish()
    }

    /// Fingerprint after [`apply_last_residual`] with `scheme`.
    pub fn smoothed(&self, scheme: ResidualScheme) -> Fingerprint {
        Hasher::default()
            .tag("residual")
            .bytes(&self.0)
            .u64(u64::from(scheme.code()))
            .f64(scheme.fixed_alpha())
            .finish()
    }
}

#[derive(Default)]
struct Hasher(Sha256);

impl Hasher {
    fn tag(mut self, t: &str) -> Self {
        self.0.update((t.len() as u64).to_le_bytes());
        self.0.update(t.as_bytes());
        self
    }

    fn u64(mut self, v: u64) -> Self {
        self.0.update(v.to_le_bytes());
        self
    }

    fn f64(mut self, v: f64) -> Self {
        self.0.update(v.to_bits().to_le_bytes());
        self
    }

    fn bytes(mut self, b: &[u8]) -> Self {
        self.0.update(b);
        self
    }

    fn operator(mut self, op: &PropagationOperator) -> Self {
        let n = op.num_nodes();
        self = self.u64(n as u64).u64(u64::from(op.mode().code()));
        for i in 0..n {
            let mut row = 0u64;
            for (j, _) in op.row_entries(i) {
                self.0.update((j as u64).to_le_bytes());
                row += 1;
            }
            self.0.update(row.to_le_bytes());
        }
        self
    }

    fn matrix(mut self, m: &Matrix) -> Self {
        self = self.u64(m.rows() as u64).u64(m.cols() as u64);
        for v in m.as_slice() {
            self.0.update(v.to_bits().to_le_bytes());
        }
        self
    }

    fn finish(self) -> Fingerprint {
        Fingerprint(self.0.finalize().into())
    }
}

/// Fingerprint of the graph structure, operator mode and seed matrix that a
/// propagation of `steps` steps depends on.
pub fn input_fingerprint(kind: &str, op: &PropagationOperator, seed: &Matrix, steps: usize) -> Fingerprint {
    Hasher::default()
        .tag(kind)
        .operator(op)
        .matrix(seed)
        .u64(steps as u64)
        .finish()
}

/// Propagated features `[X⁽⁰⁾ … X⁽ᴷ⁾]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub mats: Vec<Matrix>,
    pub mode: NormMode,
    pub fingerprint: Fingerprint,
}

impl FeatureStack {
    /// K, the number of propagation steps.
    pub fn steps(&self) -> usize {
        self.mats.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.mats[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.mats[0].cols()
    }

    /// The first `k + 1` matrices, as if propagation had stopped at step `k`.
    pub fn truncated(&self, k: usize) -> Result<FeatureStack> {
        if k > self.steps() {
            return Err(Error::invalid(format!(
                "cannot truncate a {}-step stack to {k} steps",
                self.steps()
            )));
        }
        Ok(FeatureStack {
            mats: self.mats[..=k].to_vec(),
            mode: self.mode,
            fingerprint: self.fingerprint.truncated(k),
        })
    }

    /// Every matrix rounded through `f32`, matching what a cache file stores.
    pub fn round_to_f32(&self) -> FeatureStack {
        FeatureStack {
            mats: self.mats.iter().map(Matrix::round_to_f32).collect(),
            ..self.clone()
        }
    }
}

fn check_steps(steps: usize) -> Result<()> {
    if steps > MAX_STEPS {
        return Err(Error::invalid(format!(
            "{steps} propagation steps exceeds the maximum of {MAX_STEPS}"
        )));
    }
    Ok(())
}

fn propagate(op: &PropagationOperator, seed: &Matrix, steps: usize) -> Result<Vec<Matrix>> {
    check_steps(steps)?;
    if seed.rows() != op.num_nodes() {
        return Err(Error::shape(format!(
            "seed has {} rows for a {}-node operator",
            seed.rows(),
            op.num_nodes()
        )));
    }
    let mut mats = Vec::with_capacity(steps + 1);
    mats.push(seed.clone());
    for k in 1..=steps {
        let next = spmm(op, &mats[k - 1])?;
        mats.push(next);
    }
    Ok(mats)
}

/// `X⁽ᵏ⁾ = Â X⁽ᵏ⁻¹⁾` for `k = 1..=steps`, computed iteratively.
pub fn propagate_features(op: &PropagationOperator, x0: &Matrix, steps: usize) -> Result<FeatureStack> {
    let mats = propagate(op, x0, steps)?;
    Ok(FeatureStack {
        mats,
        mode: op.mode(),
        fingerprint: input_fingerprint("features", op, x0, steps),
    })
}

/// One-hot rows for training nodes, zero rows elsewhere.
pub fn build_label_seed(labels: &[Option<usize>], train: &[usize], classes: usize) -> Result<Matrix> {
    let n = labels.len();
    let mut y = Matrix::zeros(n, classes);
    for &i in train {
        if i >= n {
            return Err(Error::NodeOutOfRange { id: i, n });
        }
        match labels[i] {
            Some(c) if c < classes => y[(i, c)] = 1.0,
            Some(c) => {
                return Err(Error::invalid(format!(
                    "node {i} has class {c} but only {classes} classes exist"
                )))
            }
            None => return Err(Error::Inconsistent(format!("training node {i} has no label"))),
        }
    }
    Ok(y)
}

/// How `Ŷ⁽ˡ⁾ = (1 − αₗ) Y⁽ˡ⁾ + αₗ Y⁽ᴸ⁾` picks `αₗ`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ResidualScheme {
    /// `αₗ = cos(πl / 2L)`
    Cosine,
    /// `αₗ = (L − l) / L`
    Linear,
    /// `αₗ = α` for every step.
    Fixed(f64),
}

impl ResidualScheme {
    pub fn code(self) -> u8 {
        match self {
            ResidualScheme::Cosine => 0,
            ResidualScheme::Linear => 1,
            ResidualScheme::Fixed(_) => 2,
        }
    }

    pub fn fixed_alpha(self) -> f64 {
        match self {
            ResidualScheme::Fixed(a) => a,
            _ => 0.0,
        }
    }

    pub fn from_parts(code: u8, alpha: f64) -> Option<Self> {
        match code {
            0 => Some(ResidualScheme::Cosine),
            1 => Some(ResidualScheme::Linear),
            2 => Some(ResidualScheme::Fixed(alpha)),
            _ => None,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            ResidualScheme::Fixed(a) if !(0.0..=1.0).contains(&a) => Err(Error::invalid(format!(
                "fixed residual weight must lie in [0, 1], got {a}"
            ))),
            _ => Ok(()),
        }
    }

    /// `α₀ … α_L`. With `L = 0` the single weight is 1.
    pub fn alphas(self, steps: usize) -> Vec<f64> {
        if steps == 0 {
            return vec![1.0];
        }
        let big_l = steps as f64;
        (0..=steps)
            .map(|l| match self {
                // cos(π/2) is 6e-17 in floating point; pin the endpoint.
                ResidualScheme::Cosine if l == steps => 0.0,
                ResidualScheme::Cosine => (PI * l as f64 / (2.0 * big_l)).cos(),
                ResidualScheme::Linear => (steps - l) as f64 / big_l,
                ResidualScheme::Fixed(a) => a,
            })
            .collect()
    }
}

impl fmt::Display for ResidualScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResidualScheme::Cosine => f.write_str("cosine"),
            ResidualScheme::Linear => f.write_str("linear"),
            ResidualScheme::Fixed(a) => write!(f, "fixed({a})"),
        }
    }
}

/// Propagated labels and, once [`apply_last_residual`] ran, their smoothed
/// counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelStack {
    pub mats: Vec<Matrix>,
    pub smoothed: Vec<Matrix>,
    pub scheme: Option<ResidualScheme>,
    pub mode: NormMode,
    pub fingerprint: Fingerprint,
}

impl LabelStack {
    /// L, the number of propagation steps.
    pub fn steps(&self) -> usize {
        self.mats.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.mats[0].rows()
    }

    pub fn num_classes(&self) -> usize {
        self.mats[0].cols()
    }

    pub fn is_smoothed(&self) -> bool {
        self.scheme.is_some()
    }

    /// Raw prefix up to step `l`; smoothing is dropped because `αₗ` depends on L.
    pub fn truncated(&self, l: usize) -> Result<LabelStack> {
        if l > self.steps() {
            return Err(Error::invalid(format!(
                "cannot truncate a {}-step label stack to {l} steps",
                self.steps()
            )));
        }
        Ok(LabelStack {
            mats: self.mats[..=l].to_vec(),
            smoothed: Vec::new(),
            scheme: None,
            mode: self.mode,
            fingerprint: self.fingerprint.truncated(l),
        })
    }

    pub fn round_to_f32(&self) -> LabelStack {
        LabelStack {
            mats: self.mats.iter().map(Matrix::round_to_f32).collect(),
            smoothed: self.smoothed.iter().map(Matrix::round_to_f32).collect(),
            ..self.clone()
        }
    }
}

/// `Y⁽ˡ⁾ = Â Y⁽ˡ⁻¹⁾` for `l = 1..=steps`. The smoothed list is left empty.
pub fn propagate_labels(op: &PropagationOperator, y0: &Matrix, steps: usize) -> Result<LabelStack> {
    let mats = propagate(op, y0, steps)?;
    Ok(LabelStack {
        mats,
        smoothed: Vec::new(),
        scheme: None,
        mode: op.mode(),
        fingerprint: input_fingerprint("labels", op, y0, steps),
    })
}

/// Removes each training node's own seed from its propagated label rows, so
/// that `Y⁽ˡ⁾ᵢ` is what node `i` would see if its row of `Y⁽⁰⁾` were zero.
///
/// Costs one sparse walk of `L` steps per training node.
pub fn remove_self_labels(
    op: &PropagationOperator,
    stack: &mut LabelStack,
    labels: &[Option<usize>],
    train: &[usize],
) -> Result<()> {
    let n = op.num_nodes();
    let steps = stack.steps();
    for &t in train {
        let class = labels
            .get(t)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Inconsistent(format!("training node {t} has no label")))?;
        let mut e = Matrix::zeros(n, 1);
        e[(t, 0)] = 1.0;
        stack.mats[0][(t, class)] = 0.0;
        for l in 1..=steps {
            e = spmm(op, &e)?;
            // (Âˡ e_t)_t = (Âˡ)_tt is the mass node t receives from itself.
            stack.mats[l][(t, class)] -= e[(t, 0)];
        }
    }
    stack.fingerprint = stack.fingerprint.self_removed();
    stack.smoothed.clear();
    stack.scheme = None;
    Ok(())
}

/// Fills `smoothed` with `Ŷ⁽ˡ⁾ = (1 − αₗ) Y⁽ˡ⁾ + αₗ Y⁽ᴸ⁾` for every `l = 0..=L`.
pub fn apply_last_residual(stack: &LabelStack, scheme: ResidualScheme) -> Result<LabelStack> {
    scheme.validate()?;
    let steps = stack.steps();
    let last = &stack.mats[steps];
    let smoothed = scheme
        .alphas(steps)
        .into_iter()
        .zip(&stack.mats)
        .enumerate()
        .map(|(l, (alpha, m))| {
            if l == steps || alpha == 0.0 {
                // (1 − 0)·Y + 0·Y⁽ᴸ⁾ is Y exactly; skip the arithmetic.
                return if l == steps { last.clone() } else { m.clone() };
            }
            let mut out = m.clone();
            out.scale(1.0 - alpha);
            out.add_scaled(last, alpha);
            out
        })
        .collect();
    Ok(LabelStack {
        mats: stack.mats.clone(),
        smoothed,
        scheme: Some(scheme),
        mode: stack.mode,
        fingerprint: stack.fingerprint.smoothed(scheme),
    })
}

/// Fills `smoothed` with `(1 − αₗ) Y⁽ˡ⁾ + αₗ U`, where `U` is the uniform
/// distribution over classes. This replaces the deepest label matrix with an
/// uninformative one and exists for ablations.
pub fn apply_uniform_residual(stack: &LabelStack, scheme: ResidualScheme) -> Result<LabelStack> {
    scheme.validate()?;
    let uniform = 1.0 / stack.num_classes() as f64;
    let smoothed = scheme
        .alphas(stack.steps())
        .into_iter()
        .zip(&stack.mats)
        .map(|(alpha, m)| m.map(|v| (1.0 - alpha) * v + alpha * uniform))
        .collect();
    Ok(LabelStack {
        mats: stack.mats.clone(),
        smoothed,
        scheme: Some(scheme),
        mode: stack.mode,
        fingerprint: stack.fingerprint.uniform_smoothed(scheme),
    })
}
