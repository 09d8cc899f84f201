//! Node-adaptive attention over propagation steps.
//!
//! Both mechanisms score each step `k` of a node with
//! `w̃ᵢ(k) = δ([Xᵢ⁽ᵏ⁾ ∥ refᵢ] · s)` and normalize the scores with a softmax
//! over steps. They differ in the reference vector:
//!
//! * recursive attention uses the running combination of the steps already
//!   folded in, refreshing every earlier weight at each step;
//! * JK attention uses an MLP embedding of all propagated steps at once.
//!
//! Since `[x ∥ r] · s = x · s_x + r · s_r`, scores are kept as the two partial
//! dot products `a` (step part) and `c` (reference part). Backward recomputes
//! the softmax from them instead of caching every intermediate weight vector.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{dropout_mask, Activation, Mlp, MlpCache, Param, Parameterized};

/// What JK attention scores each step against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceMode {
    /// MLP embedding of `X⁽¹⁾ ∥ … ∥ X⁽ᴷ⁾`.
    Jk,
    /// The unpropagated features `X⁽⁰⁾`.
    OriginFeature,
    /// A fixed standard-normal vector per node.
    NormalNoise,
    /// No reference; scores depend on the step features alone.
    None,
}

impl std::str::FromStr for ReferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jk" | "concat" => Ok(ReferenceMode::Jk),
            "origin_feature" => Ok(ReferenceMode::OriginFeature),
            "normal_noise" => Ok(ReferenceMode::NormalNoise),
            "none" | "no_reference" => Ok(ReferenceMode::None),
            other => Err(Error::invalid(format!("unknown reference mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReferenceMode::Jk => "jk",
            ReferenceMode::OriginFeature => "origin_feature",
            ReferenceMode::NormalNoise => "normal_noise",
            ReferenceMode::None => "none",
        })
    }
}

fn check_stack(xs: &[Matrix], dim: usize) -> Result<(usize, usize)> {
    let Some(first) = xs.first() else {
        return Err(Error::invalid("attention over an empty stack"));
    };
    let n = first.rows();
    for (k, m) in xs.iter().enumerate() {
        if m.shape() != (n, dim) {
            return Err(Error::shape(format!(
                "step {k} is {:?} but attention expects {n}x{dim}",
                m.shape()
            )));
        }
    }
    Ok((n, xs.len() - 1))
}

fn masks(
    count: usize,
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut Option<&mut (dyn RngCore + '_)>,
) -> Result<Vec<Option<Matrix>>> {
    (0..count)
        .map(|_| match rng.as_deref_mut() {
            Some(r) if rate > 0.0 => dropout_mask(rows, cols, rate, r).map(Some),
            _ => Ok(None),
        })
        .collect()
}

#[inline]
fn masked_dot(x: &[f64], mask: Option<&[f64]>, s: &[f64]) -> f64 {
    match mask {
        Some(m) => x.iter().zip(m).zip(s).map(|((x, m), s)| x * m * s).sum(),
        None => x.iter().zip(s).map(|(x, s)| x * s).sum(),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax of `δ(a_k + c)` over the given step scores, written into `w`.
/// Returns nothing; `z` receives the pre-activations.
#[inline]
fn score_softmax(a: &[f64], c: f64, act: Activation, z: &mut [f64], w: &mut [f64]) {
    for ((zk, wk), &ak) in z.iter_mut().zip(w.iter_mut()).zip(a) {
        *zk = ak + c;
        *wk = act.apply(*zk);
    }
    crate::nn::softmax_in_place(w);
}

/// Backward through `w = softmax(δ(z))` given `dw`; adds into `dz`.
#[inline]
fn score_softmax_backward(z: &[f64], w: &[f64], dw: &[f64], act: Activation, dz: &mut [f64]) {
    let inner: f64 = w.iter().zip(dw).map(|(w, d)| w * d).sum();
    for k in 0..w.len() {
        dz[k] = w[k] * (dw[k] - inner) * act.derivative(z[k]);
    }
}

/// Recursive attention: the reference at step `l` is the current weighted
/// combination of steps `0..l`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursiveAttention {
    /// `[s_x ∥ s_r]`, length `2 · dim`.
    pub s: Param,
    pub activation: Activation,
    dim: usize,
}

#[derive(Debug, Clone)]
pub struct RecursiveCache {
    /// `a[i][k] = X̃ᵢ⁽ᵏ⁾ · s_x`
    a: Matrix,
    /// `c[i][l − 1] = R̃ᵢ⁽ˡ⁻¹⁾ · s_r` for `l = 1..=S+1`
    c: Matrix,
    /// Running combinations `R⁽⁰⁾ … R⁽ˢ⁾`.
    refs: Vec<Matrix>,
    step_masks: Vec<Option<Matrix>>,
    ref_masks: Vec<Option<Matrix>>,
}

impl RecursiveAttention {
    /// Zero scoring vector, so every node starts with uniform weights.
    pub fn new(name: &str, dim: usize, activation: Activation) -> Self {
        Self {
            s: Param::new(format!("{name}.s"), Matrix::zeros(1, 2 * dim)),
            activation,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Returns the combined matrix `H`, the final weights (`n × (S+1)`) and a
    /// cache for backward. Attention dropout is drawn only when `rng` is given.
    ///
    /// Protocol: `R⁽⁰⁾ = X⁽⁰⁾`; for `l = 1..=S+1`, score steps `k < l`
    /// against `R⁽ˡ⁻¹⁾`, softmax over those `l` scores and set
    /// `R⁽ˡ⁾ = Σₖ wₖ X⁽ᵏ⁾`. The output is `R⁽ˢ⁺¹⁾`, whose weights span all
    /// `S + 1` steps.
    pub fn forward(
        &self,
        xs: &[Matrix],
        attention_dropout: f64,
        rng: Option<&mut (dyn RngCore + '_)>,
    ) -> Result<(Matrix, Matrix, RecursiveCache)> {
        let mut rng = rng;
        let d = self.dim;
        let (n, steps) = check_stack(xs, d)?;
        let (sx, sr) = self.s.value.as_slice().split_at(d);
        let step_masks = masks(steps + 1, n, d, attention_dropout, &mut rng)?;
        let ref_masks = masks(steps + 1, n, d, attention_dropout, &mut rng)?;

        let mut a = Matrix::zeros(n, steps + 1);
        for (k, x) in xs.iter().enumerate() {
            for i in 0..n {
                a[(i, k)] = masked_dot(x.row(i), step_masks[k].as_ref().map(|m| m.row(i)), sx);
            }
        }

        let mut c = Matrix::zeros(n, steps + 1);
        let mut refs = Vec::with_capacity(steps + 1);
        refs.push(xs[0].clone());
        let mut weights = Matrix::zeros(n, steps + 1);
        let mut out = Matrix::zeros(n, d);
        let mut z = vec![0.0; steps + 1];
        let mut w = vec![0.0; steps + 1];
        for l in 1..=steps + 1 {
            let prev = &refs[l - 1];
            let mut next = Matrix::zeros(n, d);
            for i in 0..n {
                let ci = masked_dot(prev.row(i), ref_masks[l - 1].as_ref().map(|m| m.row(i)), sr);
                c[(i, l - 1)] = ci;
                score_softmax(&a.row(i)[..l], ci, self.activation, &mut z[..l], &mut w[..l]);
                let dst = next.row_mut(i);
                for (k, &wk) in w[..l].iter().enumerate() {
                    for (o, x) in dst.iter_mut().zip(xs[k].row(i)) {
                        *o += wk * x;
                    }
                }
                if l == steps + 1 {
                    weights.row_mut(i).copy_from_slice(&w[..l]);
                }
            }
            if l == steps + 1 {
                out = next;
            } else {
                refs.push(next);
            }
        }
        Ok((
            out,
            weights,
            RecursiveCache {
                a,
                c,
                refs,
                step_masks,
                ref_masks,
            },
        ))
    }

    /// Accumulates `∂/∂s` given `dH`. The stack itself is constant.
    pub fn backward(&mut self, xs: &[Matrix], cache: &RecursiveCache, dh: &Matrix) -> Result<()> {
        let d = self.dim;
        let (n, steps) = check_stack(xs, d)?;
        if dh.shape() != (n, d) {
            return Err(Error::shape("recursive attention upstream gradient"));
        }
        let sr = self.s.value.as_slice()[d..].to_vec();
        let mut ds = vec![0.0; 2 * d];
        let mut da = Matrix::zeros(n, steps + 1);
        let mut z = vec![0.0; steps + 1];
        let mut w = vec![0.0; steps + 1];
        let mut dw = vec![0.0; steps + 1];
        let mut dz = vec![0.0; steps + 1];
        let mut dr = vec![0.0; d];
        for i in 0..n {
            dr.copy_from_slice(dh.row(i));
            for l in (1..=steps + 1).rev() {
                let ci = cache.c[(i, l - 1)];
                score_softmax(&cache.a.row(i)[..l], ci, self.activation, &mut z[..l], &mut w[..l]);
                for k in 0..l {
                    dw[k] = dot(&dr, xs[k].row(i));
                }
                score_softmax_backward(&z[..l], &w[..l], &dw[..l], self.activation, &mut dz[..l]);
                let mut dc = 0.0;
                for k in 0..l {
                    da[(i, k)] += dz[k];
                    dc += dz[k];
                }
                let prev = cache.refs[l - 1].row(i);
                let mask = cache.ref_masks[l - 1].as_ref().map(|m| m.row(i));
                let ds_r = &mut ds[d..];
                match mask {
                    Some(m) => {
                        for j in 0..d {
                            ds_r[j] += dc * prev[j] * m[j];
                            dr[j] = dc * m[j] * sr[j];
                        }
                    }
                    None => {
                        for j in 0..d {
                            ds_r[j] += dc * prev[j];
                            dr[j] = dc * sr[j];
                        }
                    }
                }
            }
        }
        let ds_x = &mut ds[..d];
        for (k, x) in xs.iter().enumerate() {
            for i in 0..n {
                let g = da[(i, k)];
                if g == 0.0 {
                    continue;
                }
                let row = x.row(i);
                match &cache.step_masks[k] {
                    Some(m) => {
                        for ((o, xv), mv) in ds_x.iter_mut().zip(row).zip(m.row(i)) {
                            *o += g * xv * mv;
                        }
                    }
                    None => {
                        for (o, xv) in ds_x.iter_mut().zip(row) {
                            *o += g * xv;
                        }
                    }
                }
            }
        }
        for (g, v) in self.s.grad.as_mut_slice().iter_mut().zip(ds) {
            *g += v;
        }
        Ok(())
    }
}

impl Parameterized for RecursiveAttention {
    fn params(&self) -> Vec<&Param> {
        vec![&self.s]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.s]
    }
}

/// Evaluation-mode recursive attention: `(H, weights)`.
pub fn recursive_attention(stack: &[Matrix], params: &RecursiveAttention) -> Result<(Matrix, Matrix)> {
    let (h, w, _) = params.forward(stack, 0.0, None)?;
    Ok((h, w))
}

/// JK attention: every step is scored against one reference vector per node.
#[derive(Debug, Clone, PartialEq)]
pub struct JkAttention {
    /// `[s_x ∥ s_r]`, length `dim + ref_dim`.
    pub s: Param,
    /// Present only for [`ReferenceMode::Jk`] with at least one step.
    pub mlp: Option<Mlp>,
    pub reference: ReferenceMode,
    pub activation: Activation,
    dim: usize,
    ref_dim: usize,
    steps: usize,
    noise_seed: u64,
}

#[derive(Debug, Clone)]
pub struct JkCache {
    a: Matrix,
    c: Vec<f64>,
    reference: Matrix,
    mlp_cache: Option<MlpCache>,
    step_masks: Vec<Option<Matrix>>,
    ref_mask: Option<Matrix>,
}

/// Everything needed to build a [`JkAttention`].
#[derive(Debug, Clone, Copy)]
pub struct JkShape {
    pub dim: usize,
    pub steps: usize,
    pub hidden: usize,
    pub jk_layers: usize,
    pub dropout: f64,
}

impl JkAttention {
    pub fn new(
        name: &str,
        shape: JkShape,
        reference: ReferenceMode,
        activation: Activation,
        noise_seed: u64,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let JkShape {
            dim,
            steps,
            hidden,
            jk_layers,
            dropout,
        } = shape;
        let ref_dim = match reference {
            ReferenceMode::Jk | ReferenceMode::NormalNoise => hidden,
            ReferenceMode::OriginFeature => dim,
            ReferenceMode::None => 0,
        };
        let mlp = (reference == ReferenceMode::Jk && steps >= 1).then(|| {
            let mut dims = vec![steps * dim];
            dims.extend(std::iter::repeat_n(hidden, jk_layers.max(1)));
            Mlp::new(&format!("{name}.jk"), &dims, Activation::Relu, dropout, rng)
        });
        Self {
            s: Param::new(format!("{name}.s"), Matrix::zeros(1, dim + ref_dim)),
            mlp,
            reference,
            activation,
            dim,
            ref_dim,
            steps,
            noise_seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Standard-normal reference rows, a pure function of `(seed, node id)`.
    fn noise(&self, rows: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(rows.len(), self.ref_dim);
        for (r, &node) in rows.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
            rng.set_stream(node as u64);
            for v in m.row_mut(r) {
                *v = StandardNormal.sample(&mut rng);
            }
        }
        m
    }

    /// `rows` are the node ids of the stack rows; only the noise reference
    /// reads them.
    pub fn forward(
        &self,
        xs: &[Matrix],
        rows: &[usize],
        attention_dropout: f64,
        rng: Option<&mut (dyn RngCore + '_)>,
    ) -> Result<(Matrix, Matrix, JkCache)> {
        let mut rng = rng;
        let d = self.dim;
        let (n, steps) = check_stack(xs, d)?;
        if steps != self.steps {
            return Err(Error::shape(format!(
                "JK attention built for {} steps got {steps}",
                self.steps
            )));
        }
        if rows.len() != n {
            return Err(Error::shape("row ids do not match the stack"));
        }
        let (reference, mlp_cache) = match self.reference {
            ReferenceMode::Jk => match &self.mlp {
                Some(mlp) => {
                    let cat = Matrix::hconcat(&xs[1..].iter().collect::<Vec<_>>())?;
                    let (e, cache) = mlp.forward(&cat, rng.as_deref_mut())?;
                    (e, Some(cache))
                }
                None => (Matrix::zeros(n, self.ref_dim), None),
            },
            ReferenceMode::OriginFeature => (xs[0].clone(), None),
            ReferenceMode::NormalNoise => (self.noise(rows), None),
            ReferenceMode::None => (Matrix::zeros(n, 0), None),
        };
        let step_masks = masks(steps + 1, n, d, attention_dropout, &mut rng)?;
        let ref_mask = masks(1, n, self.ref_dim, attention_dropout, &mut rng)?.pop().flatten();

        let (sx, sr) = self.s.value.as_slice().split_at(d);
        let mut a = Matrix::zeros(n, steps + 1);
        for (k, x) in xs.iter().enumerate() {
            for i in 0..n {
                a[(i, k)] = masked_dot(x.row(i), step_masks[k].as_ref().map(|m| m.row(i)), sx);
            }
        }
        let c: Vec<f64> = (0..n)
            .map(|i| masked_dot(reference.row(i), ref_mask.as_ref().map(|m| m.row(i)), sr))
            .collect();

        let mut weights = Matrix::zeros(n, steps + 1);
        let mut out = Matrix::zeros(n, d);
        let mut z = vec![0.0; steps + 1];
        for (i, &ci) in c.iter().enumerate() {
            let w = weights.row_mut(i);
            score_softmax(a.row(i), ci, self.activation, &mut z, w);
            let dst = out.row_mut(i);
            for (k, &wk) in w.iter().enumerate() {
                for (o, x) in dst.iter_mut().zip(xs[k].row(i)) {
                    *o += wk * x;
                }
            }
        }
        Ok((
            out,
            weights,
            JkCache {
                a,
                c,
                reference,
                mlp_cache,
                step_masks,
                ref_mask,
            },
        ))
    }

    pub fn backward(&mut self, xs: &[Matrix], cache: &JkCache, dh: &Matrix) -> Result<()> {
        let d = self.dim;
        let (n, steps) = check_stack(xs, d)?;
        if dh.shape() != (n, d) {
            return Err(Error::shape("JK attention upstream gradient"));
        }
        let sr = self.s.value.as_slice()[d..].to_vec();
        let mut ds = vec![0.0; d + self.ref_dim];
        let mut dref = Matrix::zeros(n, self.ref_dim);
        let mut z = vec![0.0; steps + 1];
        let mut w = vec![0.0; steps + 1];
        let mut dw = vec![0.0; steps + 1];
        let mut dz = vec![0.0; steps + 1];
        for i in 0..n {
            score_softmax(cache.a.row(i), cache.c[i], self.activation, &mut z, &mut w);
            for k in 0..=steps {
                dw[k] = dot(dh.row(i), xs[k].row(i));
            }
            score_softmax_backward(&z, &w, &dw, self.activation, &mut dz);
            let (ds_x, ds_r) = ds.split_at_mut(d);
            let mut dc = 0.0;
            for (k, &g) in dz.iter().enumerate() {
                dc += g;
                match &cache.step_masks[k] {
                    Some(m) => {
                        for ((o, xv), mv) in ds_x.iter_mut().zip(xs[k].row(i)).zip(m.row(i)) {
                            *o += g * xv * mv;
                        }
                    }
                    None => {
                        for (o, xv) in ds_x.iter_mut().zip(xs[k].row(i)) {
                            *o += g * xv;
                        }
                    }
                }
            }
            let refrow = cache.reference.row(i);
            let dst = dref.row_mut(i);
            match &cache.ref_mask {
                Some(m) => {
                    for j in 0..self.ref_dim {
                        let mv = m[(i, j)];
                        ds_r[j] += dc * refrow[j] * mv;
                        dst[j] = dc * mv * sr[j];
                    }
                }
                None => {
                    for j in 0..self.ref_dim {
                        ds_r[j] += dc * refrow[j];
                        dst[j] = dc * sr[j];
                    }
                }
            }
        }
        for (g, v) in self.s.grad.as_mut_slice().iter_mut().zip(ds) {
            *g += v;
        }
        if let (Some(mlp), Some(mc)) = (self.mlp.as_mut(), cache.mlp_cache.as_ref()) {
            mlp.backward(mc, &dref)?;
        }
        Ok(())
    }
}

impl Parameterized for JkAttention {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.s];
        if let Some(m) = &self.mlp {
            v.extend(m.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.s];
        if let Some(m) = &mut self.mlp {
            v.extend(m.params_mut());
        }
        v
    }
}

/// Evaluation-mode JK attention: `(H, weights)`.
pub fn jk_attention(stack: &[Matrix], rows: &[usize], params: &JkAttention) -> Result<(Matrix, Matrix)> {
    let (h, w, _) = params.forward(stack, rows, 0.0, None)?;
    Ok((h, w))
}
