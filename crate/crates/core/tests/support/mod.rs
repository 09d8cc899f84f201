//! Checks shared by the per-suite tests and the acceptance runner. Each check
//! returns a one-line summary, `Err` when the property does not hold.

#![allow(dead_code)]

use std::collections::BTreeSet;

use gamlp::data::{drop_edges, generate_sbm, SbmConfig};
use gamlp::graph::{add_self_loops, build_graph, normalize, CsrGraph, NormMode, PropagationOperator};
use gamlp::model::{
    jk_attention, recursive_attention, BaselineMode, CombinerKind, Gamlp, JkAttention, JkShape, LabelInput,
    ModelInputs, RecursiveAttention, ReferenceMode, Stacks, TrainConfig,
};
use gamlp::nn::{cross_entropy, grad_check, softmax_rows, Activation, Linear, Mlp, OptimizerConfig, Parameterized};
use gamlp::pipeline::{prepare, train};
use gamlp::propagation::{
    apply_last_residual, build_label_seed, cache_read, cache_write, propagate_features, propagate_labels, CachedStack,
    ResidualScheme,
};
use gamlp::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub const PROPERTY_CASES: u64 = 128;

const MODES: [NormMode; 3] = [NormMode::RowStochastic, NormMode::Symmetric, NormMode::ColumnStochastic];
const ACTIVATIONS: [Activation; 3] = [Activation::LeakyRelu(0.2), Activation::Relu, Activation::Sigmoid];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Undirected edges `u < v` of an Erdős–Rényi graph with a random density.
pub fn random_edges(rng: &mut impl Rng, n: usize) -> Vec<(usize, usize)> {
    let p = rng.random_range(0.05..0.5);
    let mut edges = vec![];
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    edges
}

pub fn operator(n: usize, edges: &[(usize, usize)], mode: NormMode) -> (CsrGraph, PropagationOperator) {
    let g = build_graph(edges, n, true).unwrap();
    let op = normalize(&add_self_loops(&g), mode).unwrap();
    (g, op)
}

/// `D̃^{r−1} (A + I) D̃^{−r}` built entry by entry.
pub fn dense_operator(n: usize, edges: &[(usize, usize)], r: f64) -> Vec<Vec<f64>> {
    let set: BTreeSet<(usize, usize)> = edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for (u, v) in set {
        a[u][v] = 1.0;
    }
    let d: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] * d[i].powf(r - 1.0) * d[j].powf(-r)).collect())
        .collect()
}

pub fn dense_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect())
        .collect()
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// `max |a − b| / max |b|`, the oracle being `b`.
pub fn rel_error(a: &Matrix, b: &[Vec<f64>]) -> f64 {
    let scale = b.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = b
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, v)| (i, j, *v)))
        .fold(0.0f64, |m, (i, j, v)| m.max((a[(i, j)] - v).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn mode_r(mode: NormMode) -> f64 {
    match mode {
        NormMode::RowStochastic => 0.0,
        NormMode::Symmetric => 0.5,
        NormMode::ColumnStochastic => 1.0,
    }
}

// ---------------------------------------------------------------- oracles

/// Iterative propagation against `Âᵏ X` from explicit dense powers.
pub fn propagation_oracle(cases: u64) -> Check {
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut rng = rng(1000 + case);
        let n = rng.random_range(1..=50);
        let steps = rng.random_range(0..=8);
        let f = rng.random_range(1..=4);
        let mode = MODES[case as usize % 3];
        let edges = random_edges(&mut rng, n);
        let x = random_matrix(&mut rng, n, f, 1.0);
        let (_, op) = operator(n, &edges, mode);
        let stack = propagate_features(&op, &x, steps).map_err(|e| e.to_string())?;

        let a = dense_operator(n, &edges, mode_r(mode));
        let mut power: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
        for k in 0..=steps {
            if k > 0 {
                power = dense_mul(&a, &power);
            }
            let expect = dense_mul(&power, &to_rows(&x));
            let err = rel_error(&stack.mats[k], &expect);
            if err > 1e-10 {
                return Err(format!(
                    "case {case} (n={n}, K={steps}, {mode:?}) step {k}: relative error {err:.3e}"
                ));
            }
            worst = worst.max(err);
        }
    }
    Ok(format!("{cases} random graphs, max relative error {worst:.2e}"))
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => z.max(0.0),
        Activation::LeakyRelu(s) => {
            if z > 0.0 {
                z
            } else {
                s * z
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Node by node: score earlier steps against the running combination,
/// renormalize, recombine; the final pass covers all steps.
pub fn recursive_oracle(xs: &[Matrix], s: &[f64], a: Activation) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = xs[0].cols();
    let (sx, sr) = s.split_at(d);
    let steps = xs.len() - 1;
    let mut h = vec![];
    let mut weights = vec![];
    for i in 0..xs[0].rows() {
        let mut r = xs[0].row(i).to_vec();
        let mut w = vec![1.0];
        for l in 1..=steps + 1 {
            let z: Vec<f64> = (0..l).map(|k| act(a, dotv(xs[k].row(i), sx) + dotv(&r, sr))).collect();
            w = softmax(&z);
            r = (0..d).map(|j| (0..l).map(|k| w[k] * xs[k][(i, j)]).sum()).collect();
        }
        h.push(r);
        weights.push(w);
    }
    (h, weights)
}

fn mlp_oracle(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let last = mlp.layers.len() - 1;
    for (li, layer) in mlp.layers.iter().enumerate() {
        let w = &layer.weight.value;
        let b = layer.bias.value.as_slice();
        let mut out: Vec<f64> = (0..w.cols())
            .map(|j| b[j] + (0..w.rows()).map(|k| h[k] * w[(k, j)]).sum::<f64>())
            .collect();
        if li < last {
            out.iter_mut().for_each(|v| *v = act(mlp.activation, *v));
        }
        h = out;
    }
    h
}

/// Scores every step against one reference per node, softmax over all steps.
pub fn jk_oracle(xs: &[Matrix], params: &JkAttention) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = xs[0].cols();
    let s = params.s.value.as_slice();
    let (sx, sr) = s.split_at(d);
    let mut h = vec![];
    let mut weights = vec![];
    for i in 0..xs[0].rows() {
        let reference: Vec<f64> = match params.reference {
            ReferenceMode::Jk => match &params.mlp {
                Some(mlp) => {
                    let cat: Vec<f64> = xs[1..].iter().flat_map(|x| x.row(i).to_vec()).collect();
                    mlp_oracle(mlp, &cat)
                }
                None => vec![0.0; sr.len()],
            },
            ReferenceMode::OriginFeature => xs[0].row(i).to_vec(),
            ReferenceMode::None => vec![],
            ReferenceMode::NormalNoise => unreachable!("noise has no dense oracle"),
        };
        let z: Vec<f64> = xs
            .iter()
            .map(|x| act(params.activation, dotv(x.row(i), sx) + dotv(&reference, sr)))
            .collect();
        let w = softmax(&z);
        h.push(
            (0..d)
                .map(|j| xs.iter().zip(&w).map(|(x, wk)| wk * x[(i, j)]).sum())
                .collect(),
        );
        weights.push(w);
    }
    (h, weights)
}

pub fn random_jk(rng: &mut ChaCha8Rng, d: usize, steps: usize, reference: ReferenceMode, a: Activation) -> JkAttention {
    let shape = JkShape {
        dim: d,
        steps,
        hidden: rng.random_range(2..=6),
        jk_layers: rng.random_range(1..=3),
        dropout: 0.0,
    };
    let mut jk = JkAttention::new("jk", shape, reference, a, 7, rng);
    let len = jk.s.value.cols();
    jk.s.value = random_matrix(rng, 1, len, 1.5);
    if let Some(mlp) = jk.mlp.as_mut() {
        for layer in &mut mlp.layers {
            let cols = layer.bias.value.cols();
            layer.bias.value = random_matrix(rng, 1, cols, 0.5);
        }
    }
    jk
}

/// Both attention kinds against the dense node-by-node oracles.
pub fn attention_oracle(cases: u64) -> Check {
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut rng = rng(2000 + case);
        let n = rng.random_range(2..=10);
        let d = rng.random_range(1..=5);
        let steps = rng.random_range(0..=5);
        let a = ACTIVATIONS[rng.random_range(0..3)];
        let xs: Vec<Matrix> = (0..=steps).map(|_| random_matrix(&mut rng, n, d, 1.0)).collect();
        let rows: Vec<usize> = (0..n).collect();
        let (got, expect) = if case % 2 == 0 {
            let mut p = RecursiveAttention::new("r", d, a);
            p.s.value = random_matrix(&mut rng, 1, 2 * d, 1.5);
            (
                recursive_attention(&xs, &p).unwrap(),
                recursive_oracle(&xs, p.s.value.as_slice(), a),
            )
        } else {
            let reference =
                [ReferenceMode::Jk, ReferenceMode::OriginFeature, ReferenceMode::None][(case as usize / 2) % 3];
            let p = random_jk(&mut rng, d, steps, reference, a);
            (jk_attention(&xs, &rows, &p).unwrap(), jk_oracle(&xs, &p))
        };
        let err = rel_error(&got.0, &expect.0).max(rel_error(&got.1, &expect.1));
        if err > 1e-12 {
            return Err(format!(
                "instance {case} (n={n}, d={d}, S={steps}): relative error {err:.3e}"
            ));
        }
        worst = worst.max(err);
    }
    Ok(format!("{cases} attention instances, max relative error {worst:.2e}"))
}

pub fn oracle_suite() -> Check {
    let p = propagation_oracle(200)?;
    let a = attention_oracle(20)?;
    Ok(format!("{p}; {a}"))
}

// ---------------------------------------------------------------- gradients

pub const N_TOY: usize = 10;
pub const TOY_CLASSES: usize = 3;

pub fn toy_inputs(hops: usize, label_hops: usize) -> (ModelInputs, Vec<usize>) {
    let mut rng = rng(11);
    let mut edges = vec![];
    for u in 0..N_TOY {
        edges.push((u, (u + 1) % N_TOY));
        edges.push((u, rng.random_range(0..N_TOY)));
    }
    let edges: Vec<_> = edges.into_iter().filter(|(u, v)| u != v).collect();
    let (_, op) = operator(N_TOY, &edges, NormMode::Symmetric);
    let x0 = random_matrix(&mut rng, N_TOY, 4, 1.0);
    let fs = propagate_features(&op, &x0, hops).unwrap();
    let labels: Vec<Option<usize>> = (0..N_TOY).map(|i| Some(i % TOY_CLASSES)).collect();
    let train: Vec<usize> = (0..6).collect();
    let y0 = build_label_seed(&labels, &train, TOY_CLASSES).unwrap();
    let ls = apply_last_residual(&propagate_labels(&op, &y0, label_hops).unwrap(), ResidualScheme::Cosine).unwrap();
    let stacks = Stacks::new(&fs, Some(&ls), LabelInput::Smoothed).unwrap();
    let rows: Vec<usize> = (0..N_TOY).collect();
    (stacks.gather(&rows), labels.into_iter().map(Option::unwrap).collect())
}

pub fn toy_config(
    combiner: CombinerKind,
    reference: ReferenceMode,
    activation: Activation,
    dropout: f64,
) -> TrainConfig {
    TrainConfig {
        hops: 3,
        label_hops: 2,
        combiner,
        reference,
        activation,
        hidden: 5,
        num_layers: 2,
        label_num_layers: 2,
        jk_layers: 2,
        input_dropout: dropout,
        attention_dropout: dropout,
        dropout,
        beta: 0.7,
        epochs: 10,
        patience: 5,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn model_loss(
    model: &Gamlp,
    inputs: &ModelInputs,
    targets: &[usize],
    dropout: bool,
) -> (f64, Matrix, gamlp::model::GamlpCache) {
    // Re-seeding per call keeps dropout masks fixed across perturbations.
    let mut rng = rng(99);
    let rng: Option<&mut dyn rand::RngCore> = if dropout { Some(&mut rng) } else { None };
    let (logits, cache) = model.forward(inputs, rng).unwrap();
    let mask: Vec<usize> = (0..inputs.rows.len()).collect();
    let (l, g) = cross_entropy(&logits, targets, &mask).unwrap();
    (l, g, cache)
}

/// Worst relative error of the full model's backward against central
/// differences at `h = 1e−6`.
pub fn model_grad_error(cfg: &TrainConfig) -> f64 {
    let (inputs, targets) = toy_inputs(cfg.hops, cfg.label_hops);
    let mut model = Gamlp::new(cfg, 4, TOY_CLASSES).unwrap();
    // Non-zero scoring vectors so the attention path carries gradient.
    let mut rng = rng(5);
    for p in model.params_mut() {
        if p.name.ends_with(".s") {
            p.value
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
    }
    let dropout = cfg.dropout > 0.0;
    let (_, g, cache) = model_loss(&model, &inputs, &targets, dropout);
    model.zero_grad();
    model.backward(&cache, &g).unwrap();
    let report = grad_check(&mut model, |m| model_loss(m, &inputs, &targets, dropout).0, 1e-6, 40, 1);
    assert!(report.coordinates > 50);
    report.max_rel_error
}

fn weighted_sum(h: &Matrix, g: &Matrix) -> f64 {
    h.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum()
}

/// Worst error over the single-layer kernels at `h = 1e−5`. With `flip`,
/// the analytic gradients are negated first, which the check must catch.
pub fn kernel_grad_error(flip: bool) -> Vec<(&'static str, f64)> {
    const H: f64 = 1e-5;
    let mut rng = rng(31);
    let mut out = vec![];
    let negate = |ps: Vec<&mut gamlp::nn::Param>| {
        if flip {
            for p in ps {
                p.grad.scale(-1.0);
            }
        }
    };

    let x = random_matrix(&mut rng, 6, 4, 1.0);
    let targets: Vec<usize> = (0..6).map(|i| i % 3).collect();
    let mask: Vec<usize> = (0..6).collect();

    let mut lin = Linear::new("lin", 4, 3, &mut rng);
    let (_, g) = cross_entropy(&lin.forward(&x).unwrap(), &targets, &mask).unwrap();
    lin.backward(&x, &g).unwrap();
    negate(lin.params_mut());
    let r = grad_check(
        &mut lin,
        |m| cross_entropy(&m.forward(&x).unwrap(), &targets, &mask).unwrap().0,
        H,
        1000,
        0,
    );
    out.push(("linear+ce", r.max_rel_error));

    for a in ACTIVATIONS {
        let mut mlp = Mlp::new("mlp", &[4, 5, 3], a, 0.0, &mut rng);
        let (y, cache) = mlp.forward(&x, None).unwrap();
        let (_, g) = cross_entropy(&y, &targets, &mask).unwrap();
        mlp.backward(&cache, &g).unwrap();
        negate(mlp.params_mut());
        let r = grad_check(
            &mut mlp,
            |m| {
                cross_entropy(&m.forward(&x, None).unwrap().0, &targets, &mask)
                    .unwrap()
                    .0
            },
            H,
            1000,
            0,
        );
        out.push(("mlp+ce", r.max_rel_error));
    }

    let xs: Vec<Matrix> = (0..4).map(|_| random_matrix(&mut rng, 5, 3, 1.0)).collect();
    let upstream = random_matrix(&mut rng, 5, 3, 1.0);
    let rows: Vec<usize> = (0..5).collect();
    for a in [Activation::LeakyRelu(0.2), Activation::Sigmoid] {
        let mut p = RecursiveAttention::new("r", 3, a);
        p.s.value = random_matrix(&mut rng, 1, 6, 1.0);
        let (_, _, cache) = p.forward(&xs, 0.0, None).unwrap();
        p.backward(&xs, &cache, &upstream).unwrap();
        negate(p.params_mut());
        let r = grad_check(
            &mut p,
            |m| weighted_sum(&recursive_attention(&xs, m).unwrap().0, &upstream),
            H,
            1000,
            0,
        );
        out.push(("recursive attention", r.max_rel_error));

        let mut jk = random_jk(&mut rng, 3, 3, ReferenceMode::Jk, a);
        let (_, _, cache) = jk.forward(&xs, &rows, 0.0, None).unwrap();
        jk.backward(&xs, &cache, &upstream).unwrap();
        negate(jk.params_mut());
        let r = grad_check(
            &mut jk,
            |m| weighted_sum(&jk_attention(&xs, &rows, m).unwrap().0, &upstream),
            H,
            1000,
            0,
        );
        out.push(("jk attention", r.max_rel_error));
    }
    out
}

pub fn gradient_suite() -> Check {
    let mut model_worst = 0.0f64;
    for cfg in [
        toy_config(
            CombinerKind::Recursive,
            ReferenceMode::Jk,
            Activation::LeakyRelu(0.2),
            0.0,
        ),
        toy_config(CombinerKind::Recursive, ReferenceMode::Jk, Activation::Sigmoid, 0.0),
        toy_config(CombinerKind::Jk, ReferenceMode::Jk, Activation::LeakyRelu(0.2), 0.0),
        toy_config(CombinerKind::Jk, ReferenceMode::Jk, Activation::Sigmoid, 0.0),
    ] {
        let e = model_grad_error(&cfg);
        if e > 1e-4 {
            return Err(format!("{} model: relative error {e:.3e}", cfg.combiner));
        }
        model_worst = model_worst.max(e);
    }
    let mut kernel_worst = 0.0f64;
    for (name, e) in kernel_grad_error(false) {
        if e > 1e-6 {
            return Err(format!("{name}: relative error {e:.3e}"));
        }
        kernel_worst = kernel_worst.max(e);
    }
    if let Some((name, e)) = kernel_grad_error(true).into_iter().find(|(_, e)| *e <= 0.1) {
        return Err(format!("sign-flipped {name} backward went unnoticed ({e:.3e})"));
    }
    Ok(format!(
        "full model max {model_worst:.2e} (limit 1e-4), kernels max {kernel_worst:.2e} (limit 1e-6)"
    ))
}

// ---------------------------------------------------------------- invariants

/// Rows nonnegative, summing to 1 within 1e−10; exactly 1 when `S = 0`.
pub fn simplex_case(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=12);
    let d = rng.random_range(1..=6);
    let steps = rng.random_range(0..=10);
    let a = ACTIVATIONS[rng.random_range(0..3)];
    let scale = [0.1, 1.0, 10.0, 100.0][rng.random_range(0..4)];
    let xs: Vec<Matrix> = (0..=steps).map(|_| random_matrix(&mut rng, n, d, scale)).collect();
    let rows: Vec<usize> = (0..n).collect();
    let w = if rng.random_bool(0.5) {
        let mut p = RecursiveAttention::new("r", d, a);
        p.s.value = random_matrix(&mut rng, 1, 2 * d, scale);
        recursive_attention(&xs, &p).map_err(|e| e.to_string())?.1
    } else {
        let reference = [
            ReferenceMode::Jk,
            ReferenceMode::OriginFeature,
            ReferenceMode::NormalNoise,
            ReferenceMode::None,
        ][rng.random_range(0..4)];
        let p = random_jk(&mut rng, d, steps, reference, a);
        jk_attention(&xs, &rows, &p).map_err(|e| e.to_string())?.1
    };
    for i in 0..n {
        let row = w.row(i);
        if row.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(format!("seed {seed}: negative weight in row {i}: {row:?}"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(format!("seed {seed}: row {i} sums to {sum}"));
        }
        if steps == 0 && row != [1.0] {
            return Err(format!("seed {seed}: single-step weight is {row:?}"));
        }
    }
    Ok(())
}

pub fn softmax_shift_case(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let rows = rng.random_range(1..=8);
    let cols = rng.random_range(1..=10);
    let m = random_matrix(&mut rng, rows, cols, 20.0);
    let shifts: Vec<f64> = (0..rows).map(|_| rng.random_range(-1000.0..1000.0)).collect();
    let shifted = Matrix::from_fn(rows, cols, |r, c| m[(r, c)] + shifts[r]);
    let (a, b) = (softmax_rows(&m), softmax_rows(&shifted));
    let diff = a.max_abs_diff(&b);
    if diff > 1e-12 {
        return Err(format!("seed {seed}: shift changed softmax by {diff:.3e}"));
    }
    for s in a.row_sums() {
        if (s - 1.0).abs() > 1e-12 {
            return Err(format!("seed {seed}: softmax row sums to {s}"));
        }
    }
    Ok(())
}

pub fn ones_fixed_point_case(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=60);
    let edges = random_edges(&mut rng, n);
    let steps = rng.random_range(0..=32);
    let (_, op) = operator(n, &edges, NormMode::RowStochastic);
    let stack = propagate_features(&op, &Matrix::filled(n, 1, 1.0), steps).map_err(|e| e.to_string())?;
    for (k, m) in stack.mats.iter().enumerate() {
        let err = m.as_slice().iter().fold(0.0f64, |e, v| e.max((v - 1.0).abs()));
        if err > 1e-12 {
            return Err(format!("seed {seed}: step {k} strays {err:.3e} from all-ones"));
        }
    }
    Ok(())
}

pub fn label_row_sum_case(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=60);
    let classes = rng.random_range(1..=5);
    let edges = random_edges(&mut rng, n);
    let labels: Vec<Option<usize>> = (0..n)
        .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0..classes)))
        .collect();
    let train: Vec<usize> = (0..n)
        .filter(|&i| labels[i].is_some() && rng.random_bool(0.5))
        .collect();
    let steps = rng.random_range(0..=12);
    let scheme = [
        ResidualScheme::Cosine,
        ResidualScheme::Linear,
        ResidualScheme::Fixed(rng.random_range(0.0..=1.0)),
    ][rng.random_range(0..3)];
    let (_, op) = operator(n, &edges, NormMode::RowStochastic);
    let y0 = build_label_seed(&labels, &train, classes).map_err(|e| e.to_string())?;
    let ls = apply_last_residual(&propagate_labels(&op, &y0, steps).map_err(|e| e.to_string())?, scheme)
        .map_err(|e| e.to_string())?;
    for (what, mats) in [("raw", &ls.mats), ("smoothed", &ls.smoothed)] {
        for (l, m) in mats.iter().enumerate() {
            for s in m.row_sums() {
                if !(-1e-12..=1.0 + 1e-12).contains(&s) {
                    return Err(format!("seed {seed}: {what} step {l} has row sum {s}"));
                }
            }
        }
    }
    Ok(())
}

pub fn cosine_endpoint_case(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let steps = rng.random_range(0..=128);
    let alphas = ResidualScheme::Cosine.alphas(steps);
    if alphas.len() != steps + 1 || alphas[0] != 1.0 {
        return Err(format!("seed {seed}: L={steps} gives α₀ = {}", alphas[0]));
    }
    if steps > 0 {
        if alphas[steps] != 0.0 {
            return Err(format!("seed {seed}: L={steps} gives α_L = {}", alphas[steps]));
        }
        if alphas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(format!("seed {seed}: L={steps} weights are not strictly decreasing"));
        }
    }
    // Endpoint identities on a stack: Ŷ⁽ᴸ⁾ = Y⁽ᴸ⁾ and Ŷ⁽⁰⁾ = Y⁽ᴸ⁾, exactly.
    let n = rng.random_range(1..=10);
    let edges = random_edges(&mut rng, n);
    let (_, op) = operator(n, &edges, MODES[rng.random_range(0..3)]);
    let labels: Vec<Option<usize>> = (0..n).map(|i| Some(i % 2)).collect();
    let train: Vec<usize> = (0..n).step_by(2).collect();
    let y0 = build_label_seed(&labels, &train, 2).unwrap();
    let l = steps.min(16);
    let ls = apply_last_residual(&propagate_labels(&op, &y0, l).unwrap(), ResidualScheme::Cosine).unwrap();
    if ls.smoothed[l] != ls.mats[l] || ls.smoothed[0] != ls.mats[l] {
        return Err(format!("seed {seed}: smoothed endpoints differ from Y⁽ᴸ⁾ at L={l}"));
    }
    Ok(())
}

pub fn cache_round_trip_case(seed: u64, dir: &std::path::Path) -> Result<(), String> {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=30);
    let edges = random_edges(&mut rng, n);
    let mode = MODES[rng.random_range(0..3)];
    let (_, op) = operator(n, &edges, mode);
    let steps = rng.random_range(0..=6);
    let stack: CachedStack = if rng.random_bool(0.5) {
        let f = rng.random_range(1..=8);
        let x = random_matrix(&mut rng, n, f, 100.0);
        propagate_features(&op, &x, steps).unwrap().round_to_f32().into()
    } else {
        let classes = rng.random_range(1..=4);
        let labels: Vec<Option<usize>> = (0..n).map(|_| Some(rng.random_range(0..classes))).collect();
        let train: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
        let raw = propagate_labels(&op, &build_label_seed(&labels, &train, classes).unwrap(), steps).unwrap();
        let ls = if rng.random_bool(0.5) {
            apply_last_residual(&raw, ResidualScheme::Fixed(rng.random_range(0.0..=1.0))).unwrap()
        } else {
            raw
        };
        ls.round_to_f32().into()
    };
    let path = dir.join(format!("case{seed}.gmlp"));
    cache_write(&stack, &path).map_err(|e| e.to_string())?;
    let back = cache_read(&path).map_err(|e| e.to_string())?;
    if back != stack {
        return Err(format!("seed {seed}: cache read back differs"));
    }
    Ok(())
}

/// Same seed, same everything: data, initialization, training-mode forward
/// and a short training run.
pub fn seed_determinism_case(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let sbm = SbmConfig::new(vec![8, 8], 0.4, 0.05, 3, 1.0, rng.random());
    let ds = generate_sbm(&sbm).map_err(|e| e.to_string())?;
    if generate_sbm(&sbm).unwrap() != ds {
        return Err(format!("seed {seed}: block model differs between calls"));
    }
    let drop_seed = rng.random();
    if drop_edges(&ds, 0.3, drop_seed).unwrap() != drop_edges(&ds, 0.3, drop_seed).unwrap() {
        return Err(format!("seed {seed}: edge dropping differs between calls"));
    }
    let combiner = [
        CombinerKind::Recursive,
        CombinerKind::Jk,
        CombinerKind::Baseline(BaselineMode::S2gc),
    ][rng.random_range(0..3)];
    let cfg = TrainConfig {
        hops: 2,
        label_hops: 2,
        combiner,
        reference: ReferenceMode::NormalNoise,
        hidden: 4,
        num_layers: 2,
        jk_layers: 1,
        epochs: 3,
        patience: 0,
        optimizer: OptimizerConfig::adam(0.01),
        batch_size: rng.random_range(0..=3),
        seed: rng.random(),
        ..TrainConfig::default()
    };
    let prepared = prepare(&ds, &cfg).map_err(|e| e.to_string())?;
    let a = Gamlp::new(&cfg, 3, 2).unwrap();
    if a != Gamlp::new(&cfg, 3, 2).unwrap() {
        return Err(format!("seed {seed}: initialization differs"));
    }
    let inputs = prepared.stacks(&cfg).unwrap().gather(&ds.splits.train);
    let fwd = |s| a.forward(&inputs, Some(&mut ChaCha8Rng::seed_from_u64(s))).unwrap().0;
    if fwd(cfg.seed) != fwd(cfg.seed) {
        return Err(format!("seed {seed}: training-mode forward differs"));
    }
    let (x, y) = (
        train(&ds, &prepared, &cfg).unwrap(),
        train(&ds, &prepared, &cfg).unwrap(),
    );
    if x.model != y.model || x.log != y.log {
        return Err(format!("seed {seed}: training runs differ"));
    }
    Ok(())
}

pub fn run_cases(cases: u64, mut case: impl FnMut(u64) -> Result<(), String>) -> Result<u64, String> {
    for seed in 0..cases {
        case(seed)?;
    }
    Ok(cases)
}

type Case<'a> = &'a dyn Fn(u64) -> Result<(), String>;

pub fn invariant_suite() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let n = PROPERTY_CASES;
    let named: [(&str, Case); 7] = [
        ("simplex", &simplex_case),
        ("softmax shift", &softmax_shift_case),
        ("all-ones fixed point", &ones_fixed_point_case),
        ("label row sums", &label_row_sum_case),
        ("cosine endpoints", &cosine_endpoint_case),
        ("cache round trip", &|s| cache_round_trip_case(s, dir.path())),
        ("seed determinism", &seed_determinism_case),
    ];
    for (name, case) in named {
        run_cases(n, case).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(format!("7 properties x {n} cases"))
}

// ---------------------------------------------------------------- SGC

/// GAMLP as (sgc, one layer, β = 0) against `Âᴷ X W + b` computed densely
/// with the model's own `W` and `b`.
pub fn sgc_equivalence(cases: u64) -> Check {
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut rng = rng(3000 + case);
        let n = rng.random_range(2..=40);
        let f = rng.random_range(1..=6);
        let classes = rng.random_range(2..=5);
        let hops = rng.random_range(0..=6);
        let mode = MODES[rng.random_range(0..3)];
        let cfg = TrainConfig {
            hops,
            r_mode: mode,
            combiner: CombinerKind::Baseline(BaselineMode::Sgc),
            num_layers: 1,
            beta: 0.0,
            seed: case,
            ..TrainConfig::default()
        };
        let edges = random_edges(&mut rng, n);
        let (_, op) = operator(n, &edges, mode);
        let x = random_matrix(&mut rng, n, f, 1.0);
        let fs = propagate_features(&op, &x, hops).unwrap();
        let mut model = Gamlp::new(&cfg, f, classes).unwrap();
        // Non-zero bias so it is exercised too.
        model.feature_mlp.layers[0].bias.value = random_matrix(&mut rng, 1, classes, 1.0);
        let rows: Vec<usize> = (0..n).collect();
        let inputs = Stacks::new(&fs, None, LabelInput::Smoothed).unwrap().gather(&rows);
        let got = model.logits(&inputs).map_err(|e| e.to_string())?;

        let a = dense_operator(n, &edges, mode_r(mode));
        let mut xk = to_rows(&x);
        for _ in 0..hops {
            xk = dense_mul(&a, &xk);
        }
        let layer = &model.feature_mlp.layers[0];
        let mut expect = dense_mul(&xk, &to_rows(&layer.weight.value));
        for row in &mut expect {
            for (v, b) in row.iter_mut().zip(layer.bias.value.as_slice()) {
                *v += b;
            }
        }
        if model.label_mlp.is_some() || model.feature_mlp.layers.len() != 1 {
            return Err(format!(
                "case {case}: model is not a single linear layer without labels"
            ));
        }
        let err = rel_error(&got, &expect);
        if err > 1e-12 {
            return Err(format!(
                "case {case} (n={n}, K={hops}, {mode:?}): relative error {err:.3e}"
            ));
        }
        worst = worst.max(err);
    }
    Ok(format!("{cases} instances, max relative error {worst:.2e}"))
}
