//! Sparse graph structure, degree normalization and sparse × dense products.
//!
//! The graph is stored as a symmetric CSR pattern with sorted, duplicate-free
//! rows. [`normalize`] turns a self-looped graph into the propagation operator
//! `D̃^{r−1} Ã D̃^{−r}` for one of the three supported values of `r`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrGraph {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    has_self_loops: bool,
}

/// Row counts of a graph, i.e. `d_i = nnz(row i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeVector(pub Vec<usize>);

impl DegreeVector {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Builds a symmetric, deduplicated CSR graph from an edge list.
///
/// With `symmetrize` every pair is inserted in both orientations. Without it
/// the list must already contain both orientations of every edge.
pub fn build_graph(edges: &[(usize, usize)], n: usize, symmetrize: bool) -> Result<CsrGraph> {
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut pairs = Vec::with_capacity(if symmetrize { 2 * edges.len() } else { edges.len() });
    for &(u, v) in edges {
        for id in [u, v] {
            if id >= n {
                return Err(Error::NodeOutOfRange { id, n });
            }
        }
        pairs.push((u, v));
        if symmetrize && u != v {
            pairs.push((v, u));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();

    if !symmetrize {
        for &(u, v) in &pairs {
            if pairs.binary_search(&(v, u)).is_err() {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) has no reverse and symmetrization is off"
                )));
            }
        }
    }

    let mut row_offsets = vec![0usize; n + 1];
    for &(u, _) in &pairs {
        row_offsets[u + 1] += 1;
    }
    for i in 0..n {
        row_offsets[i + 1] += row_offsets[i];
    }
    let col_indices = pairs.iter().map(|&(_, v)| v).collect();
    let mut g = CsrGraph {
        n,
        row_offsets,
        col_indices,
        has_self_loops: false,
    };
    g.has_self_loops = (0..n).all(|i| g.neighbors(i).binary_search(&i).is_ok());
    Ok(g)
}

/// Returns `Ã = A + I`; existing self loops are kept and never duplicated.
pub fn add_self_loops(g: &CsrGraph) -> CsrGraph {
    if g.has_self_loops {
        return g.clone();
    }
    let mut row_offsets = Vec::with_capacity(g.n + 1);
    let mut col_indices = Vec::with_capacity(g.col_indices.len() + g.n);
    row_offsets.push(0);
    for i in 0..g.n {
        let row = g.neighbors(i);
        match row.binary_search(&i) {
            Ok(_) => col_indices.extend_from_slice(row),
            Err(pos) => {
                col_indices.extend_from_slice(&row[..pos]);
                col_indices.push(i);
                col_indices.extend_from_slice(&row[pos..]);
            }
        }
        row_offsets.push(col_indices.len());
    }
    CsrGraph {
        n: g.n,
        row_offsets,
        col_indices,
        has_self_loops: true,
    }
}

impl CsrGraph {
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// Stored entries, counting both orientations of each edge.
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn has_self_loops(&self) -> bool {
        self.has_self_loops
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn degrees(&self) -> DegreeVector {
        DegreeVector(self.row_offsets.windows(2).map(|w| w[1] - w[0]).collect())
    }

    /// Degrees ignoring any self entry.
    pub fn degrees_without_loops(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                let row = self.neighbors(i);
                row.len() - usize::from(row.binary_search(&i).is_ok())
            })
            .collect()
    }

    /// Each undirected edge once as `(u, v)` with `u <= v`, in CSR order.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.nnz() / 2 + self.n);
        for u in 0..self.n {
            for &v in self.neighbors(u) {
                if u <= v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Number of undirected edges, self loops counted once.
    pub fn num_undirected_edges(&self) -> usize {
        self.undirected_edges().len()
    }
}

/// The exponent `r` in `D̃^{r−1} Ã D̃^{−r}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum NormMode {
    /// `r = 0`: `D̃⁻¹Ã`, rows sum to one.
    RowStochastic,
    /// `r = 1/2`: `D̃^{-1/2} Ã D̃^{-1/2}`.
    Symmetric,
    /// `r = 1`: `ÃD̃⁻¹`, columns sum to one.
    ColumnStochastic,
}

impl NormMode {
    pub fn r(self) -> f64 {
        match self {
            NormMode::RowStochastic => 0.0,
            NormMode::Symmetric => 0.5,
            NormMode::ColumnStochastic => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            NormMode::RowStochastic => 0,
            NormMode::Symmetric => 1,
            NormMode::ColumnStochastic => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(NormMode::RowStochastic),
            1 => Some(NormMode::Symmetric),
            2 => Some(NormMode::ColumnStochastic),
            _ => None,
        }
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormMode::RowStochastic => f.write_str("0"),
            NormMode::Symmetric => f.write_str("0.5"),
            NormMode::ColumnStochastic => f.write_str("1"),
        }
    }
}

impl FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "0" | "0.0" => Ok(NormMode::RowStochastic),
            "0.5" | ".5" => Ok(NormMode::Symmetric),
            "1" | "1.0" => Ok(NormMode::ColumnStochastic),
            other => Err(Error::invalid(format!(
                "normalization exponent must be 0, 0.5 or 1, got {other:?}"
            ))),
        }
    }
}

/// Normalized adjacency `Â` with the sparsity pattern of `Ã`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOperator {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    mode: NormMode,
}

/// Computes `Â(i, j) = d_i^{r−1} · d_j^{−r}` over the entries of a self-looped graph.
pub fn normalize(g: &CsrGraph, mode: NormMode) -> Result<PropagationOperator> {
    if !g.has_self_loops {
        return Err(Error::invalid("normalize requires a graph with self loops"));
    }
    let deg = g.degrees();
    let r = mode.r();
    // Self loops guarantee d_i >= 1.
    assert!(deg.0.iter().all(|&d| d >= 1), "zero degree after self loops");
    let (left, right): (Vec<f64>, Vec<f64>) = deg
        .0
        .iter()
        .map(|&d| {
            let d = d as f64;
            match mode {
                NormMode::RowStochastic => (1.0 / d, 1.0),
                NormMode::Symmetric => (1.0 / d.sqrt(), 1.0 / d.sqrt()),
                NormMode::ColumnStochastic => (1.0, 1.0 / d),
            }
        })
        .unzip();
    debug_assert!(left
        .iter()
        .zip(&deg.0)
        .all(|(l, &d)| (l - (d as f64).powf(r - 1.0)).abs() < 1e-12));

    let mut values = Vec::with_capacity(g.nnz());
    for (i, &l) in left.iter().enumerate() {
        for &j in g.neighbors(i) {
            values.push(l * right[j]);
        }
    }
    Ok(PropagationOperator {
        n: g.n,
        row_offsets: g.row_offsets.clone(),
        col_indices: g.col_indices.clone(),
        values,
        mode,
    })
}

impl PropagationOperator {
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored value at `(i, j)`, or zero outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]];
        match row.binary_search(&j) {
            Ok(p) => self.values[self.row_offsets[i] + p],
            Err(_) => 0.0,
        }
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row_entries(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Exact `Â · X`, parallel over output rows.
pub fn spmm(op: &PropagationOperator, x: &Matrix) -> Result<Matrix> {
    if x.rows() != op.n {
        return Err(Error::shape(format!(
            "operator has {} rows but the dense operand has {}",
            op.n,
            x.rows()
        )));
    }
    let f = x.cols();
    let mut out = Matrix::zeros(op.n, f);
    if f == 0 {
        return Ok(out);
    }
    out.as_mut_slice().par_chunks_mut(f).enumerate().for_each(|(i, dst)| {
        for (j, v) in op.row_entries(i) {
            for (d, s) in dst.iter_mut().zip(x.row(j)) {
                *d += v * s;
            }
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> CsrGraph {
        build_graph(&[(0, 1), (1, 2)], 3, true).unwrap()
    }

    /// `D̃^{r−1} Ã D̃^{−r}` computed densely from the edge list.
    fn dense_oracle(edges: &[(usize, usize)], n: usize, r: f64) -> Matrix {
        let mut a = Matrix::identity(n);
        for &(u, v) in edges {
            a[(u, v)] = 1.0;
            a[(v, u)] = 1.0;
        }
        let d: Vec<f64> = a.row_sums();
        Matrix::from_fn(n, n, |i, j| d[i].powf(r - 1.0) * a[(i, j)] * d[j].powf(-r))
    }

    #[test]
    fn single_edge_is_symmetric() {
        let g = build_graph(&[(0, 1)], 2, true).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn path_degrees() {
        assert_eq!(path3().degrees().0, vec![1, 2, 1]);
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = build_graph(&[(0, 1), (0, 1), (1, 0)], 2, true).unwrap();
        assert_eq!(g.nnz(), 2);
        assert_eq!(g.num_undirected_edges(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(build_graph(&[], 0, true), Err(Error::EmptyGraph)));
        assert!(matches!(
            build_graph(&[(0, 5)], 3, true),
            Err(Error::NodeOutOfRange { id: 5, n: 3 })
        ));
        assert!(build_graph(&[(0, 1)], 2, false).is_err());
        assert!(build_graph(&[(0, 1), (1, 0)], 2, false).is_ok());
    }

    #[test]
    fn self_loops() {
        let g = add_self_loops(&build_graph(&[(0, 1)], 2, true).unwrap());
        assert_eq!(g.degrees().0, vec![2, 2]);

        let empty = add_self_loops(&build_graph(&[], 3, true).unwrap());
        assert_eq!(empty.degrees().0, vec![1, 1, 1]);
        assert_eq!(empty.neighbors(2), &[2]);

        let with_loop = build_graph(&[(0, 1), (1, 1)], 3, true).unwrap();
        let looped = add_self_loops(&with_loop);
        assert_eq!(looped.neighbors(1), &[0, 1]);
        assert_eq!(looped.neighbors(0), &[0, 1]);
        assert!(looped.has_self_loops());
    }

    #[test]
    fn normalize_requires_loops() {
        assert!(normalize(&path3(), NormMode::Symmetric).is_err());
    }

    #[test]
    fn symmetric_two_node_values() {
        let g = add_self_loops(&build_graph(&[(0, 1)], 2, true).unwrap());
        let op = normalize(&g, NormMode::Symmetric).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((op.get(i, j) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn path_symmetric_entry_matches_dense() {
        let op = normalize(&add_self_loops(&path3()), NormMode::Symmetric).unwrap();
        let dense = dense_oracle(&[(0, 1), (1, 2)], 3, 0.5);
        assert!((op.get(0, 1) - 0.408_248_290_463_863).abs() < 1e-12);
        assert!(op.to_dense().max_abs_diff(&dense) < 1e-15);
    }

    #[test]
    fn path_row_stochastic_rows_sum_to_one() {
        let op = normalize(&add_self_loops(&path3()), NormMode::RowStochastic).unwrap();
        for s in op.to_dense().row_sums() {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn spmm_examples() {
        let op = normalize(&add_self_loops(&path3()), NormMode::RowStochastic).unwrap();
        let ones = Matrix::filled(3, 1, 1.0);
        assert!(spmm(&op, &ones).unwrap().max_abs_diff(&ones) < 1e-15);

        let id = normalize(
            &add_self_loops(&build_graph(&[], 4, true).unwrap()),
            NormMode::Symmetric,
        )
        .unwrap();
        let x = Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64 - 4.5);
        assert_eq!(spmm(&id, &x).unwrap(), x);

        let sym = normalize(&add_self_loops(&path3()), NormMode::Symmetric).unwrap();
        let e0 = Matrix::from_rows(&[[1.0], [0.0], [0.0]]);
        let dense = dense_oracle(&[(0, 1), (1, 2)], 3, 0.5);
        let got = spmm(&sym, &e0).unwrap();
        for i in 0..3 {
            assert!((got[(i, 0)] - dense[(i, 0)]).abs() < 1e-15);
        }
        assert!(spmm(&sym, &Matrix::zeros(2, 1)).is_err());
    }
}
