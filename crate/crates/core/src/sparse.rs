//! Fixed sparse graph operators: incidence (gradient) `G`, edge averaging
//! `A`, and the normalized GCN propagation matrix `P`.
//!
//! All operators are stored row-major (CSR) together with a precompiled
//! transpose so that both `op · x` and `opᵀ · x` stream through memory in
//! order. Accumulation order is fixed by construction, so results are
//! bitwise reproducible.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::graph::Graph;
use crate::real::Real;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SparseError {
    #[error("entry ({row}, {col}) outside a {rows}x{cols} operator")]
    OutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("duplicate entry at ({0}, {1})")]
    Duplicate(usize, usize),
    #[error("dimension mismatch: operator is {op_rows}x{op_cols}, operand has {x_rows} rows")]
    DimensionMismatch {
        op_rows: usize,
        op_cols: usize,
        x_rows: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Csr<T> {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> Csr<T> {
    /// `entries` must already be sorted by `(row, col)`.
    fn from_sorted(rows: usize, entries: &[(usize, usize, T)]) -> Self {
        let mut row_ptr = vec![0; rows + 1];
        for &(r, _, _) in entries {
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            row_ptr,
            col_idx: entries.iter().map(|e| e.1).collect(),
            values: entries.iter().map(|e| e.2).collect(),
        }
    }

    fn apply(&self, rows: usize, x: ArrayView2<'_, T>) -> Array2<T> {
        let d = x.ncols();
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut out = Array2::<T>::zeros((rows, d));
        let os = out.as_slice_mut().expect("fresh array");
        for r in 0..rows {
            let dst = &mut os[r * d..(r + 1) * d];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.values[k];
                let src = &xs[self.col_idx[k] * d..(self.col_idx[k] + 1) * d];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o = *o + v * s;
                }
            }
        }
        out
    }
}

/// Immutable sparse matrix with forward and transposed application.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator<T> {
    rows: usize,
    cols: usize,
    forward: Csr<T>,
    transposed: Csr<T>,
}

impl<T: Real> SparseOperator<T> {
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, T)>,
    ) -> Result<Self, SparseError> {
        for &(row, col, _) in &entries {
            if row >= rows || col >= cols {
                return Err(SparseError::OutOfRange {
                    row,
                    col,
                    rows,
                    cols,
                });
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(SparseError::Duplicate(w[0].0, w[0].1));
        }
        let forward = Csr::from_sorted(rows, &entries);
        let mut flipped: Vec<_> = entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        // Stable: within a column, rows stay in ascending order.
        flipped.sort_by_key(|e| e.0);
        let transposed = Csr::from_sorted(cols, &flipped);
        Ok(Self {
            rows,
            cols,
            forward,
            transposed,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, T::one())).collect())
            .expect("identity is valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.forward.values.len()
    }

    /// Entries in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for k in self.forward.row_ptr[r]..self.forward.row_ptr[r + 1] {
                out.push((r, self.forward.col_idx[k], self.forward.values[k]));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<T> {
        let mut d = Array2::zeros((self.rows, self.cols));
        for (r, c, v) in self.triplets() {
            d[[r, c]] = v;
        }
        d
    }

    /// `op · x`.
    pub fn spmm(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>, SparseError> {
        if x.nrows() != self.cols {
            return Err(self.mismatch(x.nrows()));
        }
        Ok(self.forward.apply(self.rows, x))
    }

    /// `opᵀ · x`.
    pub fn spmm_transposed(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>, SparseError> {
        if x.nrows() != self.rows {
            return Err(self.mismatch(x.nrows()));
        }
        Ok(self.transposed.apply(self.cols, x))
    }

    fn mismatch(&self, x_rows: usize) -> SparseError {
        SparseError::DimensionMismatch {
            op_rows: self.rows,
            op_cols: self.cols,
            x_rows,
        }
    }
}

/// Graph gradient `G` (m × n): row `e` for edge `tail -> head` holds `-1`
/// at `tail` and `+1` at `head`. `Gᵀ` is the graph divergence.
pub fn build_gradient<T: Real>(g: &Graph) -> SparseOperator<T> {
    let entries = g
        .edges()
        .iter()
        .enumerate()
        .flat_map(|(e, &(t, h))| [(e, t, -T::one()), (e, h, T::one())])
        .collect();
    SparseOperator::from_triplets(g.m(), g.n(), entries).expect("valid graph")
}

/// Edge averaging (m × n): row `e` holds `1/2` at both endpoints.
pub fn build_averaging<T: Real>(g: &Graph) -> SparseOperator<T> {
    let half = T::of(0.5);
    let entries = g
        .edges()
        .iter()
        .enumerate()
        .flat_map(|(e, &(t, h))| [(e, t, half), (e, h, half)])
        .collect();
    SparseOperator::from_triplets(g.m(), g.n(), entries).expect("valid graph")
}

/// Symmetric normalized propagation `D̃^{-1/2} (A + I) D̃^{-1/2}` with
/// self-loops added to every node.
pub fn build_gcn_propagation<T: Real>(g: &Graph) -> SparseOperator<T> {
    let deg: Vec<f64> = g.degrees().into_iter().map(|d| d as f64 + 1.0).collect();
    let mut entries = Vec::with_capacity(g.n() + 2 * g.m());
    for (i, &d) in deg.iter().enumerate() {
        entries.push((i, i, T::of(1.0 / d)));
    }
    for &(t, h) in g.edges() {
        let w = T::of(1.0 / (deg[t] * deg[h]).sqrt());
        entries.push((t, h, w));
        entries.push((h, t, w));
    }
    SparseOperator::from_triplets(g.n(), g.n(), entries).expect("valid graph")
}

/// The three operators derived from one graph, shared read-only.
#[derive(Debug, Clone)]
pub struct GraphOperators<T> {
    pub graph: Graph,
    pub gradient: Arc<SparseOperator<T>>,
    pub averaging: Arc<SparseOperator<T>>,
    pub propagation: Arc<SparseOperator<T>>,
}

impl<T: Real> GraphOperators<T> {
    pub fn new(graph: Graph) -> Self {
        Self {
            gradient: Arc::new(build_gradient(&graph)),
            averaging: Arc::new(build_averaging(&graph)),
            propagation: Arc::new(build_gcn_propagation(&graph)),
            graph,
        }
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn m(&self) -> usize {
        self.graph.m()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path3() -> Graph {
        Graph::from_oriented(3, vec![(0, 1), (1, 2)]).unwrap()
    }

    fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Graph::from_oriented(n, edges).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn gradient_of_path() {
        let g = build_gradient::<f64>(&path3());
        assert_eq!(g.to_dense(), array![[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0]]);
        assert_eq!(g.nnz(), 4);
        let u = array![[1.0], [0.0], [0.0]];
        assert_eq!(g.spmm(u.view()).unwrap(), array![[-1.0], [0.0]]);
        let y = array![[1.0], [0.0]];
        assert_eq!(
            g.spmm_transposed(y.view()).unwrap(),
            array![[-1.0], [1.0], [0.0]]
        );
    }

    #[test]
    fn gradient_of_cycle_matches_dense_construction() {
        let g = Graph::from_oriented(4, vec![(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let mut dense = Array2::<f64>::zeros((4, 4));
        for e in 0..4 {
            dense[[e, e]] = -1.0;
            dense[[e, (e + 1) % 4]] = 1.0;
        }
        assert_eq!(build_gradient::<f64>(&g).to_dense(), dense);
    }

    #[test]
    fn averaging_of_path_and_constants() {
        let a = build_averaging::<f64>(&path3());
        assert_eq!(a.to_dense(), array![[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]]);
        let c = Array2::from_elem((3, 2), 4.0);
        assert_eq!(a.spmm(c.view()).unwrap(), Array2::from_elem((2, 2), 4.0));
    }

    #[test]
    fn averaging_matches_dense_on_random_graph() {
        let g = random_graph(20, 0.3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_matrix(20, 3, &mut rng);
        let mut dense = Array2::<f64>::zeros((g.m(), 20));
        for (e, &(t, h)) in g.edges().iter().enumerate() {
            dense[[e, t]] = 0.5;
            dense[[e, h]] = 0.5;
        }
        let got = build_averaging::<f64>(&g).spmm(u.view()).unwrap();
        assert!(max_abs_diff(&got, &dense.dot(&u)) < 1e-12);
    }

    #[test]
    fn propagation_small_cases() {
        let single = Graph::from_oriented(1, vec![]).unwrap();
        assert_eq!(build_gcn_propagation::<f64>(&single).to_dense(), array![[1.0]]);
        let k3 = Graph::from_oriented(3, vec![(0, 1), (0, 2), (1, 2)]).unwrap();
        let p = build_gcn_propagation::<f64>(&k3).to_dense();
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn propagation_is_symmetric_with_isolated_nodes() {
        let g = Graph::from_oriented(5, vec![(0, 1), (1, 2), (0, 2), (2, 3)]).unwrap();
        let p = build_gcn_propagation::<f64>(&g).to_dense();
        assert_eq!(p, p.t());
        assert_eq!(p[[4, 4]], 1.0);
    }

    #[test]
    fn identity_and_mismatch() {
        let id = SparseOperator::<f64>::identity(3);
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(id.spmm(x.view()).unwrap(), x);
        assert!(matches!(
            id.spmm(Array2::<f64>::zeros((2, 1)).view()),
            Err(SparseError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            SparseOperator::<f64>::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]),
            Err(SparseError::Duplicate(0, 0))
        ));
    }

    #[test]
    fn random_sparse_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut entries = Vec::new();
        for r in 0..50 {
            for c in 0..50 {
                if rng.random::<f64>() < 0.1 {
                    entries.push((r, c, rng.random_range(-2.0..2.0)));
                }
            }
        }
        let op = SparseOperator::from_triplets(50, 50, entries).unwrap();
        let x = random_matrix(50, 4, &mut rng);
        let dense = op.to_dense();
        let scale = dense.dot(&x).iter().fold(1.0f64, |m, v| m.max(v.abs()));
        assert!(max_abs_diff(&op.spmm(x.view()).unwrap(), &dense.dot(&x)) <= 1e-10 * scale);
        assert!(
            max_abs_diff(
                &op.spmm_transposed(x.view()).unwrap(),
                &dense.t().dot(&x)
            ) <= 1e-10 * scale
        );
    }

    #[test]
    fn divergence_has_zero_column_sums() {
        let g = random_graph(40, 0.2, 3);
        let grad = build_gradient::<f64>(&g);
        let ones = Array2::from_elem((40, 1), 1.0);
        assert!(grad.spmm(ones.view()).unwrap().iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = random_matrix(g.m(), 2, &mut rng);
        let div = grad.spmm_transposed(y.view()).unwrap();
        let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for col in div.columns() {
            let s: f64 = col.sum();
            assert!(s.abs() <= g.m() as f64 * f64::EPSILON * ymax);
        }
    }

    #[test]
    fn propagation_spectral_radius_at_most_one() {
        let g = random_graph(60, 0.1, 8);
        let p = build_gcn_propagation::<f64>(&g);
        let mut v = Array2::from_elem((60, 1), 1.0);
        let mut lambda = 0.0;
        for _ in 0..500 {
            let w = p.spmm(v.view()).unwrap();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w / norm;
        }
        assert!(lambda <= 1.0 + 1e-9, "lambda = {lambda}");
        // D̃^{1/2}·1 is an eigenvector with eigenvalue exactly 1.
        let deg = g.degrees();
        let s = Array1::from_iter(deg.iter().map(|&d| ((d + 1) as f64).sqrt()));
        let ps = p.spmm(s.clone().insert_axis(ndarray::Axis(1)).view()).unwrap();
        for (a, b) in ps.iter().zip(s.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
