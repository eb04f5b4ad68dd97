//! Compressed sparse row matrices and the symmetric GCN normalisation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row count above which `spmm` splits rows across threads.
const PAR_ROWS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Per-node degrees of `A + I` (or `A` without self-loops).
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeVector {
    pub degrees: Vec<f64>,
}

impl CsrMatrix {
    /// Validates raw CSR arrays.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != n_rows + 1 || row_ptr[0] != 0 {
            return Err(Error::Structural(
                "row_ptr must have n_rows+1 entries starting at 0".into(),
            ));
        }
        if *row_ptr.last().unwrap() != col_idx.len() || col_idx.len() != values.len() {
            return Err(Error::Structural("row_ptr end must equal nnz".into()));
        }
        for r in 0..n_rows {
            if row_ptr[r] > row_ptr[r + 1] {
                return Err(Error::Structural(format!("row_ptr decreases at row {r}")));
            }
            let cols = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Structural(format!(
                    "row {r} columns not strictly increasing"
                )));
            }
            if cols.last().is_some_and(|&c| c >= n_cols) {
                return Err(Error::Structural(format!("row {r} column out of range")));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        if let Some(&(r, c, _)) = sorted.iter().find(|&&(r, c, _)| r >= n_rows || c >= n_cols) {
            return Err(Error::Structural(format!(
                "triplet ({r},{c}) outside {n_rows}x{n_cols}"
            )));
        }
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self::new(n_rows, n_cols, row_ptr, col_idx, values)
    }

    /// Unweighted symmetric adjacency from an undirected edge list.
    /// Self-edges and duplicates are dropped.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Structural(format!(
                    "edge ({a},{b}) outside {n} nodes"
                )));
            }
            if a != b {
                pairs.push((a, b));
                pairs.push((b, a));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let triplets: Vec<_> = pairs.into_iter().map(|(a, b)| (a, b, 1.0)).collect();
        Self::from_triplets(n, n, &triplets)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(col, value)` pairs stored in row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .binary_search(&c)
            .ok()
            .map(|k| self.values[span.start + k])
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    /// Structural and numeric symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|r| self.row(r).all(|(c, v)| self.get(c, r) == Some(v)))
    }

    /// Undirected edges `(a, b)` with `a < b`, in row-major order.
    pub fn upper_edges(&self) -> Vec<(usize, usize)> {
        (0..self.n_rows)
            .flat_map(|r| {
                self.row(r)
                    .filter(move |&(c, _)| c > r)
                    .map(move |(c, _)| (r, c))
            })
            .collect()
    }

    /// Row sums of `A` (plus one per node when `add_self_loops`).
    pub fn degrees(&self, add_self_loops: bool) -> DegreeVector {
        let loop_weight = if add_self_loops { 1.0 } else { 0.0 };
        let degrees = (0..self.n_rows)
            .map(|r| {
                let existing_loop = self.get(r, r).is_some();
                let base: f64 = self.row(r).map(|(_, v)| v).sum();
                if existing_loop {
                    base
                } else {
                    base + loop_weight
                }
            })
            .collect();
        DegreeVector { degrees }
    }

    /// `S · H` with rows summed in ascending column order.
    pub fn spmm(&self, dense: &Tensor) -> Result<Tensor> {
        if self.n_cols != dense.rows() {
            return Err(Error::Structural(format!(
                "spmm: sparse {}x{} times dense {}x{}",
                self.n_rows,
                self.n_cols,
                dense.rows(),
                dense.cols()
            )));
        }
        let d = dense.cols();
        let mut out = vec![0.0; self.n_rows * d];
        if d == 0 {
            return Tensor::from_vec(self.n_rows, 0, out);
        }
        let kernel = |(r, out_row): (usize, &mut [f64])| {
            for (c, v) in self.row(r) {
                for (o, h) in out_row.iter_mut().zip(dense.row(c)) {
                    *o += v * h;
                }
            }
        };
        if self.n_rows >= PAR_ROWS {
            out.par_chunks_mut(d).enumerate().for_each(kernel);
        } else {
            out.chunks_mut(d).enumerate().for_each(kernel);
        }
        Tensor::from_vec(self.n_rows, d, out)
    }

    /// `Sᵀ · G`, used for the backward pass of `spmm`.
    pub fn spmm_transpose(&self, dense: &Tensor) -> Result<Tensor> {
        if self.n_rows != dense.rows() {
            return Err(Error::Structural(format!(
                "spmm_transpose: sparse {}x{} (transposed) times dense {}x{}",
                self.n_rows,
                self.n_cols,
                dense.rows(),
                dense.cols()
            )));
        }
        let d = dense.cols();
        let mut out = Tensor::zeros(self.n_cols, d);
        for r in 0..self.n_rows {
            let g = dense.row(r);
            for (c, v) in self.row(r) {
                let dst = &mut out.data_mut()[c * d..(c + 1) * d];
                for (o, x) in dst.iter_mut().zip(g) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}`, or `D^{-1/2} A D^{-1/2}` without self-loops.
pub fn normalize_adjacency(adj: &CsrMatrix, add_self_loops: bool) -> Result<CsrMatrix> {
    if adj.n_rows != adj.n_cols {
        return Err(Error::Structural(format!(
            "adjacency must be square, got {}x{}",
            adj.n_rows, adj.n_cols
        )));
    }
    let n = adj.n_rows;
    let deg = adj.degrees(add_self_loops);
    if let Some(node) = deg.degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::DegenerateDegree { node });
    }
    let inv_sqrt: Vec<f64> = deg.degrees.iter().map(|d| 1.0 / d.sqrt()).collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(adj.nnz() + n);
    let mut values = Vec::with_capacity(adj.nnz() + n);
    row_ptr.push(0);
    for r in 0..n {
        let mut pending_loop = add_self_loops && adj.get(r, r).is_none();
        for (c, v) in adj.row(r) {
            if pending_loop && c > r {
                col_idx.push(r);
                values.push(inv_sqrt[r] * inv_sqrt[r]);
                pending_loop = false;
            }
            col_idx.push(c);
            values.push(v * inv_sqrt[r] * inv_sqrt[c]);
        }
        if pending_loop {
            col_idx.push(r);
            values.push(inv_sqrt[r] * inv_sqrt[r]);
        }
        row_ptr.push(col_idx.len());
    }
    CsrMatrix::new(n, n, row_ptr, col_idx, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> CsrMatrix {
        CsrMatrix::from_undirected_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn two_node_edge_normalizes_to_halves() {
        let adj = CsrMatrix::from_undirected_edges(2, &[(0, 1)]).unwrap();
        let a = normalize_adjacency(&adj, true).unwrap();
        assert_eq!(a.nnz(), 4);
        assert!(a.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn empty_graph_with_loops_is_identity() {
        let adj = CsrMatrix::from_undirected_edges(4, &[]).unwrap();
        assert_eq!(
            normalize_adjacency(&adj, true).unwrap(),
            CsrMatrix::identity(4)
        );
    }

    #[test]
    fn path_graph_off_diagonal_entry() {
        let a = normalize_adjacency(&path3(), true).unwrap();
        // degrees of A+I are (2, 3, 2)
        let expected = 1.0 / (2.0f64 * 3.0).sqrt();
        assert!((a.get(0, 1).unwrap() - expected).abs() < 1e-15);
        assert!((a.get(0, 1).unwrap() - 0.408_248_290_463_863).abs() < 1e-12);
        assert!(a.is_symmetric());
        assert!(a.values().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn non_square_is_structural_error() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0)]).unwrap();
        assert!(matches!(
            normalize_adjacency(&m, true),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn isolated_node_without_loops_is_degenerate() {
        let adj = CsrMatrix::from_undirected_edges(3, &[(0, 1)]).unwrap();
        assert!(matches!(
            normalize_adjacency(&adj, false),
            Err(Error::DegenerateDegree { node: 2 })
        ));
    }

    #[test]
    fn identity_spmm_is_noop() {
        let h = Tensor::from_rows(&[vec![1.0, -2.0], vec![3.5, 0.25], vec![0.0, 9.0]]).unwrap();
        assert_eq!(CsrMatrix::identity(3).spmm(&h).unwrap(), h);
    }

    #[test]
    fn half_matrix_spmm() {
        let s =
            CsrMatrix::from_triplets(2, 2, &[(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)])
                .unwrap();
        let out = s.spmm(&Tensor::identity(2)).unwrap();
        assert_eq!(out, Tensor::filled(2, 2, 0.5));
    }

    #[test]
    fn spmm_dimension_mismatch() {
        assert!(CsrMatrix::identity(3).spmm(&Tensor::zeros(2, 2)).is_err());
    }

    #[test]
    fn invalid_csr_is_rejected() {
        assert!(CsrMatrix::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
    }

    #[test]
    fn vertex_transitive_graph_gives_equal_rows() {
        // 5-cycle
        let edges: Vec<_> = (0..5).map(|i| (i, (i + 1) % 5)).collect();
        let a = normalize_adjacency(&CsrMatrix::from_undirected_edges(5, &edges).unwrap(), true)
            .unwrap();
        let out = a.spmm(&Tensor::filled(5, 3, 1.0)).unwrap();
        for r in 1..5 {
            assert_eq!(out.row(r), out.row(0));
        }
    }
}
