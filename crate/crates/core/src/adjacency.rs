//! Adjacency matrices for graph convolutions.
//!
//! Two flavours are built from a [`FlowView`]: the flow-weighted
//! geographical adjacency (Moore neighbours only) and the full flow
//! adjacency. Entries that touch a masked interest node are never read from
//! the data; they are approximated by averaging the flows into the interest
//! node's regular geographic neighbours.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guard::FlowView;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(n_rows: usize, n_cols: usize, entries: &BTreeMap<(usize, usize), f64>) -> Self {
        let mut indptr = vec![0; n_rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len());
        for (&(i, j), &v) in entries {
            if v == 0.0 {
                continue;
            }
            indptr[i + 1] += 1;
            indices.push(j);
            data.push(v);
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        SparseMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.n_rows, self.n_cols]
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().copied().zip(self.data[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(pos) => self.data[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// `self · rhs` for a dense right-hand side.
    pub fn matmul_dense(&self, rhs: &Array2<f64>) -> Result<Array2<f64>> {
        if rhs.nrows() != self.n_cols {
            return Err(Error::Shape {
                op: "sparse matmul",
                lhs: self.shape(),
                rhs: [rhs.nrows(), rhs.ncols()],
            });
        }
        let mut out = Array2::zeros((self.n_rows, rhs.ncols()));
        for i in 0..self.n_rows {
            let mut row = out.row_mut(i);
            for (j, v) in self.row(i) {
                row.scaled_add(v, &rhs.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs`.
    pub fn transpose_matmul_dense(&self, rhs: &Array2<f64>) -> Result<Array2<f64>> {
        if rhs.nrows() != self.n_rows {
            return Err(Error::Shape {
                op: "sparse transpose matmul",
                lhs: [self.n_cols, self.n_rows],
                rhs: [rhs.nrows(), rhs.ncols()],
            });
        }
        let mut out = Array2::zeros((self.n_cols, rhs.ncols()));
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                out.row_mut(j).scaled_add(v, &rhs.row(i));
            }
        }
        Ok(out)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|i| self.row(i).all(|(j, v)| (self.get(j, i) - v).abs() <= tol))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyKind {
    Geo,
    Flow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyView {
    pub kind: AdjacencyKind,
    pub matrix: SparseMatrix,
    pub self_loops_added: bool,
    /// Interest nodes whose approximated entries fell back to zero because
    /// they have no regular geographic neighbour.
    pub isolated_interest: Vec<usize>,
}

/// Approximates the withheld flows of interest nodes.
///
/// For interest node `j` with regular geographic neighbours `N(j)`, the
/// entry towards a regular node `i` is `mean_{k ∈ N(j)} W_ik`; between two
/// interest nodes the average is taken over both neighbourhoods.
struct InterestApproximation {
    /// Per interest node, the approximated row restricted to regular nodes.
    rows: BTreeMap<usize, Vec<f64>>,
    neighborhoods: BTreeMap<usize, Vec<usize>>,
    isolated: Vec<usize>,
}

impl InterestApproximation {
    fn build(view: &FlowView<'_>) -> Self {
        let net = view.network();
        let n = net.n();
        let mut rows = BTreeMap::new();
        let mut neighborhoods = BTreeMap::new();
        let mut isolated = Vec::new();
        for j in view.masked_nodes() {
            let hood: Vec<usize> = net.geo_neighbors(j).into_iter().filter(|&k| !view.is_masked(k)).collect();
            let mut row = vec![0.0; n];
            if hood.is_empty() {
                log::warn!("interest node {j} has no regular geographic neighbour; approximated flows set to 0");
                isolated.push(j);
            } else {
                let scale = 1.0 / hood.len() as f64;
                for &k in &hood {
                    for &e in net.incident_edges(k) {
                        let i = net.other_end(e, k);
                        if view.is_masked(i) {
                            continue;
                        }
                        let w = view.edge_flow(e).expect("both ends regular");
                        row[i] += scale * w;
                    }
                }
            }
            rows.insert(j, row);
            neighborhoods.insert(j, hood);
        }
        InterestApproximation {
            rows,
            neighborhoods,
            isolated,
        }
    }

    /// `W̃_ij` for interest `j` and any other node `i`.
    fn entry(&self, i: usize, j: usize) -> f64 {
        let row = &self.rows[&j];
        match self.neighborhoods.get(&i) {
            None => row[i],
            Some(hood) if hood.is_empty() => 0.0,
            Some(hood) => hood.iter().map(|&l| row[l]).sum::<f64>() / hood.len() as f64,
        }
    }
}

fn symmetrized(n: usize, entries: BTreeMap<(usize, usize), f64>) -> SparseMatrix {
    let mut sym = BTreeMap::new();
    for (&(i, j), &v) in &entries {
        let t = entries.get(&(j, i)).copied().unwrap_or(0.0);
        let avg = (v + t) / 2.0;
        if avg != 0.0 {
            sym.insert((i, j), avg);
            sym.insert((j, i), avg);
        }
    }
    SparseMatrix::from_triplets(n, n, &sym)
}

/// Flow-weighted geographical adjacency: `W_ij` for Moore-adjacent cells,
/// zero elsewhere.
pub fn geo_adjacency(view: &FlowView<'_>) -> AdjacencyView {
    let net = view.network();
    let approx = InterestApproximation::build(view);
    let mut entries = BTreeMap::new();
    for i in 0..net.n() {
        for j in net.geo_neighbors(i) {
            let w = if view.is_masked(j) {
                approx.entry(i, j)
            } else if view.is_masked(i) {
                approx.entry(j, i)
            } else {
                view.flow(i, j).expect("both ends regular")
            };
            if w != 0.0 {
                entries.insert((i, j), w);
            }
        }
    }
    AdjacencyView {
        kind: AdjacencyKind::Geo,
        matrix: symmetrized(net.n(), entries),
        self_loops_added: false,
        isolated_interest: approx.isolated,
    }
}

/// Flow adjacency: observed `W_ij` between regular nodes, approximated
/// entries for every pair touching an interest node.
pub fn flow_adjacency(view: &FlowView<'_>) -> AdjacencyView {
    let net = view.network();
    let n = net.n();
    let approx = InterestApproximation::build(view);
    let mut entries = BTreeMap::new();
    for (e, &(i, j)) in net.edges().iter().enumerate() {
        if view.is_masked(i) || view.is_masked(j) {
            continue;
        }
        let w = view.edge_flow(e).expect("both ends regular");
        if w != 0.0 {
            entries.insert((i, j), w);
            entries.insert((j, i), w);
        }
    }
    for &j in approx.rows.keys() {
        for i in (0..n).filter(|&i| i != j) {
            let w = approx.entry(i, j);
            if w != 0.0 {
                entries.insert((i, j), w);
                if !view.is_masked(i) {
                    entries.insert((j, i), w);
                }
            }
        }
    }
    AdjacencyView {
        kind: AdjacencyKind::Flow,
        matrix: symmetrized(n, entries),
        self_loops_added: false,
        isolated_interest: approx.isolated,
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the row sums of `A + I`.
pub fn normalized_adjacency(adj: &AdjacencyView) -> SparseMatrix {
    let m = &adj.matrix;
    let n = m.shape()[0];
    let mut with_loops = BTreeMap::new();
    for i in 0..n {
        for (j, v) in m.row(i) {
            with_loops.insert((i, j), v);
        }
        if !adj.self_loops_added {
            *with_loops.entry((i, i)).or_insert(0.0) += 1.0;
        }
    }
    let mut degree = vec![0.0; n];
    for (&(i, _), &v) in &with_loops {
        degree[i] += v;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    for (&(i, j), v) in with_loops.iter_mut() {
        *v *= inv_sqrt[i] * inv_sqrt[j];
    }
    SparseMatrix::from_triplets(n, n, &with_loops)
}
