//! The attributed flow graph: grid cells as nodes, symmetric flows as edge
//! weights, plus dense node and edge feature tables.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Sparse square matrix of origin-destination counts, keyed by `(row, col)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OdMatrix {
    n: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl OdMatrix {
    pub fn new(n: usize) -> Self {
        OdMatrix {
            n,
            entries: BTreeMap::new(),
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut m = OdMatrix::new(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Length(row.len(), n));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    m.entries.insert((i, j), v);
                }
            }
        }
        Ok(m)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (&(i, j), &v) in &self.entries {
            out[i][j] = v;
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0.0)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        *self.entries.entry((i, j)).or_insert(0.0) += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        if v == 0.0 {
            self.entries.remove(&(i, j));
        } else {
            self.entries.insert((i, j), v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `‖W − Wᵀ‖₁ / ‖W‖₁`, zero for an empty matrix.
    pub fn asymmetry(&self) -> f64 {
        let total: f64 = self.entries.values().map(|v| v.abs()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let mut diff = 0.0;
        for (&(i, j), &v) in &self.entries {
            diff += (v - self.get(j, i)).abs();
        }
        for (&(i, j), _) in &self.entries {
            if !self.entries.contains_key(&(j, i)) {
                // counted once above as |v - 0|; the mirrored zero entry
                // contributes the same amount again
                diff += self.get(i, j).abs();
            }
        }
        diff / total
    }

    fn validate(&self) -> Result<()> {
        for (&(i, j), &v) in &self.entries {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::NegativeFlow { row: i, col: j, value: v });
            }
            if i == j && v != 0.0 {
                return Err(Error::DiagonalFlow { node: i, value: v });
            }
        }
        Ok(())
    }
}

/// `(W + Wᵀ) / 2`.
pub fn symmetrize(raw: &OdMatrix) -> Result<OdMatrix> {
    raw.validate()?;
    let mut out = OdMatrix::new(raw.n);
    for ((i, j), v) in raw.iter() {
        if i == j {
            continue;
        }
        let mirrored = raw.get(j, i);
        out.set(i, j, (v + mirrored) / 2.0);
        out.set(j, i, (v + mirrored) / 2.0);
    }
    Ok(out)
}

/// One undirected edge as handed to [`FlowNetwork::from_parts`].
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub src: usize,
    pub dst: usize,
    pub flow: f64,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTable {
    pub ids: Vec<u64>,
    pub cells: Vec<usize>,
    pub feature_names: Vec<String>,
    pub features: Array2<f64>,
}

/// Weighted attributed graph with symmetric flows.
///
/// Edges are unordered node pairs stored as `(src, dst)` with `src < dst`
/// and sorted. Every edge carries a feature vector; the flow of a pair that
/// is not an edge is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNetwork {
    grid: GridSpec,
    node_ids: Vec<u64>,
    node_cells: Vec<usize>,
    node_feature_names: Vec<String>,
    node_features: Array2<f64>,
    edge_feature_names: Vec<String>,
    edges: Vec<(usize, usize)>,
    edge_features: Array2<f64>,
    flows: Vec<f64>,
    edge_lookup: HashMap<(usize, usize), usize>,
    incident: Vec<Vec<usize>>,
    cell_to_node: HashMap<usize, usize>,
}

impl FlowNetwork {
    pub fn from_parts(
        grid: GridSpec,
        nodes: NodeTable,
        edge_feature_names: Vec<String>,
        mut edge_records: Vec<EdgeRecord>,
    ) -> Result<Self> {
        grid.validate()?;
        let n = nodes.ids.len();
        if n == 0 {
            return Err(Error::InvalidNetwork("network has no nodes".into()));
        }
        if nodes.cells.len() != n || nodes.features.nrows() != n {
            return Err(Error::InvalidNetwork(format!(
                "node table sizes disagree: {} ids, {} cells, {} feature rows",
                n,
                nodes.cells.len(),
                nodes.features.nrows()
            )));
        }
        if nodes.features.ncols() != nodes.feature_names.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} node feature names for {} columns",
                nodes.feature_names.len(),
                nodes.features.ncols()
            )));
        }
        let mut cell_to_node = HashMap::with_capacity(n);
        let mut id_seen = HashMap::with_capacity(n);
        for (i, (&cell, &id)) in nodes.cells.iter().zip(&nodes.ids).enumerate() {
            if cell >= grid.n_cells() {
                return Err(Error::InvalidNetwork(format!("node {id}: cell {cell} outside grid")));
            }
            if let Some(other) = cell_to_node.insert(cell, i) {
                return Err(Error::InvalidNetwork(format!(
                    "nodes {} and {id} share cell {cell}",
                    nodes.ids[other]
                )));
            }
            if id_seen.insert(id, i).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate node id {id}")));
            }
        }
        if let Some(((r, c), v)) = nodes.features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidNetwork(format!(
                "non-finite node feature {v} at node {} column {}",
                nodes.ids[r], nodes.feature_names[c]
            )));
        }

        let k = edge_feature_names.len();
        for rec in edge_records.iter_mut() {
            if rec.src == rec.dst {
                return Err(Error::SelfPair(rec.src));
            }
            if rec.src >= n || rec.dst >= n {
                return Err(Error::InvalidNetwork(format!(
                    "edge ({}, {}) references a missing node",
                    rec.src, rec.dst
                )));
            }
            if rec.src > rec.dst {
                std::mem::swap(&mut rec.src, &mut rec.dst);
            }
        }
        edge_records.sort_by_key(|r| (r.src, r.dst));
        let m = edge_records.len();
        let mut edges = Vec::with_capacity(m);
        let mut flows = Vec::with_capacity(m);
        let mut edge_features = Array2::zeros((m, k));
        let mut edge_lookup = HashMap::with_capacity(m);
        let mut incident = vec![Vec::new(); n];
        for (e, rec) in edge_records.into_iter().enumerate() {
            if rec.features.len() != k {
                return Err(Error::InvalidNetwork(format!(
                    "edge ({}, {}) has {} features, expected {k}",
                    rec.src,
                    rec.dst,
                    rec.features.len()
                )));
            }
            if !(rec.flow >= 0.0) || !rec.flow.is_finite() {
                return Err(Error::NegativeFlow {
                    row: rec.src,
                    col: rec.dst,
                    value: rec.flow,
                });
            }
            if let Some(f) = rec.features.iter().find(|f| !f.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "non-finite edge feature {f} on ({}, {})",
                    rec.src, rec.dst
                )));
            }
            if edge_lookup.insert((rec.src, rec.dst), e).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate edge ({}, {})", rec.src, rec.dst)));
            }
            edge_features.row_mut(e).assign(&ArrayView1::from(&rec.features));
            incident[rec.src].push(e);
            incident[rec.dst].push(e);
            edges.push((rec.src, rec.dst));
            flows.push(rec.flow);
        }

        Ok(FlowNetwork {
            grid,
            node_ids: nodes.ids,
            node_cells: nodes.cells,
            node_feature_names: nodes.feature_names,
            node_features: nodes.features,
            edge_feature_names,
            edges,
            edge_features,
            flows,
            edge_lookup,
            incident,
            cell_to_node,
        })
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn p(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn k(&self) -> usize {
        self.edge_features.ncols()
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn node_ids(&self) -> &[u64] {
        &self.node_ids
    }

    pub fn node_cell(&self, i: usize) -> usize {
        self.node_cells[i]
    }

    pub fn node_at_cell(&self, cell: usize) -> Option<usize> {
        self.cell_to_node.get(&cell).copied()
    }

    pub fn node_feature_names(&self) -> &[String] {
        &self.node_feature_names
    }

    pub fn edge_feature_names(&self) -> &[String] {
        &self.edge_feature_names
    }

    pub fn node_features(&self) -> ArrayView2<'_, f64> {
        self.node_features.view()
    }

    pub fn node_feature_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.node_features.row(i)
    }

    pub fn edge_features(&self) -> ArrayView2<'_, f64> {
        self.edge_features.view()
    }

    pub fn edge_feature_row(&self, e: usize) -> ArrayView1<'_, f64> {
        self.edge_features.row(e)
    }

    pub fn edge_feature_index(&self, name: &str) -> Option<usize> {
        self.edge_feature_names.iter().position(|n| n == name)
    }

    /// Endpoints of edge `e`, smaller index first.
    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_id(&self, i: usize, j: usize) -> Option<usize> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edge_lookup.get(&key).copied()
    }

    pub fn incident_edges(&self, i: usize) -> &[usize] {
        &self.incident[i]
    }

    pub fn other_end(&self, e: usize, i: usize) -> usize {
        let (a, b) = self.edges[e];
        if a == i {
            b
        } else {
            a
        }
    }

    /// Ground-truth flows indexed by edge id. Model fitting must go through
    /// [`crate::guard::FlowView`] instead.
    pub fn flows_unguarded(&self) -> &[f64] {
        &self.flows
    }

    /// Ground-truth `W_ij`; zero off the edge set and on the diagonal.
    pub fn flow_unguarded(&self, i: usize, j: usize) -> f64 {
        self.edge_id(i, j).map_or(0.0, |e| self.flows[e])
    }

    pub fn total_flow(&self) -> f64 {
        self.flows.iter().sum()
    }

    /// Existing nodes whose cells are Moore-adjacent to node `i`'s cell.
    pub fn geo_neighbors(&self, i: usize) -> Vec<usize> {
        let (row, col) = self.grid.row_col(self.node_cells[i]);
        let mut out = Vec::with_capacity(8);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let r = row as i64 + dr;
                let c = col as i64 + dc;
                if r < 0 || c < 0 || r >= self.grid.n_rows as i64 || c >= self.grid.n_cols as i64 {
                    continue;
                }
                if let Some(j) = self.node_at_cell(self.grid.cell_index(r as usize, c as usize)) {
                    out.push(j);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Full symmetric flow matrix as an [`OdMatrix`].
    pub fn flow_matrix(&self) -> OdMatrix {
        let mut w = OdMatrix::new(self.n());
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            w.set(i, j, self.flows[e]);
            w.set(j, i, self.flows[e]);
        }
        w
    }
}
