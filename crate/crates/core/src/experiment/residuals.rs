//! Per-node residual maps over test-interest nodes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::network::FlowNetwork;
use crate::split::SplitAssignment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeResidual {
    pub node: usize,
    pub node_id: u64,
    pub cell: usize,
    pub row: usize,
    pub col: usize,
    pub n_edges: usize,
    /// Mean `|y - ŷ|` over the node's test edges.
    pub mae: f64,
    /// Mean `ŷ - y`.
    pub signed_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualMap {
    pub nodes: Vec<NodeResidual>,
}

/// Aggregates residuals per test-interest node. `predictions` maps edge ids
/// to predicted flows and must cover every test edge; predictions are
/// clipped at 0 as in the metrics.
pub fn residual_map(net: &FlowNetwork, split: &SplitAssignment, predictions: &BTreeMap<usize, f64>) -> Result<ResidualMap> {
    let missing: Vec<(usize, usize)> = split
        .test_edges
        .iter()
        .filter(|e| !predictions.contains_key(e))
        .map(|&e| {
            let (i, j) = net.edge(e);
            (net.node_ids()[i] as usize, net.node_ids()[j] as usize)
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    let mut sums: BTreeMap<usize, (usize, f64, f64)> = split.test_interest().into_iter().map(|i| (i, (0, 0.0, 0.0))).collect();
    for &e in &split.test_edges {
        let (i, j) = net.edge(e);
        let r = predictions[&e].max(0.0) - net.flows_unguarded()[e];
        for node in [i, j] {
            if let Some(s) = sums.get_mut(&node) {
                s.0 += 1;
                s.1 += r.abs();
                s.2 += r;
            }
        }
    }
    let nodes = sums
        .into_iter()
        .map(|(node, (n, abs, signed))| {
            let cell = net.node_cell(node);
            let (row, col) = net.grid().row_col(cell);
            let denom = n.max(1) as f64;
            NodeResidual {
                node,
                node_id: net.node_ids()[node],
                cell,
                row,
                col,
                n_edges: n,
                mae: abs / denom,
                signed_mean: signed / denom,
            }
        })
        .collect();
    Ok(ResidualMap { nodes })
}

impl ResidualMap {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["node", "row", "col", "n_edges", "mae", "signed_mean"])?;
        for r in &self.nodes {
            w.write_record([
                r.node_id.to_string(),
                r.row.to_string(),
                r.col.to_string(),
                r.n_edges.to_string(),
                r.mae.to_string(),
                r.signed_mean.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// FeatureCollection of cell polygons in grid coordinates.
    pub fn geojson(&self, net: &FlowNetwork) -> serde_json::Value {
        let features: Vec<serde_json::Value> = self
            .nodes
            .iter()
            .map(|r| {
                json!({
                    "type": "Feature",
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [net.grid().cell_polygon(r.cell)],
                    },
                    "properties": {
                        "node": r.node_id,
                        "row": r.row,
                        "col": r.col,
                        "n_edges": r.n_edges,
                        "mae": r.mae,
                        "signed_mean": r.signed_mean,
                    },
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }

    pub fn write_geojson(&self, net: &FlowNetwork, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.geojson(net))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Writes `<stem>.csv` and `<stem>.geojson` into `dir`.
pub fn export_residuals(
    net: &FlowNetwork,
    split: &SplitAssignment,
    predictions: &BTreeMap<usize, f64>,
    dir: &Path,
    stem: &str,
) -> Result<ResidualMap> {
    let map = residual_map(net, split, predictions)?;
    map.write_csv(&dir.join(format!("{stem}.csv")))?;
    map.write_geojson(net, &dir.join(format!("{stem}.geojson")))?;
    Ok(map)
}
