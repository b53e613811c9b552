//! Trip records to OD matrix to [`FlowNetwork`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::network::{symmetrize, EdgeRecord, FlowNetwork, NodeTable, OdMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub origin_x: f64,
    pub origin_y: f64,
    pub dest_x: f64,
    pub dest_y: f64,
    #[serde(default = "one")]
    pub count: u64,
}

fn one() -> u64 {
    1
}

impl TripRecord {
    pub fn new(origin: (f64, f64), dest: (f64, f64)) -> Self {
        TripRecord {
            origin_x: origin.0,
            origin_y: origin.1,
            dest_x: dest.0,
            dest_y: dest.1,
            count: 1,
        }
    }
}

/// Cell-by-cell trip counts plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct OdAggregate {
    pub matrix: OdMatrix,
    pub dropped_same_cell: u64,
    pub total_trips: u64,
}

/// Counts trips per (origin cell, destination cell). Same-cell trips are
/// dropped and counted. Errors carry the 1-based record number.
pub fn aggregate_od<I>(trips: I, grid: &GridSpec) -> Result<OdAggregate>
where
    I: IntoIterator<Item = TripRecord>,
{
    let mut matrix = OdMatrix::new(grid.n_cells());
    let mut dropped = 0u64;
    let mut total = 0u64;
    for (idx, trip) in trips.into_iter().enumerate() {
        let wrap = |e: Error| Error::Trip {
            line: idx + 1,
            source: Box::new(e),
        };
        if trip.count == 0 {
            return Err(wrap(Error::Degenerate("trip count must be at least 1".into())));
        }
        let a = grid.assign_cell(trip.origin_x, trip.origin_y).map_err(wrap)?;
        let b = grid.assign_cell(trip.dest_x, trip.dest_y).map_err(wrap)?;
        total += trip.count;
        if a == b {
            dropped += trip.count;
        } else {
            matrix.add(a, b, trip.count as f64);
        }
    }
    Ok(OdAggregate {
        matrix,
        dropped_same_cell: dropped,
        total_trips: total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_trips: u64,
    pub dropped_same_cell: u64,
    /// Trips whose origin or destination cell has no node.
    pub dropped_unmatched: u64,
    /// `‖W − Wᵀ‖₁ / ‖W‖₁` before symmetrization.
    pub asymmetry: f64,
}

pub const GEOMETRIC_EDGE_FEATURES: [&str; 2] = ["distance", "log_distance"];

/// Centroid distance and its logarithm for a pair of cells.
pub fn geometric_edge_features(grid: &GridSpec, a: usize, b: usize) -> Vec<f64> {
    let d = grid.center_distance(a, b);
    vec![d, d.ln()]
}

/// Builds a network from node features and trips. Every node pair becomes
/// an edge carrying geometric features; flows are the symmetrized counts.
pub fn network_from_trips<I>(grid: GridSpec, nodes: NodeTable, trips: I) -> Result<(FlowNetwork, IngestReport)>
where
    I: IntoIterator<Item = TripRecord>,
{
    let agg = aggregate_od(trips, &grid)?;
    let n = nodes.ids.len();
    let mut node_of_cell = vec![None; grid.n_cells()];
    for (i, &c) in nodes.cells.iter().enumerate() {
        if c >= grid.n_cells() {
            return Err(Error::InvalidNetwork(format!("node {}: cell {c} outside grid", nodes.ids[i])));
        }
        node_of_cell[c] = Some(i);
    }
    let mut raw = OdMatrix::new(n);
    let mut unmatched = 0u64;
    for ((a, b), v) in agg.matrix.iter() {
        match (node_of_cell[a], node_of_cell[b]) {
            (Some(i), Some(j)) => raw.add(i, j, v),
            _ => unmatched += v as u64,
        }
    }
    let asymmetry = raw.asymmetry();
    let w = symmetrize(&raw)?;
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push(EdgeRecord {
                src: i,
                dst: j,
                flow: w.get(i, j),
                features: geometric_edge_features(&grid, nodes.cells[i], nodes.cells[j]),
            });
        }
    }
    let names = GEOMETRIC_EDGE_FEATURES.iter().map(|s| s.to_string()).collect();
    let net = FlowNetwork::from_parts(grid, nodes, names, edges)?;
    Ok((
        net,
        IngestReport {
            total_trips: agg.total_trips,
            dropped_same_cell: agg.dropped_same_cell,
            dropped_unmatched: unmatched,
            asymmetry,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use std::collections::HashMap;

    fn grid() -> GridSpec {
        GridSpec::new(0.0, 0.0, 500.0, 4, 5).unwrap()
    }

    #[test]
    fn identical_trips_accumulate() {
        let t = TripRecord::new((10.0, 10.0), (600.0, 10.0));
        let agg = aggregate_od(vec![t; 3], &grid()).unwrap();
        assert_eq!(agg.matrix.get(0, 1), 3.0);
        assert_eq!(agg.dropped_same_cell, 0);
    }

    #[test]
    fn same_cell_trip_is_dropped() {
        let t = TripRecord::new((10.0, 10.0), (20.0, 30.0));
        let agg = aggregate_od([t], &grid()).unwrap();
        assert_eq!(agg.matrix.nnz(), 0);
        assert_eq!(agg.dropped_same_cell, 1);
    }

    #[test]
    fn out_of_bounds_reports_record_number() {
        let ok = TripRecord::new((10.0, 10.0), (600.0, 10.0));
        let bad = TripRecord::new((10.0, 10.0), (1e9, 10.0));
        match aggregate_od([ok, ok, bad], &grid()) {
            Err(Error::Trip { line, source }) => {
                assert_eq!(line, 3);
                assert!(matches!(*source, Error::OutOfBounds { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn random_trips_match_hashmap_counter() {
        let g = grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(500);
        let trips: Vec<TripRecord> = (0..500)
            .map(|_| TripRecord {
                origin_x: rng.random_range(0.0..g.max_x()),
                origin_y: rng.random_range(0.0..g.max_y()),
                dest_x: rng.random_range(0.0..g.max_x()),
                dest_y: rng.random_range(0.0..g.max_y()),
                count: rng.random_range(1..4),
            })
            .collect();
        let agg = aggregate_od(trips.iter().copied(), &g).unwrap();

        let mut oracle: HashMap<(usize, usize), u64> = HashMap::new();
        let mut dropped = 0;
        for t in &trips {
            let a = (t.origin_y / 500.0).floor() as usize * 5 + (t.origin_x / 500.0).floor() as usize;
            let b = (t.dest_y / 500.0).floor() as usize * 5 + (t.dest_x / 500.0).floor() as usize;
            if a == b {
                dropped += t.count;
            } else {
                *oracle.entry((a, b)).or_default() += t.count;
            }
        }
        assert_eq!(agg.dropped_same_cell, dropped);
        assert_eq!(agg.matrix.nnz(), oracle.len());
        for ((a, b), v) in agg.matrix.iter() {
            assert_eq!(v, oracle[&(a, b)] as f64);
        }
        let total: u64 = trips.iter().map(|t| t.count).sum();
        assert_eq!(agg.matrix.total() as u64 + agg.dropped_same_cell, total);
        assert_eq!(agg.total_trips, total);
    }

    #[test]
    fn network_from_trips_symmetrizes_and_reports() {
        let g = GridSpec::new(0.0, 0.0, 500.0, 1, 3).unwrap();
        let nodes = NodeTable {
            ids: vec![1, 2],
            cells: vec![0, 1],
            feature_names: vec!["f".into()],
            features: Array2::zeros((2, 1)),
        };
        let a = (100.0, 100.0);
        let b = (700.0, 100.0);
        let c = (1200.0, 100.0); // cell 2 has no node
        let trips = vec![
            TripRecord::new(a, b),
            TripRecord::new(a, b),
            TripRecord::new(a, b),
            TripRecord::new(b, a),
            TripRecord::new(a, c),
            TripRecord::new(a, a),
        ];
        let (net, report) = network_from_trips(g, nodes, trips).unwrap();
        assert_eq!(net.flow_unguarded(0, 1), 2.0);
        assert_eq!(report.total_trips, 6);
        assert_eq!(report.dropped_same_cell, 1);
        assert_eq!(report.dropped_unmatched, 1);
        assert!((report.asymmetry - 1.0).abs() < 1e-12);
        assert_eq!(net.edge_feature_row(0).to_vec(), vec![500.0, 500f64.ln()]);
    }
}
