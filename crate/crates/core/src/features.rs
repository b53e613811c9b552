//! Edge input assembly: `[x_i, x_ij, x_j]` with z-score scaling.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::FlowNetwork;

/// Per-column z-score moments for node and edge features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub node_mean: Vec<f64>,
    pub node_sd: Vec<f64>,
    pub edge_mean: Vec<f64>,
    pub edge_sd: Vec<f64>,
}

fn moments<'a>(rows: impl Iterator<Item = ArrayView1<'a, f64>>, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut count = 0usize;
    let mut mean = vec![0.0; width];
    let mut m2 = vec![0.0; width];
    // Welford
    for row in rows {
        count += 1;
        for (c, &x) in row.iter().enumerate() {
            let delta = x - mean[c];
            mean[c] += delta / count as f64;
            m2[c] += delta * (x - mean[c]);
        }
    }
    let sd = m2
        .iter()
        .map(|&s| {
            let v = if count > 0 { s / count as f64 } else { 0.0 };
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, sd)
}

impl FeatureScaler {
    pub fn identity(p: usize, k: usize) -> Self {
        FeatureScaler {
            node_mean: vec![0.0; p],
            node_sd: vec![1.0; p],
            edge_mean: vec![0.0; k],
            edge_sd: vec![1.0; k],
        }
    }

    /// Fits moments on the training edges. Node moments pool both endpoint
    /// blocks so that swapping the endpoints only swaps the blocks.
    pub fn fit(net: &FlowNetwork, train_edges: &[usize]) -> Result<Self> {
        if train_edges.is_empty() {
            return Err(Error::Degenerate("cannot fit a feature scaler without training edges".into()));
        }
        let node_rows = train_edges.iter().flat_map(|&e| {
            let (i, j) = net.edge(e);
            [net.node_feature_row(i), net.node_feature_row(j)]
        });
        let (node_mean, node_sd) = moments(node_rows, net.p());
        let (edge_mean, edge_sd) = moments(train_edges.iter().map(|&e| net.edge_feature_row(e)), net.k());
        Ok(FeatureScaler {
            node_mean,
            node_sd,
            edge_mean,
            edge_sd,
        })
    }

    pub fn input_width(&self) -> usize {
        2 * self.node_mean.len() + self.edge_mean.len()
    }

    pub fn scale_node(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_iter(x.iter().enumerate().map(|(c, &v)| (v - self.node_mean[c]) / self.node_sd[c]))
    }

    pub fn scale_edge(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_iter(x.iter().enumerate().map(|(c, &v)| (v - self.edge_mean[c]) / self.edge_sd[c]))
    }

    /// Standardized node feature matrix, one row per node.
    pub fn scaled_nodes(&self, net: &FlowNetwork) -> Array2<f64> {
        let mut out = net.node_features().to_owned();
        for mut row in out.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - self.node_mean[c]) / self.node_sd[c];
            }
        }
        out
    }
}

/// Standardized `[x_i, x_ij, x_j]` for the ordered pair `(i, j)`.
pub fn concat_edge_input(net: &FlowNetwork, i: usize, j: usize, scaler: &FeatureScaler) -> Result<Array1<f64>> {
    if i == j {
        return Err(Error::SelfPair(i));
    }
    let e = net.edge_id(i, j).ok_or(Error::MissingEdge(i, j))?;
    let (p, k) = (net.p(), net.k());
    let mut out = Array1::zeros(2 * p + k);
    out.slice_mut(ndarray::s![..p]).assign(&scaler.scale_node(net.node_feature_row(i)));
    out.slice_mut(ndarray::s![p..p + k]).assign(&scaler.scale_edge(net.edge_feature_row(e)));
    out.slice_mut(ndarray::s![p + k..]).assign(&scaler.scale_node(net.node_feature_row(j)));
    Ok(out)
}

/// Rows of [`concat_edge_input`] for many edges, each in stored
/// `(src, dst)` orientation.
pub fn edge_input_matrix(net: &FlowNetwork, edges: &[usize], scaler: &FeatureScaler) -> Result<Array2<f64>> {
    let width = scaler.input_width();
    let mut out = Array2::zeros((edges.len(), width));
    for (r, &e) in edges.iter().enumerate() {
        let (i, j) = net.edge(e);
        out.row_mut(r).assign(&concat_edge_input(net, i, j, scaler)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::network::{EdgeRecord, NodeTable};
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn fixture() -> FlowNetwork {
        let grid = GridSpec::new(0.0, 0.0, 500.0, 1, 3).unwrap();
        let nodes = NodeTable {
            ids: vec![0, 1, 2],
            cells: vec![0, 1, 2],
            feature_names: vec!["a".into(), "b".into()],
            features: array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
        };
        let edges = vec![EdgeRecord { src: 0, dst: 1, flow: 1.0, features: vec![9.0] }];
        FlowNetwork::from_parts(grid, nodes, vec!["d".into()], edges).unwrap()
    }

    #[test]
    fn layout_with_identity_scaler() {
        let net = fixture();
        let x = concat_edge_input(&net, 0, 1, &FeatureScaler::identity(2, 1)).unwrap();
        assert_eq!(x.to_vec(), vec![1.0, 2.0, 9.0, 3.0, 4.0]);
    }

    #[test]
    fn diagonal_and_missing_pairs_are_errors() {
        let net = fixture();
        let s = FeatureScaler::identity(2, 1);
        assert!(matches!(concat_edge_input(&net, 1, 1, &s), Err(Error::SelfPair(1))));
        assert!(matches!(concat_edge_input(&net, 0, 2, &s), Err(Error::MissingEdge(0, 2))));
    }

    #[test]
    fn swapping_endpoints_swaps_node_blocks() {
        let net = fixture();
        let s = FeatureScaler {
            node_mean: vec![0.5, -1.0],
            node_sd: vec![2.0, 3.0],
            edge_mean: vec![1.0],
            edge_sd: vec![4.0],
        };
        let a = concat_edge_input(&net, 0, 1, &s).unwrap();
        let b = concat_edge_input(&net, 1, 0, &s).unwrap();
        assert_eq!(a.slice(ndarray::s![..2]), b.slice(ndarray::s![3..]));
        assert_eq!(a.slice(ndarray::s![3..]), b.slice(ndarray::s![..2]));
        assert_eq!(a[2], b[2]);
    }

    #[test]
    fn zscore_moments_over_training_rows() {
        let n = 12;
        let grid = GridSpec::new(0.0, 0.0, 500.0, 3, 4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let nodes = NodeTable {
            ids: (0..n as u64).collect(),
            cells: (0..n).collect(),
            feature_names: vec!["a".into(), "b".into(), "c".into()],
            features: Array2::from_shape_fn((n, 3), |(_, c)| rng.random_range(0.0..10.0) * (c + 1) as f64),
        };
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push(EdgeRecord {
                    src: i,
                    dst: j,
                    flow: 1.0,
                    features: vec![grid.center_distance(i, j), rng.random_range(-5.0..5.0)],
                });
            }
        }
        let net = FlowNetwork::from_parts(grid, nodes, vec!["d".into(), "z".into()], edges).unwrap();
        let train: Vec<usize> = (0..net.m()).filter(|e| e % 3 != 0).collect();
        let s = FeatureScaler::fit(&net, &train).unwrap();
        let x = edge_input_matrix(&net, &train, &s).unwrap();
        // edge block: exact moments per column
        for c in 3..5 {
            let col = x.column(c);
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        }
        // node blocks: moments over both endpoint blocks pooled
        for c in 0..3 {
            let pooled: Vec<f64> = x.column(c).iter().chain(x.column(c + 5).iter()).copied().collect();
            let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
            let var = pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pooled.len() as f64;
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        }
    }
}
