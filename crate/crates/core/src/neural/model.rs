//! FCNN, GNN-geo and GNN-flow as one layer stack.
//!
//! Hidden blocks are Linear → BatchNorm → ReLU → Dropout and the last layer
//! is linear. The GNN variants add a single graph convolution, shared by
//! both endpoints, after the first block:
//!
//! ```text
//! h1 = φ1 · block1(x̄) + φ2 · (G[i] + G[j]),   G = ReLU(Â X Θg)
//! ```

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{BatchStats, Tape, Var};
use crate::adjacency::{AdjacencyKind, SparseMatrix};
use crate::error::{Error, Result};
use crate::features::{concat_edge_input, FeatureScaler};
use crate::network::FlowNetwork;

const PREDICT_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Fcnn,
    GnnGeo,
    GnnFlow,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Fcnn, Architecture::GnnGeo, Architecture::GnnFlow];

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Fcnn => "fcnn",
            Architecture::GnnGeo => "gnn-geo",
            Architecture::GnnFlow => "gnn-flow",
        }
    }

    pub fn adjacency_kind(&self) -> Option<AdjacencyKind> {
        match self {
            Architecture::Fcnn => None,
            Architecture::GnnGeo => Some(AdjacencyKind::Geo),
            Architecture::GnnFlow => Some(AdjacencyKind::Flow),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub fc_layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub batch_norm: bool,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            fc_layers: 4,
            hidden: 32,
            dropout: 0.5,
            batch_norm: true,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fc_layers < 1 || self.hidden < 1 {
            return Err(Error::Config("model needs at least one layer of positive width".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} must lie in [0, 1)", self.dropout)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config(format!("batch-norm momentum {} must lie in (0, 1]", self.bn_momentum)));
        }
        Ok(())
    }
}

/// Node side of a GNN forward pass.
#[derive(Debug, Clone, Copy)]
pub struct GraphInput<'a> {
    pub kind: AdjacencyKind,
    /// Normalized adjacency with self loops.
    pub adjacency: &'a SparseMatrix,
    /// Standardized node features, one row per node.
    pub node_features: &'a Array2<f64>,
}

pub enum Mode<'r> {
    Train(&'r mut ChaCha8Rng),
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FcLayer {
    weight: usize,
    bias: usize,
    /// `(gamma, shift, running-stats slot)`.
    bn: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GcnLayer {
    theta: usize,
    phi1: usize,
    phi2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    pub arch: Architecture,
    pub config: ModelConfig,
    pub input_width: usize,
    pub node_width: usize,
    pub params: Vec<Array2<f64>>,
    pub param_names: Vec<String>,
    pub running: Vec<RunningStats>,
    layers: Vec<FcLayer>,
    gcn: Option<GcnLayer>,
}

/// Inverted dropout mask: zero with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} must lie in [0, 1)")));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok(Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < rate { 0.0 } else { keep }))
}

/// `ReLU(Â H Θ)`.
pub fn gcn_forward<'a>(tape: &mut Tape<'a>, adjacency: &'a SparseMatrix, h: Var, theta: Var) -> Result<Var> {
    let ah = tape.sp_matmul(adjacency, h)?;
    let z = tape.matmul(ah, theta)?;
    tape.relu(z)
}

fn uniform(shape: (usize, usize), bound: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-bound..bound))
}

impl LayerStack {
    pub fn new(
        arch: Architecture,
        config: ModelConfig,
        input_width: usize,
        node_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        let mut names = Vec::new();
        let mut push = |name: String, value: Array2<f64>| {
            params.push(value);
            names.push(name);
            params.len() - 1
        };
        let mut layers = Vec::new();
        let mut running = Vec::new();
        let mut width = input_width;
        for l in 0..config.fc_layers {
            let last = l + 1 == config.fc_layers;
            let out = if last { 1 } else { config.hidden };
            let bound = 1.0 / (width.max(1) as f64).sqrt();
            let weight = push(format!("fc{l}.weight"), uniform((width, out), bound, rng));
            let bias = push(format!("fc{l}.bias"), Array2::zeros((1, out)));
            let bn = (!last && config.batch_norm).then(|| {
                let gamma = push(format!("bn{l}.gamma"), Array2::ones((1, out)));
                let shift = push(format!("bn{l}.shift"), Array2::zeros((1, out)));
                running.push(RunningStats {
                    mean: Array1::zeros(out),
                    var: Array1::ones(out),
                });
                (gamma, shift, running.len() - 1)
            });
            layers.push(FcLayer { weight, bias, bn });
            width = out;
        }
        let gcn = match arch {
            Architecture::Fcnn => None,
            _ => {
                if config.fc_layers < 2 {
                    return Err(Error::Config("GNN models need at least two fully connected layers".into()));
                }
                let bound = 1.0 / (node_width.max(1) as f64).sqrt();
                let theta = push("gcn.theta".into(), uniform((node_width, config.hidden), bound, rng));
                let phi1 = push("phi1".into(), Array2::ones((1, 1)));
                let phi2 = push("phi2".into(), Array2::ones((1, 1)));
                Some(GcnLayer { theta, phi1, phi2 })
            }
        };
        Ok(LayerStack {
            arch,
            config,
            input_width,
            node_width,
            params,
            param_names: names,
            running,
            layers,
            gcn,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    /// Parameter indices of the fully connected part, in layer order.
    pub fn fc_param_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([l.weight, l.bias]);
            if let Some((g, s, _)) = l.bn {
                out.extend([g, s]);
            }
        }
        out
    }

    fn check_graph(&self, graph: Option<&GraphInput<'_>>) -> Result<()> {
        match (self.arch.adjacency_kind(), graph) {
            (None, _) => Ok(()),
            (Some(kind), Some(g)) if g.kind == kind => {
                if g.node_features.ncols() != self.node_width {
                    return Err(Error::Shape {
                        op: "gcn input",
                        lhs: [g.node_features.nrows(), g.node_features.ncols()],
                        rhs: [g.node_features.nrows(), self.node_width],
                    });
                }
                Ok(())
            }
            (Some(kind), Some(g)) => Err(Error::Config(format!(
                "{} needs a {kind:?} adjacency, got {:?}",
                self.arch.name(),
                g.kind
            ))),
            (Some(kind), None) => Err(Error::Config(format!("{} needs a {kind:?} adjacency", self.arch.name()))),
        }
    }

    /// Records the parameters and the forward pass on `tape`.
    pub fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        x: Array2<f64>,
        pairs: &[(usize, usize)],
        graph: Option<&GraphInput<'a>>,
        mode: Mode<'_>,
    ) -> Result<(Var, Vec<BatchStats>)> {
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(k, p)| tape.param(k, p))
            .collect::<Result<Vec<_>>>()?;
        self.forward_vars(tape, &vars, x, pairs, graph, mode)
    }

    /// Forward pass with the parameters already on the tape as `vars`.
    pub fn forward_vars<'a>(
        &self,
        tape: &mut Tape<'a>,
        vars: &[Var],
        x: Array2<f64>,
        pairs: &[(usize, usize)],
        graph: Option<&GraphInput<'a>>,
        mut mode: Mode<'_>,
    ) -> Result<(Var, Vec<BatchStats>)> {
        self.check_graph(graph)?;
        if x.ncols() != self.input_width || x.nrows() != pairs.len() {
            return Err(Error::Shape {
                op: "model input",
                lhs: [x.nrows(), x.ncols()],
                rhs: [pairs.len(), self.input_width],
            });
        }
        let mut stats = Vec::new();
        let mut h = tape.constant(x)?;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, vars[layer.weight])?;
            let mut z = tape.add_row(z, vars[layer.bias])?;
            if l + 1 == self.layers.len() {
                h = z;
                break;
            }
            if let Some((gamma, shift, slot)) = layer.bn {
                z = match &mode {
                    Mode::Train(_) => {
                        let (v, s) = tape.batch_norm_train(z, vars[gamma], vars[shift])?;
                        stats.push(s);
                        v
                    }
                    Mode::Eval => {
                        let r = &self.running[slot];
                        tape.batch_norm_eval(z, vars[gamma], vars[shift], &r.mean, &r.var)?
                    }
                };
            }
            z = tape.relu(z)?;
            if let Mode::Train(rng) = &mut mode {
                if self.config.dropout > 0.0 {
                    let shape = tape.value(z).dim();
                    z = tape.mul_const(z, dropout_mask(shape, self.config.dropout, rng)?)?;
                }
            }
            if l == 0 {
                if let (Some(gcn), Some(g)) = (&self.gcn, graph) {
                    let nodes = tape.constant(g.node_features.clone())?;
                    let emb = gcn_forward(tape, g.adjacency, nodes, vars[gcn.theta])?;
                    let src: Vec<usize> = pairs.iter().map(|p| p.0).collect();
                    let dst: Vec<usize> = pairs.iter().map(|p| p.1).collect();
                    let gi = tape.gather_rows(emb, &src)?;
                    let gj = tape.gather_rows(emb, &dst)?;
                    let neigh = tape.add(gi, gj)?;
                    let a = tape.scale(vars[gcn.phi1], z)?;
                    let b = tape.scale(vars[gcn.phi2], neigh)?;
                    z = tape.add(a, b)?;
                }
            }
            h = z;
        }
        Ok((h, stats))
    }

    /// Folds training-mode batch moments into the running averages.
    pub fn update_running(&mut self, stats: &[BatchStats]) {
        let m = self.config.bn_momentum;
        for (r, s) in self.running.iter_mut().zip(stats) {
            r.mean = &r.mean * (1.0 - m) + &s.mean * m;
            r.var = &r.var * (1.0 - m) + &s.var * m;
        }
    }

    /// Eval-mode predictions for pre-assembled inputs.
    pub fn predict(&self, x: &Array2<f64>, pairs: &[(usize, usize)], graph: Option<&GraphInput<'_>>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len());
        for start in (0..pairs.len()).step_by(PREDICT_CHUNK) {
            let end = (start + PREDICT_CHUNK).min(pairs.len());
            let mut tape = Tape::new();
            let rows = x.slice(ndarray::s![start..end, ..]).to_owned();
            let (y, _) = self.forward(&mut tape, rows, &pairs[start..end], graph, Mode::Eval)?;
            out.extend(tape.value(y).column(0).iter().copied());
        }
        Ok(out)
    }

    /// Eval-mode prediction for a single pair.
    pub fn forward_edge(
        &self,
        net: &FlowNetwork,
        scaler: &FeatureScaler,
        i: usize,
        j: usize,
        graph: Option<&GraphInput<'_>>,
    ) -> Result<f64> {
        let x = concat_edge_input(net, i, j, scaler)?.insert_axis(ndarray::Axis(0));
        Ok(self.predict(&x, &[(i, j)], graph)?[0])
    }
}
