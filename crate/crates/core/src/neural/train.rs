//! Minibatch training with bin-balanced resampling and early stopping.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Architecture, GraphInput, LayerStack, Mode};
use super::optim::{Adam, LrSchedule};
use super::tape::Tape;
use crate::adjacency::{flow_adjacency, geo_adjacency, normalized_adjacency, AdjacencyKind, SparseMatrix};
use crate::error::{Error, Result};
use crate::features::{edge_input_matrix, FeatureScaler};
use crate::guard::FlowView;
use crate::metrics::{BinSpec, N_BINS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub lr_drop_epoch: usize,
    pub lr_drop_period: usize,
    pub lr_factor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Epochs without a validation improvement that are tolerated.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            lr: 0.01,
            max_epochs: 110,
            lr_drop_epoch: 50,
            lr_drop_period: 15,
            lr_factor: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            early_stop_patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size >= 2
            && self.lr > 0.0
            && self.max_epochs > 0
            && self.lr_drop_period > 0
            && self.lr_factor > 0.0
            && self.lr_factor < 1.0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr: self.lr,
            drop_epoch: self.lr_drop_epoch,
            drop_period: self.lr_drop_period,
            factor: self.lr_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_bin_mean_mae: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights were kept (the last one without validation).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,train_mse,val_bin_mean_mae,lr\n");
        for r in &self.records {
            let val = r.val_bin_mean_mae.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_mse, val, r.lr));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Assembled training edges: scaled inputs, endpoints, targets and bins.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub x: Array2<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub y: Vec<f64>,
    pub bins: Vec<usize>,
}

impl TrainingData {
    pub fn new(view: &FlowView<'_>, edges: &[usize], scaler: &FeatureScaler, bins: &BinSpec) -> Result<Self> {
        let net = view.network();
        let y = edges
            .iter()
            .map(|&e| view.edge_flow(e).ok_or(Error::Leakage(1)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingData {
            x: edge_input_matrix(net, edges, scaler)?,
            pairs: edges.iter().map(|&e| net.edge(e)).collect(),
            bins: y.iter().map(|&v| bins.capped_bin_of(v)).collect(),
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Owned adjacency and node features for the GNN variants.
#[derive(Debug, Clone)]
pub struct GraphData {
    pub kind: AdjacencyKind,
    pub adjacency: SparseMatrix,
    pub node_features: Array2<f64>,
}

impl GraphData {
    /// Builds the adjacency an architecture needs from the masked view;
    /// `None` for the FCNN.
    pub fn for_architecture(view: &FlowView<'_>, arch: Architecture, scaler: &FeatureScaler) -> Option<Self> {
        let kind = arch.adjacency_kind()?;
        let adj = match kind {
            AdjacencyKind::Geo => geo_adjacency(view),
            AdjacencyKind::Flow => flow_adjacency(view),
        };
        Some(GraphData {
            kind,
            adjacency: normalized_adjacency(&adj),
            node_features: scaler.scaled_nodes(view.network()),
        })
    }

    pub fn input(&self) -> GraphInput<'_> {
        GraphInput {
            kind: self.kind,
            adjacency: &self.adjacency,
            node_features: &self.node_features,
        }
    }
}

/// One epoch's sample: every training edge plus draws with replacement so
/// that each non-empty bin reaches the size of the largest.
fn balanced_epoch(by_bin: &[Vec<usize>; N_BINS], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let target = by_bin.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(target * N_BINS);
    for bin in by_bin.iter().filter(|b| !b.is_empty()) {
        out.extend_from_slice(bin);
        for _ in bin.len()..target {
            out.push(bin[rng.random_range(0..bin.len())]);
        }
    }
    out.shuffle(rng);
    out
}

/// Trains `model` and returns the snapshot with the best validation score.
/// `validate` scores a model in eval mode (validation bin-mean MAE); it
/// returns `None` when there is no validation set, which disables early
/// stopping.
pub fn train_model(
    mut model: LayerStack,
    data: &TrainingData,
    graph: Option<&GraphInput<'_>>,
    cfg: &TrainConfig,
    validate: &mut dyn FnMut(&LayerStack) -> Result<Option<f64>>,
) -> Result<(LayerStack, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Degenerate("no training edges".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut by_bin: [Vec<usize>; N_BINS] = Default::default();
    for (k, &b) in data.bins.iter().enumerate() {
        by_bin[b].push(k);
    }
    let mut warnings = Vec::new();
    for (b, idx) in by_bin.iter().enumerate() {
        if idx.is_empty() {
            let msg = format!("training bin {b} is empty and is left out of resampling");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let schedule = cfg.schedule();
    let mut adam = Adam::new(&model.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, LayerStack)> = None;
    let mut stale = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.rate(epoch);
        let order = balanced_epoch(&by_bin, &mut rng);
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let x = data.x.select(Axis(0), batch);
            let pairs: Vec<(usize, usize)> = batch.iter().map(|&k| data.pairs[k]).collect();
            let y = Array2::from_shape_fn((batch.len(), 1), |(r, _)| data.y[batch[r]]);
            let mut tape = Tape::new();
            let (pred, stats) = model.forward(&mut tape, x, &pairs, graph, Mode::Train(&mut rng))?;
            let target = tape.constant(y)?;
            let loss = tape.mse(pred, target)?;
            let grads = tape.backward(loss, model.n_params())?;
            adam.update(&mut model.params, &grads, lr);
            model.update_running(&stats);
            loss_sum += tape.value(loss)[[0, 0]] * batch.len() as f64;
            count += batch.len();
        }
        let val = validate(&model)?;
        records.push(EpochRecord {
            epoch,
            train_mse: loss_sum / count.max(1) as f64,
            val_bin_mean_mae: val,
            lr,
        });
        match val {
            Some(score) => {
                if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
                    best = Some((score, epoch, model.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale > cfg.early_stop_patience {
                        stopped_early = true;
                        break;
                    }
                }
            }
            None => best = Some((f64::NAN, epoch, model.clone())),
        }
    }
    let (_, best_epoch, snapshot) = best.expect("at least one epoch ran");
    Ok((
        snapshot,
        TrainHistory {
            records,
            best_epoch,
            stopped_early,
            warnings,
        },
    ))
}
