//! Fitting and prediction for every model kind behind one enum.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::seeds::derive_seed;
use crate::config::{ExperimentConfig, ModelKind};
use crate::error::{Error, Result};
use crate::features::{edge_input_matrix, FeatureScaler};
use crate::guard::FlowView;
use crate::metrics::{bin_mean_mae, binned_mae, BinSpec};
use crate::network::FlowNetwork;
use crate::neural::{train_model, Checkpoint, GraphData, LayerStack, TrainHistory, TrainingData};
use crate::spatial::{fit_dcgm, fit_huff, fit_negbin, fit_poisson, predict_glm, DcgmParams, GlmParams, HuffParams};
use crate::split::SplitAssignment;

pub const MODEL_FORMAT: &str = "odflow-model-1";

/// Anything that predicts flows for edges of a split network.
pub trait FlowModel {
    fn predict(&self, net: &FlowNetwork, split: &SplitAssignment, edges: &[usize]) -> Result<Vec<f64>>;
}

/// Fitted parameters of any supported model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FittedModel {
    Mean { value: f64 },
    Dcgm(DcgmParams),
    Huff(HuffParams),
    Glm { params: GlmParams, scaler: FeatureScaler },
    Neural(Checkpoint),
}

impl FlowModel for FittedModel {
    fn predict(&self, net: &FlowNetwork, split: &SplitAssignment, edges: &[usize]) -> Result<Vec<f64>> {
        match self {
            FittedModel::Mean { value } => Ok(vec![*value; edges.len()]),
            FittedModel::Dcgm(p) => edges
                .iter()
                .map(|&e| {
                    let (i, j) = net.edge(e);
                    p.predict(net, i, j)
                })
                .collect(),
            FittedModel::Huff(p) => edges
                .iter()
                .map(|&e| {
                    let (i, j) = net.edge(e);
                    p.predict(net, i, j)
                })
                .collect(),
            FittedModel::Glm { params, scaler } => {
                let x = edge_input_matrix(net, edges, scaler)?;
                x.rows().into_iter().map(|r| predict_glm(params, r).map(|(v, _)| v)).collect()
            }
            FittedModel::Neural(ck) => {
                let view = FlowView::masked(net, split.interest_nodes());
                let graph = GraphData::for_architecture(&view, ck.model.arch, &ck.scaler);
                let x = edge_input_matrix(net, edges, &ck.scaler)?;
                let pairs: Vec<(usize, usize)> = edges.iter().map(|&e| net.edge(e)).collect();
                let input = graph.as_ref().map(GraphData::input);
                ck.model.predict(&x, &pairs, input.as_ref())
            }
        }
    }
}

/// Saved model file: the kind, the split it was trained on, and the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub model: ModelKind,
    pub split_seed: u64,
    pub fitted: FittedModel,
}

impl ModelFile {
    pub fn new(model: ModelKind, split_seed: u64, fitted: FittedModel) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            model,
            split_seed,
            fitted,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Config(format!("unsupported model file format `{}`", file.format)));
        }
        Ok(file)
    }
}

/// Scores predictions against ground truth the models never see.
///
/// The harness builds it straight from the network, outside any
/// [`FlowView`]; models only receive the score.
pub struct Evaluator {
    edges: Vec<usize>,
    truth: Vec<f64>,
    bins: BinSpec,
}

impl Evaluator {
    pub fn new(net: &FlowNetwork, edges: &[usize], bins: BinSpec) -> Self {
        Evaluator {
            edges: edges.to_vec(),
            truth: edges.iter().map(|&e| net.flows_unguarded()[e]).collect(),
            bins,
        }
    }

    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Bin-mean MAE of predictions (clipped at 0) for [`Evaluator::edges`].
    pub fn bin_mean_mae(&self, pred: &[f64]) -> Result<Option<f64>> {
        let clipped: Vec<f64> = pred.iter().map(|v| v.max(0.0)).collect();
        Ok(bin_mean_mae(&binned_mae(&self.truth, &clipped, &self.bins)?))
    }
}

/// A fit together with what the report shows about it.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: FittedModel,
    pub diagnostics: serde_json::Value,
    pub history: Option<TrainHistory>,
}

/// Fits `kind` on the training edges of `split`, reading flows through
/// `view` only. `seed` drives initialisation and batching of neural models;
/// `validation` supplies early-stopping scores.
pub fn fit_model(
    kind: ModelKind,
    view: &FlowView<'_>,
    split: &SplitAssignment,
    cfg: &ExperimentConfig,
    seed: u64,
    validation: &Evaluator,
) -> Result<FitOutcome> {
    let net = view.network();
    let train = &split.train_edges;
    let train_flows = || -> Result<Vec<f64>> {
        train
            .iter()
            .map(|&e| view.edge_flow(e).ok_or_else(|| Error::Split(format!("training edge {e} is masked"))))
            .collect()
    };
    let spatial = &cfg.train.spatial;
    let plain = |model: FittedModel, diagnostics: serde_json::Value| FitOutcome {
        model,
        diagnostics,
        history: None,
    };
    match kind {
        ModelKind::Mean => {
            let y = train_flows()?;
            if y.is_empty() {
                return Err(Error::Degenerate("no training edges".into()));
            }
            let value = y.iter().sum::<f64>() / y.len() as f64;
            Ok(plain(FittedModel::Mean { value }, json!({ "value": value })))
        }
        ModelKind::Dcgm => {
            let p = fit_dcgm(view, train, spatial)?;
            let d = json!({ "beta": p.beta, "degenerate": p.degenerate });
            Ok(plain(FittedModel::Dcgm(p), d))
        }
        ModelKind::Huff => {
            let p = fit_huff(view, train, spatial)?;
            let d = json!({ "alpha": p.alpha, "beta": p.beta, "training_loss": p.training_loss });
            Ok(plain(FittedModel::Huff(p), d))
        }
        ModelKind::Poisson | ModelKind::Negbin => {
            let scaler = FeatureScaler::fit(net, train)?;
            let x = edge_input_matrix(net, train, &scaler)?;
            let raw = train_flows()?;
            let rounded = raw.iter().filter(|v| v.round() != **v).count();
            if rounded > 0 {
                log::warn!("{rounded} non-integer training flows rounded for the count regression");
            }
            let y: Vec<f64> = raw.iter().map(|v| v.round()).collect();
            let fit = if kind == ModelKind::Poisson {
                fit_poisson(&x, &y)?
            } else {
                fit_negbin(&x, &y)?
            };
            let d = json!({
                "iterations": fit.iterations,
                "outer_iterations": fit.outer_iterations,
                "final_deviance": fit.deviance_history.last(),
                "jittered": fit.jittered,
                "dispersion": fit.params.dispersion,
                "dispersion_capped": fit.dispersion_capped,
                "rounded_targets": rounded,
            });
            Ok(plain(
                FittedModel::Glm {
                    params: fit.params,
                    scaler,
                },
                d,
            ))
        }
        ModelKind::Fcnn | ModelKind::GnnGeo | ModelKind::GnnFlow => {
            let arch = kind.architecture().expect("neural kind");
            let scaler = FeatureScaler::fit(net, train)?;
            let data = TrainingData::new(view, train, &scaler, &cfg.bins())?;
            let graph = GraphData::for_architecture(view, arch, &scaler);
            let input = graph.as_ref().map(GraphData::input);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init", 0));
            let model = LayerStack::new(arch, cfg.train.model, scaler.input_width(), net.p(), &mut rng)?;
            let mut train_cfg = cfg.train.optimizer.clone();
            train_cfg.seed = derive_seed(seed, "batches", 0);

            let val_x = edge_input_matrix(net, validation.edges(), &scaler)?;
            let val_pairs: Vec<(usize, usize)> = validation.edges().iter().map(|&e| net.edge(e)).collect();
            let mut validate = |m: &LayerStack| -> Result<Option<f64>> {
                if validation.is_empty() {
                    return Ok(None);
                }
                let pred = m.predict(&val_x, &val_pairs, input.as_ref())?;
                validation.bin_mean_mae(&pred)
            };
            let (best, history) = train_model(model, &data, input.as_ref(), &train_cfg, &mut validate)?;
            let best_val = history
                .records
                .iter()
                .find(|r| r.epoch == history.best_epoch)
                .and_then(|r| r.val_bin_mean_mae);
            let d = json!({
                "epochs": history.records.len(),
                "best_epoch": history.best_epoch,
                "best_val_bin_mean_mae": best_val,
                "stopped_early": history.stopped_early,
            });
            Ok(FitOutcome {
                model: FittedModel::Neural(Checkpoint::new(best, scaler, train_cfg)),
                diagnostics: d,
                history: Some(history),
            })
        }
    }
}
