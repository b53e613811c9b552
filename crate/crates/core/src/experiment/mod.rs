//! End-to-end comparison of all models on one split.

mod models;
mod report;
mod residuals;
mod seeds;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelKind};
use crate::error::{Error, Result};
use crate::guard::FlowView;
use crate::metrics::MetricsReport;
use crate::network::FlowNetwork;
use crate::split::SplitAssignment;

pub use models::{fit_model, Evaluator, FitOutcome, FittedModel, FlowModel, ModelFile, MODEL_FORMAT};
pub use report::{ExperimentReport, MetricSummary, ModelRow, RunResult, SplitSummary, Stat, REPORT_FORMAT};
pub use residuals::{export_residuals, residual_map, NodeResidual, ResidualMap};
pub use seeds::derive_seed;

/// Report plus the test-edge predictions of every model that ran.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub test_edges: Vec<usize>,
    /// Per model, predictions averaged over seeds, aligned with `test_edges`.
    pub predictions: Vec<(ModelKind, Vec<f64>)>,
}

impl SplitSummary {
    pub fn of(split: &SplitAssignment) -> Self {
        SplitSummary {
            seed: split.seed,
            n_train: split.train_edges.len(),
            n_val: split.val_edges.len(),
            n_test: split.test_edges.len(),
            n_discarded: split.discarded_edges.len(),
            n_val_interest: split.val_interest().len(),
            n_test_interest: split.test_interest().len(),
            test_bins: split.test_bins,
            warnings: split.warnings.clone(),
        }
    }
}

/// Fits every model in `models` on the training edges of `split` and scores
/// it on the test edges. Neural models run `n_seeds` times with seeds derived
/// from `cfg.train.seed`. A failing model gets an error row; a leakage-guard
/// violation by any model fails the whole run.
pub fn run_experiment(
    net: &FlowNetwork,
    split: &SplitAssignment,
    models: &[ModelKind],
    cfg: &ExperimentConfig,
    n_seeds: usize,
) -> Result<ExperimentOutput> {
    if n_seeds == 0 {
        return Err(Error::Config("n_seeds must be at least 1".into()));
    }
    let bins = cfg.bins();
    let truth: Vec<f64> = split.test_edges.iter().map(|&e| net.flows_unguarded()[e]).collect();
    let validation = Evaluator::new(net, &split.val_edges, bins.clone());
    let mut rows = Vec::new();
    let mut predictions = Vec::new();
    for &kind in models {
        let repeats = if kind.is_stochastic() { n_seeds } else { 1 };
        let mut runs = Vec::new();
        let mut sums = vec![0.0; truth.len()];
        let mut error = None;
        for s in 0..repeats {
            let seed = derive_seed(cfg.train.optimizer.seed, kind.name(), s);
            let started = Instant::now();
            let view = FlowView::masked(net, split.interest_nodes());
            let fitted = fit_model(kind, &view, split, cfg, seed, &validation);
            let reads = view.violations();
            if reads > 0 {
                return Err(Error::Leakage(reads));
            }
            let scored = fitted.and_then(|outcome| {
                let pred = outcome.model.predict(net, split, &split.test_edges)?;
                let metrics = MetricsReport::compute(&truth, &pred, &bins)?;
                Ok((outcome, pred, metrics))
            });
            match scored {
                Ok((outcome, pred, metrics)) => {
                    log::info!(
                        "{} seed {s}: bin-mean MAE {:.3} ({:.1?})",
                        kind.name(),
                        metrics.bin_mean_mae,
                        started.elapsed()
                    );
                    for (acc, p) in sums.iter_mut().zip(&pred) {
                        *acc += p;
                    }
                    runs.push(RunResult {
                        seed_index: s,
                        seed,
                        metrics,
                        guard_reads: reads,
                        diagnostics: outcome.diagnostics,
                    });
                }
                Err(e) => {
                    log::warn!("{} failed: {e}", kind.name());
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        let summary = if error.is_none() {
            MetricSummary::aggregate(&runs.iter().map(|r| &r.metrics).collect::<Vec<_>>())
        } else {
            None
        };
        if error.is_none() {
            predictions.push((kind, sums.iter().map(|v| v / runs.len() as f64).collect()));
        }
        rows.push(ModelRow {
            model: kind,
            runs,
            summary,
            error,
        });
    }
    Ok(ExperimentOutput {
        report: ExperimentReport {
            format: REPORT_FORMAT.into(),
            n_nodes: net.n(),
            n_edges: net.m(),
            seed: cfg.train.optimizer.seed,
            n_seeds,
            bins,
            split: SplitSummary::of(split),
            rows,
        },
        test_edges: split.test_edges.clone(),
        predictions,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    src: u64,
    dst: u64,
    flow: Option<f64>,
    prediction: f64,
}

/// Writes `src,dst,flow,prediction` rows (node ids) for `edges`.
pub fn write_predictions(net: &FlowNetwork, edges: &[usize], pred: &[f64], path: &Path) -> Result<()> {
    if edges.len() != pred.len() {
        return Err(Error::Length(edges.len(), pred.len()));
    }
    let mut w = csv::Writer::from_path(path)?;
    for (&e, &p) in edges.iter().zip(pred) {
        let (i, j) = net.edge(e);
        w.serialize(PredictionRecord {
            src: net.node_ids()[i],
            dst: net.node_ids()[j],
            flow: Some(net.flows_unguarded()[e]),
            prediction: p,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a predictions file back into edge ids of `net`. The `flow` column
/// is optional and ignored.
pub fn read_predictions(net: &FlowNetwork, path: &Path) -> Result<BTreeMap<usize, f64>> {
    let index: HashMap<u64, usize> = net.node_ids().iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut r = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for (line, rec) in r.deserialize::<PredictionRecord>().enumerate() {
        let rec = rec?;
        let parse_err = |msg: String| Error::Parse {
            file: path.display().to_string(),
            line: line + 2,
            msg,
        };
        let node = |id: u64| index.get(&id).copied().ok_or_else(|| parse_err(format!("unknown node {id}")));
        let (i, j) = (node(rec.src)?, node(rec.dst)?);
        let e = net
            .edge_id(i, j)
            .ok_or_else(|| parse_err(format!("({}, {}) is not an edge", rec.src, rec.dst)))?;
        out.insert(e, rec.prediction);
    }
    Ok(out)
}

/// Writes the report bundle into `dir`: `report.json`, `table.txt`,
/// `predictions/<model>.csv` and `residuals/<model>.{csv,geojson}`.
pub fn write_bundle(out: &ExperimentOutput, net: &FlowNetwork, split: &SplitAssignment, dir: &Path) -> Result<()> {
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    let pred_dir = dir.join("predictions");
    let resid_dir = dir.join("residuals");
    mkdir(&pred_dir)?;
    mkdir(&resid_dir)?;
    let mut json = serde_json::to_string_pretty(&out.report)?;
    json.push('\n');
    let path = dir.join("report.json");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("table.txt");
    std::fs::write(&path, out.report.table()).map_err(|e| Error::io(&path, e))?;
    for (kind, pred) in &out.predictions {
        write_predictions(net, &out.test_edges, pred, &pred_dir.join(format!("{}.csv", kind.name())))?;
        let map: BTreeMap<usize, f64> = out.test_edges.iter().copied().zip(pred.iter().copied()).collect();
        export_residuals(net, split, &map, &resid_dir, kind.name())?;
    }
    Ok(())
}
