//! `odflow` command-line interface.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 when the input data or
//! configuration is rejected.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use odflow::config::{ExperimentConfig, ModelKind};
use odflow::experiment::{
    export_residuals, fit_model, read_predictions, run_experiment, write_bundle, write_predictions, Evaluator,
    FlowModel, ModelFile,
};
use odflow::guard::FlowView;
use odflow::io::{load_grid, load_network, load_nodes, load_trips, save_network, NetworkPaths};
use odflow::metrics::{powerlaw_exponent, MetricsReport};
use odflow::network::FlowNetwork;
use odflow::split::{make_split, SplitAssignment};
use odflow::synth::generate_synthetic_city;

#[derive(Parser)]
#[command(name = "odflow", version, about = "Origin-destination flow prediction for nodes of interest")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration with [data], [split], [train] and [synth] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the synthetic, split and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for outputs.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset directory with nodes.csv, edges.csv and grid.csv; defaults to
    /// [data] dir from the configuration.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Split file written by `split`; recomputed from the configuration when
    /// absent.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Build a dataset from trips, node features and a grid.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Trips CSV: origin_x, origin_y, dest_x, dest_y[, count].
        #[arg(long)]
        trips: PathBuf,
        /// Node CSV: id, row, col, then one column per feature.
        #[arg(long)]
        nodes: PathBuf,
        /// Grid CSV: origin_x, origin_y, cell_size, n_rows, n_cols.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Select nodes of interest and write the edge split.
    Split {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Fit one model on the training edges.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_model)]
        model: ModelKind,
    },
    /// Score a model written by `train` on the test edges.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_model)]
        model: ModelKind,
    },
    /// Fit and compare all configured models and write the report bundle.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Restrict the comparison to these models.
        #[arg(long, value_parser = parse_model, value_delimiter = ',')]
        model: Vec<ModelKind>,
    },
    /// Per-node residual map of a predictions file.
    Residuals {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// CSV with src, dst and prediction columns.
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Power-law exponent of the flow distribution.
    Powerlaw {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Smallest flow included in the fit.
        #[arg(long, default_value_t = 1.0)]
        x_min: f64,
    },
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}

enum Failure {
    Usage(String),
    Data(odflow::Error),
}

impl From<odflow::Error> for Failure {
    fn from(e: odflow::Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.synth.seed = seed;
        cfg.split.seed = seed;
        cfg.train.optimizer.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| odflow::Error::io(dir, e).into())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(odflow::Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| odflow::Error::io(path, e).into())
}

fn load_data(cfg: &ExperimentConfig, data: &DataArgs) -> CliResult<(FlowNetwork, SplitAssignment)> {
    let dir = data
        .data
        .clone()
        .or_else(|| cfg.data.dir.clone())
        .ok_or_else(|| Failure::Usage("no dataset given; pass --data or set [data] dir".into()))?;
    let net = load_network(&NetworkPaths::in_dir(&dir))?;
    let split = match &data.split {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| odflow::Error::io(path, e))?;
            let split: SplitAssignment = serde_json::from_str(&text).map_err(odflow::Error::from)?;
            if split.roles.len() != net.n() {
                return Err(odflow::Error::Split(format!("split covers {} nodes, dataset has {}", split.roles.len(), net.n())).into());
            }
            split
        }
        None => make_split(&net, cfg.split.fractions(), &cfg.bins(), cfg.split.seed)?,
    };
    for w in &split.warnings {
        log::warn!("{w}");
    }
    Ok((net, split))
}

fn model_path(out_dir: &Path, kind: ModelKind) -> PathBuf {
    out_dir.join(format!("model-{}.json", kind.name()))
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Synth { common } => {
            let cfg = load_config(&common)?;
            let (net, truth) = generate_synthetic_city(&cfg.synth)?;
            create_dir(&common.out_dir)?;
            save_network(&net, &NetworkPaths::in_dir(&common.out_dir))?;
            write_json(&common.out_dir.join("ground_truth.json"), &truth)?;
            println!(
                "wrote {} nodes, {} edges, total flow {} to {}",
                net.n(),
                net.m(),
                net.total_flow(),
                common.out_dir.display()
            );
        }
        Command::Ingest {
            common,
            trips,
            nodes,
            grid,
        } => {
            let grid = load_grid(&grid)?;
            let nodes = load_nodes(&nodes, &grid)?;
            let trips = load_trips(&trips)?;
            let (net, report) = odflow::ingest::network_from_trips(grid, nodes, trips)?;
            create_dir(&common.out_dir)?;
            save_network(&net, &NetworkPaths::in_dir(&common.out_dir))?;
            write_json(&common.out_dir.join("ingest_report.json"), &report)?;
            println!(
                "{} trips, {} same-cell dropped, {} unmatched dropped, asymmetry {:.4}",
                report.total_trips, report.dropped_same_cell, report.dropped_unmatched, report.asymmetry
            );
        }
        Command::Split { common, data } => {
            let cfg = load_config(&common)?;
            let (_, split) = load_data(&cfg, &data)?;
            create_dir(&common.out_dir)?;
            write_json(&common.out_dir.join("split.json"), &split)?;
            println!(
                "train {} / val {} / test {} edges, {} discarded; {} val and {} test nodes",
                split.train_edges.len(),
                split.val_edges.len(),
                split.test_edges.len(),
                split.discarded_edges.len(),
                split.val_interest().len(),
                split.test_interest().len()
            );
        }
        Command::Train { common, data, model } => {
            let cfg = load_config(&common)?;
            let (net, split) = load_data(&cfg, &data)?;
            let validation = Evaluator::new(&net, &split.val_edges, cfg.bins());
            let view = FlowView::masked(&net, split.interest_nodes());
            let fit = fit_model(model, &view, &split, &cfg, cfg.train.optimizer.seed, &validation)?;
            if view.violations() > 0 {
                return Err(odflow::Error::Leakage(view.violations()).into());
            }
            create_dir(&common.out_dir)?;
            let path = model_path(&common.out_dir, model);
            ModelFile::new(model, split.seed, fit.model).save(&path)?;
            if let Some(history) = &fit.history {
                history.write_csv(&common.out_dir.join(format!("history-{}.csv", model.name())))?;
            }
            println!("{} fitted: {}", model.name(), fit.diagnostics);
            println!("wrote {}", path.display());
        }
        Command::Evaluate { common, data, model } => {
            let path = model_path(&common.out_dir, model);
            if !path.exists() {
                return Err(odflow::Error::MissingModel(path).into());
            }
            let cfg = load_config(&common)?;
            let (net, split) = load_data(&cfg, &data)?;
            let file = ModelFile::load(&path)?;
            if file.model != model {
                return Err(odflow::Error::Config(format!("{} holds a {} model", path.display(), file.model.name())).into());
            }
            if file.split_seed != split.seed {
                return Err(odflow::Error::Split(format!(
                    "model was trained on split seed {}, evaluating on {}",
                    file.split_seed, split.seed
                ))
                .into());
            }
            let pred = file.fitted.predict(&net, &split, &split.test_edges)?;
            let truth: Vec<f64> = split.test_edges.iter().map(|&e| net.flows_unguarded()[e]).collect();
            let metrics = MetricsReport::compute(&truth, &pred, &cfg.bins())?;
            write_json(&common.out_dir.join(format!("metrics-{}.json", model.name())), &metrics)?;
            write_predictions(
                &net,
                &split.test_edges,
                &pred,
                &common.out_dir.join(format!("predictions-{}.csv", model.name())),
            )?;
            println!(
                "{}: MAE {:.3}, bin-mean MAE {:.3}, SSI {:.3}, CPC {:.3}, CPL {:.3}",
                model.name(),
                metrics.mae_total,
                metrics.bin_mean_mae,
                metrics.ssi,
                metrics.cpc,
                metrics.cpl
            );
        }
        Command::Compare { common, data, model } => {
            let cfg = load_config(&common)?;
            let (net, split) = load_data(&cfg, &data)?;
            let models = if model.is_empty() { cfg.train.models.clone() } else { model };
            let out = run_experiment(&net, &split, &models, &cfg, cfg.train.n_seeds)?;
            create_dir(&common.out_dir)?;
            write_bundle(&out, &net, &split, &common.out_dir)?;
            print!("{}", out.report.table());
            println!("wrote report bundle to {}", common.out_dir.display());
        }
        Command::Residuals {
            common,
            data,
            predictions,
        } => {
            let cfg = load_config(&common)?;
            let (net, split) = load_data(&cfg, &data)?;
            let pred = read_predictions(&net, &predictions)?;
            create_dir(&common.out_dir)?;
            let map = export_residuals(&net, &split, &pred, &common.out_dir, "residuals")?;
            println!("wrote residuals for {} test nodes to {}", map.nodes.len(), common.out_dir.display());
        }
        Command::Powerlaw { common, data, x_min } => {
            let cfg = load_config(&common)?;
            let dir = data
                .data
                .or(cfg.data.dir)
                .ok_or_else(|| Failure::Usage("no dataset given; pass --data or set [data] dir".into()))?;
            let net = load_network(&NetworkPaths::in_dir(dir))?;
            let alpha = powerlaw_exponent(net.flows_unguarded(), x_min)?;
            println!("alpha = {alpha:.4} (p(x) ~ x^-alpha for x >= {x_min})");
        }
    }
    Ok(())
}
