//! TOML experiment configuration.
//!
//! ```toml
//! [data]
//! dir = "city"
//! bins = [0.0, 10.0, 100.0, 1000.0, 10000.0]
//!
//! [split]
//! train = 0.7
//! val = 0.1
//! test = 0.2
//! seed = 0
//!
//! [train]
//! models = ["mean", "dcgm", "huff", "poisson", "negbin", "fcnn", "gnn-geo", "gnn-flow"]
//! n_seeds = 5
//! seed = 0
//! max_epochs = 110
//!
//! [train.model]
//! hidden = 32
//!
//! [train.spatial]
//! distance_feature = "distance"
//!
//! [synth]
//! n_rows = 12
//! n_cols = 12
//! nonlinear_term = 0.9
//! ```
//!
//! Every key is optional; omitted keys take their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BinSpec;
use crate::neural::{Architecture, ModelConfig, TrainConfig};
use crate::spatial::SpatialOptions;
use crate::split::SplitFractions;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Mean training flow for every pair.
    Mean,
    Dcgm,
    Huff,
    Poisson,
    Negbin,
    Fcnn,
    GnnGeo,
    GnnFlow,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Mean,
        ModelKind::Dcgm,
        ModelKind::Huff,
        ModelKind::Poisson,
        ModelKind::Negbin,
        ModelKind::Fcnn,
        ModelKind::GnnGeo,
        ModelKind::GnnFlow,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Mean => "mean",
            ModelKind::Dcgm => "dcgm",
            ModelKind::Huff => "huff",
            ModelKind::Poisson => "poisson",
            ModelKind::Negbin => "negbin",
            ModelKind::Fcnn => "fcnn",
            ModelKind::GnnGeo => "gnn-geo",
            ModelKind::GnnFlow => "gnn-flow",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }

    pub fn architecture(&self) -> Option<Architecture> {
        match self {
            ModelKind::Fcnn => Some(Architecture::Fcnn),
            ModelKind::GnnGeo => Some(Architecture::GnnGeo),
            ModelKind::GnnFlow => Some(Architecture::GnnFlow),
            _ => None,
        }
    }

    /// Neural models depend on the seed and are run several times.
    pub fn is_stochastic(&self) -> bool {
        self.architecture().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset directory holding `nodes.csv`, `edges.csv` and `grid.csv`.
    pub dir: Option<PathBuf>,
    pub bins: [f64; 5],
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dir: None,
            bins: BinSpec::default().boundaries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let f = SplitFractions::default();
        SplitSection {
            train: f.train,
            val: f.val,
            test: f.test,
            seed: 0,
        }
    }
}

impl SplitSection {
    pub fn fractions(&self) -> SplitFractions {
        SplitFractions {
            train: self.train,
            val: self.val,
            test: self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub models: Vec<ModelKind>,
    /// Repetitions of each neural model with derived seeds.
    pub n_seeds: usize,
    pub model: ModelConfig,
    pub spatial: SpatialOptions,
    /// Optimizer, schedule and early-stopping settings; `seed` here is the
    /// top-level seed every model seed is derived from.
    #[serde(flatten)]
    pub optimizer: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            models: ModelKind::ALL.to_vec(),
            n_seeds: 5,
            model: ModelConfig::default(),
            spatial: SpatialOptions::default(),
            optimizer: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub synth: SynthConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        check_train_keys(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        BinSpec::new(self.data.bins)?;
        self.split.fractions().validate()?;
        self.train.model.validate()?;
        self.train.optimizer.validate()?;
        self.synth.validate()?;
        if self.train.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> BinSpec {
        BinSpec::new(self.data.bins).expect("validated")
    }
}

/// `[train]` flattens the optimizer settings, which serde cannot combine
/// with `deny_unknown_fields`; check its keys against the defaults instead.
fn check_train_keys(text: &str) -> Result<()> {
    let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let Some(train) = raw.get("train").and_then(toml::Value::as_table) else {
        return Ok(());
    };
    let known = toml::Table::try_from(TrainSection::default()).map_err(|e| Error::Config(e.to_string()))?;
    match train.keys().find(|k| !known.contains_key(*k)) {
        Some(k) => Err(Error::Config(format!("unknown key `{k}` in [train]"))),
        None => Ok(()),
    }
}
