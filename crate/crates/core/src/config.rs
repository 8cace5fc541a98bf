//! Experiment configuration, stored as TOML with one section per stage.
//!
//! ```toml
//! version = 1
//! pipeline = "shift-benchmark"
//! seed = 7
//!
//! [model]
//! hidden_width = 16
//!
//! [ttt]
//! steps = 200
//! learning_rate = 1e-6
//! ```
//!
//! Missing keys take their defaults; unknown keys are an error. The
//! top-level `seed` overrides the seeds of every section.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::benchmark::BenchmarkConfig;
use crate::error::{Error, Result};
use crate::md::SimConfig;
use crate::model::{ArchConfig, Partition};
use crate::species::Species;
use crate::training::{OptimizerKind, TrainConfig};
use crate::ttt::TttConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    ShiftBenchmark,
    TttVsFinetune,
    RrSweep,
    MdTransfer,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] =
        [Pipeline::ShiftBenchmark, Pipeline::TttVsFinetune, Pipeline::RrSweep, Pipeline::MdTransfer];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::ShiftBenchmark => "shift-benchmark",
            Pipeline::TttVsFinetune => "ttt-vs-finetune",
            Pipeline::RrSweep => "rr-sweep",
            Pipeline::MdTransfer => "md-transfer",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pipeline `{s}`")))
    }
}

/// Network sizes; the species table comes from the benchmark templates and
/// the cutoff defaults to the benchmark's training cutoff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_radial_basis: usize,
    pub hidden_width: usize,
    pub repr_blocks: usize,
    pub head_blocks: usize,
    pub cutoff: Option<f64>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { n_radial_basis: 12, hidden_width: 16, repr_blocks: 1, head_blocks: 1, cutoff: None, seed: 0 }
    }
}

impl ModelConfig {
    pub fn arch(&self, species: Vec<Species>, default_cutoff: f64) -> ArchConfig {
        ArchConfig {
            species,
            n_radial_basis: self.n_radial_basis,
            hidden_width: self.hidden_width,
            repr_blocks: self.repr_blocks,
            head_blocks: self.head_blocks,
            cutoff: self.cutoff.unwrap_or(default_cutoff),
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrConfig {
    /// Candidate cutoffs; the default grid spans 0.7–1.6 × the training
    /// cutoff.
    pub candidates: Option<Vec<f64>>,
    /// Splits swept by `rr-sweep`.
    pub splits: Vec<String>,
    /// Choose a cutoff per configuration instead of one per system.
    pub per_configuration: bool,
}

impl Default for RrConfig {
    fn default() -> Self {
        RrConfig {
            candidates: None,
            splits: vec!["connectivity".into(), "heldout".into(), "id_test".into()],
            per_configuration: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    pub fractions: Vec<f64>,
    /// Split whose structures are divided into a fine-tuning pool and an
    /// evaluation set.
    pub split: String,
    /// Every `eval_stride`-th structure goes to the evaluation set.
    pub eval_stride: usize,
    pub train: TrainConfig,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            fractions: vec![0.05, 0.25, 1.0],
            split: "heldout".into(),
            eval_stride: 2,
            train: TrainConfig {
                optimizer: OptimizerKind::Adam,
                learning_rate: 1e-3,
                epochs: 20,
                batch_size: 4,
                freeze: vec![Partition::Representation, Partition::PriorHead],
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdConfig {
    pub sim: SimConfig,
    /// Split whose first structure seeds the simulations.
    pub split: String,
    /// Splits whose structures, with prior labels only, adapt the TTT model.
    pub adapt_splits: Vec<String>,
    /// Bond deviation (Å) that ends the stable period.
    pub stability_tolerance: f64,
    pub bond_cutoff: f64,
    pub r_max: f64,
    pub n_bins: usize,
}

impl Default for MdConfig {
    fn default() -> Self {
        MdConfig {
            sim: SimConfig::desk(),
            split: "connectivity".into(),
            adapt_splits: vec!["connectivity".into()],
            stability_tolerance: 0.5,
            bond_cutoff: 1.95,
            r_max: 6.0,
            n_bins: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub n_bins: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig { n_bins: 8 }
    }
}

fn benchmark_ttt() -> TttConfig {
    TttConfig { steps: 200, learning_rate: 1e-6, ..TttConfig::default() }
}

fn benchmark_train() -> TrainConfig {
    TrainConfig { learning_rate: 3e-3, epochs: 40, ..TrainConfig::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub pipeline: Pipeline,
    pub seed: u64,
    pub benchmark: BenchmarkConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ttt: TttConfig,
    pub rr: RrConfig,
    pub finetune: FineTuneConfig,
    pub md: MdConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = ExperimentConfig {
            version: CONFIG_VERSION,
            pipeline: Pipeline::ShiftBenchmark,
            seed: 7,
            benchmark: BenchmarkConfig::default(),
            model: ModelConfig::default(),
            train: benchmark_train(),
            ttt: benchmark_ttt(),
            rr: RrConfig::default(),
            finetune: FineTuneConfig::default(),
            md: MdConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        };
        cfg.apply_seed(7);
        cfg
    }
}

impl ExperimentConfig {
    pub fn for_pipeline(pipeline: Pipeline) -> Self {
        ExperimentConfig { pipeline, ..Self::default() }
    }

    /// Sets the top-level seed and derives every section's seed from it.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.benchmark.seed = seed;
        self.model.seed = seed.wrapping_add(1);
        self.train.seed = seed.wrapping_add(2);
        self.ttt.seed = seed.wrapping_add(3);
        self.finetune.train.seed = seed.wrapping_add(4);
        self.md.sim.seed = seed.wrapping_add(5);
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.benchmark.validate()?;
        self.train.validate()?;
        self.ttt.validate()?;
        self.finetune.train.validate()?;
        self.md.sim.validate()?;
        if self.finetune.eval_stride < 2 {
            return Err(Error::Config("finetune.eval_stride must be at least 2".into()));
        }
        if self.diagnostics.n_bins == 0 || self.md.n_bins == 0 {
            return Err(Error::Config("bin counts must be at least 1".into()));
        }
        if !(self.md.r_max > 0.0 && self.md.stability_tolerance > 0.0) {
            return Err(Error::Config("md.r_max and md.stability_tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Parses TOML over the experiment defaults: keys missing from a section
    /// keep their default-experiment values. The top-level seed, when given,
    /// is propagated to every section.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let has_seed = user.contains_key("seed");
        let mut table = toml::Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut table, user);
        let mut cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if has_seed {
            cfg.apply_seed(cfg.seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Recursively overlays `user` on `base`; tables merge, other values replace.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
