//! Run configuration: built-in defaults, overridden by a TOML file, overridden
//! by command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use sargnn::accel::{AcceleratorConfig, MtuCost};
use sargnn::dataset::SynthConfig;
use sargnn::model::ArchConfig;
use sargnn::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::Cli;

/// Synthetic dataset parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    pub foreground_fraction: f64,
    pub noise_level: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            classes: s.num_classes,
            per_class: s.samples_per_class,
            size: s.width,
            foreground_fraction: s.foreground_fraction,
            noise_level: s.noise_level,
            test_fraction: 0.25,
            seed: s.seed,
        }
    }
}

impl DataConfig {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            num_classes: self.classes,
            samples_per_class: self.per_class,
            width: self.size,
            height: self.size,
            foreground_fraction: self.foreground_fraction,
            noise_level: self.noise_level,
            seed: self.seed,
        }
    }
}

/// Architecture knobs. Input size and class count come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub gnn_widths: Vec<usize>,
    pub mlp_hidden: Vec<usize>,
    pub attention: bool,
    pub attention_reduction: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = ArchConfig::compact(32, 4);
        Self {
            gnn_widths: a.gnn_widths,
            mlp_hidden: a.mlp_hidden,
            attention: a.attention,
            attention_reduction: a.attention_reduction,
            pool_size: a.pool_size,
            pool_stride: a.pool_stride,
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, width: usize, height: usize, num_classes: usize) -> ArchConfig {
        ArchConfig {
            input_width: width,
            input_height: height,
            num_classes,
            gnn_widths: self.gnn_widths.clone(),
            pool_size: self.pool_size,
            pool_stride: self.pool_stride,
            attention: self.attention,
            attention_reduction: self.attention_reduction,
            mlp_hidden: self.mlp_hidden.clone(),
        }
    }
}

/// Everything a command may read. Serialised back out as the header of every
/// report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Input pruning threshold at inference.
    pub i_vertex: f32,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub accel: AcceleratorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            i_vertex: 0.1,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            accel: AcceleratorConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// File (or defaults) with the command-line flags applied on top.
    pub fn resolve(cli: &Cli, training: bool) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if let Some(seed) = cli.seed {
            cfg.data.seed = seed;
            cfg.train.seed = seed;
        }
        if let Some(v) = cli.i_vertex {
            if training {
                cfg.train.i_vertex = v;
            } else {
                cfg.i_vertex = v;
            }
        }
        if let Some(v) = cli.i_weight {
            cfg.train.i_weight = v;
        }
        if let Some(v) = cli.lambda {
            cfg.train.lambda = v;
        }
        if let Some(v) = cli.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = cli.learning_rate {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = cli.pipelines {
            cfg.accel.pipelines = v;
        }
        if let Some(v) = cli.pes {
            cfg.accel.pes = v;
        }
        if let Some(v) = cli.clock_mhz {
            cfg.accel.clock_mhz = v;
        }
        if let Some(v) = &cli.mtu_cost {
            cfg.accel.mtu_cost = v.parse::<MtuCost>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.accel.validate()?;
        if !(self.i_vertex >= 0.0) {
            bail!("i_vertex must be >= 0, got {}", self.i_vertex);
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            bail!(
                "test_fraction must lie in [0, 1), got {}",
                self.data.test_fraction
            );
        }
        Ok(())
    }

    /// `# `-prefixed TOML lines for report headers.
    pub fn header(&self) -> String {
        let body = toml::to_string(self).expect("config serialises");
        let mut out = String::new();
        for line in body.lines().filter(|l| !l.is_empty()) {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}
