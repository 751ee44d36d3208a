//! Run configuration: one flat TOML table whose keys double as CLI flags.

use std::path::{Path, PathBuf};

use clap::Args;
use deepseed::evaluation::{CvOptions, SweepGrid};
use deepseed::signal::{PreprocessOptions, SeedingMode};
use deepseed::trainer::{OptimizerConfig, SplitMode, TrainConfig};
use serde::{Deserialize, Serialize};

pub const CONFIG_FORMAT: &str = "deepseed-config/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub seeding_mode: SeedingMode,
    pub rng_seed: u64,
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,

    pub delta: usize,
    pub embedding_dim: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub lr_train: f64,
    pub lr_pretrain: f64,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub split_mode: SplitMode,
    pub downsample_factor: Option<usize>,
    pub fold_count: usize,
    pub eval_stride: usize,
    pub window_step: usize,

    pub sg_window: usize,
    pub sg_order: usize,

    pub sweep_deltas: Vec<usize>,
    pub sweep_dims: Vec<usize>,
    pub sweep_fixed_delta: usize,
    pub sweep_fixed_dim: usize,

    pub synth_subjects: usize,
    pub synth_blocks: usize,
    pub synth_block_s: f64,
    pub synth_noise_sd: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let cv = CvOptions::default();
        let pre = PreprocessOptions::default();
        let grid = SweepGrid::default();
        let OptimizerConfig::Adam { beta1, beta2, eps } = OptimizerConfig::default() else {
            unreachable!("default optimizer is adam")
        };
        Self {
            dataset_root: PathBuf::from("data"),
            cache_dir: PathBuf::from("cache"),
            output_dir: PathBuf::from("runs"),
            seeding_mode: SeedingMode::Contextual,
            rng_seed: train.rng_seed,
            jobs: 0,
            delta: train.delta,
            embedding_dim: train.embedding_dim,
            epochs: train.epochs,
            gamma: train.gamma,
            lr_train: train.lr_train,
            lr_pretrain: train.lr_pretrain,
            pretrain_epochs: train.pretrain_epochs,
            batch_size: train.batch_size,
            optimizer: OptimizerKind::Adam,
            adam_beta1: beta1,
            adam_beta2: beta2,
            adam_eps: eps,
            split_mode: train.split_mode,
            downsample_factor: train.downsample_factor,
            fold_count: cv.fold_count,
            eval_stride: cv.eval_stride,
            window_step: 1,
            sg_window: pre.sg_window,
            sg_order: pre.sg_order,
            sweep_deltas: grid.deltas,
            sweep_dims: grid.dims,
            sweep_fixed_delta: grid.fixed_delta,
            sweep_fixed_dim: grid.fixed_dim,
            synth_subjects: 3,
            synth_blocks: 2,
            synth_block_s: 60.0,
            synth_noise_sd: 0.05,
        }
    }
}

/// Same keys as [`RunConfig`]; any flag given replaces the file value.
#[derive(Debug, Clone, Default, Args, Serialize)]
#[command(rename_all = "snake_case")]
pub struct Overrides {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_root: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeding_mode: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_train: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_pretrain: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_mode: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub downsample_factor: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold_count: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_stride: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_step: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sg_window: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sg_order: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_deltas: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_dims: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_fixed_delta: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_fixed_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_subjects: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_blocks: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_block_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_noise_sd: Option<f64>,
}

/// Read `path` (if any), apply flag overrides, fill the rest with defaults.
pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, String> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => toml::Table::new(),
    };
    match table.remove("format") {
        None => {}
        Some(toml::Value::String(f)) if f == CONFIG_FORMAT => {}
        Some(other) => return Err(format!("unsupported config format {other}")),
    }
    let flags = toml::Table::try_from(overrides).map_err(|e| e.to_string())?;
    table.extend(flags);
    let config: RunConfig = table.try_into().map_err(|e: toml::de::Error| e.to_string())?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.train_config().validate().map_err(|e| e.to_string())?;
        if self.fold_count < 2 {
            return Err(format!("fold_count must be at least 2, got {}", self.fold_count));
        }
        if self.eval_stride == 0 || self.window_step == 0 {
            return Err("eval_stride and window_step must be positive".into());
        }
        if self.sg_window % 2 == 0 || self.sg_order >= self.sg_window {
            return Err(format!(
                "sg_window must be odd and larger than sg_order (got {} and {})",
                self.sg_window, self.sg_order
            ));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            delta: self.delta,
            embedding_dim: self.embedding_dim,
            epochs: self.epochs,
            gamma: self.gamma,
            lr_train: self.lr_train,
            lr_pretrain: self.lr_pretrain,
            pretrain_epochs: self.pretrain_epochs,
            batch_size: self.batch_size,
            rng_seed: self.rng_seed,
            optimizer: match self.optimizer {
                OptimizerKind::Adam => OptimizerConfig::Adam {
                    beta1: self.adam_beta1,
                    beta2: self.adam_beta2,
                    eps: self.adam_eps,
                },
                OptimizerKind::Sgd => OptimizerConfig::Sgd,
            },
            split_mode: self.split_mode,
            downsample_factor: self.downsample_factor,
        }
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            fold_count: self.fold_count,
            eval_stride: self.eval_stride,
        }
    }

    pub fn preprocess_options(&self) -> PreprocessOptions {
        PreprocessOptions {
            sg_window: self.sg_window,
            sg_order: self.sg_order,
            ..PreprocessOptions::default()
        }
    }

    pub fn sweep_grid(&self) -> SweepGrid {
        SweepGrid {
            deltas: self.sweep_deltas.clone(),
            dims: self.sweep_dims.clone(),
            fixed_delta: self.sweep_fixed_delta,
            fixed_dim: self.sweep_fixed_dim,
        }
    }

    /// TOML form with a format tag, as echoed into run directories.
    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        table.insert("format".into(), toml::Value::String(CONFIG_FORMAT.into()));
        let body = toml::to_string(&table).expect("config serializes");
        format!("# resolved configuration\n{body}")
    }
}
