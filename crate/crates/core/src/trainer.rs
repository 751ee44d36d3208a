//! Pre-training and joint reconstruction + clustering training.
//!
//! Each joint epoch sweeps shuffled mini-batches, minimizing
//! `L_AE + L_cm / B` with memberships and centroids held fixed inside a
//! step, then re-embeds the full training set and refreshes memberships and
//! centroids once.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{AutoencoderError, AutoencoderModel, ModelShape};
use crate::clustering::{cmeans_loss, ClusterError, ClusterState, Matrix};
use crate::signal::{WindowSet, CHANNELS};
use crate::tensor::{Parameters, Tape, Tensor, TensorError, TensorFile, Var};

pub const CHECKPOINT_FORMAT: &str = "deepseed-checkpoint/v1";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] AutoencoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("non-finite loss in {phase} epoch {epoch}, batch {batch}: reconstruction {reconstruction}, clustering {clustering}")]
    Diverged {
        phase: Phase,
        epoch: usize,
        batch: usize,
        reconstruction: f64,
        clustering: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("window length {got} does not match trained window length {expected}")]
    DeltaMismatch { expected: usize, got: usize },
    #[error("checkpoint {0}")]
    Checkpoint(String),
}

impl TrainError {
    /// Divergence or non-finite values, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::Diverged { .. } | TrainError::Model(AutoencoderError::NonFinite)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    Sequential,
    NonSequential,
}

impl SplitMode {
    /// Training-set downsampling factor used when none is configured.
    pub fn default_downsample(self) -> usize {
        match self {
            SplitMode::Sequential => 10,
            SplitMode::NonSequential => 2000,
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::Sequential => "sequential",
            SplitMode::NonSequential => "non-sequential",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerConfig {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub delta: usize,
    pub embedding_dim: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub lr_train: f64,
    pub lr_pretrain: f64,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub optimizer: OptimizerConfig,
    pub split_mode: SplitMode,
    /// Keep every Nth training window; `None` picks the split mode's default.
    pub downsample_factor: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            delta: 600,
            embedding_dim: 30,
            epochs: 100,
            gamma: 0.1,
            lr_train: 5e-5,
            lr_pretrain: 1e-6,
            pretrain_epochs: 1,
            batch_size: 64,
            rng_seed: 0,
            optimizer: OptimizerConfig::default(),
            split_mode: SplitMode::NonSequential,
            downsample_factor: None,
        }
    }
}

impl TrainConfig {
    pub fn downsample(&self) -> usize {
        self.downsample_factor.unwrap_or(self.split_mode.default_downsample())
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.delta == 0 {
            return bad("delta must be positive");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(self.lr_train >= 0.0 && self.lr_pretrain >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.downsample_factor == Some(0) {
            return bad("downsample_factor must be positive");
        }
        Ok(())
    }

    pub fn model_shape(&self) -> ModelShape {
        ModelShape {
            channels: CHANNELS,
            embedding_dim: self.embedding_dim,
            delta: self.delta,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Gradient-descent state over every parameter of a store.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, lr: f64, params: &Parameters) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            config,
            lr,
            step: 0,
            v: zeros.clone(),
            m: zeros,
        }
    }

    /// Apply accumulated gradients, then clear them.
    pub fn step(&mut self, params: &mut Parameters) {
        self.step += 1;
        let lr = self.lr;
        let t = self.step as i32;
        for (i, tensor) in params.iter_mut().enumerate() {
            let Some(g) = tensor.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let data = tensor.data_mut();
            match self.config {
                OptimizerConfig::Sgd => {
                    for (p, g) in data.iter_mut().zip(&g) {
                        *p -= lr * g;
                    }
                }
                OptimizerConfig::Adam { beta1, beta2, eps } => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for j in 0..data.len() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                        let mhat = m[j] / c1;
                        let vhat = v[j] / c2;
                        data[j] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            tensor.zero_grad();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pretrain,
    Joint,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Joint => "joint",
        })
    }
}

/// Batch-averaged losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub phase: Phase,
    pub epoch: usize,
    pub reconstruction: f64,
    /// Per-window clustering loss; zero while pre-training.
    pub clustering: f64,
    pub total: f64,
    /// Full-set clustering loss after the end-of-epoch refresh.
    pub refreshed_clustering: Option<f64>,
}

/// Handles into a recorded joint objective.
#[derive(Debug, Clone, Copy)]
pub struct JointPass {
    pub embeddings: Var,
    pub reconstruction: Var,
    pub clustering: Var,
    pub total: Var,
}

/// Record `L_AE + (1/B) sum_t sum_k u_tk |z_t - mu_k|^2` for a batch, with
/// `centroids` and `memberships` entering as constants.
pub fn joint_loss_on_tape(
    model: &AutoencoderModel,
    tape: &mut Tape,
    windows: &[&[f64]],
    centroids: &Matrix,
    memberships: &Matrix,
) -> Result<JointPass, TrainError> {
    if memberships.rows != windows.len() || memberships.cols != centroids.rows {
        return Err(TrainError::Config(format!(
            "memberships are {}x{}, batch has {} windows and {} centroids",
            memberships.rows,
            memberships.cols,
            windows.len(),
            centroids.rows
        )));
    }
    let pass = model.forward_on_tape(tape, windows)?;
    let mu = tape.constant(Tensor::matrix(centroids.rows, centroids.cols, centroids.data.clone())?);
    let u = tape.constant(Tensor::matrix(memberships.rows, memberships.cols, memberships.data.clone())?);
    let d2 = tape.squared_distances(pass.embeddings, mu)?;
    let weighted = tape.mul(d2, u)?;
    let sum = tape.sum(weighted)?;
    let clustering = tape.affine(sum, 1.0 / windows.len() as f64, 0.0)?;
    let total = tape.add(pass.reconstruction_loss, clustering)?;
    Ok(JointPass {
        embeddings: pass.embeddings,
        reconstruction: pass.reconstruction_loss,
        clustering,
        total,
    })
}

/// Value of the joint objective for a batch.
pub fn joint_loss(
    model: &AutoencoderModel,
    windows: &[&[f64]],
    centroids: &Matrix,
    memberships: &Matrix,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let pass = joint_loss_on_tape(model, &mut tape, windows, centroids, memberships)?;
    Ok(tape.value(pass.total).item())
}

fn window_refs(windows: &WindowSet) -> Vec<&[f64]> {
    (0..windows.len()).map(|i| windows.window(i)).collect()
}

fn check_delta(model: &AutoencoderModel, windows: &WindowSet) -> Result<(), TrainError> {
    if windows.delta() != model.delta() {
        return Err(TrainError::DeltaMismatch {
            expected: model.delta(),
            got: windows.delta(),
        });
    }
    Ok(())
}

fn shuffle_rng(config: &TrainConfig, phase: Phase) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(match phase {
        Phase::Pretrain => 1,
        Phase::Joint => 2,
    });
    rng
}

/// Embeddings of every window as an `(n, D)` matrix.
pub fn embed_all(model: &AutoencoderModel, windows: &WindowSet, batch_size: usize) -> Result<Matrix, TrainError> {
    let refs = window_refs(windows);
    let data = model.embed(&refs, batch_size)?;
    Ok(Matrix::new(windows.len(), model.embedding_dim(), data)?)
}

/// Reconstruction-only epochs at `lr_pretrain`.
pub fn pretrain(
    model: &mut AutoencoderModel,
    windows: &WindowSet,
    config: &TrainConfig,
) -> Result<Vec<EpochLosses>, TrainError> {
    config.validate()?;
    check_delta(model, windows)?;
    let refs = window_refs(windows);
    let mut rng = shuffle_rng(config, Phase::Pretrain);
    let mut optimizer = Optimizer::new(config.optimizer, config.lr_pretrain, &model.params);
    let mut order: Vec<usize> = (0..refs.len()).collect();
    let mut history = Vec::with_capacity(config.pretrain_epochs);
    for epoch in 0..config.pretrain_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| refs[i]).collect();
            let mut tape = Tape::new();
            let pass = model.forward_on_tape(&mut tape, &batch)?;
            let loss = tape.value(pass.reconstruction_loss).item();
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    phase: Phase::Pretrain,
                    epoch,
                    batch: b,
                    reconstruction: loss,
                    clustering: 0.0,
                });
            }
            tape.backward(pass.reconstruction_loss, &mut model.params)?;
            optimizer.step(&mut model.params);
            total += loss;
            batches += 1;
        }
        let reconstruction = total / batches.max(1) as f64;
        log::debug!("pretrain epoch {epoch}: reconstruction {reconstruction:.6}");
        history.push(EpochLosses {
            phase: Phase::Pretrain,
            epoch,
            reconstruction,
            clustering: 0.0,
            total: reconstruction,
            refreshed_clustering: None,
        });
    }
    Ok(history)
}

/// Result of training: the autoencoder, its fuzzy clusters and the loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: AutoencoderModel,
    pub clusters: ClusterState,
    pub history: Vec<EpochLosses>,
    pub class_names: Vec<String>,
    pub config: TrainConfig,
    pub fingerprint: String,
}

/// Joint epochs starting from seeded clusters on the current encoder.
/// `history` holds any earlier pre-training entries and is extended.
pub fn train(
    mut model: AutoencoderModel,
    windows: &WindowSet,
    config: &TrainConfig,
    mut history: Vec<EpochLosses>,
) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    check_delta(&model, windows)?;
    let k = windows.class_count();
    let refs = window_refs(windows);
    let embeddings = embed_all(&model, windows, config.batch_size)?;
    let mut clusters = ClusterState::seeded(&embeddings, windows.labels(), k, config.gamma)?;
    let mut rng = shuffle_rng(config, Phase::Joint);
    let mut optimizer = Optimizer::new(config.optimizer, config.lr_train, &model.params);
    let mut order: Vec<usize> = (0..refs.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut rec_sum, mut cl_sum, mut batches) = (0.0, 0.0, 0);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| refs[i]).collect();
            let u = clusters.memberships.select(chunk);
            let mut tape = Tape::new();
            let pass = joint_loss_on_tape(&model, &mut tape, &batch, &clusters.centroids, &u)?;
            let rec = tape.value(pass.reconstruction).item();
            let cl = tape.value(pass.clustering).item();
            if !(rec.is_finite() && cl.is_finite()) {
                return Err(TrainError::Diverged {
                    phase: Phase::Joint,
                    epoch,
                    batch: b,
                    reconstruction: rec,
                    clustering: cl,
                });
            }
            tape.backward(pass.total, &mut model.params)?;
            optimizer.step(&mut model.params);
            rec_sum += rec;
            cl_sum += cl;
            batches += 1;
        }
        let embeddings = embed_all(&model, windows, config.batch_size)?;
        for r in clusters.refresh(&embeddings)? {
            log::warn!("epoch {epoch}: cluster {} re-seeded on window {}", r.cluster, r.point);
        }
        let refreshed = cmeans_loss(&embeddings, &clusters.centroids, &clusters.memberships);
        let n = batches.max(1) as f64;
        let entry = EpochLosses {
            phase: Phase::Joint,
            epoch,
            reconstruction: rec_sum / n,
            clustering: cl_sum / n,
            total: (rec_sum + cl_sum) / n,
            refreshed_clustering: Some(refreshed),
        };
        log::debug!(
            "joint epoch {epoch}: reconstruction {:.6} clustering {:.6} refreshed {:.6}",
            entry.reconstruction,
            entry.clustering,
            refreshed
        );
        history.push(entry);
    }
    Ok(TrainedModel {
        model,
        clusters,
        history,
        class_names: windows.class_names().to_vec(),
        fingerprint: config.fingerprint(),
        config: config.clone(),
    })
}

/// Fresh model, pre-training, then joint training.
pub fn fit(windows: &WindowSet, config: &TrainConfig) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    let mut model = AutoencoderModel::new(config.model_shape(), config.rng_seed);
    let history = pretrain(&mut model, windows, config)?;
    train(model, windows, config, history)
}

/// Per-window class ids, membership rows and embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub classes: Vec<usize>,
    pub memberships: Matrix,
    pub embeddings: Matrix,
}

pub fn predict(trained: &TrainedModel, windows: &WindowSet) -> Result<Prediction, TrainError> {
    check_delta(&trained.model, windows)?;
    let embeddings = embed_all(&trained.model, windows, trained.config.batch_size)?;
    let (classes, memberships) = trained.clusters.predict(&embeddings)?;
    Ok(Prediction {
        classes,
        memberships,
        embeddings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    fingerprint: String,
    config: TrainConfig,
    shape: ModelShape,
    class_names: Vec<String>,
    clusters: ClusterState,
    history: Vec<EpochLosses>,
    parameters: TensorFile,
}

impl TrainedModel {
    pub fn write_checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        let cp = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            fingerprint: self.fingerprint.clone(),
            config: self.config.clone(),
            shape: self.model.shape(),
            class_names: self.class_names.clone(),
            clusters: self.clusters.clone(),
            history: self.history.clone(),
            parameters: self.model.params.to_file(),
        };
        let json = serde_json::to_vec(&cp).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        fs::write(path, json).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self, TrainError> {
        let bytes = fs::read(path).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))?;
        let cp: Checkpoint =
            serde_json::from_slice(&bytes).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))?;
        if cp.format != CHECKPOINT_FORMAT {
            return Err(TrainError::Checkpoint(format!("unsupported format tag `{}`", cp.format)));
        }
        let mut model = AutoencoderModel::new(cp.shape, 0);
        model.params.load_file(&cp.parameters)?;
        Ok(Self {
            model,
            clusters: cp.clusters,
            history: cp.history,
            class_names: cp.class_names,
            config: cp.config,
            fingerprint: cp.fingerprint,
        })
    }
}
