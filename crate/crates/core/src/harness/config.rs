//! Experiment configuration: a single JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bintree::{build_tree, Codebook, EmbeddingTable, Linkage};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, EstimatorKind};
use crate::policy::{mle_gradient, sgd_update, Direction, HeadKind, PolicyDims, RnnParams, SampleMode};
use crate::rng::{label, StreamSeed};
use crate::tasks::{copy_task, RewardKind, TaskInstance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Copy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub length: usize,
    #[serde(default)]
    pub reward: RewardKind,
    #[serde(default = "one")]
    pub num_instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec {
            embed_dim: default_embed(),
            hidden_dim: default_hidden(),
            init_scale: default_init_scale(),
        }
    }
}

/// Estimator entry; `k` defaults to `V` for `arsm`, 1 for `ars_k` and 2 for
/// `mc_k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub main_traj_mode: SampleMode,
    #[serde(default)]
    pub pseudo_rollout_mode: SampleMode,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind, k: Option<usize>) -> Self {
        EstimatorSpec {
            kind,
            k,
            main_traj_mode: SampleMode::Stochastic,
            pseudo_rollout_mode: SampleMode::Stochastic,
        }
    }

    pub fn resolve(&self, vocab: usize) -> EstimatorConfig {
        let k = self.k.unwrap_or(match self.kind {
            EstimatorKind::Arsm => vocab,
            EstimatorKind::McK => 2,
            EstimatorKind::ArsK => 1,
            _ => 0,
        });
        EstimatorConfig {
            kind: self.kind,
            k,
            main_traj_mode: self.main_traj_mode,
            pseudo_rollout_mode: self.pseudo_rollout_mode,
        }
    }

    /// Short row label: `mc_2`, `ars_1`, `arsm`, ...
    pub fn label(&self, vocab: usize) -> String {
        let c = self.resolve(vocab);
        match c.kind {
            EstimatorKind::McK => format!("mc_{}", c.k),
            EstimatorKind::ArsK => format!("ars_{}", c.k),
            kind => kind.name().to_string(),
        }
    }
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec::new(EstimatorKind::Arsm, None)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    /// Embedding file; without one the tree head uses a balanced codebook.
    #[serde(default)]
    pub embedding_path: Option<PathBuf>,
    #[serde(default)]
    pub linkage: Linkage,
    #[serde(default)]
    pub permute_leaves: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultInjection {
    /// Negate every estimate before the unbiasedness comparison.
    SignFlip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default = "default_oracle_samples")]
    pub samples: usize,
    #[serde(default = "default_fd_instances")]
    pub fd_instances: usize,
    #[serde(default = "default_fast_naive_instances")]
    pub fast_naive_instances: usize,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            samples: default_oracle_samples(),
            fd_instances: default_fd_instances(),
            fast_naive_instances: default_fast_naive_instances(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub task: TaskSpec,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default = "default_head")]
    pub head: HeadKind,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    /// Rows of the variance study and suites of the oracle check.
    #[serde(default)]
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub mle_pretrain_iters: usize,
    #[serde(default = "default_mle_lr")]
    pub mle_learning_rate: f64,
    #[serde(default = "default_variance_samples")]
    pub variance_samples: usize,
    #[serde(default)]
    pub tree: TreeSpec,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Final parameters as a checkpoint (train only).
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Adds a `wall_time` column; the metrics file is then no longer
    /// reproducible byte for byte.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub fault_injection: Option<FaultInjection>,
    #[serde(default)]
    pub oracle: OracleSpec,
}

fn one() -> usize {
    1
}
fn default_embed() -> usize {
    8
}
fn default_hidden() -> usize {
    16
}
fn default_init_scale() -> f64 {
    0.1
}
fn default_head() -> HeadKind {
    HeadKind::Softmax
}
fn default_lr() -> f64 {
    0.1
}
fn default_batch() -> usize {
    8
}
fn default_mle_lr() -> f64 {
    0.5
}
fn default_variance_samples() -> usize {
    1000
}
fn default_oracle_samples() -> usize {
    200_000
}
fn default_fd_instances() -> usize {
    100
}
fn default_fast_naive_instances() -> usize {
    10_000
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::config(if field == "." { "<root>".to_string() } else { field }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.task;
        if t.vocab_size < 2 {
            return Err(Error::config("task.vocab_size", "must be at least 2"));
        }
        if t.length == 0 {
            return Err(Error::config("task.length", "must be at least 1"));
        }
        if t.num_instances == 0 {
            return Err(Error::config("task.num_instances", "must be at least 1"));
        }
        if let RewardKind::Constant(c) = t.reward {
            if !c.is_finite() {
                return Err(Error::config("task.reward", "constant reward must be finite"));
            }
        }
        if self.policy.embed_dim == 0 {
            return Err(Error::config("policy.embed_dim", "must be positive"));
        }
        if self.policy.hidden_dim == 0 {
            return Err(Error::config("policy.hidden_dim", "must be positive"));
        }
        if !(self.policy.init_scale >= 0.0 && self.policy.init_scale.is_finite()) {
            return Err(Error::config("policy.init_scale", "must be a finite non-negative number"));
        }
        if self.iterations > 0 && !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive when iterations > 0"));
        }
        if self.mle_pretrain_iters > 0 && !(self.mle_learning_rate > 0.0 && self.mle_learning_rate.is_finite()) {
            return Err(Error::config("mle_learning_rate", "must be positive when mle_pretrain_iters > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        let v = t.vocab_size;
        self.estimator
            .resolve(v)
            .validate(v, self.head)
            .map_err(|e| Error::config("estimator", reason(e)))?;
        for (i, spec) in self.estimators.iter().enumerate() {
            // every listed estimator runs on the head it needs
            let head = if spec.kind == EstimatorKind::BtArsm { HeadKind::Tree } else { self.head };
            spec.resolve(v)
                .validate(v, head)
                .map_err(|e| Error::config(format!("estimators[{i}]"), reason(e)))?;
        }
        Ok(())
    }

    pub fn vocab(&self) -> usize {
        self.task.vocab_size
    }

    pub fn dims(&self, head: HeadKind) -> PolicyDims {
        PolicyDims {
            vocab: self.task.vocab_size,
            embed: self.policy.embed_dim,
            hidden: self.policy.hidden_dim,
            context: self.task.vocab_size * self.task.length,
            head,
        }
    }

    pub fn root_seed(&self) -> StreamSeed {
        StreamSeed::new(self.seed)
    }

    pub fn build_tasks(&self) -> Result<Vec<TaskInstance>> {
        match self.task.kind {
            TaskKind::Copy => copy_task(
                self.task.vocab_size,
                self.task.length,
                self.task.reward,
                self.task.num_instances,
                self.root_seed().child(&[label::TASK]),
            ),
        }
    }

    /// Codebook from the embedding file, or a balanced one.
    pub fn build_codebook(&self) -> Result<Codebook> {
        match &self.tree.embedding_path {
            None => Codebook::balanced(self.vocab()),
            Some(path) => {
                let emb = EmbeddingTable::load(path)?;
                if emb.len() != self.vocab() {
                    return Err(Error::config(
                        "tree.embedding_path",
                        format!("{} has {} words, task vocabulary is {}", path.display(), emb.len(), self.vocab()),
                    ));
                }
                let mut rng = self.root_seed().child(&[label::TREE]).rng();
                build_tree(&emb, self.tree.linkage, self.tree.permute_leaves, &mut rng)
            }
        }
    }

    pub fn init_params(&self, head: HeadKind) -> Result<RnnParams> {
        let head_id = match head {
            HeadKind::Softmax => 0,
            HeadKind::Tree => 1,
        };
        let mut rng = self.root_seed().child(&[label::INIT, head_id]).rng();
        RnnParams::random(self.dims(head), self.policy.init_scale, &mut rng)
    }

    /// Initial parameters followed by `mle_pretrain_iters` teacher-forced SGD
    /// steps on random mini-batches of the task instances.
    pub fn pretrained_params(&self, head: HeadKind, tree: Option<&Codebook>, tasks: &[TaskInstance]) -> Result<RnnParams> {
        let mut params = self.init_params(head)?;
        let seed = self.root_seed().child(&[label::MLE]);
        for it in 0..self.mle_pretrain_iters {
            let idx = batch_indices(seed.child(&[it as u64]), tasks.len(), self.batch_size);
            let grads = idx
                .iter()
                .map(|&i| mle_gradient(&params, tree, &tasks[i].context, &tasks[i].target).map(|(_, g)| g))
                .collect::<Result<Vec<_>>>()?;
            let mean = mean_params(&params, &grads);
            params = sgd_update(&params, &mean, self.mle_learning_rate, Direction::Descend)?;
        }
        Ok(params)
    }
}

fn reason(e: Error) -> String {
    match e {
        Error::Domain(s) => s,
        other => other.to_string(),
    }
}

/// `n` indices drawn uniformly with replacement from `0..len`.
pub fn batch_indices(seed: StreamSeed, len: usize, n: usize) -> Vec<usize> {
    use rand::Rng;
    let mut rng = seed.rng();
    (0..n).map(|_| rng.random_range(0..len)).collect()
}

/// Mean of gradients, summed in order.
pub fn mean_params(like: &RnnParams, grads: &[RnnParams]) -> RnnParams {
    let mut out = like.zeros_like();
    let w = 1.0 / grads.len().max(1) as f64;
    for g in grads {
        out.add_scaled(g, w);
    }
    out
}
