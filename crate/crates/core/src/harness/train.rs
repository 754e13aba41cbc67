//! `train`: optional MLE warmup followed by policy-gradient fine-tuning.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{batch_indices, mean_params, ExperimentConfig};
use super::with_workers;
use crate::error::Result;
use crate::estimators::{estimate_batch, sample_trajectory};
use crate::policy::{sgd_update, Decoder, Direction, HeadKind, RnnParams, SampleMode};
use crate::rng::{label, StreamSeed};
use crate::tasks::TaskInstance;

/// Samples used to measure the reward before fine-tuning starts.
pub const PRE_RL_SAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Mean reward of the batch's main trajectories.
    pub mean_reward: f64,
    pub rollout_count: usize,
    pub cumulative_rollouts: usize,
    /// Mean over the batch and time steps of the unique pseudo-action count.
    pub mean_unique_pseudo: f64,
    /// Unique pseudo actions per time step, summed over the batch.
    pub step_histogram: Vec<usize>,
    /// Pseudo words per tree depth, summed over the batch (tree head only).
    pub depth_histogram: Vec<usize>,
    pub wall_time: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub pre_rl_mean_reward: f64,
    pub metrics: Vec<IterationMetrics>,
    pub params: RnnParams,
    /// Tree depth (0 for the softmax head); the number of `d*` columns.
    pub depth: usize,
}

/// Mean reward of `n` stochastic samples, cycling over the tasks.
pub fn mean_sampled_reward(decoder: &Decoder<'_>, tasks: &[TaskInstance], n: usize, seed: StreamSeed) -> Result<f64> {
    let rewards = (0..n)
        .into_par_iter()
        .map(|i| {
            let task = &tasks[i % tasks.len()];
            let ctx = decoder.params.encode_context(&task.context)?;
            Ok(sample_trajectory(decoder, &ctx, task, SampleMode::Stochastic, seed.child(&[i as u64]))?.reward)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(rewards.iter().sum::<f64>() / n as f64)
}

pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    with_workers(cfg.workers, || {
        let tasks = cfg.build_tasks()?;
        let codebook = match cfg.head {
            HeadKind::Tree => Some(cfg.build_codebook()?),
            HeadKind::Softmax => None,
        };
        let cb = codebook.as_ref();
        let est_cfg = cfg.estimator.resolve(cfg.vocab());
        let seed = cfg.root_seed();
        let mut params = cfg.pretrained_params(cfg.head, cb, &tasks)?;
        let pre_rl_mean_reward = mean_sampled_reward(&Decoder::new(&params, cb)?, &tasks, PRE_RL_SAMPLES, seed.child(&[label::EVAL]))?;

        let depth = cb.map_or(0, |c| c.depth());
        let started = Instant::now();
        let mut cumulative = 0;
        let mut metrics = Vec::with_capacity(cfg.iterations);
        for it in 0..cfg.iterations {
            let decoder = Decoder::new(&params, cb)?;
            let idx = batch_indices(seed.child(&[label::BATCH, it as u64]), tasks.len(), cfg.batch_size);
            let ctxs = idx
                .iter()
                .map(|&i| params.encode_context(&tasks[i].context))
                .collect::<Result<Vec<_>>>()?;
            let items: Vec<_> = idx.iter().zip(&ctxs).map(|(&i, c)| (c, &tasks[i])).collect();
            let ests = estimate_batch(&decoder, &items, &est_cfg, seed.child(&[label::ITERATION, it as u64]))?;
            let grads = ests
                .par_iter()
                .zip(&ctxs)
                .map(|(e, c)| e.param_grad(&params, c))
                .collect::<Result<Vec<_>>>()?;

            let b = ests.len() as f64;
            let length = cfg.task.length;
            let mut step_histogram = vec![0; length];
            let mut depth_histogram = vec![0; depth];
            let mut unique = 0.0;
            for e in &ests {
                for (h, c) in step_histogram.iter_mut().zip(&e.unique_pseudo_counts) {
                    *h += c;
                }
                for (h, c) in depth_histogram.iter_mut().zip(&e.depth_pseudo_counts) {
                    *h += c;
                }
                unique += e.unique_pseudo_counts.iter().sum::<usize>() as f64 / length as f64;
            }
            let rollout_count: usize = ests.iter().map(|e| e.rollout_count).sum();
            cumulative += rollout_count;
            metrics.push(IterationMetrics {
                iteration: it,
                mean_reward: ests.iter().map(|e| e.trajectory.reward).sum::<f64>() / b,
                rollout_count,
                cumulative_rollouts: cumulative,
                mean_unique_pseudo: unique / b,
                step_histogram,
                depth_histogram,
                wall_time: cfg.record_wall_time.then(|| started.elapsed().as_secs_f64()),
            });

            let grad = mean_params(&params, &grads);
            params = sgd_update(&params, &grad, cfg.learning_rate, Direction::Ascend)?;
        }
        Ok(TrainSummary {
            pre_rl_mean_reward,
            metrics,
            params,
            depth,
        })
    })
}

/// Metrics CSV with a fixed header; `t*` and `d*` are the per-step and
/// per-depth pseudo-action histograms.
pub fn metrics_csv(cfg: &ExperimentConfig, summary: &TrainSummary) -> String {
    let mut s = String::from("iteration,mean_reward,rollout_count,cumulative_rollouts,mean_unique_pseudo");
    for t in 0..cfg.task.length {
        write!(s, ",t{t}").unwrap();
    }
    for d in 0..summary.depth {
        write!(s, ",d{d}").unwrap();
    }
    if cfg.record_wall_time {
        s.push_str(",wall_time");
    }
    s.push('\n');
    for m in &summary.metrics {
        write!(
            s,
            "{},{},{},{},{}",
            m.iteration, m.mean_reward, m.rollout_count, m.cumulative_rollouts, m.mean_unique_pseudo
        )
        .unwrap();
        for c in m.step_histogram.iter().chain(&m.depth_histogram) {
            write!(s, ",{c}").unwrap();
        }
        if let Some(w) = m.wall_time {
            write!(s, ",{w}").unwrap();
        }
        s.push('\n');
    }
    s
}
