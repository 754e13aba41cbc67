//! Policy-gradient estimators for sequence generation.
//!
//! Every estimator returns per-step gradients with respect to the head
//! outputs along one sampled main trajectory; [`GradientEstimate::param_grad`]
//! chains them through the policy.
//!
//! Randomness is drawn from streams derived from the seed passed in, keyed by
//! step, action and replicate, so an estimate depends only on its inputs.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bintree::{bt_arsm_sequence_grad, BtArsmModes};
use crate::error::{Error, Result};
use crate::policy::{backward_accumulate, Decoder, EncodedContext, HeadKind, PolicyState, RnnParams, SampleMode, TapeRecord, TokenDraw};
use crate::rng::{label, StreamSeed};
use crate::sampling::{pseudo_action_matrix_fast, sample_pi, sample_references, unique_excluding, unique_pseudo_set, SimplexVector};
use crate::stats::{fold_chunks, shifted_mean, softmax, VecMoments};
use crate::tasks::TaskInstance;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Reinforce,
    SelfCritic,
    McK,
    ArsK,
    Arsm,
    BtArsm,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Reinforce => "reinforce",
            EstimatorKind::SelfCritic => "self_critic",
            EstimatorKind::McK => "mc_k",
            EstimatorKind::ArsK => "ars_k",
            EstimatorKind::Arsm => "arsm",
            EstimatorKind::BtArsm => "bt_arsm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// References for `ars_k`, rollouts for `mc_k`, `V` for `arsm`. Unused
    /// otherwise.
    pub k: usize,
    #[serde(default)]
    pub main_traj_mode: SampleMode,
    #[serde(default)]
    pub pseudo_rollout_mode: SampleMode,
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind, k: usize) -> Self {
        EstimatorConfig {
            kind,
            k,
            main_traj_mode: SampleMode::Stochastic,
            pseudo_rollout_mode: SampleMode::Stochastic,
        }
    }

    pub fn validate(&self, vocab: usize, head: HeadKind) -> Result<()> {
        match (self.kind, head) {
            (EstimatorKind::ArsK | EstimatorKind::Arsm, HeadKind::Tree) => {
                return Err(Error::domain(format!("{} needs the softmax head", self.kind.name())))
            }
            (EstimatorKind::BtArsm, HeadKind::Softmax) => return Err(Error::domain("bt_arsm needs the tree head")),
            _ => {}
        }
        match self.kind {
            EstimatorKind::McK | EstimatorKind::ArsK if self.k == 0 => {
                Err(Error::domain(format!("{} needs k >= 1", self.kind.name())))
            }
            EstimatorKind::ArsK if self.k > vocab => Err(Error::domain(format!("k = {} exceeds V = {vocab}", self.k))),
            EstimatorKind::Arsm if self.k != vocab => {
                Err(Error::domain(format!("arsm uses k = V = {vocab}, got {}", self.k)))
            }
            _ => Ok(()),
        }
    }

    /// Greedy modes make the estimate biased.
    pub fn is_biased(&self) -> bool {
        let uses_modes = matches!(self.kind, EstimatorKind::ArsK | EstimatorKind::Arsm | EstimatorKind::BtArsm);
        uses_modes && (self.main_traj_mode == SampleMode::Greedy || self.pseudo_rollout_mode == SampleMode::Greedy)
    }
}

/// A sampled main trajectory with what the estimators need from it.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub actions: Vec<usize>,
    pub draws: Vec<TokenDraw>,
    /// State whose head produced `actions[t]`.
    pub states: Vec<PolicyState>,
    /// `d log p(actions[t]) / d out_t`.
    pub scores: Vec<Vec<f64>>,
    pub tape: Vec<TapeRecord>,
    pub reward: f64,
}

#[derive(Clone, Debug)]
pub struct GradientEstimate {
    pub trajectory: Trajectory,
    /// Estimated `dER / d out_t` along the main trajectory.
    pub step_logit_grads: Vec<Vec<f64>>,
    pub rollout_count: usize,
    pub unique_pseudo_counts: Vec<usize>,
    /// Pseudo words per tree depth (tree head only; empty otherwise).
    pub depth_pseudo_counts: Vec<usize>,
}

impl GradientEstimate {
    pub fn zeros(trajectory: Trajectory, outputs: usize, rollout_count: usize) -> Self {
        let t = trajectory.actions.len();
        GradientEstimate {
            trajectory,
            step_logit_grads: vec![vec![0.0; outputs]; t],
            rollout_count,
            unique_pseudo_counts: vec![0; t],
            depth_pseudo_counts: Vec::new(),
        }
    }

    pub fn param_grad(&self, params: &RnnParams, ctx: &EncodedContext) -> Result<RnnParams> {
        backward_accumulate(params, ctx, &self.trajectory.tape, &self.step_logit_grads)
    }

    pub fn scale(&mut self, factor: f64) {
        self.step_logit_grads.iter_mut().flatten().for_each(|g| *g *= factor);
    }
}

/// `onehot(z) - softmax(phi)`.
pub fn logprob_grad(phi: &[f64], z: usize) -> Result<Vec<f64>> {
    if z >= phi.len() {
        return Err(Error::domain(format!("action {z} out of range for {} logits", phi.len())));
    }
    let mut g: Vec<f64> = softmax(phi).into_iter().map(|p| -p).collect();
    g[z] += 1.0;
    Ok(g)
}

/// Sample (or greedily decode) a full trajectory and score it.
pub fn sample_trajectory(
    decoder: &Decoder<'_>,
    ctx: &EncodedContext,
    task: &TaskInstance,
    mode: SampleMode,
    seed: StreamSeed,
) -> Result<Trajectory> {
    let length = task.length();
    let mut rng = seed.child(&[label::MAIN]).rng();
    let mut traj = Trajectory {
        actions: Vec::with_capacity(length),
        draws: Vec::with_capacity(length),
        states: Vec::with_capacity(length),
        scores: Vec::with_capacity(length),
        tape: Vec::with_capacity(length),
        reward: 0.0,
    };
    let mut state = decoder.params.initial_state();
    for _ in 0..length {
        let (next, rec) = decoder.params.advance(&state, traj.actions.last().copied(), ctx);
        let drawn = decoder.choose(&next, mode, &mut rng);
        let (_, score) = decoder.log_prob_and_score(&next, drawn.token)?;
        traj.actions.push(drawn.token);
        traj.draws.push(drawn.draw);
        traj.scores.push(score);
        traj.tape.push(rec);
        traj.states.push(next.clone());
        state = next;
    }
    traj.reward = task.score(&traj.actions)?;
    Ok(traj)
}

fn scaled_scores(traj: &Trajectory, coef: impl Fn(usize) -> f64) -> Vec<Vec<f64>> {
    traj.scores
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let c = coef(t);
            s.iter().map(|x| c * x).collect()
        })
        .collect()
}

/// REINFORCE with the mini-batch mean reward as baseline.
///
/// The baseline leaves the sample's own reward out, `(r_i - b) B / (B - 1)`
/// with `b` the full batch mean, so each estimate stays unbiased. A batch of
/// one has no baseline and yields zeros.
pub fn reinforce_grad(batch: Vec<Trajectory>) -> Result<Vec<GradientEstimate>> {
    if batch.is_empty() {
        return Err(Error::domain("REINFORCE needs a non-empty batch"));
    }
    let b = batch.len();
    let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let mean = shifted_mean(&rewards);
    Ok(batch
        .into_iter()
        .map(|traj| {
            let adv = if b == 1 {
                0.0
            } else {
                (traj.reward - mean) * b as f64 / (b - 1) as f64
            };
            let step_logit_grads = scaled_scores(&traj, |_| adv);
            let t = traj.actions.len();
            GradientEstimate {
                trajectory: traj,
                step_logit_grads,
                rollout_count: 1,
                unique_pseudo_counts: vec![0; t],
                depth_pseudo_counts: Vec::new(),
            }
        })
        .collect())
}

/// Self-critic: the reward of the greedy decode is the baseline at every step.
pub fn self_critic_grad(traj: Trajectory, greedy_reward: f64) -> GradientEstimate {
    let adv = traj.reward - greedy_reward;
    let step_logit_grads = scaled_scores(&traj, |_| adv);
    let t = traj.actions.len();
    GradientEstimate {
        trajectory: traj,
        step_logit_grads,
        rollout_count: 2,
        unique_pseudo_counts: vec![0; t],
        depth_pseudo_counts: Vec::new(),
    }
}

fn rollout_seed(seed: StreamSeed, t: usize, action: usize, replicate: usize) -> StreamSeed {
    seed.child(&[label::ROLLOUT, t as u64, action as u64, replicate as u64])
}

/// Token-level MC-K: the partial-sequence reward after `z_t` is the mean of
/// `k` sampled continuations, and the baseline is a greedy continuation from
/// `z_{<t}`.
pub fn mc_k_grad(
    decoder: &Decoder<'_>,
    ctx: &EncodedContext,
    task: &TaskInstance,
    traj: Trajectory,
    k: usize,
    seed: StreamSeed,
) -> Result<GradientEstimate> {
    if k == 0 {
        return Err(Error::domain("mc_k needs k >= 1"));
    }
    let length = traj.actions.len();
    let mut adv = Vec::with_capacity(length);
    for t in 0..length {
        let prefix = &traj.actions[..t];
        let state = &traj.states[t];
        let r_hat = if t + 1 == length {
            traj.reward
        } else {
            let rs = (0..k)
                .map(|i| {
                    let mut rng = rollout_seed(seed, t, traj.actions[t], i).rng();
                    let seq = decoder.continue_after(ctx, state, prefix, traj.actions[t], length, SampleMode::Stochastic, &mut rng);
                    task.score(&seq)
                })
                .collect::<Result<Vec<_>>>()?;
            shifted_mean(&rs)
        };
        // greedy decoding draws nothing; the stream is a placeholder
        let mut rng = seed.child(&[label::ROLLOUT, t as u64, u64::MAX]).rng();
        let baseline = task.score(&decoder.complete(ctx, state, prefix, length, SampleMode::Greedy, &mut rng))?;
        adv.push(r_hat - baseline);
    }
    let step_logit_grads = scaled_scores(&traj, |t| adv[t]);
    Ok(GradientEstimate {
        trajectory: traj,
        step_logit_grads,
        rollout_count: 1 + length * (k + 1),
        unique_pseudo_counts: vec![0; length],
        depth_pseudo_counts: Vec::new(),
    })
}

/// Single-reference ARS: `g_v = (f_v - mean f) (1 - V pi_j)` where `f_m` is
/// the reward of the pseudo action from swapping `m` and `j`.
pub fn ars_step_grad(pi: &SimplexVector, ref_j: usize, pseudo_rewards: &[f64]) -> Result<Vec<f64>> {
    let vocab = pi.len();
    if ref_j >= vocab || pseudo_rewards.len() != vocab {
        return Err(Error::domain("reference or pseudo-reward length does not match pi"));
    }
    let mean = shifted_mean(pseudo_rewards);
    let coef = 1.0 - vocab as f64 * pi.values()[ref_j];
    Ok(pseudo_rewards.iter().map(|f| (f - mean) * coef).collect())
}

/// ARS-K (and ARSM when `k == V`) over a whole sequence.
///
/// At each step the pseudo-action matrix for `k` references is built from
/// `pi_t`; each distinct pseudo action other than the main token gets one
/// rollout, and the main token reuses the main trajectory's reward. Steps
/// where every pseudo action equals the main token contribute exactly zero.
pub fn arsm_sequence_grad(
    decoder: &Decoder<'_>,
    ctx: &EncodedContext,
    task: &TaskInstance,
    config: &EstimatorConfig,
    seed: StreamSeed,
) -> Result<GradientEstimate> {
    if decoder.tree.is_some() {
        return Err(Error::domain("ARS-K needs the softmax head"));
    }
    let vocab = decoder.vocab();
    let k = config.k;
    if k == 0 || k > vocab {
        return Err(Error::domain(format!("ARS-K needs 1 <= k <= V, got k = {k}, V = {vocab}")));
    }
    let traj = sample_trajectory(decoder, ctx, task, config.main_traj_mode, seed)?;
    let length = traj.actions.len();
    let greedy_pseudo = config.pseudo_rollout_mode == SampleMode::Greedy;
    let mut grads = vec![vec![0.0; vocab]; length];
    let mut counts = vec![0; length];
    let mut rollout_count = 1;

    for t in 0..length {
        let z = traj.actions[t];
        let state = &traj.states[t];
        let (pi, logits) = match &traj.draws[t] {
            TokenDraw::Categorical { pi, logits } => (pi.clone(), logits.clone()),
            _ => {
                let mut rng = seed.child(&[label::PSEUDO_PI, t as u64]).rng();
                (sample_pi(&mut rng, vocab)?, decoder.logits(state))
            }
        };
        let refs = sample_references(&mut seed.child(&[label::REFS, t as u64]).rng(), vocab, k)?;
        let matrix = pseudo_action_matrix_fast(&pi, &logits, &refs)?;
        let others = unique_excluding(&matrix, z);
        counts[t] = others.cardinality();
        if others.actions.is_empty() {
            continue;
        }
        let to_roll: Vec<usize> = if greedy_pseudo {
            let mut all = unique_pseudo_set(&matrix).actions;
            all.insert(z);
            all.into_iter().collect()
        } else {
            others.actions.into_iter().collect()
        };
        let prefix = &traj.actions[..t];
        let mut rewards = BTreeMap::new();
        for &a in &to_roll {
            let mut rng = rollout_seed(seed, t, a, 0).rng();
            let seq = decoder.continue_after(ctx, state, prefix, a, length, config.pseudo_rollout_mode, &mut rng);
            rewards.insert(a, task.score(&seq)?);
        }
        rewards.entry(z).or_insert(traj.reward);
        rollout_count += to_roll.len();

        let g = &mut grads[t];
        for (row, &j) in matrix.entries.iter().zip(&matrix.refs) {
            let f: Vec<f64> = row.iter().map(|a| rewards[a]).collect();
            for (gv, x) in g.iter_mut().zip(ars_step_grad(&pi, j, &f)?) {
                *gv += x;
            }
        }
        g.iter_mut().for_each(|x| *x /= k as f64);
    }
    Ok(GradientEstimate {
        trajectory: traj,
        step_logit_grads: grads,
        rollout_count,
        unique_pseudo_counts: counts,
        depth_pseudo_counts: Vec::new(),
    })
}

fn greedy_reward(decoder: &Decoder<'_>, ctx: &EncodedContext, task: &TaskInstance, seed: StreamSeed) -> Result<f64> {
    let mut rng = seed.child(&[label::EVAL]).rng();
    task.score(&decoder.greedy_sequence(ctx, task.length(), &mut rng))
}

/// One estimate for any kind. REINFORCE draws `batch_size` trajectories and
/// returns the estimate of the first, with the others as its baseline.
pub fn estimate(
    decoder: &Decoder<'_>,
    ctx: &EncodedContext,
    task: &TaskInstance,
    config: &EstimatorConfig,
    batch_size: usize,
    seed: StreamSeed,
) -> Result<GradientEstimate> {
    config.validate(decoder.vocab(), decoder.params.dims.head)?;
    match config.kind {
        EstimatorKind::Reinforce => {
            let batch = (0..batch_size.max(1))
                .map(|i| sample_trajectory(decoder, ctx, task, SampleMode::Stochastic, seed.child(&[label::BATCH, i as u64])))
                .collect::<Result<Vec<_>>>()?;
            let mut first = reinforce_grad(batch)?.swap_remove(0);
            first.rollout_count = batch_size.max(1);
            Ok(first)
        }
        EstimatorKind::SelfCritic => {
            let traj = sample_trajectory(decoder, ctx, task, SampleMode::Stochastic, seed)?;
            Ok(self_critic_grad(traj, greedy_reward(decoder, ctx, task, seed)?))
        }
        EstimatorKind::McK => {
            let traj = sample_trajectory(decoder, ctx, task, SampleMode::Stochastic, seed)?;
            mc_k_grad(decoder, ctx, task, traj, config.k, seed)
        }
        EstimatorKind::ArsK | EstimatorKind::Arsm => arsm_sequence_grad(decoder, ctx, task, config, seed),
        EstimatorKind::BtArsm => bt_arsm_sequence_grad(
            decoder,
            ctx,
            task,
            BtArsmModes {
                main_traj_mode: config.main_traj_mode,
                pseudo_rollout_mode: config.pseudo_rollout_mode,
            },
            seed,
        ),
    }
}

/// Estimates for a batch of task instances, one per instance. REINFORCE uses
/// the batch itself as its baseline; other kinds are independent per sample.
pub fn estimate_batch(
    decoder: &Decoder<'_>,
    items: &[(&EncodedContext, &TaskInstance)],
    config: &EstimatorConfig,
    seed: StreamSeed,
) -> Result<Vec<GradientEstimate>> {
    if items.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    for (_, task) in items {
        config.validate(task.vocab, decoder.params.dims.head)?;
    }
    let sample_seed = |i: usize| seed.child(&[label::SAMPLE, i as u64]);
    if config.kind == EstimatorKind::Reinforce {
        let trajs = items
            .par_iter()
            .enumerate()
            .map(|(i, (ctx, task))| sample_trajectory(decoder, ctx, task, SampleMode::Stochastic, sample_seed(i)))
            .collect::<Result<Vec<_>>>()?;
        return reinforce_grad(trajs);
    }
    items
        .par_iter()
        .enumerate()
        .map(|(i, (ctx, task))| estimate(decoder, ctx, task, config, 1, sample_seed(i)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceReport {
    pub log10_variance: f64,
    pub mean_rollout_count: f64,
    pub mean_unique_pseudo: f64,
}

/// Samples per parallel chunk.
pub const CHUNK: usize = 256;

/// Draw `m` estimates at fixed parameters, chain each into parameter space,
/// and report `log10(mean_coord var + 1e-30)`.
#[allow(clippy::too_many_arguments)]
pub fn measure_variance(
    decoder: &Decoder<'_>,
    ctx: &EncodedContext,
    task: &TaskInstance,
    config: &EstimatorConfig,
    m: usize,
    batch_size: usize,
    seed: StreamSeed,
) -> Result<VarianceReport> {
    if m < 2 {
        return Err(Error::domain("variance needs at least 2 samples"));
    }
    let params = decoder.params;
    let dim = params.num_params();
    let (moments, rollouts, unique) = fold_chunks(
        m,
        CHUNK,
        || (VecMoments::new(dim), 0usize, 0.0),
        |acc, i| {
            let est = estimate(decoder, ctx, task, config, batch_size, seed.child(&[label::SAMPLE, i as u64]))?;
            acc.0.push(&est.param_grad(params, ctx)?.to_flat());
            acc.1 += est.rollout_count;
            let t = est.unique_pseudo_counts.len().max(1);
            acc.2 += est.unique_pseudo_counts.iter().sum::<usize>() as f64 / t as f64;
            Ok(())
        },
        |acc, part| {
            acc.0.merge(&part.0);
            acc.1 += part.1;
            acc.2 += part.2;
        },
    )?;
    let var = moments.variance();
    let mean_var = var.iter().sum::<f64>() / dim as f64;
    Ok(VarianceReport {
        log10_variance: (mean_var + 1e-30).log10(),
        mean_rollout_count: rollouts as f64 / m as f64,
        mean_unique_pseudo: unique / m as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyDims;
    use crate::tasks::RewardKind;

    fn setup(vocab: usize, head: HeadKind, seed: u64) -> (RnnParams, TaskInstance) {
        let dims = PolicyDims {
            vocab,
            embed: 3,
            hidden: 5,
            context: 2,
            head,
        };
        let params = RnnParams::random(dims, 0.8, &mut StreamSeed::new(seed).rng()).unwrap();
        let task = TaskInstance::new(vec![0.3, -0.4], vec![1, 0, vocab - 1], RewardKind::Hamming, vocab).unwrap();
        (params, task)
    }

    #[test]
    fn logprob_grad_examples() {
        assert_eq!(logprob_grad(&[0.0, 0.0], 0).unwrap(), vec![0.5, -0.5]);
        let g = logprob_grad(&[0.3, -2.0, 1.1], 2).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        let g = logprob_grad(&[800.0, 0.0, 0.0], 0).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-300));
        assert!(logprob_grad(&[0.0], 1).is_err());
    }

    #[test]
    fn ars_step_grad_examples() {
        // pi = (0.3, 0.7), j = second; swapping gives pseudo actions with
        // reward vector (1, 0)
        let pi = SimplexVector::new(vec![0.3, 0.7]).unwrap();
        let g = ars_step_grad(&pi, 1, &[1.0, 0.0]).unwrap();
        assert!((g[0] - (-0.2)).abs() < 1e-15 && (g[1] - 0.2).abs() < 1e-15);
        assert_eq!(ars_step_grad(&pi, 0, &[0.4, 0.4]).unwrap(), vec![0.0, 0.0]);
        let pi = SimplexVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = ars_step_grad(&pi, 2, &[0.1, 0.9, -0.3, 0.25]).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn reinforce_batches() {
        let (params, task) = setup(4, HeadKind::Softmax, 1);
        let dec = Decoder::new(&params, None).unwrap();
        let ctx = params.encode_context(&task.context).unwrap();
        let one = sample_trajectory(&dec, &ctx, &task, SampleMode::Stochastic, StreamSeed::new(2)).unwrap();
        let est = reinforce_grad(vec![one.clone()]).unwrap();
        assert!(est[0].step_logit_grads.iter().flatten().all(|&g| g == 0.0));
        let est = reinforce_grad(vec![one.clone(), one.clone(), one]).unwrap();
        assert!(est.iter().all(|e| e.step_logit_grads.iter().flatten().all(|&g| g == 0.0)));
        assert!(est.iter().all(|e| e.rollout_count == 1));
        assert!(reinforce_grad(Vec::new()).is_err());
    }

    #[test]
    fn constant_reward_gives_exact_zeros() {
        for (kind, k, head) in [
            (EstimatorKind::SelfCritic, 1, HeadKind::Softmax),
            (EstimatorKind::McK, 2, HeadKind::Softmax),
            (EstimatorKind::ArsK, 1, HeadKind::Softmax),
            (EstimatorKind::ArsK, 3, HeadKind::Softmax),
            (EstimatorKind::Arsm, 5, HeadKind::Softmax),
            (EstimatorKind::BtArsm, 0, HeadKind::Tree),
            (EstimatorKind::Reinforce, 0, HeadKind::Softmax),
        ] {
            let (params, mut task) = setup(5, head, 3);
            task.reward = RewardKind::Constant(0.37);
            let cb = crate::bintree::Codebook::balanced(5).unwrap();
            let dec = Decoder::new(&params, Some(&cb)).unwrap();
            let ctx = params.encode_context(&task.context).unwrap();
            let cfg = EstimatorConfig::new(kind, k);
            for s in 0..20 {
                let est = estimate(&dec, &ctx, &task, &cfg, 4, StreamSeed::new(s)).unwrap();
                assert!(est.step_logit_grads.iter().flatten().all(|&g| g == 0.0), "{kind:?}");
            }
        }
    }

    #[test]
    fn rollout_accounting() {
        let (params, task) = setup(4, HeadKind::Softmax, 5);
        let dec = Decoder::new(&params, None).unwrap();
        let ctx = params.encode_context(&task.context).unwrap();
        for s in 0..20 {
            let seed = StreamSeed::new(s);
            let mc = estimate(&dec, &ctx, &task, &EstimatorConfig::new(EstimatorKind::McK, 2), 1, seed).unwrap();
            assert_eq!(mc.rollout_count, 1 + 3 * 3);
            let sc = estimate(&dec, &ctx, &task, &EstimatorConfig::new(EstimatorKind::SelfCritic, 1), 1, seed).unwrap();
            assert_eq!(sc.rollout_count, 2);
            let a = estimate(&dec, &ctx, &task, &EstimatorConfig::new(EstimatorKind::Arsm, 4), 1, seed).unwrap();
            assert_eq!(a.rollout_count, 1 + a.unique_pseudo_counts.iter().sum::<usize>());
            assert!(a.unique_pseudo_counts.iter().all(|&c| c <= 3));
            for (t, g) in a.step_logit_grads.iter().enumerate() {
                assert!(g.iter().sum::<f64>().abs() < 1e-12);
                if a.unique_pseudo_counts[t] == 0 {
                    assert!(g.iter().all(|&x| x == 0.0));
                }
            }
        }
    }

    #[test]
    fn saturated_policy_gives_empty_pseudo_sets() {
        let (mut params, task) = setup(4, HeadKind::Softmax, 6);
        params.head_b[2] = 500.0;
        let dec = Decoder::new(&params, None).unwrap();
        let ctx = params.encode_context(&task.context).unwrap();
        let est = estimate(&dec, &ctx, &task, &EstimatorConfig::new(EstimatorKind::Arsm, 4), 1, StreamSeed::new(0)).unwrap();
        assert_eq!(est.rollout_count, 1);
        assert!(est.step_logit_grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn config_validation() {
        let c = EstimatorConfig::new(EstimatorKind::ArsK, 5);
        assert!(c.validate(4, HeadKind::Softmax).is_err());
        assert!(EstimatorConfig::new(EstimatorKind::Arsm, 3).validate(4, HeadKind::Softmax).is_err());
        assert!(EstimatorConfig::new(EstimatorKind::Arsm, 4).validate(4, HeadKind::Tree).is_err());
        assert!(EstimatorConfig::new(EstimatorKind::BtArsm, 0).validate(4, HeadKind::Softmax).is_err());
        assert!(EstimatorConfig::new(EstimatorKind::McK, 0).validate(4, HeadKind::Softmax).is_err());
        let mut g = EstimatorConfig::new(EstimatorKind::Arsm, 4);
        assert!(!g.is_biased());
        g.main_traj_mode = SampleMode::Greedy;
        assert!(g.is_biased());
    }

    #[test]
    fn variance_is_deterministic_and_floors_on_constants() {
        let (params, mut task) = setup(4, HeadKind::Softmax, 7);
        let dec = Decoder::new(&params, None).unwrap();
        let ctx = params.encode_context(&task.context).unwrap();
        let cfg = EstimatorConfig::new(EstimatorKind::Arsm, 4);
        let a = measure_variance(&dec, &ctx, &task, &cfg, 300, 2, StreamSeed::new(1)).unwrap();
        let b = measure_variance(&dec, &ctx, &task, &cfg, 300, 2, StreamSeed::new(1)).unwrap();
        assert_eq!(a, b);
        task.reward = RewardKind::Constant(1.0);
        let c = measure_variance(&dec, &ctx, &task, &cfg, 50, 2, StreamSeed::new(1)).unwrap();
        assert_eq!(c.log10_variance, -30.0);
    }
}
