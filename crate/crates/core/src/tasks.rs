//! Toy copy tasks and the exhaustive-enumeration gradient oracle.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bintree::Codebook;
use crate::error::{Error, Result};
use crate::policy::{backward_into, Decoder, EncodedContext, PolicyState, RnnParams, TapeRecord};
use crate::rng::StreamSeed;
use crate::stats::CompensatedSum;

/// Largest number of sequences the oracle will enumerate.
pub const ENUMERATION_BUDGET: u128 = 100_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Fraction of positions matching the target.
    #[default]
    Hamming,
    /// `+1` on an exact copy, `-1` otherwise.
    ExactMatch,
    /// Same reward for every sequence; used for zero-gradient checks.
    Constant(f64),
}

fn check_lengths(z: &[usize], y: &[usize]) -> Result<()> {
    if z.len() != y.len() {
        return Err(Error::domain(format!(
            "sequence length {} does not match target length {}",
            z.len(),
            y.len()
        )));
    }
    Ok(())
}

pub fn hamming_reward(z: &[usize], y: &[usize]) -> Result<f64> {
    check_lengths(z, y)?;
    if y.is_empty() {
        return Err(Error::domain("empty sequences"));
    }
    let hits = z.iter().zip(y).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y.len() as f64)
}

pub fn exact_match_reward(z: &[usize], y: &[usize]) -> Result<f64> {
    check_lengths(z, y)?;
    Ok(if z == y { 1.0 } else { -1.0 })
}

/// One context/target pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInstance {
    pub context: Vec<f64>,
    pub target: Vec<usize>,
    pub reward: RewardKind,
    pub vocab: usize,
}

impl TaskInstance {
    pub fn new(context: Vec<f64>, target: Vec<usize>, reward: RewardKind, vocab: usize) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::domain("target must have at least one token"));
        }
        if let Some(&bad) = target.iter().find(|&&y| y >= vocab) {
            return Err(Error::domain(format!("target token {bad} outside vocabulary of {vocab}")));
        }
        if let RewardKind::Constant(c) = reward {
            if !c.is_finite() {
                return Err(Error::domain("constant reward must be finite"));
            }
        }
        Ok(TaskInstance {
            context,
            target,
            reward,
            vocab,
        })
    }

    pub fn length(&self) -> usize {
        self.target.len()
    }

    pub fn score(&self, z: &[usize]) -> Result<f64> {
        match self.reward {
            RewardKind::Hamming => hamming_reward(z, &self.target),
            RewardKind::ExactMatch => exact_match_reward(z, &self.target),
            RewardKind::Constant(c) => check_lengths(z, &self.target).map(|_| c),
        }
    }
}

/// Position-wise one-hot encoding of `target`, length `T * V`.
pub fn copy_context(target: &[usize], vocab: usize) -> Vec<f64> {
    let mut x = vec![0.0; target.len() * vocab];
    for (t, &y) in target.iter().enumerate() {
        x[t * vocab + y] = 1.0;
    }
    x
}

/// `count` copy-task instances with uniformly random targets. The context is
/// the one-hot encoding of the target itself.
pub fn copy_task(vocab: usize, length: usize, reward: RewardKind, count: usize, seed: StreamSeed) -> Result<Vec<TaskInstance>> {
    if vocab < 2 {
        return Err(Error::domain("copy task needs a vocabulary of at least 2"));
    }
    if length == 0 || count == 0 {
        return Err(Error::domain("copy task needs positive length and instance count"));
    }
    (0..count)
        .map(|i| {
            let mut rng = seed.child(&[i as u64]).rng();
            let target: Vec<usize> = (0..length).map(|_| rng.random_range(0..vocab)).collect();
            TaskInstance::new(copy_context(&target, vocab), target, reward, vocab)
        })
        .collect()
}

/// Exact expected reward and gradients of a policy on one task.
#[derive(Clone, Debug)]
pub struct OracleResult {
    pub expected_reward: f64,
    /// `dER / d out(prefix)` for every prefix of length `0..T`, where
    /// `out(prefix)` are the head outputs that produce the next token. The
    /// prefix probability is folded in.
    pub prefix_grads: BTreeMap<Vec<usize>, Vec<f64>>,
    pub param_grad: RnnParams,
    pub total_probability: f64,
}

struct Leaf<'s> {
    prob: f64,
    reward: f64,
    tape: &'s [TapeRecord],
    scores: &'s [Vec<f64>],
}

struct Enumerator<'a> {
    decoder: Decoder<'a>,
    ctx: EncodedContext,
    task: &'a TaskInstance,
}

impl Enumerator<'_> {
    /// Returns the value `E[r | prefix]`.
    #[allow(clippy::too_many_arguments)]
    fn visit(
        &self,
        state_prev: &PolicyState,
        prefix: &mut Vec<usize>,
        prob: f64,
        tape: &mut Vec<TapeRecord>,
        scores: &mut Vec<Vec<f64>>,
        grads: &mut Option<&mut BTreeMap<Vec<usize>, Vec<f64>>>,
        leaf: &mut dyn FnMut(Leaf<'_>),
    ) -> Result<f64> {
        let (state, rec) = self.decoder.params.advance(state_prev, prefix.last().copied(), &self.ctx);
        tape.push(rec);
        let vocab = self.decoder.vocab();
        let mut probs = Vec::with_capacity(vocab);
        let mut step_scores = Vec::with_capacity(vocab);
        let mut values = Vec::with_capacity(vocab);
        for v in 0..vocab {
            let (logp, score) = self.decoder.log_prob_and_score(&state, v)?;
            let p = logp.exp();
            prefix.push(v);
            scores.push(score.clone());
            let q = if prefix.len() == self.task.length() {
                let reward = self.task.score(prefix)?;
                leaf(Leaf {
                    prob: prob * p,
                    reward,
                    tape,
                    scores,
                });
                reward
            } else {
                self.visit(&state, prefix, prob * p, tape, scores, grads, leaf)?
            };
            scores.pop();
            prefix.pop();
            probs.push(p);
            step_scores.push(score);
            values.push(q);
        }
        tape.pop();

        // Shifted by the first value so equal values give an exact zero
        // advantage below.
        let mut value = CompensatedSum::default();
        for (p, q) in probs.iter().zip(&values) {
            value.add(p * (q - values[0]));
        }
        let value = values[0] + value.value();
        if let Some(map) = grads.as_deref_mut() {
            let mut g = vec![0.0; self.decoder.outputs()];
            for ((p, q), score) in probs.iter().zip(&values).zip(&step_scores) {
                let w = prob * p * (q - value);
                for (gi, si) in g.iter_mut().zip(score) {
                    *gi += w * si;
                }
            }
            map.insert(prefix.clone(), g);
        }
        Ok(value)
    }

    fn run(&self, grads: Option<&mut BTreeMap<Vec<usize>, Vec<f64>>>, leaf: &mut dyn FnMut(Leaf<'_>)) -> Result<f64> {
        let mut grads = grads;
        self.visit(
            &self.decoder.params.initial_state(),
            &mut Vec::with_capacity(self.task.length()),
            1.0,
            &mut Vec::new(),
            &mut Vec::new(),
            &mut grads,
            leaf,
        )
    }
}

/// Enumerate every sequence of the task's length and compute the expected
/// reward together with its exact gradients, both with respect to the head
/// outputs at every prefix and with respect to the parameters.
///
/// The parameter gradient is `sum_z p(z) (r(z) - ER) sum_t score_t(z)`,
/// chained through backpropagation one sequence at a time.
pub fn exact_er_and_grads(params: &RnnParams, tree: Option<&Codebook>, task: &TaskInstance) -> Result<OracleResult> {
    if task.vocab != params.dims.vocab {
        return Err(Error::domain(format!(
            "task vocabulary {} differs from policy vocabulary {}",
            task.vocab, params.dims.vocab
        )));
    }
    let count = (task.vocab as u128)
        .checked_pow(task.length() as u32)
        .unwrap_or(u128::MAX);
    if count > ENUMERATION_BUDGET {
        return Err(Error::Budget(count, ENUMERATION_BUDGET));
    }
    let en = Enumerator {
        decoder: Decoder::new(params, tree)?,
        ctx: params.encode_context(&task.context)?,
        task,
    };

    let mut prefix_grads = BTreeMap::new();
    let mut total = CompensatedSum::default();
    let expected_reward = en.run(Some(&mut prefix_grads), &mut |leaf| total.add(leaf.prob))?;

    let mut param_grad = params.zeros_like();
    let mut failure = None;
    en.run(None, &mut |leaf| {
        let w = leaf.prob * (leaf.reward - expected_reward);
        if w == 0.0 || failure.is_some() {
            return;
        }
        let upstream: Vec<Vec<f64>> = leaf.scores.iter().map(|s| s.iter().map(|x| w * x).collect()).collect();
        if let Err(e) = backward_into(params, &en.ctx, leaf.tape, &upstream, &mut param_grad) {
            failure = Some(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }

    Ok(OracleResult {
        expected_reward,
        prefix_grads,
        param_grad,
        total_probability: total.value(),
    })
}
