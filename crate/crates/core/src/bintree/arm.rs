//! ARM for single Bernoulli nodes and BT-ARSM over tree-softmax sequences.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{complete_from, BinaryStepRecord};
use crate::error::{Error, Result};
use crate::estimators::{sample_trajectory, GradientEstimate};
use crate::policy::{Decoder, EncodedContext, SampleMode, TokenDraw};
use crate::rng::{label, StreamSeed};
use crate::stats::sigmoid;
use crate::tasks::TaskInstance;

/// `(r_true - r_pseudo)(1/2 - pi)` with `b_true = 1[pi < sigmoid(phi)]` and
/// `b_pseudo = 1[pi > sigmoid(-phi)]`; exactly zero when the two bits agree.
pub fn arm_node_grad(pi: f64, phi: f64, r_true: f64, r_pseudo: f64) -> f64 {
    let b_true = pi < sigmoid(phi);
    let b_pseudo = pi > sigmoid(-phi);
    if b_true == b_pseudo {
        0.0
    } else {
        (r_true - r_pseudo) * (0.5 - pi)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BtArsmModes {
    pub main_traj_mode: SampleMode,
    /// Also decides how the bits below a flipped bit are completed.
    pub pseudo_rollout_mode: SampleMode,
}

/// BT-ARSM estimate for one sequence.
///
/// For every token and every node on its path whose pseudo bit differs from
/// the true bit, the flipped branch is completed to a leaf, the resulting
/// pseudo word is continued to a full sequence and scored, and the node gets
/// the ARM gradient against the main trajectory's reward. Pseudo words at one
/// step all lie in different subtrees, so each costs one rollout.
pub fn bt_arsm_sequence_grad(
    decoder: &Decoder<'_>,
    ctx: &EncodedContext,
    task: &TaskInstance,
    modes: BtArsmModes,
    seed: StreamSeed,
) -> Result<GradientEstimate> {
    let codebook = decoder.tree.ok_or_else(|| Error::domain("bt_arsm needs the tree head"))?;
    let traj = sample_trajectory(decoder, ctx, task, modes.main_traj_mode, seed)?;
    let length = traj.actions.len();
    let outputs = decoder.outputs();
    let greedy = modes.pseudo_rollout_mode == SampleMode::Greedy;

    let mut grads = vec![vec![0.0; outputs]; length];
    let mut counts = vec![0; length];
    let mut depth_counts = vec![0; codebook.depth()];
    let mut rollout_count = 1;

    for t in 0..length {
        let state = &traj.states[t];
        let node_logit = |n: usize| decoder.params.node_logit(state, n);
        let record = match &traj.draws[t] {
            TokenDraw::Tree(rec) => rec.clone(),
            _ => {
                // greedy main token: follow its path with fresh uniforms
                let mut rng = seed.child(&[label::PSEUDO_PI, t as u64]).rng();
                let bits = codebook.word_to_path(traj.actions[t])?.to_vec();
                let mut rec = BinaryStepRecord {
                    bits: Vec::new(),
                    node_ids: Vec::new(),
                    pis: Vec::new(),
                    logits: Vec::new(),
                };
                for l in 0..bits.len() {
                    let node = codebook.node_index(&bits[..l])?;
                    rec.node_ids.push(node);
                    rec.logits.push(node_logit(node));
                    rec.pis.push(rng.random());
                }
                rec.bits = bits;
                rec
            }
        };
        let prefix = &traj.actions[..t];
        let mut pseudo_rewards: BTreeMap<usize, f64> = BTreeMap::new();
        for l in 0..record.bits.len() {
            let (pi, phi) = (record.pis[l], record.logits[l]);
            if (pi < sigmoid(phi)) == (pi > sigmoid(-phi)) {
                continue;
            }
            let flipped = codebook.child(record.node_ids[l], 1 - record.bits[l]);
            let mut rng = seed.child(&[label::COMPLETION, t as u64, l as u64]).rng();
            let word = complete_from(codebook, flipped, node_logit, greedy, &mut rng);
            let r_pseudo = match pseudo_rewards.get(&word) {
                Some(&r) => r,
                None => {
                    let mut rng = seed.child(&[label::ROLLOUT, t as u64, word as u64, 0]).rng();
                    let seq = decoder.continue_after(ctx, state, prefix, word, length, modes.pseudo_rollout_mode, &mut rng);
                    let r = task.score(&seq)?;
                    pseudo_rewards.insert(word, r);
                    rollout_count += 1;
                    depth_counts[l] += 1;
                    r
                }
            };
            grads[t][record.node_ids[l]] = arm_node_grad(pi, phi, traj.reward, r_pseudo);
        }
        counts[t] = pseudo_rewards.len();
    }

    Ok(GradientEstimate {
        trajectory: traj,
        step_logit_grads: grads,
        rollout_count,
        unique_pseudo_counts: counts,
        depth_pseudo_counts: depth_counts,
    })
}
