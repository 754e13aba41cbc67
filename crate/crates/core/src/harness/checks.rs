//! Verification suites shared by `oracle-check` and the integration tests.

use rand::Rng;
use serde::Serialize;

use super::config::FaultInjection;
use crate::bintree::{bt_logprob_and_mle_grad, Codebook};
use crate::error::Result;
use crate::estimators::{estimate, EstimatorConfig, CHUNK};
use crate::policy::{backward_accumulate, mle_gradient, Decoder, HeadKind, PolicyDims, RnnParams};
use crate::rng::StreamSeed;
use crate::sampling::{pseudo_action_matrix_fast, pseudo_action_matrix_naive, sample_references, SimplexVector, StepLogits};
use crate::stats::{fold_chunks, VecMoments};
use crate::tasks::{exact_er_and_grads, TaskInstance};

/// One line of the oracle report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub statistic: f64,
    pub bound: f64,
    pub pass: bool,
}

const FAST_NAIVE_VOCABS: [usize; 6] = [2, 3, 4, 8, 16, 64];

/// Random `(pi, phi, refs)` instance. Every third instance is an adversarial
/// one where `ln pi_i - phi_i` is tied or nearly tied across coordinates.
pub fn pseudo_instance(seed: StreamSeed, index: usize) -> Result<(SimplexVector, StepLogits, Vec<usize>)> {
    let mut rng = seed.child(&[index as u64]).rng();
    let vocab = FAST_NAIVE_VOCABS[index % FAST_NAIVE_VOCABS.len()];
    let k = rng.random_range(1..=vocab.min(8));
    let refs = sample_references(&mut rng, vocab, k)?;
    let (pi, phi) = match (index / FAST_NAIVE_VOCABS.len()) % 3 {
        0 => {
            let pi = crate::sampling::sample_pi(&mut rng, vocab)?;
            let phi: Vec<f64> = (0..vocab).map(|_| rng.random_range(-3.0..3.0)).collect();
            (pi, phi)
        }
        1 => {
            // phi_i = ln pi_i + c + a few ulps, so every diagonal entry ties
            // or nearly ties
            let pi = crate::sampling::sample_pi(&mut rng, vocab)?;
            let c = rng.random_range(-1.0..1.0);
            let phi = pi
                .values()
                .iter()
                .map(|p| {
                    let base: f64 = p.ln() + c;
                    match rng.random_range(0..3) {
                        0 => base,
                        1 => f64::from_bits(base.to_bits() + 1),
                        _ => f64::from_bits(base.to_bits().saturating_sub(1)),
                    }
                })
                .collect();
            (pi, phi)
        }
        _ => {
            // few distinct values in both pi and phi
            let levels = [1.0, 2.0, 2.0, 3.0];
            let w: Vec<f64> = (0..vocab).map(|_| levels[rng.random_range(0..4)]).collect();
            let pi = SimplexVector::from_weights(&w)?;
            let phi = (0..vocab).map(|_| [0.0, 0.5, 0.5][rng.random_range(0..3)]).collect();
            (pi, phi)
        }
    };
    Ok((pi, StepLogits::new(phi)?, refs))
}

/// Entrywise comparison of the fast and naive pseudo-action matrices.
pub fn fast_naive_suite(instances: usize, seed: StreamSeed) -> Result<SuiteResult> {
    let mismatches = fold_chunks(
        instances,
        CHUNK,
        || 0usize,
        |acc, i| {
            let (pi, phi, refs) = pseudo_instance(seed, i)?;
            if pseudo_action_matrix_fast(&pi, &phi, &refs)? != pseudo_action_matrix_naive(&pi, &phi, &refs)? {
                *acc += 1;
            }
            Ok(())
        },
        |acc, part| *acc += part,
    )?;
    Ok(SuiteResult {
        suite: "fast_naive_equivalence".into(),
        statistic: mismatches as f64,
        bound: 0.0,
        pass: mismatches == 0,
    })
}

/// Teacher-forced head outputs for a token sequence.
pub fn forward_outputs(params: &RnnParams, context: &[f64], tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
    let ctx = params.encode_context(context)?;
    let mut state = params.initial_state();
    let mut prev = None;
    let mut outs = Vec::with_capacity(tokens.len());
    for &z in tokens {
        let (out, next, _) = params.forward_step(&state, prev, &ctx);
        outs.push(out);
        state = next;
        prev = Some(z);
    }
    Ok(outs)
}

/// Teacher-forced tape for a token sequence.
fn tape_for(params: &RnnParams, context: &[f64], tokens: &[usize]) -> Result<Vec<crate::policy::TapeRecord>> {
    let ctx = params.encode_context(context)?;
    let mut state = params.initial_state();
    let mut prev = None;
    let mut tape = Vec::with_capacity(tokens.len());
    for &z in tokens {
        let (next, rec) = params.advance(&state, prev, &ctx);
        tape.push(rec);
        state = next;
        prev = Some(z);
    }
    Ok(tape)
}

/// `max |fd - analytic| / max(|analytic|_inf, |fd|_inf)` for a scalar
/// function of the flattened parameters.
pub fn fd_relative_error(params: &RnnParams, analytic: &RnnParams, h: f64, f: impl Fn(&RnnParams) -> Result<f64>) -> Result<f64> {
    let flat = params.to_flat();
    let an = analytic.to_flat();
    let mut max_diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut x = flat.clone();
    for i in 0..flat.len() {
        x[i] = flat[i] + h;
        let up = f(&RnnParams::from_flat(params.dims, &x)?)?;
        x[i] = flat[i] - h;
        let down = f(&RnnParams::from_flat(params.dims, &x)?)?;
        x[i] = flat[i];
        let fd = (up - down) / (2.0 * h);
        max_diff = max_diff.max((fd - an[i]).abs());
        scale = scale.max(an[i].abs()).max(fd.abs());
    }
    Ok(if scale == 0.0 { max_diff } else { max_diff / scale })
}

/// A random small policy, context, token sequence and upstream gradient.
pub struct FdInstance {
    pub params: RnnParams,
    pub codebook: Option<Codebook>,
    pub context: Vec<f64>,
    pub tokens: Vec<usize>,
    pub upstream: Vec<Vec<f64>>,
}

pub fn fd_instance(seed: StreamSeed, index: usize, head: HeadKind) -> Result<FdInstance> {
    let mut rng = seed.child(&[index as u64, head as u64]).rng();
    let dims = PolicyDims {
        vocab: rng.random_range(2..=6),
        embed: rng.random_range(1..=4),
        hidden: rng.random_range(1..=5),
        context: rng.random_range(1..=3),
        head,
    };
    let params = RnnParams::random(dims, 1.0, &mut rng)?;
    let codebook = match head {
        HeadKind::Softmax => None,
        HeadKind::Tree => Some(Codebook::balanced(dims.vocab)?),
    };
    let len = rng.random_range(1..=4);
    let context = (0..dims.context).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tokens = (0..len).map(|_| rng.random_range(0..dims.vocab)).collect();
    let upstream = (0..len)
        .map(|_| (0..dims.outputs()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    Ok(FdInstance {
        params,
        codebook,
        context,
        tokens,
        upstream,
    })
}

/// Worst relative error of backpropagation and of the MLE gradient against
/// central differences, over `instances` random instances per head.
pub fn finite_difference_suite(instances: usize, seed: StreamSeed) -> Result<SuiteResult> {
    let h = 1e-5;
    let worst = fold_chunks(
        instances,
        1,
        || 0.0f64,
        |acc, i| {
            for head in [HeadKind::Softmax, HeadKind::Tree] {
                let inst = fd_instance(seed, i, head)?;
                let tape = tape_for(&inst.params, &inst.context, &inst.tokens)?;
                let ctx = inst.params.encode_context(&inst.context)?;
                let grad = backward_accumulate(&inst.params, &ctx, &tape, &inst.upstream)?;
                let e1 = fd_relative_error(&inst.params, &grad, h, |p| {
                    let outs = forward_outputs(p, &inst.context, &inst.tokens)?;
                    Ok(outs
                        .iter()
                        .zip(&inst.upstream)
                        .map(|(o, u)| o.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
                        .sum())
                })?;
                let cb = inst.codebook.as_ref();
                let (_, mle) = mle_gradient(&inst.params, cb, &inst.context, &inst.tokens)?;
                let e2 = fd_relative_error(&inst.params, &mle, h, |p| {
                    Ok(mle_gradient(p, cb, &inst.context, &inst.tokens)?.0)
                })?;
                *acc = acc.max(e1).max(e2);
            }
            Ok(())
        },
        |acc, part| *acc = acc.max(part),
    )?;
    Ok(SuiteResult {
        suite: "finite_difference".into(),
        statistic: worst,
        bound: 1e-6,
        pass: worst < 1e-6,
    })
}

/// `|1 - sum p|` for the oracle's enumeration under both heads, and for a
/// balanced 64-word tree with random node logits.
pub fn normalization_suite(softmax: &RnnParams, tree_params: &RnnParams, codebook: &Codebook, task: &TaskInstance, seed: StreamSeed) -> Result<SuiteResult> {
    let a = exact_er_and_grads(softmax, None, task)?.total_probability;
    let b = exact_er_and_grads(tree_params, Some(codebook), task)?.total_probability;
    let big = Codebook::balanced(64)?;
    let mut rng = seed.rng();
    let phi: Vec<f64> = (0..63).map(|_| rng.random_range(-4.0..4.0)).collect();
    let mut c = 0.0;
    for w in 0..64 {
        c += bt_logprob_and_mle_grad(&big, big.word_to_path(w)?, |n| phi[n])?.0.exp();
    }
    let worst = [a, b, c].iter().map(|t| (1.0 - t).abs()).fold(0.0, f64::max);
    Ok(SuiteResult {
        suite: "normalization".into(),
        statistic: worst,
        bound: 1e-10,
        pass: worst <= 1e-10,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnbiasednessOutcome {
    /// Largest `|mean - exact| / SE` over logit-space coordinates.
    pub logit_stat: f64,
    pub param_stat: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Band test `|mean - exact| <= 5 SE + 1e-12` on every coordinate; returns
/// the worst standardized deviation and whether all coordinates pass.
pub fn band_statistic(moments: &VecMoments, exact: &[f64], sigmas: f64) -> (f64, bool) {
    let se = moments.std_error();
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for ((m, e), s) in moments.mean().iter().zip(exact).zip(&se) {
        let d = (m - e).abs();
        if d > sigmas * s + 1e-12 {
            pass = false;
        }
        let excess = (d - 1e-12).max(0.0);
        let z = if excess == 0.0 { 0.0 } else if *s == 0.0 { f64::INFINITY } else { excess / s };
        worst = worst.max(z);
    }
    (worst, pass)
}

/// Compare the mean of `samples` estimates with the enumeration oracle, in
/// logit space (one coordinate per prefix and head output) and parameter
/// space.
#[allow(clippy::too_many_arguments)]
pub fn unbiasedness_check(
    params: &RnnParams,
    tree: Option<&Codebook>,
    task: &TaskInstance,
    config: &EstimatorConfig,
    samples: usize,
    batch_size: usize,
    seed: StreamSeed,
    fault: Option<FaultInjection>,
) -> Result<UnbiasednessOutcome> {
    let oracle = exact_er_and_grads(params, tree, task)?;
    let decoder = Decoder::new(params, tree)?;
    let ctx = params.encode_context(&task.context)?;
    let outputs = decoder.outputs();
    let offsets: std::collections::BTreeMap<&[usize], usize> = oracle
        .prefix_grads
        .keys()
        .enumerate()
        .map(|(i, p)| (p.as_slice(), i * outputs))
        .collect();
    let exact_logit: Vec<f64> = oracle.prefix_grads.values().flatten().copied().collect();
    let exact_param = oracle.param_grad.to_flat();
    let (nl, np) = (exact_logit.len(), exact_param.len());

    let (logit_m, param_m) = fold_chunks(
        samples,
        CHUNK,
        || (VecMoments::new(nl), VecMoments::new(np)),
        |acc, i| {
            let mut est = estimate(&decoder, &ctx, task, config, batch_size, seed.child(&[i as u64]))?;
            if fault == Some(FaultInjection::SignFlip) {
                est.scale(-1.0);
            }
            let mut dense = vec![0.0; nl];
            for (t, g) in est.step_logit_grads.iter().enumerate() {
                let off = offsets[&est.trajectory.actions[..t]];
                dense[off..off + outputs].copy_from_slice(g);
            }
            acc.0.push(&dense);
            acc.1.push(&est.param_grad(params, &ctx)?.to_flat());
            Ok(())
        },
        |acc, part| {
            acc.0.merge(&part.0);
            acc.1.merge(&part.1);
        },
    )?;
    let (logit_stat, lp) = band_statistic(&logit_m, &exact_logit, 5.0);
    let (param_stat, pp) = band_statistic(&param_m, &exact_param, 5.0);
    Ok(UnbiasednessOutcome {
        logit_stat,
        param_stat,
        samples,
        pass: lp && pp,
    })
}
