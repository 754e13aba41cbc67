//! Acceptance gate. Each test writes one `PASS`/`FAIL` line to stderr
//! (uncaptured) and then asserts.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use acmc::bintree::{arm_node_grad, bt_logprob_and_mle_grad, bt_sample_token, build_tree, Codebook, EmbeddingTable, Linkage};
use acmc::estimators::{ars_step_grad, measure_variance, EstimatorConfig, EstimatorKind};
use acmc::harness::checks::{fast_naive_suite, finite_difference_suite, unbiasedness_check};
use acmc::harness::config::ExperimentConfig;
use acmc::harness::oracle_check::default_estimators;
use acmc::harness::train::run_train;
use acmc::policy::{Decoder, HeadKind};
use acmc::rng::StreamSeed;
use acmc::sampling::{pseudo_action_matrix_fast, sample_pi, sample_references, StepLogits};
use acmc::stats::sigmoid;
use rand::Rng;

fn report(name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[{tag}] {name}: {detail}");
}

/// V=4, T=3 copy task with hamming reward and a random policy.
fn benchmark_config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
            "seed": 11,
            "task": {"kind": "copy", "vocab_size": 4, "length": 3, "reward": "hamming"},
            "policy": {"embed_dim": 4, "hidden_dim": 8, "init_scale": 0.5},
            "batch_size": 8
        }"#,
    )
    .unwrap()
}

#[test]
fn fast_pseudo_matrix_matches_naive() {
    let start = Instant::now();
    let res = fast_naive_suite(10_000, StreamSeed::new(2024)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = res.pass && secs < 30.0;
    report(
        "fast vs naive pseudo-action matrix",
        pass,
        &format!("{} mismatching instances of 10000, {secs:.2}s", res.statistic),
    );
    assert!(pass);
}

#[test]
fn estimators_are_unbiased() {
    let start = Instant::now();
    let cfg = benchmark_config();
    let task = cfg.build_tasks().unwrap().swap_remove(0);
    let codebook = Codebook::balanced(4).unwrap();
    assert_eq!(codebook.depth(), 2);
    let softmax = cfg.init_params(HeadKind::Softmax).unwrap();
    let tree = cfg.init_params(HeadKind::Tree).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for (i, spec) in default_estimators().iter().enumerate() {
        let est = spec.resolve(4);
        let (params, cb) = if est.kind == EstimatorKind::BtArsm { (&tree, Some(&codebook)) } else { (&softmax, None) };
        let out = unbiasedness_check(params, cb, &task, &est, 200_000, cfg.batch_size, StreamSeed::new(500 + i as u64), None).unwrap();
        pass &= out.pass;
        details.push(format!("{} z<= {:.2}/{:.2}", spec.label(4), out.logit_stat, out.param_stat));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 600.0;
    report(
        "unbiasedness, 2e5 estimates each, logit/param space within 5 SE",
        pass,
        &format!("{}; {secs:.1}s", details.join(", ")),
    );
    assert!(pass);
}

#[test]
fn arsm_variance_below_reinforce() {
    let cfg = benchmark_config();
    let task = cfg.build_tasks().unwrap().swap_remove(0);
    let params = cfg.init_params(HeadKind::Softmax).unwrap();
    let dec = Decoder::new(&params, None).unwrap();
    let ctx = params.encode_context(&task.context).unwrap();
    let m = 10_000;
    let arsm = measure_variance(&dec, &ctx, &task, &EstimatorConfig::new(EstimatorKind::Arsm, 4), m, cfg.batch_size, StreamSeed::new(1)).unwrap();
    let rf = measure_variance(&dec, &ctx, &task, &EstimatorConfig::new(EstimatorKind::Reinforce, 0), m, cfg.batch_size, StreamSeed::new(2)).unwrap();
    let gap = rf.log10_variance - arsm.log10_variance;
    let pass = gap >= 0.3;
    report(
        "variance ordering ARSM vs REINFORCE, M=1e4",
        pass,
        &format!("log10 var arsm {:.3}, reinforce {:.3}, gap {gap:.3}", arsm.log10_variance, rf.log10_variance),
    );
    assert!(pass);
}

#[test]
fn gradients_match_finite_differences() {
    let res = finite_difference_suite(100, StreamSeed::new(77)).unwrap();
    report(
        "backward and MLE gradients vs central differences, both heads",
        res.pass,
        &format!("worst relative error {:.2e} over 100 instances", res.statistic),
    );
    assert!(res.pass);
}

fn mean_and_se(sum: f64, sq: f64, n: usize) -> (f64, f64) {
    let n = n as f64;
    let mean = sum / n;
    (mean, ((sq / n - mean * mean) / (n - 1.0)).sqrt())
}

#[test]
fn arm_matches_analytic_gradient() {
    let n = 1_000_000;
    let mut rng = StreamSeed::new(31).rng();
    let (mut s, mut q) = (0.0, 0.0);
    for _ in 0..n {
        let pi: f64 = rng.random();
        let r = |b: bool| if b { 1.0 } else { 0.0 };
        let g = arm_node_grad(pi, 0.0, r(pi < 0.5), r(pi > 0.5));
        s += g;
        q += g * g;
    }
    let (arm_mean, arm_se) = mean_and_se(s, q, n);
    let arm_ok = (arm_mean - 0.25).abs() <= 3.0 * arm_se;

    // V = 2, T = 1: ARSM on logits (phi0, phi1) against ARM on the single
    // logit phi1 - phi0, both estimating sigma(psi)(1 - sigma(psi))(r1 - r0)
    let phi = [0.3, -0.5];
    let rewards = [0.2, 0.9];
    let psi = phi[1] - phi[0];
    let exact = sigmoid(psi) * (1.0 - sigmoid(psi)) * (rewards[1] - rewards[0]);
    let logits = StepLogits::new(phi.to_vec()).unwrap();
    let mut rng = StreamSeed::new(32).rng();
    let (mut s1, mut q1, mut s2, mut q2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        let pi = sample_pi(&mut rng, 2).unwrap();
        let refs = sample_references(&mut rng, 2, 2).unwrap();
        let mat = pseudo_action_matrix_fast(&pi, &logits, &refs).unwrap();
        let mut g = 0.0;
        for (row, &j) in mat.entries.iter().zip(&mat.refs) {
            let f: Vec<f64> = row.iter().map(|&a| rewards[a]).collect();
            g += ars_step_grad(&pi, j, &f).unwrap()[1] / 2.0;
        }
        s1 += g;
        q1 += g * g;
        let u: f64 = rng.random();
        let b_true = u < sigmoid(psi);
        let b_pseudo = u > sigmoid(-psi);
        let r = |b: bool| if b { rewards[1] } else { rewards[0] };
        let a = arm_node_grad(u, psi, r(b_true), r(b_pseudo));
        s2 += a;
        q2 += a * a;
    }
    let (m1, se1) = mean_and_se(s1, q1, n);
    let (m2, se2) = mean_and_se(s2, q2, n);
    let eq_ok = (m1 - exact).abs() <= 3.0 * se1 && (m2 - exact).abs() <= 3.0 * se2;
    let pass = arm_ok && eq_ok;
    report(
        "ARM mean at phi=0 and V=2 ARSM/ARM agreement within 3 SE",
        pass,
        &format!(
            "ARM {arm_mean:.5} +- {arm_se:.1e} (0.25); ARSM {m1:.5} +- {se1:.1e}, ARM {m2:.5} +- {se2:.1e} (exact {exact:.5})"
        ),
    );
    assert!(pass);
}

#[test]
fn copy_task_fine_tuning_improves() {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_json(
        r#"{
            "seed": 1,
            "task": {"kind": "copy", "vocab_size": 8, "length": 5, "num_instances": 64},
            "policy": {"embed_dim": 16, "hidden_dim": 32, "init_scale": 0.1},
            "estimator": {"kind": "arsm"},
            "learning_rate": 0.5,
            "iterations": 2000,
            "batch_size": 8,
            "mle_pretrain_iters": 40,
            "mle_learning_rate": 0.5,
            "workers": 4
        }"#,
    )
    .unwrap();
    let summary = run_train(&cfg).unwrap();
    let m = &summary.metrics;
    let n = m.len();
    let mean = |a: usize, b: usize, f: &dyn Fn(usize) -> f64| (a..b).map(f).sum::<f64>() / (b - a) as f64;
    let final_reward = mean(n - 100, n, &|i| m[i].mean_reward);
    let first_unique = mean(0, n / 10, &|i| m[i].mean_unique_pseudo);
    let last_unique = mean(n - n / 10, n, &|i| m[i].mean_unique_pseudo);
    let secs = start.elapsed().as_secs_f64();
    let pass = final_reward - summary.pre_rl_mean_reward >= 0.1 && last_unique < first_unique && secs < 900.0;
    report(
        "copy task V=8 T=5 ARSM fine-tuning",
        pass,
        &format!(
            "pre-RL reward {:.3}, final-100 reward {final_reward:.3}; unique pseudo first decile {first_unique:.3}, last decile {last_unique:.3}; {secs:.1}s",
            summary.pre_rl_mean_reward
        ),
    );
    assert!(pass);
}

#[test]
fn binary_tree_contracts() {
    let mut ok = true;
    let mut notes = Vec::new();

    let balanced = Codebook::balanced(64).unwrap();
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let mut rng = StreamSeed::new(5).rng();
    let vecs: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let emb = EmbeddingTable::new(words, vecs).unwrap();
    let clustered = build_tree(&emb, Linkage::Average, false, &mut StreamSeed::new(6).rng()).unwrap();
    let permuted = build_tree(&emb, Linkage::Average, true, &mut StreamSeed::new(6).rng()).unwrap();

    for cb in [&balanced, &clustered, &permuted] {
        for w in 0..cb.vocab() {
            ok &= cb.path_to_word(cb.word_to_path(w).unwrap()).unwrap() == w;
        }
    }
    notes.push(format!("round trip ok={ok}"));

    let phi: Vec<f64> = (0..63).map(|_| rng.random_range(-5.0..5.0)).collect();
    let total: f64 = (0..64)
        .map(|w| bt_logprob_and_mle_grad(&balanced, balanced.word_to_path(w).unwrap(), |n| phi[n]).unwrap().0.exp())
        .sum();
    let norm_ok = (total - 1.0).abs() <= 1e-10;
    notes.push(format!("|sum p - 1| = {:.1e}", (total - 1.0).abs()));

    let mut cost_ok = true;
    for cb in [&balanced, &clustered] {
        for _ in 0..2000 {
            let mut calls = 0;
            let (w, rec) = bt_sample_token(
                cb,
                |n| {
                    calls += 1;
                    phi[n % 63]
                },
                &mut rng,
            );
            let len = cb.word_to_path(w).unwrap().len();
            cost_ok &= calls == len && rec.bits.len() == len && len <= cb.depth();
        }
    }
    notes.push(format!("logit calls == path length <= depth: {cost_ok}"));
    let depth_ok = balanced.depth() == 6 && balanced.path_lengths().iter().all(|&l| l == 6);
    notes.push(format!("balanced V=64 depth {}", balanced.depth()));

    let pass = ok && norm_ok && cost_ok && depth_ok;
    report("binary-tree contracts", pass, &notes.join(", "));
    assert!(pass);
}

fn run_cli(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_acmc")).args(args).current_dir(dir).output().unwrap()
}

#[test]
fn cli_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut emb = String::new();
    let mut rng = StreamSeed::new(8).rng();
    for i in 0..16 {
        let v: Vec<String> = (0..4).map(|_| format!("{:.4}", rng.random_range(-1.0..1.0))).collect();
        emb.push_str(&format!("tok{i} {}\n", v.join(" ")));
    }
    std::fs::write(p.join("emb.txt"), emb).unwrap();
    let configs = [
        (
            "train",
            r#"{"seed": 4, "task": {"kind": "copy", "vocab_size": 6, "length": 4, "num_instances": 16},
                "estimator": {"kind": "arsm"}, "learning_rate": 0.3, "iterations": 40, "batch_size": 8,
                "mle_pretrain_iters": 10}"#,
        ),
        (
            "train",
            r#"{"seed": 4, "task": {"kind": "copy", "vocab_size": 16, "length": 3, "num_instances": 8},
                "head": "tree", "tree": {"embedding_path": "emb.txt", "permute_leaves": true},
                "estimator": {"kind": "bt_arsm"}, "learning_rate": 0.3, "iterations": 30, "batch_size": 8}"#,
        ),
        (
            "variance",
            r#"{"seed": 4, "task": {"kind": "copy", "vocab_size": 4, "length": 3},
                "policy": {"init_scale": 1.0}, "variance_samples": 600}"#,
        ),
        (
            "oracle-check",
            r#"{"seed": 4, "task": {"kind": "copy", "vocab_size": 4, "length": 3},
                "policy": {"init_scale": 0.3},
                "oracle": {"samples": 20000, "fd_instances": 3, "fast_naive_instances": 600}}"#,
        ),
        ("tree-build", r#"{"seed": 4, "tree": {"embedding_path": "emb.txt", "linkage": "complete", "permute_leaves": true}}"#),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (i, (cmd, cfg)) in configs.iter().enumerate() {
        let cfg_path = format!("cfg{i}.json");
        std::fs::write(p.join(&cfg_path), cfg).unwrap();
        let mut outputs = Vec::new();
        for workers in ["1", "8", "1", "8"] {
            let out = format!("out{i}_{}.txt", outputs.len());
            let res = run_cli(&[cmd, "--config", &cfg_path, "--out", &out, "--workers", workers], p);
            if !res.status.success() {
                pass = false;
                notes.push(format!("{cmd} exited with {:?}: {}", res.status.code(), String::from_utf8_lossy(&res.stderr)));
            }
            outputs.push(std::fs::read(p.join(&out)).unwrap_or_default());
        }
        let same = !outputs[0].is_empty() && outputs.iter().all(|o| o == &outputs[0]);
        pass &= same;
        notes.push(format!("{cmd}#{i} identical={same}"));
    }
    report("CLI determinism across runs and 1/8 workers", pass, &notes.join(", "));
    assert!(pass);
}
