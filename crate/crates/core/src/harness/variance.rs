//! `variance`: gradient variance of several estimators at frozen parameters.

use std::fmt::Write as _;

use super::config::{EstimatorSpec, ExperimentConfig};
use super::oracle_check::default_estimators;
use super::with_workers;
use crate::error::Result;
use crate::estimators::{measure_variance, EstimatorKind};
use crate::policy::{Decoder, HeadKind};

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceRow {
    pub estimator: String,
    pub k: usize,
    pub log10_variance: f64,
    pub mean_rollout_count: f64,
    pub mean_unique_pseudo: f64,
    pub biased: bool,
}

/// One row per listed estimator (the oracle-check default list when none are
/// given), all measured on the first task instance with `variance_samples`
/// draws. `bt_arsm` rows use the tree head.
pub fn run_variance(cfg: &ExperimentConfig) -> Result<Vec<VarianceRow>> {
    with_workers(cfg.workers, || {
        let tasks = cfg.build_tasks()?;
        let codebook = cfg.build_codebook()?;
        let specs: Vec<EstimatorSpec> = if cfg.estimators.is_empty() { default_estimators() } else { cfg.estimators.clone() };
        let softmax = cfg.pretrained_params(HeadKind::Softmax, None, &tasks)?;
        let needs_tree = cfg.head == HeadKind::Tree || specs.iter().any(|s| s.kind == EstimatorKind::BtArsm);
        let tree = if needs_tree { Some(cfg.pretrained_params(HeadKind::Tree, Some(&codebook), &tasks)?) } else { None };
        let task = &tasks[0];
        let seed = cfg.root_seed();

        specs
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let est = spec.resolve(cfg.vocab());
                let use_tree = spec.kind == EstimatorKind::BtArsm || (cfg.head == HeadKind::Tree && !matches!(spec.kind, EstimatorKind::ArsK | EstimatorKind::Arsm));
                let decoder = match (&tree, use_tree) {
                    (Some(t), true) => Decoder::new(t, Some(&codebook))?,
                    _ => Decoder::new(&softmax, None)?,
                };
                let ctx = decoder.params.encode_context(&task.context)?;
                let rep = measure_variance(&decoder, &ctx, task, &est, cfg.variance_samples, cfg.batch_size, seed.child(&[i as u64]))?;
                Ok(VarianceRow {
                    estimator: spec.label(cfg.vocab()),
                    k: est.k,
                    log10_variance: rep.log10_variance,
                    mean_rollout_count: rep.mean_rollout_count,
                    mean_unique_pseudo: rep.mean_unique_pseudo,
                    biased: est.is_biased(),
                })
            })
            .collect()
    })
}

pub fn variance_csv(rows: &[VarianceRow]) -> String {
    let mut s = String::from("estimator,k,log10_variance,mean_rollout_count,mean_unique_pseudo,biased\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.estimator, r.k, r.log10_variance, r.mean_rollout_count, r.mean_unique_pseudo, r.biased
        )
        .unwrap();
    }
    s
}
