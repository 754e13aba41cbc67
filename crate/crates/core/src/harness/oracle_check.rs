//! `oracle-check`: every verification suite, written as one JSON report.

use serde::Serialize;

use super::checks::{fast_naive_suite, finite_difference_suite, normalization_suite, unbiasedness_check, SuiteResult};
use super::config::{EstimatorSpec, ExperimentConfig};
use super::with_workers;
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::policy::HeadKind;
use crate::tasks::ENUMERATION_BUDGET;

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub suites: Vec<SuiteResult>,
    pub pass: bool,
}

impl OracleReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// REINFORCE, self-critic, MC-2, ARS-1, ARS-2, ARSM and BT-ARSM.
pub fn default_estimators() -> Vec<EstimatorSpec> {
    vec![
        EstimatorSpec::new(EstimatorKind::Reinforce, None),
        EstimatorSpec::new(EstimatorKind::SelfCritic, None),
        EstimatorSpec::new(EstimatorKind::McK, Some(2)),
        EstimatorSpec::new(EstimatorKind::ArsK, Some(1)),
        EstimatorSpec::new(EstimatorKind::ArsK, Some(2)),
        EstimatorSpec::new(EstimatorKind::Arsm, None),
        EstimatorSpec::new(EstimatorKind::BtArsm, None),
    ]
}

/// Run every suite on the first task instance. Fails up front if the task is
/// too large to enumerate.
pub fn run_oracle_check(cfg: &ExperimentConfig) -> Result<OracleReport> {
    let count = (cfg.vocab() as u128).checked_pow(cfg.task.length as u32).unwrap_or(u128::MAX);
    if count > ENUMERATION_BUDGET {
        return Err(Error::Budget(count, ENUMERATION_BUDGET));
    }
    with_workers(cfg.workers, || {
        let seed = cfg.root_seed();
        let task = cfg.build_tasks()?.swap_remove(0);
        let codebook = cfg.build_codebook()?;
        let softmax = cfg.init_params(HeadKind::Softmax)?;
        let tree = cfg.init_params(HeadKind::Tree)?;

        let mut suites = vec![
            fast_naive_suite(cfg.oracle.fast_naive_instances, seed.child(&[101]))?,
            finite_difference_suite(cfg.oracle.fd_instances, seed.child(&[102]))?,
            normalization_suite(&softmax, &tree, &codebook, &task, seed.child(&[103]))?,
        ];
        let specs = if cfg.estimators.is_empty() { default_estimators() } else { cfg.estimators.clone() };
        for (i, spec) in specs.iter().enumerate() {
            let est = spec.resolve(cfg.vocab());
            let (params, cb) = if spec.kind == EstimatorKind::BtArsm { (&tree, Some(&codebook)) } else { (&softmax, None) };
            let out = unbiasedness_check(
                params,
                cb,
                &task,
                &est,
                cfg.oracle.samples,
                cfg.batch_size,
                seed.child(&[104, i as u64]),
                cfg.fault_injection,
            )?;
            suites.push(SuiteResult {
                suite: format!("unbiasedness:{}", spec.label(cfg.vocab())),
                statistic: out.logit_stat.max(out.param_stat),
                bound: 5.0,
                pass: out.pass,
            });
        }
        let pass = suites.iter().all(|s| s.pass);
        Ok(OracleReport { suites, pass })
    })
}
