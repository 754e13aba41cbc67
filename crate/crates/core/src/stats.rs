//! Small numeric helpers shared by the estimators, the oracle, and the checks.

/// Mean computed relative to the first element, so a constant slice returns
/// exactly that constant.
pub fn shifted_mean(xs: &[f64]) -> f64 {
    match xs.first() {
        None => 0.0,
        Some(&x0) => x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64,
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log σ(x), stable for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Fold `0..n` in fixed-size chunks on the rayon pool, then merge the chunk
/// accumulators in index order. The result does not depend on the number of
/// threads.
pub fn fold_chunks<A, F, S, M>(n: usize, chunk: usize, make: F, step: S, merge: M) -> crate::Result<A>
where
    A: Send,
    F: Fn() -> A + Sync,
    S: Fn(&mut A, usize) -> crate::Result<()> + Sync,
    M: Fn(&mut A, A),
{
    use rayon::prelude::*;
    let chunk = chunk.max(1);
    let parts = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = make();
            for i in c * chunk..((c + 1) * chunk).min(n) {
                step(&mut acc, i)?;
            }
            Ok(acc)
        })
        .collect::<crate::Result<Vec<A>>>()?;
    let mut out = make();
    for part in parts {
        merge(&mut out, part);
    }
    Ok(out)
}

/// Neumaier compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Per-coordinate running mean and variance (Welford).
#[derive(Clone, Debug)]
pub struct VecMoments {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VecMoments {
    pub fn new(dim: usize) -> Self {
        VecMoments {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.mean.len(), "VecMoments: dimension mismatch");
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = xi - *m;
            *m += delta / n;
            *s += delta * (xi - *m);
        }
    }

    /// Combine two accumulators (Chan et al. parallel update).
    pub fn merge(&mut self, other: &VecMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample variance per coordinate.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let d = (self.count - 1) as f64;
        self.m2.iter().map(|s| s / d).collect()
    }

    /// Standard error of the mean per coordinate.
    pub fn std_error(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.variance().into_iter().map(|v| (v / n).sqrt()).collect()
    }
}
