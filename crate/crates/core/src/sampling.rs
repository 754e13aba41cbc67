//! Dirichlet augmentation of a categorical draw and the swap-based pseudo
//! actions built on top of it.
//!
//! A categorical sample `z ~ Cat(softmax(phi))` is produced as
//! `argmin_i (ln pi_i - phi_i)` with `pi ~ Dir(1_V)` (an exponential race).
//! Swapping two coordinates of `pi` before the argmin yields a pseudo action
//! that is correlated with the true one. All argmins break exact ties toward
//! the lowest index.

use std::collections::BTreeSet;

use rand::distr::Open01;
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Absolute tolerance on `sum(pi) == 1` for caller-supplied simplex vectors.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("simplex vector must be non-empty"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::domain(format!("simplex entry {v} is not strictly positive")));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::domain(format!("simplex entries sum to {total}")));
        }
        Ok(SimplexVector(values))
    }

    /// Normalize positive weights onto the simplex.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::domain("weights must be finite and strictly positive"));
        }
        let total: f64 = weights.iter().sum();
        Ok(SimplexVector(weights.iter().map(|w| w / total).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLogits(Vec<f64>);

impl StepLogits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("logit vector must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("logits must be finite"));
        }
        Ok(StepLogits(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest logit, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// `entries[k][m]` is the pseudo action obtained by swapping coordinates `m`
/// and `refs[k]` of `pi`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudoActionMatrix {
    pub refs: Vec<usize>,
    pub entries: Vec<Vec<usize>>,
    pub true_action: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UniquePseudoSet {
    pub actions: BTreeSet<usize>,
}

impl UniquePseudoSet {
    pub fn cardinality(&self) -> usize {
        self.actions.len()
    }
}

/// Draw `pi ~ Dir(1_V)` by normalizing `-ln u_i`, `u_i ~ Unif(0, 1)`.
pub fn sample_pi<R: Rng + ?Sized>(rng: &mut R, vocab: usize) -> Result<SimplexVector> {
    if vocab == 0 {
        return Err(Error::domain("sample_pi: V must be at least 1"));
    }
    let e: Vec<f64> = (0..vocab)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            -u.ln()
        })
        .collect();
    let total: f64 = e.iter().sum();
    Ok(SimplexVector(e.into_iter().map(|x| x / total).collect()))
}

/// `K` distinct reference categories drawn uniformly without replacement.
pub fn sample_references<R: Rng + ?Sized>(rng: &mut R, vocab: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > vocab {
        return Err(Error::domain(format!("reference count {k} not in 1..={vocab}")));
    }
    Ok(index::sample(rng, vocab, k).into_vec())
}

fn check_lengths(pi: &SimplexVector, phi: &StepLogits) -> Result<()> {
    if pi.len() != phi.len() {
        return Err(Error::domain(format!(
            "pi has length {} but phi has length {}",
            pi.len(),
            phi.len()
        )));
    }
    Ok(())
}

/// Lowest-index argmin of `ln pi_i - phi_i`.
pub fn true_action(pi: &SimplexVector, phi: &StepLogits) -> Result<usize> {
    check_lengths(pi, phi)?;
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, (p, f)) in pi.values().iter().zip(phi.values()).enumerate() {
        let v = p.ln() - f;
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    Ok(best)
}

pub fn swap(pi: &SimplexVector, m: usize, j: usize) -> Result<SimplexVector> {
    let v = pi.len();
    if m >= v || j >= v {
        return Err(Error::domain(format!("swap indices ({m}, {j}) out of range for V = {v}")));
    }
    let mut out = pi.0.clone();
    out.swap(m, j);
    Ok(SimplexVector(out))
}

fn check_refs(refs: &[usize], vocab: usize) -> Result<()> {
    if refs.len() > vocab {
        return Err(Error::domain(format!("{} references exceed V = {vocab}", refs.len())));
    }
    let mut seen = vec![false; vocab];
    for &j in refs {
        if j >= vocab {
            return Err(Error::domain(format!("reference {j} out of range for V = {vocab}")));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::domain(format!("duplicate reference {j}")));
        }
    }
    Ok(())
}

/// Brute force: one full argmin per `(reference, m)` pair, `O(K V^2)`.
pub fn pseudo_action_matrix_naive(
    pi: &SimplexVector,
    phi: &StepLogits,
    refs: &[usize],
) -> Result<PseudoActionMatrix> {
    check_lengths(pi, phi)?;
    check_refs(refs, pi.len())?;
    let entries = refs
        .iter()
        .map(|&j| {
            (0..pi.len())
                .map(|m| true_action(&swap(pi, m, j)?, phi))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PseudoActionMatrix {
        refs: refs.to_vec(),
        entries,
        true_action: true_action(pi, phi)?,
    })
}

#[inline]
fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Indices of the three smallest diagonal values `ln pi_i - phi_i`, ordered
/// by (value, index).
fn diagonal_minima(diag: &[f64]) -> Vec<usize> {
    let mut top: Vec<usize> = Vec::with_capacity(3);
    for i in 0..diag.len() {
        let pos = top
            .iter()
            .position(|&t| better((diag[i], i), (diag[t], t)))
            .unwrap_or(top.len());
        if pos < 3 {
            top.insert(pos, i);
            top.truncate(3);
        }
    }
    top
}

/// Pseudo-action matrix from one pass over the diagonal plus `O(1)` work per
/// entry.
///
/// After swapping `m` and `j` only positions `m` and `j` change, taking the
/// values `ln pi_j - phi_m` and `ln pi_m - phi_j`. Every other position keeps
/// its diagonal value, so the minimum over the untouched positions is the
/// first of the sorted diagonal minima `m1, m2, m3` outside `{m, j}`. The
/// usual case split (`m1` in `{m, j}` or not) is the first two of these; the
/// third covers `{m, j} == {m1, m2}` where the exact-arithmetic bound that
/// makes `m3` irrelevant does not survive rounding or exact ties.
pub fn pseudo_action_matrix_fast(
    pi: &SimplexVector,
    phi: &StepLogits,
    refs: &[usize],
) -> Result<PseudoActionMatrix> {
    check_lengths(pi, phi)?;
    let vocab = pi.len();
    if vocab < 2 {
        return Err(Error::domain("fast pseudo-action matrix needs V >= 2"));
    }
    check_refs(refs, vocab)?;

    let log_pi: Vec<f64> = pi.values().iter().map(|p| p.ln()).collect();
    let phi = phi.values();
    let diag: Vec<f64> = log_pi.iter().zip(phi).map(|(l, f)| l - f).collect();
    let minima = diagonal_minima(&diag);
    let true_action = minima[0];

    let entries = refs
        .iter()
        .map(|&j| {
            (0..vocab)
                .map(|m| {
                    let mut best = (log_pi[j] - phi[m], m);
                    let at_j = (log_pi[m] - phi[j], j);
                    if better(at_j, best) {
                        best = at_j;
                    }
                    if let Some(&u) = minima.iter().find(|&&u| u != m && u != j) {
                        if better((diag[u], u), best) {
                            best = (diag[u], u);
                        }
                    }
                    best.1
                })
                .collect()
        })
        .collect();

    Ok(PseudoActionMatrix {
        refs: refs.to_vec(),
        entries,
        true_action,
    })
}

/// Distinct pseudo actions that differ from the true action.
pub fn unique_pseudo_set(matrix: &PseudoActionMatrix) -> UniquePseudoSet {
    unique_excluding(matrix, matrix.true_action)
}

/// Distinct matrix entries other than `exclude`.
pub fn unique_excluding(matrix: &PseudoActionMatrix, exclude: usize) -> UniquePseudoSet {
    UniquePseudoSet {
        actions: matrix
            .entries
            .iter()
            .flatten()
            .copied()
            .filter(|&a| a != exclude)
            .collect(),
    }
}
