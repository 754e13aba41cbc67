//! Binary-tree softmax.
//!
//! Each word sits on one leaf of a binary tree; generating a word is a walk
//! from the root where every internal node emits a Bernoulli bit with
//! probability `sigmoid(phi_node)` of going right (bit 1). A tree with V
//! leaves has V - 1 internal nodes and a walk touches at most `depth` of
//! them.

mod arm;
mod cluster;
mod codebook;
mod embeddings;

pub use arm::{arm_node_grad, bt_arsm_sequence_grad, BtArsmModes};
pub use cluster::{build_tree, Linkage};
pub use codebook::{Child, Codebook};
pub use embeddings::EmbeddingTable;

use rand::Rng;

use crate::error::{Error, Result};
use crate::stats::{log_sigmoid, sigmoid};

/// Bits drawn while walking one token's path.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryStepRecord {
    pub bits: Vec<u8>,
    pub node_ids: Vec<usize>,
    /// Uniform variate used for each bit.
    pub pis: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Sample a word by walking the tree. `node_logit` is called once per visited
/// node, so the number of calls equals the emitted path length.
pub fn bt_sample_token<R, F>(codebook: &Codebook, mut node_logit: F, rng: &mut R) -> (usize, BinaryStepRecord)
where
    R: Rng + ?Sized,
    F: FnMut(usize) -> f64,
{
    let mut rec = BinaryStepRecord {
        bits: Vec::new(),
        node_ids: Vec::new(),
        pis: Vec::new(),
        logits: Vec::new(),
    };
    let mut node = codebook.root();
    loop {
        let phi = node_logit(node);
        let u: f64 = rng.random();
        let bit = u8::from(u < sigmoid(phi));
        rec.bits.push(bit);
        rec.node_ids.push(node);
        rec.pis.push(u);
        rec.logits.push(phi);
        match codebook.child(node, bit) {
            Child::Node(next) => node = next,
            Child::Leaf(word) => return (word, rec),
        }
    }
}

/// Walk from `node` to a leaf drawing each bit from the policy.
pub(crate) fn complete_from<R, F>(codebook: &Codebook, start: Child, mut node_logit: F, greedy: bool, rng: &mut R) -> usize
where
    R: Rng + ?Sized,
    F: FnMut(usize) -> f64,
{
    let mut cur = start;
    loop {
        match cur {
            Child::Leaf(word) => return word,
            Child::Node(node) => {
                let phi = node_logit(node);
                let bit = if greedy {
                    u8::from(phi > 0.0)
                } else {
                    let u: f64 = rng.random();
                    u8::from(u < sigmoid(phi))
                };
                cur = codebook.child(node, bit);
            }
        }
    }
}

/// `log p(bits)` as a product of Bernoullis, and `b_l - sigmoid(phi_l)` for
/// every visited node (nodes off the path have zero gradient and are not
/// listed).
pub fn bt_logprob_and_mle_grad<F>(codebook: &Codebook, bits: &[u8], mut node_logit: F) -> Result<(f64, Vec<(usize, f64)>)>
where
    F: FnMut(usize) -> f64,
{
    let mut node = codebook.root();
    let mut logp = 0.0;
    let mut grads = Vec::with_capacity(bits.len());
    for (l, &b) in bits.iter().enumerate() {
        let phi = node_logit(node);
        let bit = match b {
            0 => 0.0,
            1 => 1.0,
            _ => return Err(Error::domain(format!("bit value {b} is not 0 or 1"))),
        };
        logp += if b == 1 { log_sigmoid(phi) } else { log_sigmoid(-phi) };
        grads.push((node, bit - sigmoid(phi)));
        match codebook.child(node, b) {
            Child::Node(next) if l + 1 < bits.len() => node = next,
            Child::Leaf(_) if l + 1 == bits.len() => return Ok((logp, grads)),
            _ => return Err(Error::domain("bits do not form a complete leaf path")),
        }
    }
    Err(Error::domain("empty bit path"))
}
