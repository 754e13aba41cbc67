//! Agglomerative clustering of word embeddings into a binary tree.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codebook::{Codebook, Shape};
use super::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Average,
    Single,
    Complete,
}

impl Linkage {
    /// Lance-Williams update: distance from `a ∪ b` to `k`.
    fn merge(self, d_ak: f64, d_bk: f64, size_a: usize, size_b: usize) -> f64 {
        match self {
            Linkage::Single => d_ak.min(d_bk),
            Linkage::Complete => d_ak.max(d_bk),
            Linkage::Average => (size_a as f64 * d_ak + size_b as f64 * d_bk) / (size_a + size_b) as f64,
        }
    }
}

struct Cluster {
    id: usize,
    size: usize,
    shape: Shape,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Build the word tree by repeatedly merging the two closest clusters under
/// `linkage` with Euclidean distance.
///
/// Leaves have cluster ids `0..V` in file order and each merge creates the
/// next id. Equal distances are resolved by the smallest `(min id, max id)`
/// pair. The merged cluster containing the smaller word id becomes the bit-0
/// branch. With `permute_leaves` the words are shuffled across the finished
/// leaves, keeping the tree shape.
pub fn build_tree<R: Rng + ?Sized>(
    embeddings: &EmbeddingTable,
    linkage: Linkage,
    permute_leaves: bool,
    rng: &mut R,
) -> Result<Codebook> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::domain("tree construction needs at least 2 words"));
    }
    let vectors = &embeddings.vectors;
    let mut dist: Vec<Vec<f64>> = vectors
        .iter()
        .map(|a| vectors.iter().map(|b| euclidean(a, b)).collect())
        .collect();
    let mut slots: Vec<Option<Cluster>> = (0..n)
        .map(|w| {
            Some(Cluster {
                id: w,
                size: 1,
                shape: Shape::Leaf(w),
            })
        })
        .collect();

    // Nearest active partner of each slot, by (distance, partner id).
    let nearest = |slots: &[Option<Cluster>], dist: &[Vec<f64>], s: usize| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for (k, c) in slots.iter().enumerate() {
            let Some(c) = c else { continue };
            if k == s {
                continue;
            }
            let cand = (dist[s][k], c.id, k);
            if best.is_none_or(|b| cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1)) {
                best = Some(cand);
            }
        }
        best.map(|(d, _, k)| (d, k))
    };
    let mut nn: Vec<Option<(f64, usize)>> = (0..n).map(|s| nearest(&slots, &dist, s)).collect();
    let mut next_id = n;

    for _ in 0..n - 1 {
        // global closest pair, ties by (min id, max id)
        let mut pick: Option<(f64, usize, usize, usize)> = None;
        for (s, c) in slots.iter().enumerate() {
            let (Some(c), Some((d, k))) = (c, nn[s]) else { continue };
            let other = slots[k].as_ref().expect("nearest partner is active").id;
            let key = (d, c.id.min(other), c.id.max(other), s);
            if pick.is_none_or(|p| (key.0, key.1, key.2) < (p.0, p.1, p.2)) {
                pick = Some(key);
            }
        }
        let (_, _, _, a) = pick.expect("at least two active clusters");
        let b = nn[a].expect("active slot has a partner").1;
        let ca = slots[a].take().unwrap();
        let cb = slots[b].take().unwrap();

        for k in 0..n {
            if k != a && k != b && slots[k].is_some() {
                let d = linkage.merge(dist[a][k], dist[b][k], ca.size, cb.size);
                dist[a][k] = d;
                dist[k][a] = d;
            }
        }
        let (left, right) = if ca.shape.min_word() < cb.shape.min_word() {
            (ca.shape, cb.shape)
        } else {
            (cb.shape, ca.shape)
        };
        let merged_id = next_id;
        next_id += 1;
        slots[a] = Some(Cluster {
            id: merged_id,
            size: ca.size + cb.size,
            shape: Shape::Split(Box::new(left), Box::new(right)),
        });
        nn[b] = None;

        nn[a] = nearest(&slots, &dist, a);
        for k in 0..n {
            if k == a || slots[k].is_none() {
                continue;
            }
            match nn[k] {
                Some((_, p)) if p == a || p == b => nn[k] = nearest(&slots, &dist, k),
                Some((d, p)) => {
                    let pid = slots[p].as_ref().unwrap().id;
                    if dist[k][a] < d || (dist[k][a] == d && merged_id < pid) {
                        nn[k] = Some((dist[k][a], a));
                    }
                }
                None => nn[k] = nearest(&slots, &dist, k),
            }
        }
    }

    let root = slots.into_iter().flatten().next().expect("one cluster remains");
    let codebook = Codebook::from_shape(&root.shape, embeddings.words.clone())?;
    if permute_leaves {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        Ok(codebook.permuted(&perm))
    } else {
        Ok(codebook)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamSeed;

    fn table(points: &[(f64, f64)]) -> EmbeddingTable {
        EmbeddingTable::new(
            (0..points.len()).map(|i| format!("w{i}")).collect(),
            points.iter().map(|&(x, y)| vec![x, y]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn separated_pairs_give_depth_two() {
        let emb = table(&[(0.0, 0.0), (0.0, 1.0), (10.0, 10.0), (10.0, 11.0)]);
        for linkage in [Linkage::Average, Linkage::Single, Linkage::Complete] {
            let cb = build_tree(&emb, linkage, false, &mut StreamSeed::new(0).rng()).unwrap();
            assert_eq!(cb.depth(), 2);
            let paths: Vec<&[u8]> = (0..4).map(|w| cb.word_to_path(w).unwrap()).collect();
            assert_eq!(paths, vec![&[0, 0][..], &[0, 1], &[1, 0], &[1, 1]]);
        }
    }

    #[test]
    fn two_words_single_node() {
        let emb = table(&[(1.0, 2.0), (3.0, 4.0)]);
        let cb = build_tree(&emb, Linkage::Average, false, &mut StreamSeed::new(0).rng()).unwrap();
        assert_eq!(cb.node_count(), 1);
        assert_eq!(cb.word_to_path(0).unwrap(), &[0]);
        assert_eq!(cb.word_to_path(1).unwrap(), &[1]);
        assert!(build_tree(&table(&[(0.0, 0.0)]), Linkage::Average, false, &mut StreamSeed::new(0).rng()).is_err());
    }

    #[test]
    fn chain_gives_caterpillar_under_single_linkage() {
        // gaps grow along the line, so each merge absorbs the next point
        let emb = table(&[(0.0, 0.0), (1.0, 0.0), (3.0, 0.0), (7.0, 0.0), (15.0, 0.0)]);
        let cb = build_tree(&emb, Linkage::Single, false, &mut StreamSeed::new(0).rng()).unwrap();
        assert_eq!(cb.depth(), 4);
        assert_eq!(cb.word_to_path(4).unwrap(), &[1]);
    }

    #[test]
    fn permutation_keeps_shape() {
        let pts: Vec<(f64, f64)> = (0..13).map(|i| ((i as f64 * 1.7).sin() * 5.0, (i as f64 * 0.9).cos() * 3.0)).collect();
        let emb = table(&pts);
        let plain = build_tree(&emb, Linkage::Average, false, &mut StreamSeed::new(4).rng()).unwrap();
        let perm = build_tree(&emb, Linkage::Average, true, &mut StreamSeed::new(4).rng()).unwrap();
        let mut a = plain.path_lengths();
        let mut b = perm.path_lengths();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_ne!(plain, perm);
        for w in 0..13 {
            assert_eq!(perm.path_to_word(perm.word_to_path(w).unwrap()).unwrap(), w);
        }
    }

    #[test]
    fn hypercube_points_give_balanced_tree() {
        // bit k of the word id scaled by 4^k: smaller-scale bits merge first
        let words: Vec<String> = (0..64).map(|i| i.to_string()).collect();
        let vecs: Vec<Vec<f64>> = (0..64)
            .map(|i: usize| (0..6).map(|k| ((i >> k) & 1) as f64 * 4f64.powi(k)).collect())
            .collect();
        let emb = EmbeddingTable::new(words, vecs).unwrap();
        let cb = build_tree(&emb, Linkage::Average, false, &mut StreamSeed::new(0).rng()).unwrap();
        assert_eq!(cb.depth(), 6);
        assert!(cb.path_lengths().iter().all(|&l| l == 6));
    }
}
