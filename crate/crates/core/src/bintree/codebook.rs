use std::collections::{BTreeMap, HashMap};

use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Where a branch of an internal node leads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Child {
    Node(usize),
    Leaf(usize),
}

/// Bijection between words and root-to-leaf bit paths.
///
/// Internal nodes are numbered in preorder (root = 0, left subtree first)
/// unless loaded from a file with its own numbering. Paths are stored at
/// their true length; nothing is padded.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    labels: Vec<String>,
    paths: Vec<Vec<u8>>,
    nodes: Vec<[Child; 2]>,
    node_prefixes: Vec<Vec<u8>>,
    depth: usize,
}

/// Intermediate tree used while building.
#[derive(Debug)]
pub(crate) enum Shape {
    Leaf(usize),
    Split(Box<Shape>, Box<Shape>),
}

impl Shape {
    pub(crate) fn min_word(&self) -> usize {
        match self {
            Shape::Leaf(w) => *w,
            Shape::Split(l, r) => l.min_word().min(r.min_word()),
        }
    }
}

impl Codebook {
    pub(crate) fn from_shape(shape: &Shape, labels: Vec<String>) -> Result<Self> {
        let vocab = labels.len();
        if vocab < 2 {
            return Err(Error::domain("a binary tree needs at least 2 words"));
        }
        let mut cb = Codebook {
            labels,
            paths: vec![Vec::new(); vocab],
            nodes: Vec::with_capacity(vocab - 1),
            node_prefixes: Vec::with_capacity(vocab - 1),
            depth: 0,
        };
        let mut prefix = Vec::new();
        match cb.visit(shape, &mut prefix) {
            Child::Node(0) => {}
            _ => return Err(Error::domain("tree root must be an internal node")),
        }
        if cb.paths.iter().any(|p| p.is_empty()) || cb.nodes.len() != vocab - 1 {
            return Err(Error::domain("tree does not place every word on exactly one leaf"));
        }
        cb.depth = cb.paths.iter().map(Vec::len).max().unwrap_or(0);
        Ok(cb)
    }

    fn visit(&mut self, shape: &Shape, prefix: &mut Vec<u8>) -> Child {
        match shape {
            Shape::Leaf(w) => {
                self.paths[*w] = prefix.clone();
                Child::Leaf(*w)
            }
            Shape::Split(l, r) => {
                let id = self.nodes.len();
                self.nodes.push([Child::Leaf(usize::MAX); 2]);
                self.node_prefixes.push(prefix.clone());
                prefix.push(0);
                let left = self.visit(l, prefix);
                prefix.pop();
                prefix.push(1);
                let right = self.visit(r, prefix);
                prefix.pop();
                self.nodes[id] = [left, right];
                Child::Node(id)
            }
        }
    }

    /// Balanced tree over words `0..V` by recursive halving of the id range
    /// (left half gets the extra word when the range is odd).
    pub fn balanced(vocab: usize) -> Result<Self> {
        fn split(lo: usize, hi: usize) -> Shape {
            if hi - lo == 1 {
                Shape::Leaf(lo)
            } else {
                let mid = lo + (hi - lo).div_ceil(2);
                Shape::Split(Box::new(split(lo, mid)), Box::new(split(mid, hi)))
            }
        }
        if vocab < 2 {
            return Err(Error::domain("a binary tree needs at least 2 words"));
        }
        Self::from_shape(&split(0, vocab), (0..vocab).map(|w| w.to_string()).collect())
    }

    pub fn vocab(&self) -> usize {
        self.labels.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn child(&self, node: usize, bit: u8) -> Child {
        self.nodes[node][usize::from(bit)]
    }

    pub fn mean_path_length(&self) -> f64 {
        self.paths.iter().map(Vec::len).sum::<usize>() as f64 / self.vocab() as f64
    }

    pub fn path_lengths(&self) -> Vec<usize> {
        self.paths.iter().map(Vec::len).collect()
    }

    pub fn word_to_path(&self, word: usize) -> Result<&[u8]> {
        self.paths
            .get(word)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::domain(format!("unknown word {word}")))
    }

    pub fn path_to_word(&self, bits: &[u8]) -> Result<usize> {
        match self.walk(bits)? {
            Child::Leaf(w) => Ok(w),
            Child::Node(_) => Err(Error::domain(format!("path {bits:?} ends at an internal node"))),
        }
    }

    /// Internal node reached by `prefix`, if it is one.
    pub fn node_index(&self, prefix: &[u8]) -> Result<usize> {
        match self.walk(prefix)? {
            Child::Node(n) => Ok(n),
            Child::Leaf(_) => Err(Error::domain(format!("prefix {prefix:?} is a leaf"))),
        }
    }

    pub fn node_prefix(&self, node: usize) -> &[u8] {
        &self.node_prefixes[node]
    }

    fn walk(&self, bits: &[u8]) -> Result<Child> {
        let mut cur = Child::Node(self.root());
        for &b in bits {
            if b > 1 {
                return Err(Error::domain(format!("bit value {b} is not 0 or 1")));
            }
            cur = match cur {
                Child::Node(n) => self.child(n, b),
                Child::Leaf(_) => return Err(Error::domain(format!("path {bits:?} runs past a leaf"))),
            };
        }
        Ok(cur)
    }

    /// Follow the more likely branch at every node (bit 0 on exact ties).
    pub fn greedy_word<F: FnMut(usize) -> f64>(&self, mut node_logit: F) -> usize {
        let mut node = self.root();
        loop {
            let bit = u8::from(node_logit(node) > 0.0);
            match self.child(node, bit) {
                Child::Node(n) => node = n,
                Child::Leaf(w) => return w,
            }
        }
    }

    /// Reassign words to leaves: word `w` takes the leaf of word `perm[w]`.
    pub(crate) fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for (w, &src) in perm.iter().enumerate() {
            out.paths[w] = self.paths[src].clone();
        }
        let mut inverse = vec![0; perm.len()];
        for (w, &src) in perm.iter().enumerate() {
            inverse[src] = w;
        }
        for children in out.nodes.iter_mut() {
            for c in children.iter_mut() {
                if let Child::Leaf(w) = c {
                    *w = inverse[*w];
                }
            }
        }
        out
    }

    /// `{"depth": D, "paths": {word: "0110"}, "node_index": {prefix: id}}`,
    /// paths in word-id order and node prefixes in node-id order.
    pub fn to_json(&self) -> Result<String> {
        let mut paths = Map::new();
        for (label, path) in self.labels.iter().zip(&self.paths) {
            paths.insert(label.clone(), Value::String(bits_to_string(path)));
        }
        let mut nodes = Map::new();
        for (id, prefix) in self.node_prefixes.iter().enumerate() {
            nodes.insert(bits_to_string(prefix), Value::from(id));
        }
        let mut root = Map::new();
        root.insert("depth".into(), Value::from(self.depth));
        root.insert("paths".into(), Value::Object(paths));
        root.insert("node_index".into(), Value::Object(nodes));
        Ok(serde_json::to_string_pretty(&Value::Object(root))? + "\n")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let bad = |msg: &str| Error::domain(format!("codebook JSON: {msg}"));
        let root: Value = serde_json::from_str(json)?;
        let depth = root
            .get("depth")
            .and_then(Value::as_u64)
            .ok_or_else(|| bad("missing integer `depth`"))? as usize;
        let paths_obj = root
            .get("paths")
            .and_then(Value::as_object)
            .ok_or_else(|| bad("missing object `paths`"))?;
        let nodes_obj = root
            .get("node_index")
            .and_then(Value::as_object)
            .ok_or_else(|| bad("missing object `node_index`"))?;

        let vocab = paths_obj.len();
        if vocab < 2 {
            return Err(bad("need at least 2 words"));
        }
        let mut labels = Vec::with_capacity(vocab);
        let mut paths = Vec::with_capacity(vocab);
        let mut leaf_of: HashMap<Vec<u8>, usize> = HashMap::new();
        for (w, (label, p)) in paths_obj.iter().enumerate() {
            let bits = string_to_bits(p.as_str().ok_or_else(|| bad("paths must be strings"))?)
                .ok_or_else(|| bad("paths must be 0/1 strings"))?;
            if bits.is_empty() || leaf_of.insert(bits.clone(), w).is_some() {
                return Err(bad("paths must be non-empty and distinct"));
            }
            labels.push(label.clone());
            paths.push(bits);
        }

        let mut id_of: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
        for (prefix, id) in nodes_obj {
            let bits = string_to_bits(prefix).ok_or_else(|| bad("node prefixes must be 0/1 strings"))?;
            let id = id.as_u64().ok_or_else(|| bad("node ids must be integers"))? as usize;
            id_of.insert(bits, id);
        }
        let mut expected: BTreeMap<Vec<u8>, ()> = BTreeMap::new();
        for p in &paths {
            for l in 0..p.len() {
                expected.insert(p[..l].to_vec(), ());
            }
        }
        if expected.keys().ne(id_of.keys()) || id_of.len() != vocab - 1 {
            return Err(bad("node_index does not match the internal nodes implied by paths"));
        }
        let mut seen = vec![false; vocab - 1];
        for &id in id_of.values() {
            if id >= vocab - 1 || std::mem::replace(&mut seen[id], true) {
                return Err(bad("node ids must be a permutation of 0..V-1"));
            }
        }
        if id_of[&Vec::new()] != 0 {
            return Err(bad("the root prefix must have id 0"));
        }
        // every internal node needs both children
        let mut nodes = vec![[Child::Leaf(usize::MAX); 2]; vocab - 1];
        let mut node_prefixes = vec![Vec::new(); vocab - 1];
        for (prefix, &id) in &id_of {
            node_prefixes[id] = prefix.clone();
            for bit in 0..2u8 {
                let mut next = prefix.clone();
                next.push(bit);
                nodes[id][usize::from(bit)] = if let Some(&n) = id_of.get(&next) {
                    Child::Node(n)
                } else if let Some(&w) = leaf_of.get(&next) {
                    Child::Leaf(w)
                } else {
                    return Err(bad("an internal node is missing a child"));
                };
            }
        }
        let true_depth = paths.iter().map(Vec::len).max().unwrap_or(0);
        if depth != true_depth {
            return Err(bad("depth does not match the longest path"));
        }
        Ok(Codebook {
            labels,
            paths,
            nodes,
            node_prefixes,
            depth,
        })
    }
}

fn bits_to_string(bits: &[u8]) -> String {
    bits.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect()
}

fn string_to_bits(s: &str) -> Option<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Some(0),
            '1' => Some(1),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_v2_is_single_node() {
        let cb = Codebook::balanced(2).unwrap();
        assert_eq!(cb.node_count(), 1);
        assert_eq!(cb.word_to_path(0).unwrap(), &[0]);
        assert_eq!(cb.word_to_path(1).unwrap(), &[1]);
        assert_eq!(cb.depth(), 1);
    }

    #[test]
    fn balanced_power_of_two_depth() {
        for (v, d) in [(4, 2), (8, 3), (64, 6)] {
            let cb = Codebook::balanced(v).unwrap();
            assert_eq!(cb.depth(), d);
            assert!(cb.path_lengths().iter().all(|&l| l == d));
        }
        assert_eq!(Codebook::balanced(5).unwrap().depth(), 3);
    }

    #[test]
    fn round_trip_every_word() {
        for v in [2, 3, 7, 64] {
            let cb = Codebook::balanced(v).unwrap();
            assert_eq!(cb.node_count(), v - 1);
            for w in 0..v {
                assert_eq!(cb.path_to_word(cb.word_to_path(w).unwrap()).unwrap(), w);
            }
        }
    }

    #[test]
    fn prefixes_are_not_leaves() {
        let cb = Codebook::balanced(8).unwrap();
        assert!(cb.path_to_word(&[1]).is_err());
        assert_eq!(cb.node_index(&[]).unwrap(), 0);
        assert!(cb.node_index(&[1, 0, 1]).is_err());
        assert!(cb.path_to_word(&[1, 0, 1, 1]).is_err());
        assert!(cb.word_to_path(8).is_err());
        for n in 0..cb.node_count() {
            assert_eq!(cb.node_index(cb.node_prefix(n)).unwrap(), n);
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let cb = Codebook::balanced(11).unwrap();
        let json = cb.to_json().unwrap();
        let back = Codebook::from_json(&json).unwrap();
        assert_eq!(back, cb);
        assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn json_rejects_inconsistent_input() {
        let bad = r#"{"depth": 1, "paths": {"a": "0", "b": "1"}, "node_index": {"": 1}}"#;
        assert!(Codebook::from_json(bad).is_err());
        let missing = r#"{"depth": 2, "paths": {"a": "0", "b": "10"}, "node_index": {"": 0, "1": 1}}"#;
        assert!(Codebook::from_json(missing).is_err());
        let ok = r#"{"depth": 1, "paths": {"a": "0", "b": "1"}, "node_index": {"": 0}}"#;
        assert_eq!(Codebook::from_json(ok).unwrap().vocab(), 2);
    }
}
