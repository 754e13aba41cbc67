//! `tree-build`: cluster an embedding file into a codebook.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::config::TreeSpec;
use crate::bintree::{build_tree, Codebook, EmbeddingTable};
use crate::error::{Error, Result};
use crate::rng::{label, StreamSeed};

/// The parts of an experiment config that `tree-build` reads; other fields
/// are ignored.
#[derive(Clone, Debug, Deserialize)]
pub struct TreeBuildConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tree: TreeSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl TreeBuildConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::config(e.path().to_string(), e.into_inner().to_string()))
    }
}

/// Build the codebook described by `cfg`. The seed only matters with
/// `permute_leaves`.
pub fn run_tree_build(cfg: &TreeBuildConfig) -> Result<Codebook> {
    let path = cfg
        .tree
        .embedding_path
        .as_ref()
        .ok_or_else(|| Error::config("tree.embedding_path", "required for tree-build"))?;
    let emb = EmbeddingTable::load(path)?;
    let mut rng = StreamSeed::new(cfg.seed).child(&[label::TREE]).rng();
    build_tree(&emb, cfg.tree.linkage, cfg.tree.permute_leaves, &mut rng)
}
