//! Two-level class taxonomy: formations (level 1) containing leaf classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How leaf codes map to their parent formation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FormationRule {
    /// Formation code = first `n` characters of the leaf code.
    PrefixLength(usize),
    /// Explicit leaf -> formation map.
    Explicit(BTreeMap<String, String>),
}

/// Immutable two-level class system. Leaf order defines the class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    formations: Vec<String>,
    leaves: Vec<String>,
    /// parent[i] = index into `formations` for leaf i.
    parent: Vec<usize>,
}

impl Taxonomy {
    /// Builds a taxonomy from leaf codes. Ordering is lexicographic by code,
    /// so permuted input yields the same index assignment.
    pub fn build(leaf_codes: &[String], rule: &FormationRule) -> Result<Taxonomy> {
        if leaf_codes.is_empty() {
            return Err(Error::EmptyTaxonomy);
        }
        let mut leaves: Vec<String> = leaf_codes.to_vec();
        leaves.sort();
        for w in leaves.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateCode(w[0].clone()));
            }
        }
        let mut formation_of = Vec::with_capacity(leaves.len());
        for leaf in &leaves {
            let f = match rule {
                FormationRule::PrefixLength(n) => {
                    if leaf.chars().count() < *n || *n == 0 {
                        return Err(Error::UnmappableLeaf(leaf.clone()));
                    }
                    leaf.chars().take(*n).collect::<String>()
                }
                FormationRule::Explicit(map) => map
                    .get(leaf)
                    .cloned()
                    .ok_or_else(|| Error::UnmappableLeaf(leaf.clone()))?,
            };
            formation_of.push(f);
        }
        let mut formations: Vec<String> = formation_of.clone();
        formations.sort();
        formations.dedup();
        let parent = formation_of
            .iter()
            .map(|f| formations.binary_search(f).unwrap())
            .collect();
        Ok(Taxonomy {
            formations,
            leaves,
            parent,
        })
    }

    /// Number of leaf classes (K).
    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Number of formations (F).
    pub fn n_formations(&self) -> usize {
        self.formations.len()
    }

    pub fn leaves(&self) -> &[String] {
        &self.leaves
    }

    pub fn formations(&self) -> &[String] {
        &self.formations
    }

    pub fn leaf_index(&self, code: &str) -> Option<usize> {
        self.leaves.binary_search_by(|l| l.as_str().cmp(code)).ok()
    }

    pub fn formation_index(&self, code: &str) -> Option<usize> {
        self.formations
            .binary_search_by(|f| f.as_str().cmp(code))
            .ok()
    }

    /// Formation index of leaf `i`.
    pub fn parent_of(&self, leaf: usize) -> usize {
        self.parent[leaf]
    }

    /// Leaf indices belonging to formation `f`, in class-index order.
    pub fn leaves_of(&self, formation: usize) -> Vec<usize> {
        (0..self.leaves.len())
            .filter(|&i| self.parent[i] == formation)
            .collect()
    }

    /// Stable content hash used to tie serialized models to a taxonomy.
    pub fn content_hash(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.leaves.hash(&mut h);
        self.formations.hash(&mut h);
        self.parent.hash(&mut h);
        h.finish()
    }
}
