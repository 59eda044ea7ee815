//! Hashed bag-of-tokens embeddings, silo-local top-k search and the shared
//! re-ranker that maps cosine similarity onto `[0, 1]`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::linalg::{dot, l2_norm};
use crate::rng::mix64;

/// Feature-hashes each token into one of `dim` signed buckets and
/// ℓ2-normalizes the sum.
pub fn embed(tokens: &[u32], dim: usize, seed: u64) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        bail!(Argument, "cannot embed an empty token sequence");
    }
    if dim == 0 {
        bail!(Argument, "embedding dimension must be positive");
    }
    let mut v = vec![0.0; dim];
    for &t in tokens {
        let h = mix64(seed ^ mix64(t as u64 + 1));
        let bucket = (h % dim as u64) as usize;
        v[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }
    let norm = l2_norm(&v);
    if norm == 0.0 {
        // Every token cancelled out; fall back to the first token's bucket.
        let h = mix64(seed ^ mix64(tokens[0] as u64 + 1));
        v[(h % dim as u64) as usize] = 1.0;
        return Ok(v);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    dim: usize,
    entries: BTreeMap<u32, Vec<f64>>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stores a unit vector; rejects wrong dimension or non-unit norm.
    pub fn insert(&mut self, doc_id: u32, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            bail!(Shape, "vector of length {} in a {}-dim index", vector.len(), self.dim);
        }
        if (l2_norm(&vector) - 1.0).abs() > 1e-9 {
            bail!(Argument, "index vectors must have unit norm");
        }
        self.entries.insert(doc_id, vector);
        Ok(())
    }

    pub fn get(&self, doc_id: u32) -> Option<&[f64]> {
        self.entries.get(&doc_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.entries.iter().map(|(k, v)| (*k, v.as_slice()))
    }
}

/// Orders by descending score, then ascending doc id.
fn rank_order(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// The `k` highest-cosine entries, best first.
pub fn topk(index: &EmbeddingIndex, query: &[f64], k: usize) -> Result<Vec<(u32, f64)>> {
    if k == 0 {
        bail!(Argument, "k must be at least 1");
    }
    let mut scored: Vec<(u32, f64)> = index.iter().map(|(id, v)| (id, cosine(query, v))).collect();
    scored.sort_by(rank_order);
    scored.truncate(k);
    Ok(scored)
}

/// Relevance score `(cos + 1) / 2`, clamped to `[0, 1]`.
pub fn rerank_score(query: &[f64], doc: &[f64]) -> f64 {
    ((cosine(query, doc) + 1.0) / 2.0).clamp(0.0, 1.0)
}

pub fn rerank(query: &[f64], docs: &[&[f64]]) -> Vec<f64> {
    docs.iter().map(|d| rerank_score(query, d)).collect()
}
