//! Silo-side state: offline construction and the two online handlers.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::accounting::StorageReport;
use super::wire::{AdapterRequest, AdapterUpload, Candidate, CandidateUpload, QueryBroadcast};
use crate::clustering::{constrained_kmeans, ClusterAssignment};
use crate::error::{bail, Error, Result};
use crate::linalg::Matrix;
use crate::lowrank::AdapterPair;
use crate::maskcodec::DocMask;
use crate::retrieval::{embed, rerank_score, topk, EmbeddingIndex};
use crate::rng::mix64;
use crate::toylm::{augment, train_adapter, train_mask, AdapterTrainConfig, AugmentedDoc, Document, MaskTrainConfig, ToyLM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiloConfig {
    /// Maximum documents per cluster adapter.
    pub cap: usize,
    pub embed_dim: usize,
    pub embed_seed: u64,
    /// Rewrites per document.
    pub rewrites: usize,
    /// QA pairs per document.
    pub qa_pairs: usize,
    pub adapter: AdapterTrainConfig,
    pub mask: MaskTrainConfig,
    /// When false every document gets the full mask.
    pub train_masks: bool,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for SiloConfig {
    fn default() -> Self {
        Self {
            cap: 8,
            embed_dim: 64,
            embed_seed: 0,
            rewrites: 3,
            qa_pairs: 2,
            adapter: AdapterTrainConfig::default(),
            mask: MaskTrainConfig::default(),
            train_masks: true,
            kmeans_iters: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiloState {
    pub silo_id: u32,
    pub corpus: Vec<Document>,
    pub clusters: ClusterAssignment,
    pub adapters: BTreeMap<usize, AdapterPair>,
    pub masks: BTreeMap<u32, DocMask>,
    pub index: EmbeddingIndex,
    pub embed_seed: u64,
    pub rank: usize,
}

/// Embeds, clusters, trains one adapter per cluster and one mask per
/// document, then builds the retrieval index.
pub fn silo_offline(silo_id: u32, corpus: Vec<Document>, model: &ToyLM, cfg: &SiloConfig) -> Result<SiloState> {
    if corpus.is_empty() {
        bail!(Argument, "silo {} has an empty corpus", silo_id);
    }
    let ids: Vec<u32> = corpus.iter().map(|d| d.doc_id).collect();
    let vectors = corpus.iter().map(|d| embed(&d.tokens, cfg.embed_dim, cfg.embed_seed)).collect::<Result<Vec<_>>>()?;
    let clusters = constrained_kmeans(&ids, &vectors, cfg.cap, mix64(cfg.seed ^ silo_id as u64), cfg.kmeans_iters)?;
    silo_offline_with_clusters(silo_id, corpus, clusters, model, cfg)
}

/// As [`silo_offline`] but with a caller-provided partition.
pub fn silo_offline_with_clusters(
    silo_id: u32,
    corpus: Vec<Document>,
    clusters: ClusterAssignment,
    model: &ToyLM,
    cfg: &SiloConfig,
) -> Result<SiloState> {
    let mut seen = BTreeSet::new();
    for d in &corpus {
        if !seen.insert(d.doc_id) {
            bail!(Argument, "duplicate doc id {} in silo {}", d.doc_id, silo_id);
        }
        if clusters.cluster_of(d.doc_id).is_none() {
            bail!(Argument, "doc {} has no cluster", d.doc_id);
        }
    }
    if clusters.len() != corpus.len() {
        bail!(Argument, "cluster assignment covers {} docs, corpus has {}", clusters.len(), corpus.len());
    }
    let augmented: BTreeMap<u32, AugmentedDoc> = corpus
        .iter()
        .map(|d| Ok((d.doc_id, augment(d, cfg.rewrites, cfg.qa_pairs, cfg.seed)?)))
        .collect::<Result<_>>()?;

    let mut adapters = BTreeMap::new();
    let mut masks = BTreeMap::new();
    for c in 0..clusters.num_clusters() {
        let members = clusters.cluster_members(c)?;
        let docs: Vec<AugmentedDoc> = members.iter().map(|id| augmented[id].clone()).collect();
        let train_cfg = AdapterTrainConfig {
            seed: mix64(cfg.adapter.seed ^ mix64(((silo_id as u64) << 32) | c as u64)),
            ..cfg.adapter
        };
        let adapter = train_adapter(model, &docs, &train_cfg)?;
        for id in &members {
            let mask = if cfg.train_masks {
                train_mask(model, &adapter, &augmented[id], &cfg.mask)?.mask
            } else {
                DocMask::full(model.d())
            };
            masks.insert(*id, mask);
        }
        adapters.insert(c, adapter);
    }

    let mut index = EmbeddingIndex::new(cfg.embed_dim);
    for d in &corpus {
        index.insert(d.doc_id, embed(&d.tokens, cfg.embed_dim, cfg.embed_seed)?)?;
    }
    Ok(SiloState {
        silo_id,
        corpus,
        clusters,
        adapters,
        masks,
        index,
        embed_seed: cfg.embed_seed,
        rank: cfg.adapter.rank,
    })
}

/// How a baseline silo ships the adapters of its retrieved documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NaiveUpload {
    /// The exact parameter average, as one stacked adapter of rank `k·r`
    /// (falls back to `PerDoc` when `k·r > d`).
    PreAveraged,
    /// Each retrieved document's adapter, averaged by the server.
    PerDoc,
}

impl SiloState {
    pub fn adapter_width(&self) -> usize {
        self.adapters.values().next().map_or(0, AdapterPair::d)
    }

    pub fn document(&self, doc_id: u32) -> Option<&Document> {
        self.corpus.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn adapter_for(&self, doc_id: u32) -> Option<(usize, &AdapterPair)> {
        let c = self.clusters.cluster_of(doc_id)?;
        Some((c, &self.adapters[&c]))
    }

    /// Top-k retrieval followed by re-ranking; `(doc_id, score)` best first.
    pub fn retrieve(&self, query_tokens: &[u32], k: usize) -> Result<Vec<(u32, f64)>> {
        if self.index.is_empty() {
            return Ok(Vec::new());
        }
        let q = embed(query_tokens, self.index.dim(), self.embed_seed)?;
        let hits = topk(&self.index, &q, k)?;
        Ok(hits
            .into_iter()
            .map(|(id, _)| (id, rerank_score(&q, self.index.get(id).expect("hit comes from index"))))
            .collect())
    }

    /// Scores and masks of the top-k documents.
    pub fn candidates(&self, query_tokens: &[u32], k: usize) -> Result<Vec<Candidate>> {
        Ok(self
            .retrieve(query_tokens, k)?
            .into_iter()
            .map(|(doc_id, score)| Candidate { silo_id: self.silo_id, doc_id, score, mask: self.masks[&doc_id].clone() })
            .collect())
    }

    pub fn candidate_upload(&self, query_tokens: &[u32], k: usize) -> Result<CandidateUpload> {
        let entries = self
            .candidates(query_tokens, k)?
            .into_iter()
            .map(|c| (c.doc_id, c.score as f32, c.mask))
            .collect();
        Ok(CandidateUpload { silo_id: self.silo_id, mask_bits: self.adapter_width() as u32, entries })
    }

    /// Online handler for an encoded broadcast.
    pub fn handle_broadcast(&self, bytes: &[u8], k: usize) -> Result<Vec<u8>> {
        let query = QueryBroadcast::decode(bytes)?;
        self.candidate_upload(&query.tokens, k)?.encode()
    }

    /// Answers an adapter request with each needed cluster adapter once.
    pub fn adapter_upload(&self, request: &AdapterRequest) -> Result<AdapterUpload> {
        let mut bindings = Vec::new();
        let mut adapters: Vec<(u32, AdapterPair)> = Vec::new();
        for &(silo, doc) in &request.entries {
            if silo != self.silo_id {
                bail!(Protocol, "silo {} received a request for silo {}", self.silo_id, silo);
            }
            let (c, adapter) = self
                .adapter_for(doc)
                .ok_or_else(|| Error::Protocol(alloc::format!("silo {} has no document {}", self.silo_id, doc)))?;
            bindings.push((doc, c as u32));
            if !adapters.iter().any(|(k, _)| *k == c as u32) {
                adapters.push((c as u32, adapter.clone()));
            }
        }
        Ok(AdapterUpload { silo_id: self.silo_id, bindings, adapters })
    }

    pub fn handle_adapter_request(&self, bytes: &[u8]) -> Result<Vec<u8>> {
        Ok(self.adapter_upload(&AdapterRequest::decode(bytes)?)?.encode())
    }

    /// Baseline upload: adapters of the top-k documents, averaged per `mode`.
    pub fn naive_upload(&self, query_tokens: &[u32], k: usize, mode: NaiveUpload) -> Result<AdapterUpload> {
        let hits = self.retrieve(query_tokens, k)?;
        let picked: Vec<(u32, usize, &AdapterPair)> =
            hits.iter().filter_map(|(id, _)| self.adapter_for(*id).map(|(c, a)| (*id, c, a))).collect();
        let d = self.adapter_width();
        let stacked_rank: usize = picked.iter().map(|(_, _, a)| a.r()).sum();
        if mode == NaiveUpload::PreAveraged && !picked.is_empty() && stacked_rank <= d {
            let n = picked.len() as f64;
            let mut b_cols = Vec::with_capacity(d * stacked_rank);
            for i in 0..d {
                for (_, _, a) in &picked {
                    b_cols.extend(a.b().row(i).iter().map(|v| v / n));
                }
            }
            let mut a_rows = Vec::with_capacity(stacked_rank * d);
            for (_, _, a) in &picked {
                a_rows.extend_from_slice(a.a().as_slice());
            }
            let stacked = AdapterPair::new(Matrix::from_vec(stacked_rank, d, a_rows)?, Matrix::from_vec(d, stacked_rank, b_cols)?)?;
            let bindings = picked.iter().map(|(id, _, _)| (*id, 0)).collect();
            return Ok(AdapterUpload { silo_id: self.silo_id, bindings, adapters: alloc::vec![(0, stacked)] });
        }
        let bindings = picked.iter().map(|(id, c, _)| (*id, *c as u32)).collect();
        let adapters = picked.iter().map(|(_, c, a)| (*c as u32, (*a).clone())).collect();
        Ok(AdapterUpload { silo_id: self.silo_id, bindings, adapters })
    }

    pub fn storage_report(&self) -> StorageReport {
        StorageReport::from_counts(self.corpus.len(), self.adapters.len(), self.adapter_width(), self.rank)
    }
}
