//! Storage and communication overhead sweeps.

use parafed_core::clustering::constrained_kmeans;
use parafed_core::federation::StorageReport;
use parafed_core::retrieval::embed;
use parafed_core::rng::mix64;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiment::{answer, build_corpus, build_fixture, Mode};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StorageRow {
    pub cap: usize,
    pub num_docs: u64,
    pub num_adapters: u64,
    pub adapter_bytes: u64,
    pub mask_bytes: u64,
    pub baseline_bytes: u64,
    pub adapter_ratio: f64,
    pub mask_ratio: f64,
    pub total_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommRow {
    pub k: usize,
    /// Mean bytes per query, all message kinds.
    pub full_bytes: f64,
    pub naive_bytes: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadReport {
    pub config_hash: String,
    pub storage: Vec<StorageRow>,
    pub comm: Vec<CommRow>,
}

/// Clusters the whole corpus at each cap and prices the result against one
/// adapter per document.
pub fn storage_sweep(cfg: &ExperimentConfig, caps: &[usize]) -> Result<Vec<StorageRow>> {
    let corpus = build_corpus(cfg)?;
    let silo = cfg.silo_config(1, false);
    let ids: Vec<u32> = corpus.documents.iter().map(|d| d.doc_id).collect();
    let vectors = corpus
        .documents
        .iter()
        .map(|d| embed(&d.tokens, cfg.embed_dim, silo.embed_seed))
        .collect::<parafed_core::Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(caps.len());
    for &cap in caps {
        let clusters = constrained_kmeans(&ids, &vectors, cap, mix64(cfg.seed ^ cap as u64), cfg.kmeans_iters)?;
        let expected = ids.len().div_ceil(cap);
        if clusters.num_clusters() != expected {
            return Err(Error::Invariant(format!("cap {cap} gave {} clusters, expected {expected}", clusters.num_clusters())));
        }
        let r = StorageReport::from_counts(ids.len(), clusters.num_clusters(), cfg.d, cfg.rank);
        rows.push(StorageRow {
            cap,
            num_docs: r.num_docs,
            num_adapters: r.num_adapters,
            adapter_bytes: r.adapter_bytes,
            mask_bytes: r.mask_bytes,
            baseline_bytes: r.baseline_per_doc_bytes,
            adapter_ratio: r.adapter_ratio(),
            mask_ratio: r.mask_ratio(),
            total_ratio: r.total_ratio(),
        });
    }
    Ok(rows)
}

/// Mean per-query bytes of the full protocol and the averaging baseline at each
/// retrieval depth `k`.
pub fn comm_sweep(cfg: &ExperimentConfig, ks: &[usize]) -> Result<Vec<CommRow>> {
    let cap = if cfg.use_clustering { cfg.cap } else { 1 };
    let ours = build_fixture(cfg, cap, cfg.use_masks)?;
    let naive = build_fixture(cfg, 1, false)?;
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let at_k = ExperimentConfig { k, ..cfg.clone() };
        let mean = |fixture, mode| -> Result<f64> {
            let mut total = 0u64;
            for q in &ours.corpus.queries {
                total += answer(fixture, &at_k, mode, q)?.1.total();
            }
            Ok(total as f64 / ours.corpus.queries.len() as f64)
        };
        let f = mean(&ours, Mode::Full)?;
        let n = mean(&naive, Mode::Naive)?;
        rows.push(CommRow { k, full_bytes: f, naive_bytes: n, ratio: f / n });
    }
    Ok(rows)
}

pub fn bench_overhead(cfg: &ExperimentConfig, caps: &[usize], ks: &[usize]) -> Result<OverheadReport> {
    cfg.validate()?;
    Ok(OverheadReport { config_hash: cfg.hash(), storage: storage_sweep(cfg, caps)?, comm: comm_sweep(cfg, ks)? })
}
