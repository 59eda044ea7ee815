//! Adapter interference sweeps: documents sharing one adapter inside a
//! silo, and many adapters merged across silos.

use parafed_core::clustering::ClusterAssignment;
use parafed_core::federation::{silo_offline, silo_offline_with_clusters, Candidate, QueryConfig, Server, SiloState, Ledger};
use parafed_core::lowrank::{delta_weight, merge, normalize_weights, MergeEntry};
use parafed_core::rng::{self, mix64};
use parafed_core::selection::greedy_select;
use parafed_core::toylm::{generate, ToyLM};
use parafed_core::Matrix;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::corpus::Corpus;
use crate::experiment::{build_corpus, build_model};
use crate::metrics::token_f1;
use crate::partition::dirichlet_partition;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupingPoint {
    /// Documents per adapter.
    pub c: usize,
    pub random_unmasked_f1: f64,
    pub clustered_masked_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregationPoint {
    /// Adapters retrieved across all silos.
    pub adapters: usize,
    pub aggregate_all_f1: f64,
    pub selective_f1: f64,
}

fn partitions(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Vec<(u32, Vec<parafed_core::toylm::Document>)>> {
    let parts = dirichlet_partition(&corpus.documents, cfg.silos, cfg.dirichlet_alpha, mix64(cfg.seed ^ 0xD1))?;
    Ok(parts.into_iter().enumerate().filter(|(_, d)| !d.is_empty()).map(|(i, d)| (i as u32, d)).collect())
}

/// Best single candidate across silos; its (masked) adapter answers.
fn top1_f1(model: &ToyLM, silos: &[SiloState], corpus: &Corpus, rescale: bool, max_len: usize) -> Result<f64> {
    let mut q = QueryConfig { k: 1, rescale, max_answer_len: max_len, ..QueryConfig::default() };
    q.selection.k_prime = 1;
    q.selection.tau = f64::NEG_INFINITY;
    let mut total = 0.0;
    for query in &corpus.queries {
        let out = Server::default().run_query(model, silos, &query.tokens, &q, &mut Ledger::default())?;
        total += token_f1(&out.answer, &query.gold)?;
    }
    Ok(total / corpus.queries.len() as f64)
}

/// Mean F1 when every document is answered by the adapter of its group:
/// random groups of `c` without masks, against size-capped clusters of
/// `c` with trained masks.
pub fn grouping_curve(cfg: &ExperimentConfig, cs: &[usize]) -> Result<Vec<GroupingPoint>> {
    cfg.validate()?;
    let model = build_model(cfg)?;
    let corpus = build_corpus(cfg)?;
    let parts = partitions(cfg, &corpus)?;
    let mut out = Vec::with_capacity(cs.len());
    for &c in cs {
        let unmasked_cfg = cfg.silo_config(c, false);
        let masked_cfg = cfg.silo_config(c, true);
        let mut random = Vec::new();
        let mut clustered = Vec::new();
        for (id, docs) in &parts {
            let mut ids: Vec<u32> = docs.iter().map(|d| d.doc_id).collect();
            rng::shuffle(&mut rng::stream(cfg.seed ^ 0x6A0, *id as u64 * 1000 + c as u64), &mut ids);
            let labels: Vec<usize> = (0..ids.len()).map(|p| p / c).collect();
            let groups = ClusterAssignment::from_labels(&ids, &labels, ids.len().div_ceil(c), c)?;
            random.push(silo_offline_with_clusters(*id, docs.clone(), groups, &model, &unmasked_cfg)?);
            clustered.push(silo_offline(*id, docs.clone(), &model, &masked_cfg)?);
        }
        out.push(GroupingPoint {
            c,
            random_unmasked_f1: top1_f1(&model, &random, &corpus, cfg.rescale, cfg.max_answer_len)?,
            clustered_masked_f1: top1_f1(&model, &clustered, &corpus, cfg.rescale, cfg.max_answer_len)?,
        });
    }
    Ok(out)
}

/// Per-document adapters; for each count `n` the `n` best-scoring
/// candidates across silos are either averaged uniformly or passed through
/// selection and the masked, relevance-weighted merge.
pub fn aggregation_curve(cfg: &ExperimentConfig, counts: &[usize]) -> Result<Vec<AggregationPoint>> {
    cfg.validate()?;
    let model = build_model(cfg)?;
    let corpus = build_corpus(cfg)?;
    let silo_cfg = cfg.silo_config(1, true);
    let silos: Vec<SiloState> = partitions(cfg, &corpus)?
        .into_iter()
        .map(|(id, docs)| silo_offline(id, docs, &model, &silo_cfg))
        .collect::<parafed_core::Result<_>>()?;
    let deepest = counts.iter().copied().max().unwrap_or(0);
    let selection = cfg.selection();
    let d = model.d();
    let mut all_f1 = vec![0.0; counts.len()];
    let mut sel_f1 = vec![0.0; counts.len()];
    for query in &corpus.queries {
        let mut pool: Vec<Candidate> = Vec::new();
        for s in &silos {
            pool.extend(s.candidates(&query.tokens, deepest.max(1))?);
        }
        pool.sort_by(|a, b| b.score.total_cmp(&a.score).then((a.silo_id, a.doc_id).cmp(&(b.silo_id, b.doc_id))));
        let adapter = |c: &Candidate| {
            let s = silos.iter().find(|s| s.silo_id == c.silo_id).expect("candidate comes from a silo");
            s.adapter_for(c.doc_id).expect("candidate has an adapter").1
        };
        for (slot, &n) in counts.iter().enumerate() {
            let top = &pool[..n.min(pool.len())];
            let mut avg = Matrix::zeros(d, d);
            for c in top {
                avg.add_scaled(&delta_weight(adapter(c))?, 1.0 / top.len() as f64)?;
            }
            all_f1[slot] += token_f1(&generate(&model, &avg, &query.tokens, cfg.max_answer_len)?, &query.gold)?;

            let scores: Vec<f64> = top.iter().map(|c| c.score).collect();
            let masks: Vec<_> = top.iter().map(|c| c.mask.clone()).collect();
            let picked = greedy_select(&scores, &masks, &selection)?;
            let delta = if picked.is_empty() {
                Matrix::zeros(d, d)
            } else {
                let weights = normalize_weights(&picked.iter().map(|&i| scores[i]).collect::<Vec<_>>())?;
                let entries: Vec<MergeEntry> = picked
                    .iter()
                    .zip(weights)
                    .map(|(&i, w)| MergeEntry { weight: w, mask: &top[i].mask, adapter: adapter(&top[i]) })
                    .collect();
                merge(&entries, cfg.rescale)?
            };
            sel_f1[slot] += token_f1(&generate(&model, &delta, &query.tokens, cfg.max_answer_len)?, &query.gold)?;
        }
    }
    let n = corpus.queries.len() as f64;
    Ok(counts
        .iter()
        .zip(all_f1.iter().zip(&sel_f1))
        .map(|(&adapters, (a, s))| AggregationPoint { adapters, aggregate_all_f1: a / n, selective_f1: s / n })
        .collect())
}
