//! Server side: pooled selection, adapter collection, masked aggregation and
//! answer generation, plus the per-document-adapter baseline.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::accounting::{Channel, CommReport, Ledger, MessageKind};
use super::silo::{NaiveUpload, SiloState};
use super::wire::{AdapterRequest, AdapterUpload, Candidate, CandidateUpload, QueryBroadcast};
use crate::error::{bail, Error, Result};
use crate::linalg::Matrix;
use crate::lowrank::{delta_weight, merge, normalize_weights, AdapterPair, MergeEntry};
use crate::selection::{greedy_select, SelectionConfig};
use crate::toylm::{generate, ToyLM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryConfig {
    /// Documents retrieved per silo.
    pub k: usize,
    pub selection: SelectionConfig,
    /// When false every positive-score candidate is aggregated.
    pub selection_enabled: bool,
    /// Apply `d / ‖M‖₁` inside the merge.
    pub rescale: bool,
    pub max_answer_len: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self { k: 5, selection: SelectionConfig::default(), selection_enabled: true, rescale: false, max_answer_len: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub answer: Vec<u32>,
    pub comm: CommReport,
    pub selected: Vec<Candidate>,
}

/// Conflict-aware selection over the pooled candidates of all silos.
pub fn server_select(candidates: &[Candidate], cfg: &SelectionConfig) -> Result<Vec<Candidate>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
    let masks: Vec<_> = candidates.iter().map(|c| c.mask.clone()).collect();
    Ok(greedy_select(&scores, &masks, cfg)?.into_iter().map(|i| candidates[i].clone()).collect())
}

/// Relevance-weighted masked merge of the selected documents' cluster adapters.
pub fn server_aggregate(selected: &[Candidate], uploads: &[AdapterUpload], rescale: bool) -> Result<Matrix> {
    let mut binding: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    let mut adapters: BTreeMap<(u32, u32), &AdapterPair> = BTreeMap::new();
    for up in uploads {
        for &(doc, key) in &up.bindings {
            binding.insert((up.silo_id, doc), key);
        }
        for (key, a) in &up.adapters {
            adapters.insert((up.silo_id, *key), a);
        }
    }
    aggregate_with(selected, |silo, doc| {
        let key = binding.get(&(silo, doc)).ok_or_else(|| missing(silo, doc))?;
        adapters.get(&(silo, *key)).copied().ok_or_else(|| missing(silo, doc))
    }, rescale)
}

fn missing(silo: u32, doc: u32) -> Error {
    Error::Protocol(alloc::format!("no adapter uploaded for document {} of silo {}", doc, silo))
}

fn aggregate_with<'a>(
    selected: &[Candidate],
    mut lookup: impl FnMut(u32, u32) -> Result<&'a AdapterPair>,
    rescale: bool,
) -> Result<Matrix> {
    let scores: Vec<f64> = selected.iter().map(|c| c.score).collect();
    let weights = normalize_weights(&scores)?;
    let mut entries = Vec::with_capacity(selected.len());
    for (c, w) in selected.iter().zip(weights) {
        entries.push(MergeEntry { weight: w, mask: &c.mask, adapter: lookup(c.silo_id, c.doc_id)? });
    }
    merge(&entries, rescale)
}

/// Server state that can outlive a query.
#[derive(Debug, Default, Clone)]
pub struct Server {
    cache_enabled: bool,
    bindings: BTreeMap<(u32, u32), u32>,
    adapters: BTreeMap<(u32, u32), AdapterPair>,
}

impl Server {
    /// A server that keeps uploaded adapters across queries.
    pub fn with_cache() -> Self {
        Self { cache_enabled: true, ..Self::default() }
    }

    fn cached(&self, silo: u32, doc: u32) -> bool {
        self.bindings.get(&(silo, doc)).is_some_and(|k| self.adapters.contains_key(&(silo, *k)))
    }

    /// Runs one query end to end over encoded messages.
    pub fn run_query<C: Channel>(
        &mut self,
        model: &ToyLM,
        silos: &[SiloState],
        query: &[u32],
        cfg: &QueryConfig,
        channel: &mut C,
    ) -> Result<QueryOutcome> {
        let mut comm = CommReport::default();
        let mut send = |kind: MessageKind, silo: u32, bytes: &[u8], comm: &mut CommReport| {
            comm.record(kind, bytes.len());
            channel.send(kind, silo, bytes);
        };

        let broadcast = QueryBroadcast { tokens: query.to_vec() }.encode();
        let mut pooled = Vec::new();
        for silo in silos {
            send(MessageKind::Broadcast, silo.silo_id, &broadcast, &mut comm);
            let reply = silo.handle_broadcast(&broadcast, cfg.k)?;
            send(MessageKind::CandidateUpload, silo.silo_id, &reply, &mut comm);
            let upload = CandidateUpload::decode(&reply).map_err(protocol)?;
            if upload.silo_id != silo.silo_id || upload.mask_bits as usize != model.d() {
                bail!(Protocol, "malformed candidate upload from silo {}", silo.silo_id);
            }
            pooled.extend(upload.candidates());
        }

        let selected = if cfg.selection_enabled {
            server_select(&pooled, &cfg.selection)?
        } else {
            pooled.into_iter().filter(|c| c.score > 0.0).collect()
        };
        if selected.is_empty() {
            let answer = generate(model, &Matrix::zeros(model.d(), model.d()), query, cfg.max_answer_len)?;
            return Ok(QueryOutcome { answer, comm, selected });
        }

        let mut requests: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
        for c in &selected {
            if !self.cached(c.silo_id, c.doc_id) {
                let list = requests.entry(c.silo_id).or_default();
                if !list.contains(&(c.silo_id, c.doc_id)) {
                    list.push((c.silo_id, c.doc_id));
                }
            }
        }
        let mut bindings: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut fetched: BTreeMap<(u32, u32), AdapterPair> = BTreeMap::new();
        for (silo_id, entries) in requests {
            let silo = silos
                .iter()
                .find(|s| s.silo_id == silo_id)
                .ok_or_else(|| Error::Protocol(alloc::format!("unknown silo {}", silo_id)))?;
            let req = AdapterRequest { entries }.encode();
            send(MessageKind::AdapterRequest, silo_id, &req, &mut comm);
            let reply = silo.handle_adapter_request(&req)?;
            send(MessageKind::AdapterUpload, silo_id, &reply, &mut comm);
            let upload = AdapterUpload::decode(&reply).map_err(protocol)?;
            if upload.silo_id != silo_id {
                bail!(Protocol, "adapter upload from silo {} claims id {}", silo_id, upload.silo_id);
            }
            comm.adapters_transferred += upload.adapters.len() as u64;
            for (doc, key) in upload.bindings {
                bindings.insert((silo_id, doc), key);
            }
            for (key, a) in upload.adapters {
                fetched.insert((silo_id, key), a);
            }
        }
        if self.cache_enabled {
            self.bindings.extend(bindings.iter().map(|(k, v)| (*k, *v)));
            self.adapters.extend(fetched.iter().map(|(k, v)| (*k, v.clone())));
        }
        comm.adapter_dedup_hits = (selected.len() as u64).saturating_sub(comm.adapters_transferred);

        let bindings_ref = &bindings;
        let fetched_ref = &fetched;
        let this = &*self;
        let delta = aggregate_with(
            &selected,
            |silo, doc| {
                let key = bindings_ref
                    .get(&(silo, doc))
                    .or_else(|| this.bindings.get(&(silo, doc)))
                    .ok_or_else(|| missing(silo, doc))?;
                fetched_ref
                    .get(&(silo, *key))
                    .or_else(|| this.adapters.get(&(silo, *key)))
                    .ok_or_else(|| missing(silo, doc))
            },
            cfg.rescale,
        )?;
        let answer = generate(model, &delta, query, cfg.max_answer_len)?;
        Ok(QueryOutcome { answer, comm, selected })
    }
}

fn protocol(e: Error) -> Error {
    match e {
        Error::Decode(msg) | Error::CorruptMask(msg) => Error::Protocol(msg),
        other => other,
    }
}

/// One query under a fresh cache-less server and a tallying channel.
pub fn run_query(model: &ToyLM, silos: &[SiloState], query: &[u32], cfg: &QueryConfig) -> Result<QueryOutcome> {
    Server::default().run_query(model, silos, query, cfg, &mut Ledger::default())
}

/// Per-document-adapter baseline: every silo uploads the average of its
/// top-k adapters; the server sums the silo averages and scales by `1/M`.
pub fn run_query_naive_with<C: Channel>(
    model: &ToyLM,
    silos: &[SiloState],
    query: &[u32],
    k: usize,
    mode: NaiveUpload,
    max_answer_len: usize,
    channel: &mut C,
) -> Result<QueryOutcome> {
    let mut comm = CommReport::default();
    let broadcast = QueryBroadcast { tokens: query.to_vec() }.encode();
    let d = model.d();
    let mut total = Matrix::zeros(d, d);
    let mut contributing = 0usize;
    for silo in silos {
        comm.record(MessageKind::Broadcast, broadcast.len());
        channel.send(MessageKind::Broadcast, silo.silo_id, &broadcast);
        let q = QueryBroadcast::decode(&broadcast)?;
        let reply = silo.naive_upload(&q.tokens, k, mode)?.encode();
        comm.record(MessageKind::AdapterUpload, reply.len());
        channel.send(MessageKind::AdapterUpload, silo.silo_id, &reply);
        let upload = AdapterUpload::decode(&reply).map_err(protocol)?;
        if upload.adapters.is_empty() {
            continue;
        }
        comm.adapters_transferred += upload.adapters.len() as u64;
        let share = 1.0 / upload.adapters.len() as f64;
        for (_, a) in &upload.adapters {
            total.add_scaled(&delta_weight(a)?, share)?;
        }
        contributing += 1;
    }
    if contributing > 0 {
        total.scale(1.0 / contributing as f64);
    }
    let answer = generate(model, &total, query, max_answer_len)?;
    Ok(QueryOutcome { answer, comm, selected: Vec::new() })
}

pub fn run_query_naive(
    model: &ToyLM,
    silos: &[SiloState],
    query: &[u32],
    k: usize,
    mode: NaiveUpload,
    max_answer_len: usize,
) -> Result<QueryOutcome> {
    run_query_naive_with(model, silos, query, k, mode, max_answer_len, &mut Ledger::default())
}
