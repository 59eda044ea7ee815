//! End-to-end experiments: build silos from a config, answer every query,
//! score the answers.

use std::fmt;
use std::str::FromStr;

use parafed_core::federation::{
    run_query_naive_with, silo_offline, CommReport, Ledger, NaiveUpload, QueryConfig, Server, SiloState, StorageReport,
};
use parafed_core::rng::mix64;
use parafed_core::toylm::{generate, ToyLM};
use parafed_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::corpus::{gen_corpus_with, Corpus, CorpusShape, Query};
use crate::metrics::{exact_match, token_f1};
use crate::partition::dirichlet_partition;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Clustered adapters, masks and selection, each subject to the
    /// config's ablation toggles.
    Full,
    /// Per-document adapters; every silo uploads the average of its top-k.
    Naive,
    /// Only the best-scoring document's own adapter.
    PerDocLocal,
    /// The frozen base model.
    NoAdapter,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Full, Mode::Naive, Mode::PerDocLocal, Mode::NoAdapter];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Naive => "naive",
            Mode::PerDocLocal => "per_doc_local",
            Mode::NoAdapter => "no_adapter",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: u32,
    pub gold: Vec<u32>,
    pub predicted: Vec<u32>,
    pub exact_match: u8,
    pub token_f1: f64,
    pub comm: CommReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub mode: Mode,
    pub num_queries: usize,
    pub num_silos: usize,
    pub mean_exact_match: f64,
    pub mean_token_f1: f64,
    pub mean_comm_bytes: f64,
    pub mean_upstream_bytes: f64,
    pub mean_adapter_upload_bytes: f64,
    pub mean_adapters_transferred: f64,
    pub storage: StorageReport,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub records: Vec<EvalRecord>,
    pub summary: Summary,
}

/// Everything a run needs before queries arrive.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub model: ToyLM,
    pub corpus: Corpus,
    pub silos: Vec<SiloState>,
}

impl Fixture {
    pub fn storage(&self) -> StorageReport {
        let docs = self.silos.iter().map(|s| s.corpus.len()).sum();
        let adapters = self.silos.iter().map(|s| s.adapters.len()).sum();
        let r = self.silos.first().map_or(0, |s| s.rank);
        StorageReport::from_counts(docs, adapters, self.model.d(), r)
    }
}

pub fn build_model(cfg: &ExperimentConfig) -> Result<ToyLM> {
    Ok(ToyLM::new(cfg.model_config())?)
}

pub fn build_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let shape = CorpusShape {
        num_topics: cfg.num_topics,
        facts_per_topic: cfg.facts_per_topic,
        vocab_size: cfg.vocab_size,
        replicas: cfg.doc_replicas,
        query_noise: cfg.query_noise,
    };
    gen_corpus_with(&shape, mix64(cfg.seed ^ 0xC0))
}

/// Partitions the corpus and runs every non-empty silo's offline phase.
/// Silo ids are partition indices, so an empty partition leaves a gap.
pub fn build_silos(cfg: &ExperimentConfig, corpus: &Corpus, model: &ToyLM, cap: usize, train_masks: bool) -> Result<Vec<SiloState>> {
    let parts = dirichlet_partition(&corpus.documents, cfg.silos, cfg.dirichlet_alpha, mix64(cfg.seed ^ 0xD1))?;
    let silo_cfg = cfg.silo_config(cap, train_masks);
    let mut silos = Vec::new();
    for (id, docs) in parts.into_iter().enumerate() {
        if !docs.is_empty() {
            silos.push(silo_offline(id as u32, docs, model, &silo_cfg)?);
        }
    }
    Ok(silos)
}

pub fn build_fixture(cfg: &ExperimentConfig, cap: usize, train_masks: bool) -> Result<Fixture> {
    cfg.validate()?;
    let model = build_model(cfg)?;
    let corpus = build_corpus(cfg)?;
    let silos = build_silos(cfg, &corpus, &model, cap, train_masks)?;
    Ok(Fixture { model, corpus, silos })
}

/// Silo layout a mode needs: `(cap, train_masks)`.
pub fn mode_layout(cfg: &ExperimentConfig, mode: Mode) -> (usize, bool) {
    match mode {
        Mode::Full => (if cfg.use_clustering { cfg.cap } else { 1 }, cfg.use_masks),
        Mode::Naive | Mode::PerDocLocal | Mode::NoAdapter => (1, false),
    }
}

/// Answers one query under `mode`.
pub fn answer(fixture: &Fixture, cfg: &ExperimentConfig, mode: Mode, query: &Query) -> Result<(Vec<u32>, CommReport)> {
    let mut ledger = Ledger::default();
    let (model, silos) = (&fixture.model, &fixture.silos[..]);
    let out = match mode {
        Mode::Full | Mode::PerDocLocal => {
            Server::default().run_query(model, silos, &query.tokens, &effective_query_config(cfg, mode), &mut ledger)?
        }
        Mode::Naive => run_query_naive_with(
            model,
            silos,
            &query.tokens,
            cfg.k,
            NaiveUpload::PreAveraged,
            cfg.max_answer_len,
            &mut ledger,
        )?,
        Mode::NoAdapter => {
            let zero = Matrix::zeros(model.d(), model.d());
            return Ok((generate(model, &zero, &query.tokens, cfg.max_answer_len)?, CommReport::default()));
        }
    };
    let bytes = |c: &CommReport| (c.broadcast, c.candidate_upload, c.adapter_request, c.adapter_upload);
    if bytes(&ledger.report) != bytes(&out.comm) {
        return Err(Error::Invariant(format!("channel saw {:?} but the query reported {:?}", ledger.report, out.comm)));
    }
    Ok((out.answer, out.comm))
}

pub fn evaluate(fixture: &Fixture, cfg: &ExperimentConfig, mode: Mode) -> Result<Report> {
    let mut records = Vec::with_capacity(fixture.corpus.queries.len());
    for q in &fixture.corpus.queries {
        let (predicted, comm) = answer(fixture, cfg, mode, q)?;
        let f1 = token_f1(&predicted, &q.gold)?;
        let em = exact_match(&predicted, &q.gold);
        if em && f1 != 1.0 {
            return Err(Error::Invariant(format!("query {} matches exactly but has F1 {f1}", q.query_id)));
        }
        records.push(EvalRecord { query_id: q.query_id, gold: q.gold.clone(), predicted, exact_match: em as u8, token_f1: f1, comm });
    }
    let n = records.len().max(1) as f64;
    let mean = |f: &dyn Fn(&EvalRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let summary = Summary {
        config_hash: cfg.hash(),
        mode,
        num_queries: records.len(),
        num_silos: fixture.silos.len(),
        mean_exact_match: mean(&|r| r.exact_match as f64),
        mean_token_f1: mean(&|r| r.token_f1),
        mean_comm_bytes: mean(&|r| r.comm.total() as f64),
        mean_upstream_bytes: mean(&|r| r.comm.upstream() as f64),
        mean_adapter_upload_bytes: mean(&|r| r.comm.adapter_upload as f64),
        mean_adapters_transferred: mean(&|r| r.comm.adapters_transferred as f64),
        storage: fixture.storage(),
        config: cfg.clone(),
    };
    Ok(Report { records, summary })
}

/// Builds the silos `mode` needs and evaluates every query.
pub fn run_experiment(cfg: &ExperimentConfig, mode: Mode) -> Result<Report> {
    let (cap, masks) = mode_layout(cfg, mode);
    let fixture = build_fixture(cfg, cap, masks)?;
    evaluate(&fixture, cfg, mode)
}

/// Query config for a mode, as used by [`answer`].
pub fn effective_query_config(cfg: &ExperimentConfig, mode: Mode) -> QueryConfig {
    let mut q = cfg.query_config();
    if mode == Mode::PerDocLocal {
        q.selection.k_prime = 1;
        q.selection_enabled = true;
        q.rescale = false;
    }
    q
}
