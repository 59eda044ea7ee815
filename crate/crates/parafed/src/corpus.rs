//! Synthetic fact corpus.
//!
//! Token layout after the reserved block: relation tokens, one topic token
//! per topic, one entity token per fact, then the object pool. A fact's
//! subject is `[topic, entity]`, so distinct topics never share subject
//! tokens. Every fifth fact has a two-token object.

use std::collections::BTreeSet;

use parafed_core::rng;
use parafed_core::toylm::{Document, Triple, FILLER_TOKENS, RESERVED_TOKENS};
use parafed_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::Result;

pub const NUM_RELATIONS: usize = 8;
/// Smallest object pool the generator accepts.
pub const MIN_OBJECT_POOL: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: u32,
    pub doc_id: u32,
    pub topic: u32,
    pub tokens: Vec<u32>,
    pub gold: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub vocab_size: usize,
    pub documents: Vec<Document>,
    pub queries: Vec<Query>,
}

/// Vocabulary needed for `num_topics × facts_per_topic` facts.
pub fn min_vocab(num_topics: usize, facts_per_topic: usize) -> usize {
    RESERVED_TOKENS as usize + NUM_RELATIONS + num_topics + num_topics * facts_per_topic + MIN_OBJECT_POOL
}

pub fn gen_corpus(num_topics: usize, facts_per_topic: usize, vocab_size: usize, seed: u64) -> Result<Corpus> {
    gen_corpus_with(&CorpusShape { num_topics, facts_per_topic, vocab_size, replicas: 1, query_noise: 0 }, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusShape {
    pub num_topics: usize,
    pub facts_per_topic: usize,
    pub vocab_size: usize,
    /// Documents stating each fact. Replica `j` carries `j` filler tokens.
    pub replicas: usize,
    /// Random object-pool tokens appended to every query.
    pub query_noise: usize,
}

/// As [`gen_corpus`], with redundant documents and noisy queries.
/// Document ids are `fact · replicas + j`; each query names replica 0.
pub fn gen_corpus_with(shape: &CorpusShape, seed: u64) -> Result<Corpus> {
    let CorpusShape { num_topics, facts_per_topic, vocab_size, replicas, query_noise } = *shape;
    if replicas == 0 {
        return Err(CoreError::Argument("at least one replica per fact is required".into()).into());
    }
    if num_topics == 0 || facts_per_topic == 0 {
        return Err(CoreError::Argument("corpus sizes must be positive".into()).into());
    }
    let need = min_vocab(num_topics, facts_per_topic);
    if vocab_size < need {
        return Err(CoreError::Argument(format!("vocab of {vocab_size} is below the {need} tokens this corpus needs")).into());
    }
    let relation0 = RESERVED_TOKENS;
    let topic0 = relation0 + NUM_RELATIONS as u32;
    let entity0 = topic0 + num_topics as u32;
    let object0 = entity0 + (num_topics * facts_per_topic) as u32;
    let pool = vocab_size as u32 - object0;

    let mut g = rng::stream(seed, 0xC0_4905);
    let mut documents = Vec::new();
    let mut queries = Vec::new();
    for topic in 0..num_topics as u32 {
        for f in 0..facts_per_topic as u32 {
            let id = topic * facts_per_topic as u32 + f;
            let subject = vec![topic0 + topic, entity0 + id];
            let relation = vec![relation0 + rng::index(&mut g, NUM_RELATIONS) as u32];
            let mut object = vec![object0 + rng::index(&mut g, pool as usize) as u32];
            if f % 5 == 4 {
                let mut second = object0 + rng::index(&mut g, pool as usize) as u32;
                if second == object[0] {
                    second = object0 + (second - object0 + 1) % pool;
                }
                object.push(second);
            }
            let triple = Triple(subject.clone(), relation.clone(), object.clone());
            let canonical = [subject, relation, object.clone()].concat();
            let mut question = triple.question();
            for _ in 0..query_noise {
                question.push(object0 + rng::index(&mut g, pool as usize) as u32);
            }
            let first = id * replicas as u32;
            queries.push(Query { query_id: id, doc_id: first, topic, tokens: question, gold: object });
            for j in 0..replicas {
                let mut tokens = canonical.clone();
                for _ in 0..j {
                    let at = rng::index(&mut g, tokens.len() + 1);
                    tokens.insert(at, FILLER_TOKENS[rng::index(&mut g, FILLER_TOKENS.len())]);
                }
                documents.push(Document { doc_id: first + j as u32, topic, tokens, triples: vec![triple.clone()] });
            }
        }
    }
    Ok(Corpus { vocab_size, documents, queries })
}

/// Display name of every token id, index = id.
pub fn vocab_names(num_topics: usize, facts_per_topic: usize, vocab_size: usize) -> Vec<String> {
    let relation0 = RESERVED_TOKENS as usize;
    let topic0 = relation0 + NUM_RELATIONS;
    let entity0 = topic0 + num_topics;
    let object0 = entity0 + num_topics * facts_per_topic;
    (0..vocab_size)
        .map(|t| match t {
            0 => "<pad>".to_string(),
            1 => "<end>".to_string(),
            2 => "<q>".to_string(),
            t if FILLER_TOKENS.contains(&(t as u32)) => format!("<fill{t}>"),
            t if t < relation0 => format!("<reserved{t}>"),
            t if t < topic0 => format!("rel{}", t - relation0),
            t if t < entity0 => format!("topic{}", t - topic0),
            t if t < object0 => format!("ent{}", t - entity0),
            t => format!("obj{}", t - object0),
        })
        .collect()
}

/// Subject tokens used by each topic.
pub fn subject_tokens(corpus: &Corpus, topic: u32) -> BTreeSet<u32> {
    corpus
        .documents
        .iter()
        .filter(|d| d.topic == topic)
        .flat_map(|d| d.triples.iter().flat_map(|t| t.subject().to_vec()))
        .collect()
}
