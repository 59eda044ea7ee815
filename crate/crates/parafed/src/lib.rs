//! Host-side tooling around `parafed-core`: synthetic corpora, topic
//! partitioning, experiment configs, evaluation, verification sweeps and
//! report files.

pub mod checks;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod interference;
pub mod metrics;
pub mod overhead;
pub mod partition;
pub mod report;

pub use config::ExperimentConfig;
pub use corpus::{gen_corpus, Corpus, Query};
pub use error::{Error, Result};
pub use experiment::{run_experiment, EvalRecord, Mode, Report, Summary};
pub use metrics::{exact_match, token_f1};
pub use partition::dirichlet_partition;
