//! Silo and server roles of the protocol.
//!
//! Offline, each silo clusters its corpus, trains one adapter per cluster
//! and one mask per document. Online, the server broadcasts the query,
//! silos answer with scores and packed masks only, the server selects a
//! subset, fetches the needed cluster adapters and merges them.

pub mod accounting;
pub mod server;
pub mod silo;
pub mod wire;

pub use accounting::{Channel, CommReport, Ledger, MessageKind, StorageReport};
pub use server::{run_query, run_query_naive, run_query_naive_with, server_aggregate, server_select, QueryConfig, QueryOutcome, Server};
pub use silo::{silo_offline, silo_offline_with_clusters, NaiveUpload, SiloConfig, SiloState};
pub use wire::{AdapterRequest, AdapterUpload, Candidate, CandidateUpload, Direction, FieldKind, QueryBroadcast, WireField};
