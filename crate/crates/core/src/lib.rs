//! Core algorithms for federated parametric retrieval-augmented generation.
//!
//! Silos compress clustered documents into low-rank adapters and carry one
//! binary row mask per document. At query time the server pools relevance
//! scores and masks, picks a conflict-aware subset, and merges the selected
//! adapters into a single update for a frozen model.
//!
//! The crate is `no_std` and only needs `alloc`. File IO, configuration and
//! the command line live in the `parafed` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod clustering;
pub mod error;
pub mod federation;
pub mod linalg;
pub mod lowrank;
pub mod maskcodec;
pub mod retrieval;
pub mod rng;
pub mod selection;
pub mod toylm;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use lowrank::{AdapterPair, MergeEntry};
pub use maskcodec::DocMask;
