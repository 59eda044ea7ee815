//! Byte accounting for storage and per-query communication.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::wire::Direction;
use crate::maskcodec::packed_len;

/// Bytes per transmitted real.
pub const WIRE_REAL_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    Broadcast,
    CandidateUpload,
    AdapterRequest,
    AdapterUpload,
}

impl MessageKind {
    pub fn direction(self) -> Direction {
        match self {
            Self::Broadcast | Self::AdapterRequest => Direction::ServerToSilo,
            Self::CandidateUpload | Self::AdapterUpload => Direction::SiloToServer,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommReport {
    pub broadcast: u64,
    pub candidate_upload: u64,
    pub adapter_request: u64,
    pub adapter_upload: u64,
    /// Selected documents served by an adapter already in the same upload or cache.
    pub adapter_dedup_hits: u64,
    pub adapters_transferred: u64,
}

impl CommReport {
    pub fn total(&self) -> u64 {
        self.broadcast + self.candidate_upload + self.adapter_request + self.adapter_upload
    }

    pub fn upstream(&self) -> u64 {
        self.candidate_upload + self.adapter_upload
    }

    pub fn record(&mut self, kind: MessageKind, bytes: usize) {
        let slot = match kind {
            MessageKind::Broadcast => &mut self.broadcast,
            MessageKind::CandidateUpload => &mut self.candidate_upload,
            MessageKind::AdapterRequest => &mut self.adapter_request,
            MessageKind::AdapterUpload => &mut self.adapter_upload,
        };
        *slot += bytes as u64;
    }
}

impl core::ops::AddAssign for CommReport {
    fn add_assign(&mut self, o: Self) {
        self.broadcast += o.broadcast;
        self.candidate_upload += o.candidate_upload;
        self.adapter_request += o.adapter_request;
        self.adapter_upload += o.adapter_upload;
        self.adapter_dedup_hits += o.adapter_dedup_hits;
        self.adapters_transferred += o.adapters_transferred;
    }
}

/// Simulated transport. Every encoded message passes through `send` before
/// the receiver decodes it.
pub trait Channel {
    fn send(&mut self, kind: MessageKind, silo_id: u32, bytes: &[u8]);
}

/// Default channel: tallies bytes and optionally keeps copies of upstream
/// traffic for auditing.
#[derive(Debug, Default, Clone)]
pub struct Ledger {
    pub report: CommReport,
    pub keep_upstream: bool,
    pub upstream: Vec<(MessageKind, u32, Vec<u8>)>,
}

impl Ledger {
    pub fn recording() -> Self {
        Self { keep_upstream: true, ..Self::default() }
    }
}

impl Channel for Ledger {
    fn send(&mut self, kind: MessageKind, silo_id: u32, bytes: &[u8]) {
        self.report.record(kind, bytes.len());
        if self.keep_upstream && kind.direction() == Direction::SiloToServer {
            self.upstream.push((kind, silo_id, bytes.to_vec()));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageReport {
    pub num_docs: u64,
    pub num_adapters: u64,
    pub adapter_bytes: u64,
    pub mask_bytes: u64,
    pub total_bytes: u64,
    /// One adapter per document, no masks.
    pub baseline_per_doc_bytes: u64,
}

impl StorageReport {
    pub fn from_counts(num_docs: usize, num_adapters: usize, d: usize, r: usize) -> Self {
        let adapter_size = (2 * d * r * WIRE_REAL_BYTES) as u64;
        let adapter_bytes = num_adapters as u64 * adapter_size;
        let mask_bytes = (num_docs * packed_len(d)) as u64;
        Self {
            num_docs: num_docs as u64,
            num_adapters: num_adapters as u64,
            adapter_bytes,
            mask_bytes,
            total_bytes: adapter_bytes + mask_bytes,
            baseline_per_doc_bytes: num_docs as u64 * adapter_size,
        }
    }

    pub fn adapter_ratio(&self) -> f64 {
        self.adapter_bytes as f64 / self.baseline_per_doc_bytes as f64
    }

    pub fn mask_ratio(&self) -> f64 {
        self.mask_bytes as f64 / self.baseline_per_doc_bytes as f64
    }

    pub fn total_ratio(&self) -> f64 {
        self.total_bytes as f64 / self.baseline_per_doc_bytes as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn storage_arithmetic() {
        let s = StorageReport::from_counts(80, 10, 64, 4);
        assert_eq!(s.adapter_bytes, 20480);
        assert_eq!(s.baseline_per_doc_bytes, 163840);
        assert_eq!(s.mask_bytes, 640);
        assert!((s.adapter_ratio() - 0.125).abs() < 1e-15);
        assert!((s.mask_ratio() - 640.0 / 163840.0).abs() < 1e-15);
        let c10 = StorageReport::from_counts(80, 8, 64, 4);
        assert!((c10.total_ratio() - (16384.0 + 640.0) / 163840.0).abs() < 1e-15);
    }

    #[test]
    fn totals_are_sums() {
        let mut r = CommReport::default();
        r.record(MessageKind::Broadcast, 10);
        r.record(MessageKind::CandidateUpload, 20);
        r.record(MessageKind::AdapterRequest, 5);
        r.record(MessageKind::AdapterUpload, 100);
        assert_eq!(r.total(), 135);
        assert_eq!(r.upstream(), 120);
        let mut ledger = Ledger::recording();
        ledger.send(MessageKind::Broadcast, 0, &[1, 2]);
        ledger.send(MessageKind::AdapterUpload, 1, &[3]);
        assert_eq!(ledger.upstream.len(), 1);
        assert_eq!(ledger.report.total(), 3);
    }
}
