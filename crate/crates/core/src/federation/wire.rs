//! Bit-exact message encodings exchanged between server and silos.
//!
//! All integers are little-endian `u32`, scores are `f32`, masks use the
//! packed bit order of [`crate::maskcodec`], adapters the `FMAD` layout of
//! [`crate::lowrank`]. Each message also publishes its field schema so the
//! locality audit can enumerate everything a silo ever sends.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::lowrank::{decode_adapter, encode_adapter, AdapterPair};
use crate::maskcodec::{packed_len, DocMask};

/// What a wire field is allowed to carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    SiloId,
    DocId,
    ClusterKey,
    Count,
    Dimension,
    Score,
    PackedMask,
    AdapterHeader,
    AdapterWeights,
    /// User query text; only ever sent server → silo.
    QueryToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireField {
    pub name: &'static str,
    pub kind: FieldKind,
    /// True when the field repeats per list element.
    pub repeated: bool,
}

const fn field(name: &'static str, kind: FieldKind, repeated: bool) -> WireField {
    WireField { name, kind, repeated }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    ServerToSilo,
    SiloToServer,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            bail!(Decode, "message truncated at byte {} (need {} more)", self.pos, n);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            bail!(Decode, "{} trailing bytes", self.bytes.len() - self.pos);
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Server → every silo: the user query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBroadcast {
    pub tokens: Vec<u32>,
}

impl QueryBroadcast {
    pub const SCHEMA: &'static [WireField] =
        &[field("count", FieldKind::Count, false), field("token", FieldKind::QueryToken, true)];
    pub const DIRECTION: Direction = Direction::ServerToSilo;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.tokens.len());
        put_u32(&mut out, self.tokens.len() as u32);
        self.tokens.iter().for_each(|&t| put_u32(&mut out, t));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let n = r.u32()? as usize;
        let tokens = (0..n).map(|_| r.u32()).collect::<Result<_>>()?;
        r.finish()?;
        Ok(Self { tokens })
    }
}

/// One retrieved document as seen by the server: its id, relevance score and mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub silo_id: u32,
    pub doc_id: u32,
    pub score: f64,
    pub mask: DocMask,
}

/// Silo → server: scores and packed masks of the top-k local documents.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateUpload {
    pub silo_id: u32,
    pub mask_bits: u32,
    pub entries: Vec<(u32, f32, DocMask)>,
}

impl CandidateUpload {
    pub const SCHEMA: &'static [WireField] = &[
        field("silo_id", FieldKind::SiloId, false),
        field("mask_bits", FieldKind::Dimension, false),
        field("count", FieldKind::Count, false),
        field("doc_id", FieldKind::DocId, true),
        field("score", FieldKind::Score, true),
        field("mask", FieldKind::PackedMask, true),
    ];
    pub const DIRECTION: Direction = Direction::SiloToServer;
    pub const HEADER_LEN: usize = 12;

    pub fn entry_len(mask_bits: usize) -> usize {
        8 + packed_len(mask_bits)
    }

    pub fn encoded_len(&self) -> usize {
        Self::HEADER_LEN + self.entries.len() * Self::entry_len(self.mask_bits as usize)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.encoded_len());
        put_u32(&mut out, self.silo_id);
        put_u32(&mut out, self.mask_bits);
        put_u32(&mut out, self.entries.len() as u32);
        for (doc_id, score, mask) in &self.entries {
            if mask.len() != self.mask_bits as usize {
                bail!(Protocol, "mask of {} bits in a {}-bit upload", mask.len(), self.mask_bits);
            }
            put_u32(&mut out, *doc_id);
            out.extend_from_slice(&score.to_le_bytes());
            out.extend_from_slice(mask.as_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let silo_id = r.u32()?;
        let mask_bits = r.u32()?;
        let count = r.u32()? as usize;
        let width = packed_len(mask_bits as usize);
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let doc_id = r.u32()?;
            let score = r.f32()?;
            let mask = DocMask::from_packed(mask_bits as usize, r.take(width)?.to_vec())?;
            entries.push((doc_id, score, mask));
        }
        r.finish()?;
        Ok(Self { silo_id, mask_bits, entries })
    }

    pub fn candidates(&self) -> impl Iterator<Item = Candidate> + '_ {
        self.entries.iter().map(move |(doc_id, score, mask)| Candidate {
            silo_id: self.silo_id,
            doc_id: *doc_id,
            score: *score as f64,
            mask: mask.clone(),
        })
    }
}

/// Server → silo: documents whose cluster adapters are needed.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterRequest {
    pub entries: Vec<(u32, u32)>,
}

impl AdapterRequest {
    pub const SCHEMA: &'static [WireField] = &[
        field("count", FieldKind::Count, false),
        field("silo_id", FieldKind::SiloId, true),
        field("doc_id", FieldKind::DocId, true),
    ];
    pub const DIRECTION: Direction = Direction::ServerToSilo;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * self.entries.len());
        put_u32(&mut out, self.entries.len() as u32);
        for (silo, doc) in &self.entries {
            put_u32(&mut out, *silo);
            put_u32(&mut out, *doc);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let n = r.u32()? as usize;
        let entries = (0..n).map(|_| Ok((r.u32()?, r.u32()?))).collect::<Result<_>>()?;
        r.finish()?;
        Ok(Self { entries })
    }
}

/// Silo → server: doc → cluster bindings followed by each distinct cluster
/// adapter once.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterUpload {
    pub silo_id: u32,
    pub bindings: Vec<(u32, u32)>,
    pub adapters: Vec<(u32, AdapterPair)>,
}

impl AdapterUpload {
    pub const SCHEMA: &'static [WireField] = &[
        field("silo_id", FieldKind::SiloId, false),
        field("binding_count", FieldKind::Count, false),
        field("doc_id", FieldKind::DocId, true),
        field("cluster_key", FieldKind::ClusterKey, true),
        field("adapter_count", FieldKind::Count, false),
        field("cluster_key", FieldKind::ClusterKey, true),
        field("adapter_header", FieldKind::AdapterHeader, true),
        field("adapter_b_then_a", FieldKind::AdapterWeights, true),
    ];
    pub const DIRECTION: Direction = Direction::SiloToServer;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_u32(&mut out, self.silo_id);
        put_u32(&mut out, self.bindings.len() as u32);
        for (doc, key) in &self.bindings {
            put_u32(&mut out, *doc);
            put_u32(&mut out, *key);
        }
        put_u32(&mut out, self.adapters.len() as u32);
        for (key, adapter) in &self.adapters {
            put_u32(&mut out, *key);
            encode_adapter(adapter, &mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let silo_id = r.u32()?;
        let nb = r.u32()? as usize;
        let bindings = (0..nb).map(|_| Ok((r.u32()?, r.u32()?))).collect::<Result<_>>()?;
        let na = r.u32()? as usize;
        let mut adapters = Vec::with_capacity(na.min(1 << 12));
        for _ in 0..na {
            let key = r.u32()?;
            let (adapter, used) = decode_adapter(&r.bytes[r.pos..])?;
            r.pos += used;
            adapters.push((key, adapter));
        }
        r.finish()?;
        Ok(Self { silo_id, bindings, adapters })
    }
}
