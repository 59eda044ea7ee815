//! Bit-packed document masks.
//!
//! Bit `j` of a mask lives in byte `j / 8` at binary weight `2^(j % 8)`, so the
//! lowest index is the least significant bit. Padding bits past `d` in the
//! final byte are always zero; two masks are equal iff their bytes are equal.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DocMask {
    d: usize,
    packed: Vec<u8>,
}

#[inline]
pub const fn packed_len(d: usize) -> usize {
    d.div_ceil(8)
}

#[inline]
fn tail_mask(d: usize) -> u8 {
    match d % 8 {
        0 => 0xFF,
        rem => (1u8 << rem) - 1,
    }
}

impl DocMask {
    /// Packs a bit vector, eight bits per byte.
    pub fn pack(bits: &[bool]) -> Self {
        let mut packed = vec![0u8; packed_len(bits.len())];
        for (j, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            packed[j / 8] |= 1 << (j % 8);
        }
        Self { d: bits.len(), packed }
    }

    /// Packs a 0/1 vector; any other value is rejected.
    pub fn pack01(bits: &[u8]) -> Result<Self> {
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            bail!(Argument, "mask element {} is not 0 or 1", bad);
        }
        Ok(Self::pack(&bits.iter().map(|&b| b == 1).collect::<Vec<_>>()))
    }

    pub fn full(d: usize) -> Self {
        let mut packed = vec![0xFF; packed_len(d)];
        if let Some(last) = packed.last_mut() {
            *last = tail_mask(d);
        }
        Self { d, packed }
    }

    pub fn zeros(d: usize) -> Self {
        Self { d, packed: vec![0; packed_len(d)] }
    }

    /// Wraps already-packed bytes, validating length and zero padding.
    pub fn from_packed(d: usize, packed: Vec<u8>) -> Result<Self> {
        if packed.len() != packed_len(d) {
            bail!(CorruptMask, "{} bytes for a {}-bit mask (expected {})", packed.len(), d, packed_len(d));
        }
        if let Some(&last) = packed.last() {
            if last & !tail_mask(d) != 0 {
                bail!(CorruptMask, "padding bits set beyond bit {}", d);
            }
        }
        Ok(Self { d, packed })
    }

    pub fn unpack(&self) -> Vec<bool> {
        (0..self.d).map(|j| self.get(j)).collect()
    }

    #[inline]
    pub fn get(&self, j: usize) -> bool {
        self.packed[j / 8] >> (j % 8) & 1 == 1
    }

    pub fn set(&mut self, j: usize, on: bool) {
        assert!(j < self.d, "bit {} out of range for {}-bit mask", j, self.d);
        if on {
            self.packed[j / 8] |= 1 << (j % 8);
        } else {
            self.packed[j / 8] &= !(1 << (j % 8));
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.d == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.packed
    }

    /// ‖M‖₁.
    pub fn popcount(&self) -> usize {
        self.packed.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// ⟨m1, m2⟩ computed on the packed bytes.
    pub fn dot(&self, other: &DocMask) -> Result<usize> {
        if self.d != other.d {
            bail!(Argument, "mask lengths differ: {} vs {}", self.d, other.d);
        }
        Ok(self
            .packed
            .iter()
            .zip(&other.packed)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    /// Bits as 0.0/1.0 reals.
    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.d).map(|j| if self.get(j) { 1.0 } else { 0.0 }).collect()
    }
}

pub const MASK_MAGIC: &[u8; 4] = b"FMMK";
pub const MASK_VERSION: u16 = 1;
pub const MASK_HEADER_LEN: usize = 4 + 2 + 4 + 4;

/// Serializes masks of a common length into the `FMMK` container:
/// magic, version u16, d u32, count u32, then `count` packed masks.
pub fn encode_masks(d: usize, masks: &[DocMask]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(MASK_HEADER_LEN + masks.len() * packed_len(d));
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&MASK_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(masks.len() as u32).to_le_bytes());
    for m in masks {
        if m.len() != d {
            bail!(Argument, "mask of length {} in a {}-bit container", m.len(), d);
        }
        out.extend_from_slice(m.as_bytes());
    }
    Ok(out)
}

pub fn decode_masks(bytes: &[u8]) -> Result<(usize, Vec<DocMask>)> {
    if bytes.len() < MASK_HEADER_LEN || &bytes[..4] != MASK_MAGIC {
        return Err(Error::Decode("missing FMMK header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MASK_VERSION {
        bail!(Decode, "unsupported mask container version {}", version);
    }
    let d = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let width = packed_len(d);
    let body = &bytes[MASK_HEADER_LEN..];
    if body.len() != count * width {
        bail!(Decode, "mask container body is {} bytes, expected {}", body.len(), count * width);
    }
    let masks = (0..count)
        .map(|i| DocMask::from_packed(d, body[i * width..(i + 1) * width].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((d, masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&b| b == 1).collect()
    }

    #[test]
    fn pack_examples() {
        assert_eq!(DocMask::pack(&bits(&[1, 0, 1, 1, 0, 0, 0, 0])).as_bytes(), &[13]);
        assert_eq!(DocMask::pack(&[true; 12]).as_bytes(), &[255, 15]);
        assert_eq!(DocMask::pack(&[false; 17]).as_bytes(), &[0, 0, 0]);
        let empty = DocMask::pack(&[]);
        assert_eq!(empty.len(), 0);
        assert!(empty.as_bytes().is_empty());
    }

    #[test]
    fn unpack_examples() {
        let m = DocMask::from_packed(8, vec![13]).unwrap();
        assert_eq!(m.unpack(), bits(&[1, 0, 1, 1, 0, 0, 0, 0]));
        assert_eq!(DocMask::from_packed(3, vec![0]).unwrap().unpack(), vec![false; 3]);
    }

    #[test]
    fn corrupt_padding_rejected() {
        assert!(matches!(DocMask::from_packed(3, vec![0b1000]), Err(Error::CorruptMask(_))));
        assert!(matches!(DocMask::from_packed(9, vec![0]), Err(Error::CorruptMask(_))));
    }

    #[test]
    fn pack01_rejects_non_binary() {
        assert!(DocMask::pack01(&[0, 2]).is_err());
        assert_eq!(DocMask::pack01(&[1, 1]).unwrap().popcount(), 2);
    }

    #[test]
    fn popcount_and_dot_examples() {
        assert_eq!(DocMask::from_packed(8, vec![13]).unwrap().popcount(), 3);
        assert_eq!(DocMask::full(64).popcount(), 64);
        let a = DocMask::pack(&bits(&[1, 1, 0, 0]));
        let b = DocMask::pack(&bits(&[1, 0, 1, 0]));
        assert_eq!(a.dot(&b).unwrap(), 1);
        assert_eq!(a.dot(&DocMask::zeros(4)).unwrap(), 0);
        assert!(a.dot(&DocMask::zeros(5)).is_err());
    }

    #[test]
    fn full_mask_has_clean_padding() {
        for d in 0..20 {
            let m = DocMask::full(d);
            assert_eq!(m.popcount(), d);
            DocMask::from_packed(d, m.as_bytes().to_vec()).unwrap();
        }
    }

    #[test]
    fn container_roundtrip_and_size() {
        let masks = vec![DocMask::full(12), DocMask::zeros(12), DocMask::pack(&[true; 12])];
        let bytes = encode_masks(12, &masks).unwrap();
        assert_eq!(bytes.len(), MASK_HEADER_LEN + 3 * 2);
        assert_eq!(&bytes[..4], b"FMMK");
        assert_eq!(decode_masks(&bytes).unwrap(), (12, masks));
        assert!(decode_masks(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_and_oracles(a in proptest::collection::vec(any::<bool>(), 0..300), seed in any::<u64>()) {
            let m = DocMask::pack(&a);
            prop_assert_eq!(m.as_bytes().len(), a.len().div_ceil(8));
            prop_assert_eq!(m.unpack(), a.clone());
            prop_assert_eq!(m.popcount(), a.iter().filter(|&&b| b).count());
            let b: Vec<bool> = (0..a.len()).map(|j| crate::rng::mix64(seed ^ j as u64) & 1 == 1).collect();
            let mb = DocMask::pack(&b);
            let oracle = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
            prop_assert_eq!(m.dot(&mb).unwrap(), oracle);
            prop_assert_eq!(mb.dot(&m).unwrap(), oracle);
            prop_assert!(oracle <= m.popcount().min(mb.popcount()));
            prop_assert_eq!(m.dot(&m).unwrap(), m.popcount());
        }
    }
}
