//! Low-rank adapter algebra: ΔW = B·A, row-masked updates and weighted merges.
//!
//! `B` is `d × r` and `A` is `r × d`. A document mask gates rows of `B`; the
//! optional rescale multiplies the masked update by `d / popcount(mask)`.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::linalg::Matrix;
use crate::maskcodec::DocMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterPair {
    a: Matrix,
    b: Matrix,
}

impl AdapterPair {
    /// Builds an adapter from `a` (`r × d`) and `b` (`d × r`), checking shapes.
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        let (r, d) = a.shape();
        if r == 0 || d == 0 {
            bail!(Shape, "adapter needs r >= 1 and d >= 1, got r={} d={}", r, d);
        }
        if r > d {
            bail!(Shape, "rank {} exceeds width {}", r, d);
        }
        if b.shape() != (d, r) {
            bail!(Shape, "B is {:?}, expected ({}, {})", b.shape(), d, r);
        }
        if !a.is_finite() || !b.is_finite() {
            bail!(Argument, "adapter contains non-finite entries");
        }
        Ok(Self { a, b })
    }

    pub fn zeros(d: usize, r: usize) -> Result<Self> {
        Self::new(Matrix::zeros(r, d), Matrix::zeros(d, r))
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.a.cols()
    }

    #[inline]
    pub fn r(&self) -> usize {
        self.a.rows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.a, &mut self.b)
    }

    /// Number of real parameters, `2·d·r`.
    pub fn num_params(&self) -> usize {
        2 * self.d() * self.r()
    }
}

/// ΔW = B·A.
pub fn delta_weight(adapter: &AdapterPair) -> Result<Matrix> {
    adapter.b.matmul(&adapter.a)
}

/// Rescale factor `d / ‖M‖₁`.
pub fn rescale_factor(mask: &DocMask) -> Result<f64> {
    match mask.popcount() {
        0 => Err(Error::UndefinedRescale),
        p => Ok(mask.len() as f64 / p as f64),
    }
}

/// (M∘B)·A, optionally scaled by `d / ‖M‖₁`.
pub fn masked_delta(adapter: &AdapterPair, mask: &DocMask, rescale: bool) -> Result<Matrix> {
    if mask.len() != adapter.d() {
        bail!(Shape, "mask length {} does not match adapter width {}", mask.len(), adapter.d());
    }
    let lambda = rescale_factor(mask)?;
    let scale = if rescale { lambda } else { 1.0 };
    let d = adapter.d();
    let mut out = Matrix::zeros(d, d);
    accumulate_masked(&mut out, adapter, mask, scale);
    Ok(out)
}

/// `out += scale · (M∘B)·A`, skipping masked rows entirely.
fn accumulate_masked(out: &mut Matrix, adapter: &AdapterPair, mask: &DocMask, scale: f64) {
    let r = adapter.r();
    for i in (0..adapter.d()).filter(|&i| mask.get(i)) {
        let b_row = adapter.b.row(i);
        let out_row = out.row_mut(i);
        for k in 0..r {
            let coef = scale * b_row[k];
            if coef == 0.0 {
                continue;
            }
            for (o, &a) in out_row.iter_mut().zip(adapter.a.row(k)) {
                *o += coef * a;
            }
        }
    }
}

/// Turns positive relevance scores into weights summing to one.
pub fn normalize_weights(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        bail!(Argument, "cannot normalize an empty score list");
    }
    if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        bail!(Argument, "score {} is not a positive finite real", bad);
    }
    let total: f64 = scores.iter().sum();
    Ok(scores.iter().map(|s| s / total).collect())
}

/// One term of a merge: a weight, a document mask and the cluster adapter it gates.
#[derive(Debug, Clone, Copy)]
pub struct MergeEntry<'a> {
    pub weight: f64,
    pub mask: &'a DocMask,
    pub adapter: &'a AdapterPair,
}

/// Tolerance on the sum of merge weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// ΔW_merge = Σᵢ wᵢ·(Mᵢ∘Bᵢ)·Aᵢ, summed in entry order.
pub fn merge(entries: &[MergeEntry<'_>], rescale: bool) -> Result<Matrix> {
    let Some(first) = entries.first() else {
        bail!(Argument, "merge needs at least one entry");
    };
    let d = first.adapter.d();
    let mut total = 0.0;
    for e in entries {
        if e.adapter.d() != d {
            bail!(Shape, "mixed adapter widths {} and {} in merge", d, e.adapter.d());
        }
        if e.mask.len() != d {
            bail!(Shape, "mask length {} does not match adapter width {}", e.mask.len(), d);
        }
        if !(0.0..=1.0).contains(&e.weight) {
            bail!(Argument, "merge weight {} outside [0, 1]", e.weight);
        }
        total += e.weight;
    }
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        bail!(Argument, "merge weights sum to {}, not 1", total);
    }
    merge_unnormalized(entries, rescale)
}

/// Weighted sum without the convex-combination check; used by the baseline
/// that sums adapters with arbitrary coefficients.
pub fn merge_unnormalized(entries: &[MergeEntry<'_>], rescale: bool) -> Result<Matrix> {
    let Some(first) = entries.first() else {
        bail!(Argument, "merge needs at least one entry");
    };
    let d = first.adapter.d();
    let mut out = Matrix::zeros(d, d);
    for e in entries {
        if e.adapter.d() != d || e.mask.len() != d {
            bail!(Shape, "mixed widths in merge (expected {})", d);
        }
        let lambda = rescale_factor(e.mask)?;
        let scale = if rescale { e.weight * lambda } else { e.weight };
        accumulate_masked(&mut out, e.adapter, e.mask, scale);
    }
    Ok(out)
}

pub const ADAPTER_MAGIC: &[u8; 4] = b"FMAD";
pub const ADAPTER_VERSION: u16 = 1;
pub const ADAPTER_HEADER_LEN: usize = 4 + 2 + 4 + 4;

/// Encoded size of an adapter in the `FMAD` format.
pub const fn adapter_wire_len(d: usize, r: usize) -> usize {
    ADAPTER_HEADER_LEN + 2 * d * r * 4
}

/// `FMAD` encoding: magic, version u16, d u32, r u32, then B and A row-major
/// as little-endian f32.
pub fn encode_adapter(adapter: &AdapterPair, out: &mut Vec<u8>) {
    out.extend_from_slice(ADAPTER_MAGIC);
    out.extend_from_slice(&ADAPTER_VERSION.to_le_bytes());
    out.extend_from_slice(&(adapter.d() as u32).to_le_bytes());
    out.extend_from_slice(&(adapter.r() as u32).to_le_bytes());
    for v in adapter.b.as_slice().iter().chain(adapter.a.as_slice()) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

/// Decodes one `FMAD` adapter from the front of `bytes`, returning it and the
/// number of bytes consumed.
pub fn decode_adapter(bytes: &[u8]) -> Result<(AdapterPair, usize)> {
    if bytes.len() < ADAPTER_HEADER_LEN || &bytes[..4] != ADAPTER_MAGIC {
        return Err(Error::Decode("missing FMAD header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != ADAPTER_VERSION {
        bail!(Decode, "unsupported adapter version {}", version);
    }
    let d = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let r = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let len = adapter_wire_len(d, r);
    if bytes.len() < len {
        bail!(Decode, "adapter body truncated: {} of {} bytes", bytes.len(), len);
    }
    let mut vals = bytes[ADAPTER_HEADER_LEN..len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let b = Matrix::from_vec(d, r, vals.by_ref().take(d * r).collect())?;
    let a = Matrix::from_vec(r, d, vals.collect())?;
    let adapter = AdapterPair::new(a, b).map_err(|e| Error::Decode(alloc::format!("{e}")))?;
    Ok((adapter, len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;

    fn tiny() -> AdapterPair {
        let b = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let a = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        AdapterPair::new(a, b).unwrap()
    }

    fn random_adapter(d: usize, r: usize, seed: u64) -> AdapterPair {
        let mut g = rng::stream(seed, 7);
        let a = Matrix::from_fn(r, d, |_, _| rng::normal(&mut g));
        let b = Matrix::from_fn(d, r, |_, _| rng::normal(&mut g));
        AdapterPair::new(a, b).unwrap()
    }

    fn random_mask(d: usize, seed: u64) -> DocMask {
        let mut bits: Vec<bool> = (0..d).map(|j| rng::mix64(seed ^ (j as u64) << 8) % 3 != 0).collect();
        bits[(seed as usize) % d] = true;
        DocMask::pack(&bits)
    }

    // Independent triple-loop reference.
    fn naive_matmul(x: &Matrix, y: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), y.cols(), |i, j| (0..x.cols()).map(|k| x.get(i, k) * y.get(k, j)).sum())
    }

    fn dense_masked(adapter: &AdapterPair, mask: &DocMask, rescale: bool) -> Matrix {
        let full = naive_matmul(adapter.b(), adapter.a());
        let lambda = adapter.d() as f64 / mask.popcount() as f64;
        Matrix::from_fn(full.rows(), full.cols(), |i, j| {
            if !mask.get(i) {
                0.0
            } else if rescale {
                lambda * full.get(i, j)
            } else {
                full.get(i, j)
            }
        })
    }

    fn max_rel(x: &Matrix, y: &Matrix) -> f64 {
        let mut diff = x.clone();
        diff.add_scaled(y, -1.0).unwrap();
        diff.frobenius_norm() / y.frobenius_norm().max(1e-300)
    }

    #[test]
    fn delta_weight_examples() {
        assert_eq!(delta_weight(&tiny()).unwrap().as_slice(), &[3.0, 4.0, 6.0, 8.0]);
        let zero_b = AdapterPair::new(tiny().a().clone(), Matrix::zeros(2, 1)).unwrap();
        assert_eq!(delta_weight(&zero_b).unwrap().max_abs(), 0.0);
        let ad = random_adapter(16, 3, 11);
        assert!(max_rel(&delta_weight(&ad).unwrap(), &naive_matmul(ad.b(), ad.a())) < 1e-14);
    }

    #[test]
    fn adapter_shape_errors() {
        assert!(AdapterPair::new(Matrix::zeros(1, 2), Matrix::zeros(3, 1)).is_err());
        assert!(AdapterPair::new(Matrix::zeros(3, 2), Matrix::zeros(2, 3)).is_err());
        assert!(AdapterPair::new(Matrix::zeros(0, 2), Matrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn masked_delta_examples() {
        let ad = tiny();
        let full = masked_delta(&ad, &DocMask::full(2), true).unwrap();
        assert_eq!(full, delta_weight(&ad).unwrap());
        let half = masked_delta(&ad, &DocMask::pack(&[true, false]), true).unwrap();
        assert_eq!(half.as_slice(), &[6.0, 8.0, 0.0, 0.0]);
        assert_eq!(masked_delta(&ad, &DocMask::zeros(2), true), Err(Error::UndefinedRescale));
        assert!(masked_delta(&ad, &DocMask::full(3), false).is_err());

        for seed in 0..10 {
            let ad = random_adapter(16, 3, seed);
            let m = random_mask(16, seed);
            for rescale in [false, true] {
                let got = masked_delta(&ad, &m, rescale).unwrap();
                assert!(max_rel(&got, &dense_masked(&ad, &m, rescale)) < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_weights(&[0.5]).unwrap(), vec![1.0]);
        assert_eq!(normalize_weights(&[1.0, 1.0, 2.0]).unwrap(), vec![0.25, 0.25, 0.5]);
        assert!(normalize_weights(&[]).is_err());
        assert!(normalize_weights(&[1.0, 0.0]).is_err());
        assert!(normalize_weights(&[1.0, f64::NAN]).is_err());
        let mut g = rng::stream(3, 3);
        let scores: Vec<f64> = (0..50).map(|_| rng::uniform(&mut g, 1e-3, 1.0)).collect();
        let w = normalize_weights(&scores).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let scaled: Vec<f64> = scores.iter().map(|s| s * 7.5).collect();
        for (x, y) in w.iter().zip(normalize_weights(&scaled).unwrap()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_examples() {
        let ad = random_adapter(16, 3, 5);
        let full = DocMask::full(16);
        let single = merge(&[MergeEntry { weight: 1.0, mask: &full, adapter: &ad }], false).unwrap();
        assert!(max_rel(&single, &delta_weight(&ad).unwrap()) < 1e-14);

        let m = random_mask(16, 9);
        let one = merge(&[MergeEntry { weight: 1.0, mask: &m, adapter: &ad }], true).unwrap();
        let two = merge(
            &[MergeEntry { weight: 0.5, mask: &m, adapter: &ad }, MergeEntry { weight: 0.5, mask: &m, adapter: &ad }],
            true,
        )
        .unwrap();
        assert!(max_rel(&two, &one) < 1e-14);

        let other = random_adapter(8, 2, 1);
        let err = merge(
            &[MergeEntry { weight: 0.5, mask: &full, adapter: &ad }, MergeEntry { weight: 0.5, mask: &DocMask::full(8), adapter: &other }],
            false,
        );
        assert!(matches!(err, Err(Error::Shape(_))));
        assert!(merge(&[MergeEntry { weight: 0.4, mask: &full, adapter: &ad }], false).is_err());
        assert!(merge(&[], false).is_err());
    }

    #[test]
    fn merge_row_support_and_rescale_neutrality() {
        let ads: Vec<AdapterPair> = (0..3).map(|s| random_adapter(16, 4, 40 + s)).collect();
        let mut bits = vec![true; 16];
        bits[3] = false;
        bits[10] = false;
        let m = DocMask::pack(&bits);
        let entries: Vec<MergeEntry> = ads.iter().map(|a| MergeEntry { weight: 1.0 / 3.0, mask: &m, adapter: a }).collect();
        let out = merge(&entries, true).unwrap();
        assert!(out.row(3).iter().chain(out.row(10)).all(|&v| v == 0.0));

        let full = DocMask::full(16);
        let entries: Vec<MergeEntry> = ads.iter().map(|a| MergeEntry { weight: 1.0 / 3.0, mask: &full, adapter: a }).collect();
        assert_eq!(merge(&entries, true).unwrap(), merge(&entries, false).unwrap());
    }

    #[test]
    fn adapter_wire_roundtrip_is_f32_exact() {
        let ad = random_adapter(8, 2, 3);
        let mut bytes = Vec::new();
        encode_adapter(&ad, &mut bytes);
        assert_eq!(bytes.len(), adapter_wire_len(8, 2));
        assert_eq!(&bytes[..4], b"FMAD");
        let (back, used) = decode_adapter(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        for (x, y) in back.a().as_slice().iter().zip(ad.a().as_slice()) {
            assert_eq!(*x, *y as f32 as f64);
        }
        assert!(decode_adapter(&bytes[..20]).is_err());
    }
}
