//! Conflict-aware document selection.
//!
//! The objective for a set `S` under budget `k′` is
//! `Σ sᵢ / k′ − 2·λ_ol · Σ_{i<j} overlap(Mᵢ, Mⱼ) / (k′(k′−1))`, with the
//! pairwise term taken as zero when `k′ = 1` or `|S| = 1`. Maximizing it is
//! NP-hard; `greedy_select` is the production solver and
//! `brute_force_select` the exact oracle for small instances. The weighted
//! subgraph selection helpers encode CLIQUE into the same problem family.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::maskcodec::DocMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k_prime: usize,
    pub lambda_ol: f64,
    pub tau: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { k_prime: 3, lambda_ol: 1.0, tau: 0.0 }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_prime < 1 {
            bail!(Argument, "k' must be at least 1");
        }
        if !(self.lambda_ol >= 0.0 && self.lambda_ol.is_finite()) {
            bail!(Argument, "lambda_ol must be a finite non-negative real");
        }
        if self.tau.is_nan() {
            bail!(Argument, "tau must not be NaN");
        }
        Ok(())
    }
}

/// ⟨M₁, M₂⟩ / d.
pub fn overlap(m1: &DocMask, m2: &DocMask) -> Result<f64> {
    let shared = m1.dot(m2)?;
    if m1.is_empty() {
        return Ok(0.0);
    }
    Ok(shared as f64 / m1.len() as f64)
}

fn check_candidates(scores: &[f64], masks: &[DocMask]) -> Result<()> {
    if scores.len() != masks.len() {
        bail!(Argument, "{} scores but {} masks", scores.len(), masks.len());
    }
    if let Some(first) = masks.first() {
        if masks.iter().any(|m| m.len() != first.len()) {
            bail!(Argument, "candidate masks have different lengths");
        }
    }
    Ok(())
}

/// Selection objective of index set `set` with nominal budget `cfg.k_prime`.
pub fn objective(set: &[usize], scores: &[f64], masks: &[DocMask], cfg: &SelectionConfig) -> Result<f64> {
    check_candidates(scores, masks)?;
    if set.is_empty() {
        bail!(Argument, "objective of an empty set");
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= scores.len()) {
        bail!(Argument, "index {} out of range for {} candidates", bad, scores.len());
    }
    let k = cfg.k_prime as f64;
    let relevance: f64 = set.iter().map(|&i| scores[i]).sum::<f64>() / k;
    if cfg.k_prime == 1 || set.len() == 1 {
        return Ok(relevance);
    }
    let mut conflict = 0.0;
    for (pos, &i) in set.iter().enumerate() {
        for &j in &set[pos + 1..] {
            conflict += overlap(&masks[i], &masks[j])?;
        }
    }
    Ok(relevance - 2.0 * cfg.lambda_ol * conflict / (k * (k - 1.0)))
}

/// Greedy marginal-gain selection with score threshold.
///
/// The first pick maximizes `sᵢ`; later picks maximize
/// `sᵢ − λ_ol · mean_{j∈S} overlap(Mᵢ, Mⱼ)`. Only candidates with `sᵢ > τ`
/// are eligible; ties go to the lower index. Returns picks in order.
pub fn greedy_select(scores: &[f64], masks: &[DocMask], cfg: &SelectionConfig) -> Result<Vec<usize>> {
    check_candidates(scores, masks)?;
    cfg.validate()?;
    let n = scores.len();
    let mut taken = vec![false; n];
    // Running Σ_{j∈S} overlap(i, j) per candidate.
    let mut conflict = vec![0.0; n];
    let mut picks = Vec::with_capacity(cfg.k_prime.min(n));
    while picks.len() < cfg.k_prime {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if taken[i] || !(scores[i] > cfg.tau) {
                continue;
            }
            let gain = if picks.is_empty() {
                scores[i]
            } else {
                scores[i] - cfg.lambda_ol * conflict[i] / picks.len() as f64
            };
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let Some((pick, _)) = best else { break };
        taken[pick] = true;
        picks.push(pick);
        for i in (0..n).filter(|&i| !taken[i]) {
            conflict[i] += overlap(&masks[i], &masks[pick])?;
        }
    }
    Ok(picks)
}

/// Largest candidate count the exhaustive solver accepts.
pub const BRUTE_FORCE_MAX: usize = 20;

/// Exact maximizer over all `min(k′, eligible)`-subsets of eligible
/// candidates, enumerated in lexicographic order; the first optimum wins.
pub fn brute_force_select(scores: &[f64], masks: &[DocMask], cfg: &SelectionConfig) -> Result<Vec<usize>> {
    check_candidates(scores, masks)?;
    cfg.validate()?;
    if scores.len() > BRUTE_FORCE_MAX {
        bail!(Capacity, "{} candidates exceeds the exhaustive limit of {}", scores.len(), BRUTE_FORCE_MAX);
    }
    let eligible: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > cfg.tau).collect();
    let size = cfg.k_prime.min(eligible.len());
    if size == 0 {
        return Ok(Vec::new());
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_combination(eligible.len(), size, |pos| {
        let set: Vec<usize> = pos.iter().map(|&p| eligible[p]).collect();
        let value = objective(&set, scores, masks, cfg)?;
        if best.as_ref().is_none_or(|(_, v)| value > *v) {
            best = Some((set, value));
        }
        Ok(())
    })?;
    Ok(best.map(|(s, _)| s).unwrap_or_default())
}

/// Calls `f` on every `k`-subset of `0..n` in lexicographic order.
pub fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    if k > n {
        return Ok(());
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx)?;
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return Ok(());
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Weighted subgraph selection: maximize `Σ a_v − Σ_{u<v} b_uv` over `|S| = k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WssInstance {
    pub vertex_weights: Vec<f64>,
    /// Symmetric, zero diagonal, row-major `n × n`.
    pub edge_weights: Vec<Vec<f64>>,
    pub k: usize,
}

impl WssInstance {
    pub fn new(vertex_weights: Vec<f64>, edge_weights: Vec<Vec<f64>>, k: usize) -> Result<Self> {
        let n = vertex_weights.len();
        if edge_weights.len() != n || edge_weights.iter().any(|r| r.len() != n) {
            bail!(Shape, "edge weights must be {}x{}", n, n);
        }
        for u in 0..n {
            if edge_weights[u][u] != 0.0 {
                bail!(Argument, "edge weight diagonal must be zero");
            }
            for v in 0..u {
                if edge_weights[u][v] != edge_weights[v][u] {
                    bail!(Argument, "edge weights must be symmetric");
                }
            }
        }
        if k > n {
            bail!(Argument, "target size {} exceeds {} vertices", k, n);
        }
        Ok(Self { vertex_weights, edge_weights, k })
    }

    pub fn n(&self) -> usize {
        self.vertex_weights.len()
    }
}

/// Builds the selection instance encoding "does `adjacency` contain a
/// `q`-clique": unit vertex weights, zero on edges, `big_b` on non-edges.
pub fn clique_to_wss(adjacency: &[Vec<bool>], q: usize, big_b: f64) -> Result<WssInstance> {
    let n = adjacency.len();
    if !(big_b > q as f64) {
        bail!(Argument, "big_b = {} must exceed q = {}", big_b, q);
    }
    if q > n {
        bail!(Argument, "q = {} exceeds {} vertices", q, n);
    }
    if adjacency.iter().any(|r| r.len() != n) {
        bail!(Shape, "adjacency must be square");
    }
    let edges = (0..n)
        .map(|u| {
            (0..n)
                .map(|v| if u == v || (adjacency[u][v] && adjacency[v][u]) { 0.0 } else { big_b })
                .collect()
        })
        .collect();
    WssInstance::new(vec![1.0; n], edges, q)
}

/// W(S).
pub fn wss_value(inst: &WssInstance, set: &[usize]) -> Result<f64> {
    if set.len() != inst.k {
        bail!(Argument, "subset has {} vertices, target is {}", set.len(), inst.k);
    }
    if let Some(&bad) = set.iter().find(|&&v| v >= inst.n()) {
        bail!(Argument, "vertex {} out of range", bad);
    }
    let mut w: f64 = set.iter().map(|&v| inst.vertex_weights[v]).sum();
    for (pos, &u) in set.iter().enumerate() {
        for &v in &set[pos + 1..] {
            w -= inst.edge_weights[u][v];
        }
    }
    Ok(w)
}

/// Exhaustive `max_S W(S)` with the lexicographically first maximizer.
pub fn wss_brute_force(inst: &WssInstance) -> Result<(Vec<usize>, f64)> {
    if inst.n() > 24 {
        bail!(Capacity, "{} vertices exceeds the exhaustive limit", inst.n());
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_combination(inst.n(), inst.k, |s| {
        let value = wss_value(inst, s)?;
        if best.as_ref().is_none_or(|(_, v)| value > *v) {
            best = Some((s.to_vec(), value));
        }
        Ok(())
    })?;
    Ok(best.unwrap_or((Vec::new(), 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn m(bits: &[u8]) -> DocMask {
        DocMask::pack01(bits).unwrap()
    }

    fn random_instance(seed: u64, n: usize, d: usize) -> (Vec<f64>, Vec<DocMask>) {
        let mut g = rng::stream(seed, 99);
        let scores = (0..n).map(|_| rng::uniform(&mut g, 0.0, 1.0)).collect();
        let masks = (0..n)
            .map(|_| DocMask::pack(&(0..d).map(|_| rng::uniform(&mut g, 0.0, 1.0) < 0.4).collect::<Vec<_>>()))
            .collect();
        (scores, masks)
    }

    // Straight transcription kept separate from `objective`.
    fn objective_oracle(set: &[usize], scores: &[f64], masks: &[DocMask], kp: usize, lambda: f64) -> f64 {
        let d = masks[0].len() as f64;
        let bits: Vec<Vec<bool>> = masks.iter().map(DocMask::unpack).collect();
        let rel: f64 = set.iter().map(|&i| scores[i] / kp as f64).sum();
        if kp == 1 || set.len() == 1 {
            return rel;
        }
        let mut pair = 0.0;
        for a in 0..set.len() {
            for b in 0..set.len() {
                if a < b {
                    let shared = bits[set[a]].iter().zip(&bits[set[b]]).filter(|(x, y)| **x && **y).count();
                    pair += shared as f64 / d;
                }
            }
        }
        rel - 2.0 * lambda * pair / (kp as f64 * (kp as f64 - 1.0))
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap(&m(&[1, 1, 0, 0]), &m(&[1, 0, 1, 0])).unwrap(), 0.25);
        assert_eq!(overlap(&m(&[1, 1, 0, 0]), &m(&[0, 0, 1, 1])).unwrap(), 0.0);
        let x = m(&[1, 0, 1, 1, 0]);
        assert_eq!(overlap(&x, &x).unwrap(), 3.0 / 5.0);
        assert!(overlap(&x, &m(&[1, 0])).is_err());
    }

    #[test]
    fn objective_examples() {
        let masks = vec![m(&[1, 1, 0, 0]), m(&[0, 0, 1, 1])];
        let cfg1 = SelectionConfig { k_prime: 1, lambda_ol: 1.0, tau: 0.0 };
        assert_eq!(objective(&[1], &[0.8, 0.6], &masks, &cfg1).unwrap(), 0.6);
        let cfg2 = SelectionConfig { k_prime: 2, lambda_ol: 1.0, tau: 0.0 };
        assert!((objective(&[0, 1], &[0.8, 0.6], &masks, &cfg2).unwrap() - 0.7).abs() < 1e-15);
        assert!(objective(&[], &[0.8, 0.6], &masks, &cfg2).is_err());

        for seed in 0..20 {
            let (s, ms) = random_instance(seed, 10, 24);
            let cfg = SelectionConfig { k_prime: 4, lambda_ol: 1.5, tau: 0.0 };
            let set = [0, 3, 5, 9];
            let got = objective(&set, &s, &ms, &cfg).unwrap();
            assert!((got - objective_oracle(&set, &s, &ms, 4, 1.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_examples() {
        let (s, ms) = random_instance(4, 10, 16);
        let cfg = SelectionConfig { k_prime: 3, lambda_ol: 0.0, tau: 0.0 };
        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|a, b| s[*b].partial_cmp(&s[*a]).unwrap().then(a.cmp(b)));
        assert_eq!(greedy_select(&s, &ms, &cfg).unwrap(), order[..3].to_vec());

        let high_tau = SelectionConfig { tau: 1.0, ..cfg };
        assert!(greedy_select(&s, &ms, &high_tau).unwrap().is_empty());

        // Ties go to the lower index.
        let tied = greedy_select(&[0.5, 0.5, 0.5], &[m(&[1]), m(&[1]), m(&[1])], &SelectionConfig { k_prime: 2, lambda_ol: 0.0, tau: 0.0 }).unwrap();
        assert_eq!(tied, vec![0, 1]);
    }

    #[test]
    fn greedy_avoids_conflicting_duplicate() {
        let masks = vec![m(&[1, 1, 0, 0]), m(&[1, 1, 0, 0]), m(&[0, 0, 1, 1])];
        let cfg = SelectionConfig { k_prime: 2, lambda_ol: 2.0, tau: 0.0 };
        assert_eq!(greedy_select(&[0.9, 0.85, 0.6], &masks, &cfg).unwrap(), vec![0, 2]);
    }

    #[test]
    fn brute_force_examples() {
        let (s, ms) = random_instance(8, 6, 16);
        let all = SelectionConfig { k_prime: 6, lambda_ol: 1.0, tau: -1.0 };
        assert_eq!(brute_force_select(&s, &ms, &all).unwrap(), vec![0, 1, 2, 3, 4, 5]);
        let one = SelectionConfig { k_prime: 1, lambda_ol: 1.0, tau: 0.0 };
        let best = (0..6).max_by(|a, b| s[*a].partial_cmp(&s[*b]).unwrap().then(b.cmp(a))).unwrap();
        assert_eq!(brute_force_select(&s, &ms, &one).unwrap(), vec![best]);
        let (big_s, big_m) = random_instance(1, 21, 8);
        assert!(brute_force_select(&big_s, &big_m, &one).is_err());
    }

    // A second enumerator over bitmasks, independent of `for_each_combination`.
    #[test]
    fn brute_force_agrees_with_bitmask_enumerator() {
        for seed in 0..40 {
            let n = 4 + (seed as usize % 8);
            let (s, ms) = random_instance(seed, n, 20);
            let cfg = SelectionConfig { k_prime: 1 + seed as usize % 4, lambda_ol: 1.0, tau: 0.2 };
            let eligible: Vec<usize> = (0..n).filter(|&i| s[i] > cfg.tau).collect();
            let size = cfg.k_prime.min(eligible.len());
            let mut best = f64::NEG_INFINITY;
            for bits in 0u32..(1 << n) {
                let set: Vec<usize> = (0..n).filter(|i| bits >> i & 1 == 1).collect();
                if set.len() != size || size == 0 || set.iter().any(|i| !eligible.contains(i)) {
                    continue;
                }
                best = best.max(objective_oracle(&set, &s, &ms, cfg.k_prime, cfg.lambda_ol));
            }
            let got = brute_force_select(&s, &ms, &cfg).unwrap();
            if size == 0 {
                assert!(got.is_empty());
            } else {
                assert!((objective(&got, &s, &ms, &cfg).unwrap() - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn combinations_are_lexicographic() {
        let mut seen = Vec::new();
        for_each_combination(4, 2, |c| {
            seen.push(c.to_vec());
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }

    #[test]
    fn reduction_examples() {
        let k3 = vec![vec![false, true, true], vec![true, false, true], vec![true, true, false]];
        let inst = clique_to_wss(&k3, 3, 4.0).unwrap();
        assert_eq!(wss_brute_force(&inst).unwrap().1, 3.0);

        let path = vec![vec![false, true, false], vec![true, false, true], vec![false, true, false]];
        let inst = clique_to_wss(&path, 3, 4.0).unwrap();
        assert_eq!(inst.vertex_weights, vec![1.0; 3]);
        assert_eq!(inst.edge_weights[0][2], 4.0);
        assert_eq!(inst.edge_weights[0][1], 0.0);
        assert_eq!(wss_brute_force(&inst).unwrap().1, 3.0 - 4.0);
        assert!(clique_to_wss(&path, 3, 3.0).is_err());
        assert!(clique_to_wss(&path, 4, 9.0).is_err());
    }

    #[test]
    fn wss_value_examples() {
        let inst = WssInstance::new(vec![1.0; 4], vec![vec![0.0; 4]; 4], 3).unwrap();
        assert_eq!(wss_value(&inst, &[0, 1, 3]).unwrap(), 3.0);
        assert!(wss_value(&inst, &[0, 1]).is_err());
        let mut asym = vec![vec![0.0; 3]; 3];
        asym[0][1] = 1.0;
        assert!(WssInstance::new(vec![1.0; 3], asym, 2).is_err());
    }
}
