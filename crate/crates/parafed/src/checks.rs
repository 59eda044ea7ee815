//! Verification sweeps behind the `selection-check`, `reduction-check` and
//! `gradcheck` subcommands.

use std::collections::BTreeMap;

use parafed_core::lowrank::AdapterPair;
use parafed_core::rng;
use parafed_core::selection::{brute_force_select, clique_to_wss, greedy_select, objective, wss_brute_force, wss_value, SelectionConfig};
use parafed_core::toylm::{augment, grad_mask_logits, mask_loss, Document, MaskTrainConfig, ModelConfig, ToyLM, Triple};
use parafed_core::{DocMask, Matrix};
use serde::Serialize;

use crate::Result;

pub const SELECTION_LAMBDAS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub instance: usize,
    pub lambda_ol: f64,
    pub n: usize,
    pub k_prime: usize,
    pub tau: f64,
    pub greedy_objective: Option<f64>,
    pub optimum: Option<f64>,
    pub same_set: bool,
    pub threshold_ok: bool,
}

impl SelectionRow {
    /// Greedy over optimum, defined when the optimum is positive.
    pub fn ratio(&self) -> Option<f64> {
        match (self.greedy_objective, self.optimum) {
            (Some(g), Some(o)) if o > 0.0 => Some(g / o),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionCheck {
    pub rows: Vec<SelectionRow>,
    /// Mean greedy/optimum ratio per λ_ol, keyed by its decimal form.
    pub mean_ratio: BTreeMap<String, f64>,
    pub lambda0_mismatches: usize,
    pub threshold_violations: usize,
}

impl SelectionCheck {
    pub fn ok(&self) -> bool {
        self.lambda0_mismatches == 0 && self.threshold_violations == 0
    }
}

fn random_mask(g: &mut rng::DetRng, d: usize, density: f64) -> DocMask {
    let bits: Vec<bool> = (0..d).map(|_| rng::uniform(g, 0.0, 1.0) < density).collect();
    DocMask::pack(&bits)
}

/// Runs `instances` random selection problems for every λ_ol in
/// [`SELECTION_LAMBDAS`] and compares greedy against the exhaustive solver.
pub fn selection_check(instances: usize, seed: u64) -> Result<SelectionCheck> {
    const D: usize = 32;
    let mut rows = Vec::new();
    for &lambda_ol in &SELECTION_LAMBDAS {
        for i in 0..instances {
            let mut g = rng::stream(seed, i as u64);
            let n = 2 + rng::index(&mut g, 11);
            let k_prime = 1 + rng::index(&mut g, 4);
            let tau = rng::uniform(&mut g, 0.0, 0.3);
            let density = rng::uniform(&mut g, 0.2, 0.6);
            let scores: Vec<f64> = (0..n).map(|_| rng::uniform(&mut g, 0.0, 1.0)).collect();
            let masks: Vec<DocMask> = (0..n).map(|_| random_mask(&mut g, D, density)).collect();
            let cfg = SelectionConfig { k_prime, lambda_ol, tau };
            let mut greedy = greedy_select(&scores, &masks, &cfg)?;
            let mut best = brute_force_select(&scores, &masks, &cfg)?;
            greedy.sort_unstable();
            best.sort_unstable();
            let value = |s: &[usize]| if s.is_empty() { Ok(None) } else { objective(s, &scores, &masks, &cfg).map(Some) };
            rows.push(SelectionRow {
                instance: i,
                lambda_ol,
                n,
                k_prime,
                tau,
                greedy_objective: value(&greedy)?,
                optimum: value(&best)?,
                same_set: greedy == best,
                threshold_ok: greedy.iter().all(|&j| scores[j] > tau) && greedy.len() <= k_prime,
            });
        }
    }
    let mut mean_ratio = BTreeMap::new();
    for &l in &SELECTION_LAMBDAS {
        let ratios: Vec<f64> = rows.iter().filter(|r| r.lambda_ol == l).filter_map(SelectionRow::ratio).collect();
        if !ratios.is_empty() {
            mean_ratio.insert(format!("{l}"), ratios.iter().sum::<f64>() / ratios.len() as f64);
        }
    }
    let lambda0_mismatches = rows.iter().filter(|r| r.lambda_ol == 0.0 && !r.same_set).count();
    let threshold_violations = rows.iter().filter(|r| !r.threshold_ok).count();
    Ok(SelectionCheck { rows, mean_ratio, lambda0_mismatches, threshold_violations })
}

/// Size of the largest clique, by Bron–Kerbosch with pivoting over bitsets.
pub fn max_clique(adjacency: &[Vec<bool>]) -> usize {
    let n = adjacency.len();
    assert!(n <= 64, "bitset clique search supports at most 64 vertices");
    let nbr: Vec<u64> = (0..n)
        .map(|u| (0..n).filter(|&v| v != u && adjacency[u][v]).fold(0u64, |m, v| m | 1 << v))
        .collect();
    fn expand(nbr: &[u64], size: usize, mut p: u64, mut x: u64, best: &mut usize) {
        if p == 0 && x == 0 {
            *best = (*best).max(size);
            return;
        }
        if size + p.count_ones() as usize <= *best {
            return;
        }
        let pivot = (p | x).trailing_zeros() as usize;
        let mut cand = p & !nbr[pivot];
        while cand != 0 {
            let v = cand.trailing_zeros() as usize;
            cand &= cand - 1;
            expand(nbr, size + 1, p & nbr[v], x & nbr[v], best);
            p &= !(1 << v);
            x |= 1 << v;
        }
    }
    let mut best = 0;
    let all = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    expand(&nbr, 0, all, 0, &mut best);
    best
}

fn graph_from_bits(n: usize, bits: u64) -> Vec<Vec<bool>> {
    let mut adj = vec![vec![false; n]; n];
    let mut e = 0;
    for u in 0..n {
        for v in u + 1..n {
            let on = bits >> e & 1 == 1;
            adj[u][v] = on;
            adj[v][u] = on;
            e += 1;
        }
    }
    adj
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReductionCheck {
    pub vertices: usize,
    pub graphs: usize,
    pub instances: usize,
    pub mismatches: usize,
}

/// For every graph and every `q ≤ n`, checks that the reduced instance
/// reaches `q` exactly when a `q`-clique exists, and that its optimum
/// equals `q − B·(missing edges)`. With `sample = None` all
/// `2^C(n,2)` graphs are enumerated; otherwise `sample` random graphs.
pub fn reduction_check(vertices: usize, sample: Option<usize>, seed: u64) -> Result<ReductionCheck> {
    let edges = vertices * vertices.saturating_sub(1) / 2;
    let graphs: Vec<u64> = match sample {
        None => {
            assert!(edges < 32, "exhaustive enumeration is limited to 7 vertices");
            (0..1u64 << edges).collect()
        }
        Some(s) => {
            let mut g = rng::stream(seed, 0x6_4A9);
            (0..s).map(|_| (0..edges).fold(0u64, |m, e| m | ((rng::index(&mut g, 2) as u64) << e))).collect()
        }
    };
    let mut out = ReductionCheck { vertices, graphs: graphs.len(), instances: 0, mismatches: 0 };
    for bits in graphs {
        let adj = graph_from_bits(vertices, bits);
        let omega = max_clique(&adj);
        for q in 1..=vertices {
            let big_b = q as f64 + 1.0;
            let inst = clique_to_wss(&adj, q, big_b)?;
            let (set, best) = wss_brute_force(&inst)?;
            let missing = set.iter().enumerate().flat_map(|(i, &u)| set[i + 1..].iter().map(move |&v| (u, v))).filter(|&(u, v)| !adj[u][v]).count();
            let identity = wss_value(&inst, &set)? == q as f64 - big_b * missing as f64 && best == wss_value(&inst, &set)?;
            out.instances += 1;
            if (best == q as f64) != (omega >= q) || !identity {
                out.mismatches += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradRow {
    pub fixture: usize,
    pub d: usize,
    pub alpha: f64,
    pub lambda_l1: f64,
    pub relative_error: f64,
}

/// Relative error `‖analytic − numeric‖ / ‖numeric‖` of the mask-logit
/// gradient against central differences with step `h`.
pub fn gradcheck(fixtures: usize, h: f64, seed: u64) -> Result<Vec<GradRow>> {
    let mut rows = Vec::with_capacity(fixtures);
    for f in 0..fixtures {
        let mut g = rng::stream(seed, 0x96AD + f as u64);
        let d = 6 + rng::index(&mut g, 11);
        let r = 1 + rng::index(&mut g, 3);
        let model = ToyLM::new(ModelConfig::new(48, d, seed ^ f as u64))?;
        let a = Matrix::from_fn(r, d, |_, _| rng::uniform(&mut g, -0.5, 0.5));
        let b = Matrix::from_fn(d, r, |_, _| rng::uniform(&mut g, -0.5, 0.5));
        let adapter = AdapterPair::new(a, b)?;
        let tok = |g: &mut rng::DetRng| 16 + rng::index(g, 32) as u32;
        let triple = Triple(vec![tok(&mut g), tok(&mut g)], vec![tok(&mut g)], vec![tok(&mut g)]);
        let doc = Document { doc_id: f as u32, topic: 0, tokens: [triple.0.clone(), triple.1.clone(), triple.2.clone()].concat(), triples: vec![triple] };
        let aug = augment(&doc, 2, 1, seed)?;
        let cfg = MaskTrainConfig {
            alpha: rng::uniform(&mut g, 0.5, 4.0),
            lambda_l1: [0.0, 0.01, 0.1][f % 3],
            ..Default::default()
        };
        let logits: Vec<f64> = (0..d).map(|_| rng::uniform(&mut g, -1.0, 1.0)).collect();
        let analytic = grad_mask_logits(&model, &adapter, &aug, &logits, &cfg)?;
        let total = |l: &[f64]| -> Result<f64> {
            let (next, l1) = mask_loss(&model, &adapter, &aug, l, &cfg)?;
            Ok(next + cfg.lambda_l1 * l1)
        };
        let mut err = 0.0;
        let mut scale = 0.0;
        for j in 0..d {
            let mut up = logits.clone();
            let mut down = logits.clone();
            up[j] += h;
            down[j] -= h;
            let numeric = (total(&up)? - total(&down)?) / (2.0 * h);
            err += (analytic[j] - numeric).powi(2);
            scale += numeric * numeric;
        }
        rows.push(GradRow { fixture: f, d, alpha: cfg.alpha, lambda_l1: cfg.lambda_l1, relative_error: (err / scale).sqrt() });
    }
    Ok(rows)
}
