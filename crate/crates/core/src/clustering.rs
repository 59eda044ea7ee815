//! Balanced document clustering with a hard cap on cluster size.
//!
//! `t = ⌈N / cap⌉` clusters. Each assignment step offers `cap` slots per
//! centroid and fills them greedily in order of increasing squared distance,
//! then polishes with single moves and pairwise swaps. A new assignment is
//! only adopted when it does not raise the cost under the current centroids,
//! which keeps the within-cluster sum of squares non-increasing.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    assignment: BTreeMap<u32, usize>,
    num_clusters: usize,
    cap: usize,
    /// Within-cluster SSE after each (assign, recenter) round.
    sse_history: Vec<f64>,
}

impl ClusterAssignment {
    /// Builds an assignment from explicit labels, validating the partition.
    pub fn from_labels(doc_ids: &[u32], labels: &[usize], num_clusters: usize, cap: usize) -> Result<Self> {
        if doc_ids.len() != labels.len() {
            bail!(Argument, "{} ids but {} labels", doc_ids.len(), labels.len());
        }
        let mut sizes = vec![0usize; num_clusters];
        let mut assignment = BTreeMap::new();
        for (&id, &c) in doc_ids.iter().zip(labels) {
            if c >= num_clusters {
                bail!(Argument, "cluster {} out of range", c);
            }
            if assignment.insert(id, c).is_some() {
                bail!(Argument, "duplicate doc id {}", id);
            }
            sizes[c] += 1;
        }
        if sizes.iter().any(|&s| s == 0 || s > cap) {
            bail!(Argument, "cluster sizes {:?} violate [1, {}]", sizes, cap);
        }
        Ok(Self { assignment, num_clusters, cap, sse_history: Vec::new() })
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn cluster_of(&self, doc_id: u32) -> Option<usize> {
        self.assignment.get(&doc_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, usize)> + '_ {
        self.assignment.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn sse_history(&self) -> &[f64] {
        &self.sse_history
    }

    /// Members of `cluster` in ascending doc id order.
    pub fn cluster_members(&self, cluster: usize) -> Result<Vec<u32>> {
        if cluster >= self.num_clusters {
            bail!(Argument, "cluster {} out of range 0..{}", cluster, self.num_clusters);
        }
        Ok(self.assignment.iter().filter(|(_, &c)| c == cluster).map(|(&id, _)| id).collect())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn cost(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(labels).map(|(p, &c)| sq_dist(p, &centroids[c])).sum()
}

fn recenter(points: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let mut counts = vec![0usize; centroids.len()];
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    for (p, &c) in points.iter().zip(labels) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p) {
            *s += x;
        }
    }
    for ((centroid, sum), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *centroid = sum.into_iter().map(|s| s / n as f64).collect();
        }
    }
}

/// Seeded first centroid, then repeatedly the point farthest from all chosen.
fn farthest_point_seeds(points: &[Vec<f64>], t: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut g = rng::stream(seed, 0xC1);
    let first = rng::index(&mut g, points.len());
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while chosen.len() < t {
        let mut best = None;
        for (i, &dist) in nearest.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|(_, bd)| dist > bd) {
                best = Some((i, dist));
            }
        }
        let (next, _) = best.expect("t <= N guarantees an unchosen point");
        chosen.push(next);
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Fills `cap` slots per centroid in order of (distance, doc, cluster).
fn greedy_assign(points: &[Vec<f64>], centroids: &[Vec<f64>], cap: usize) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(points.len() * centroids.len());
    for (i, p) in points.iter().enumerate() {
        for (c, centroid) in centroids.iter().enumerate() {
            pairs.push((sq_dist(p, centroid), i, c));
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut labels = vec![usize::MAX; points.len()];
    let mut load = vec![0usize; centroids.len()];
    let mut left = points.len();
    for (_, i, c) in pairs {
        if left == 0 {
            break;
        }
        if labels[i] == usize::MAX && load[c] < cap {
            labels[i] = c;
            load[c] += 1;
            left -= 1;
        }
    }
    labels
}

/// Single moves into clusters with spare capacity and pairwise swaps, each
/// applied only when it strictly lowers the cost.
fn local_improve(points: &[Vec<f64>], labels: &mut [usize], centroids: &[Vec<f64>], cap: usize) {
    let t = centroids.len();
    let mut load = vec![0usize; t];
    labels.iter().for_each(|&c| load[c] += 1);
    let d = |i: usize, c: usize| sq_dist(&points[i], &centroids[c]);
    for _ in 0..64 {
        let mut improved = false;
        for i in 0..points.len() {
            let from = labels[i];
            if load[from] <= 1 {
                continue;
            }
            for to in 0..t {
                if to != from && load[to] < cap && d(i, to) < d(i, from) - 1e-12 {
                    labels[i] = to;
                    load[from] -= 1;
                    load[to] += 1;
                    improved = true;
                    break;
                }
            }
        }
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let (ci, cj) = (labels[i], labels[j]);
                if ci != cj && d(i, cj) + d(j, ci) < d(i, ci) + d(j, cj) - 1e-12 {
                    labels[i] = cj;
                    labels[j] = ci;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Moves the point farthest from its centroid in the largest cluster into
/// each empty cluster.
pub(crate) fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], centroids: &[Vec<f64>]) {
    let t = centroids.len();
    loop {
        let mut load = vec![0usize; t];
        labels.iter().for_each(|&c| load[c] += 1);
        let Some(empty) = load.iter().position(|&n| n == 0) else { return };
        let largest = (0..t).max_by(|a, b| load[*a].cmp(&load[*b]).then(b.cmp(a))).unwrap();
        if load[largest] <= 1 {
            return;
        }
        let victim = (0..points.len())
            .filter(|&i| labels[i] == largest)
            .max_by(|&a, &b| {
                sq_dist(&points[a], &centroids[largest])
                    .partial_cmp(&sq_dist(&points[b], &centroids[largest]))
                    .unwrap_or(Ordering::Equal)
                    .then(b.cmp(&a))
            })
            .unwrap();
        labels[victim] = empty;
    }
}

/// Size-constrained k-means over `vectors`, keyed by `doc_ids`.
pub fn constrained_kmeans(
    doc_ids: &[u32],
    vectors: &[Vec<f64>],
    cap: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusterAssignment> {
    if cap < 1 {
        bail!(Argument, "maximum cluster size must be at least 1");
    }
    if vectors.is_empty() {
        bail!(Argument, "cannot cluster an empty corpus");
    }
    if doc_ids.len() != vectors.len() {
        bail!(Argument, "{} ids for {} vectors", doc_ids.len(), vectors.len());
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        bail!(Shape, "vectors have mixed dimensions");
    }
    let n = vectors.len();
    let t = n.div_ceil(cap);
    let mut centroids = farthest_point_seeds(vectors, t, seed);
    let mut labels = greedy_assign(vectors, &centroids, cap);
    local_improve(vectors, &mut labels, &centroids, cap);
    repair_empty(vectors, &mut labels, &centroids);
    recenter(vectors, &labels, &mut centroids);
    let mut history = vec![cost(vectors, &labels, &centroids)];

    for _ in 1..max_iters.max(1) {
        let mut proposal = greedy_assign(vectors, &centroids, cap);
        if cost(vectors, &proposal, &centroids) > cost(vectors, &labels, &centroids) {
            proposal = labels.clone();
        }
        local_improve(vectors, &mut proposal, &centroids, cap);
        repair_empty(vectors, &mut proposal, &centroids);
        let converged = proposal == labels;
        labels = proposal;
        recenter(vectors, &labels, &mut centroids);
        history.push(cost(vectors, &labels, &centroids));
        if converged {
            break;
        }
    }

    let mut out = ClusterAssignment::from_labels(doc_ids, &labels, t, cap)?;
    out.sse_history = history;
    Ok(out)
}
