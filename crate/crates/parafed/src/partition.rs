//! Non-IID assignment of documents to silos.

use std::collections::BTreeMap;

use parafed_core::rng;
use parafed_core::toylm::Document;
use parafed_core::Error as CoreError;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::Gamma;

use crate::Result;

/// Per topic, draws silo proportions from Dirichlet(α) and assigns that
/// topic's documents multinomially. Document order within a silo follows
/// the input order.
pub fn dirichlet_partition(documents: &[Document], num_silos: usize, alpha: f64, seed: u64) -> Result<Vec<Vec<Document>>> {
    if num_silos == 0 {
        return Err(CoreError::Argument("at least one silo is required".into()).into());
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CoreError::Argument(format!("dirichlet alpha must be positive, got {alpha}")).into());
    }
    let mut by_topic: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in documents.iter().enumerate() {
        by_topic.entry(d.topic).or_default().push(i);
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| CoreError::Argument(e.to_string()))?;
    let mut silo_of = vec![0usize; documents.len()];
    for (topic, members) in &by_topic {
        let mut g = rng::stream(seed, 0xD1_0000 + *topic as u64);
        let mut p: Vec<f64> = (0..num_silos).map(|_| gamma.sample(&mut g)).collect();
        let total: f64 = p.iter().sum();
        if !(total > 0.0) {
            // Every draw underflowed; the mass goes to one silo.
            p = vec![0.0; num_silos];
            p[rng::index(&mut g, num_silos)] = 1.0;
        }
        let pick = WeightedIndex::new(&p).map_err(|e| CoreError::Argument(e.to_string()))?;
        for &i in members {
            silo_of[i] = pick.sample(&mut g);
        }
    }
    let mut silos = vec![Vec::new(); num_silos];
    for (d, s) in documents.iter().zip(silo_of) {
        silos[s].push(d.clone());
    }
    Ok(silos)
}

/// Mean over topics of the share of a topic's documents held by its
/// largest silo.
pub fn topic_concentration(silos: &[Vec<Document>]) -> f64 {
    let mut counts: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (s, docs) in silos.iter().enumerate() {
        for d in docs {
            counts.entry(d.topic).or_insert_with(|| vec![0; silos.len()])[s] += 1;
        }
    }
    if counts.is_empty() {
        return 0.0;
    }
    counts
        .values()
        .map(|c| *c.iter().max().unwrap() as f64 / c.iter().sum::<usize>() as f64)
        .sum::<f64>()
        / counts.len() as f64
}
