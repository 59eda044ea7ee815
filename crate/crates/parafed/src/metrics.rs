use std::collections::BTreeMap;

use parafed_core::Error as CoreError;

use crate::Result;

/// Token-level F1 over multiset overlap. An empty prediction scores 0.
pub fn token_f1(pred: &[u32], gold: &[u32]) -> Result<f64> {
    if gold.is_empty() {
        return Err(CoreError::Argument("gold answer is empty".into()).into());
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return Ok(0.0);
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

pub fn exact_match(pred: &[u32], gold: &[u32]) -> bool {
    pred == gold
}
