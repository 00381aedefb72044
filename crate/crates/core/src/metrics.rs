//! Ranking metrics: MRR, MAP@k and HIT@k.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One claim's ranked article ids and the ids labelled relevant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub claim_id: String,
    pub ranking: Vec<String>,
    pub relevant: BTreeSet<String>,
}

/// 1-based rank of the first relevant article.
fn first_rank(item: &EvalItem) -> Result<usize> {
    item.ranking
        .iter()
        .position(|id| item.relevant.contains(id))
        .map(|p| p + 1)
        .ok_or_else(|| {
            Error::validation(format!(
                "claim {} has no relevant article in its ranking",
                item.claim_id
            ))
        })
}

fn mean_over(items: &[EvalItem], f: impl Fn(&EvalItem) -> Result<f64>) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::validation("no claims to evaluate"));
    }
    let mut total = 0.0;
    for item in items {
        total += f(item)?;
    }
    Ok(total / items.len() as f64)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::config("cutoff k must be at least 1"));
    }
    Ok(())
}

pub fn mrr(items: &[EvalItem]) -> Result<f64> {
    mean_over(items, |item| Ok(1.0 / first_rank(item)? as f64))
}

/// Mean over claims of `(1/n_i) * sum_{j<=k} P_i(j) * rel_i(j)`, where `n_i`
/// counts every relevant article of claim `i`, even when `n_i > k`.
pub fn map_at_k(items: &[EvalItem], k: usize) -> Result<f64> {
    check_k(k)?;
    mean_over(items, |item| {
        first_rank(item)?;
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (j, id) in item.ranking.iter().take(k).enumerate() {
            if item.relevant.contains(id) {
                hits += 1;
                sum += hits as f64 / (j + 1) as f64;
            }
        }
        Ok(sum / item.relevant.len() as f64)
    })
}

pub fn hit_at_k(items: &[EvalItem], k: usize) -> Result<f64> {
    check_k(k)?;
    mean_over(items, |item| Ok(if first_rank(item)? <= k { 1.0 } else { 0.0 }))
}
