//! Deterministic few-shot subsampling of a training split.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::SixRoleDialogue;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FewShotError {
    #[error("fraction {0} is outside (0, 1]")]
    Fraction(f64),
    #[error("duplicate dialogue id `{0}`")]
    DuplicateId(String),
}

/// `floor(fraction * n)`, tolerant of binary rounding (0.1 * 8430 is 842.999...).
pub fn sample_size(fraction: f64, n: usize) -> Result<usize, FewShotError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(FewShotError::Fraction(fraction));
    }
    let exact = fraction * n as f64;
    let k = libm::floor(exact + 1e-9 * exact.max(1.0)) as usize;
    Ok(k.min(n))
}

fn rank_key(seed: u64, id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.finalize().into()
}

/// Indices of the sampled ids, ascending by id.
///
/// Each id is ranked by a hash of `(seed, id)` and the lowest `floor(fraction * n)` are
/// kept, so the result depends only on the id set and the seed, not on input order.
pub fn select_ids(ids: &[&str], fraction: f64, seed: u64) -> Result<Vec<usize>, FewShotError> {
    let k = sample_size(fraction, ids.len())?;
    let mut seen = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        if seen.insert(*id, i).is_some() {
            return Err(FewShotError::DuplicateId(String::from(*id)));
        }
    }
    let mut ranked: Vec<([u8; 32], &str, usize)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (rank_key(seed, id), *id, i))
        .collect();
    ranked.sort();
    let mut chosen: Vec<(&str, usize)> = ranked
        .into_iter()
        .take(k)
        .map(|(_, id, i)| (id, i))
        .collect();
    chosen.sort();
    Ok(chosen.into_iter().map(|(_, i)| i).collect())
}

/// Samples within each stratum separately. The total matches the unstratified size: each
/// stratum gets the floor of its share, and the leftover slots go to the strata with the
/// largest remainders (ties to the smaller stratum name).
pub fn select_ids_stratified(
    ids: &[&str],
    strata: &[&str],
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>, FewShotError> {
    let total = sample_size(fraction, ids.len())?;
    let mut seen = alloc::collections::BTreeSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
        return Err(FewShotError::DuplicateId(String::from(*dup)));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate().take(ids.len()) {
        groups.entry(*s).or_default().push(i);
    }
    let mut quotas: Vec<(&str, usize, f64)> = groups
        .iter()
        .map(|(name, members)| {
            let exact = fraction * members.len() as f64;
            let base = sample_size(fraction, members.len()).unwrap_or(0);
            (*name, base, exact - base as f64)
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        quotas[b]
            .2
            .total_cmp(&quotas[a].2)
            .then_with(|| quotas[a].0.cmp(quotas[b].0))
    });
    for &q in order.iter().take(total.saturating_sub(assigned)) {
        quotas[q].1 += 1;
    }
    let mut out = Vec::new();
    for ((_, quota, _), members) in quotas.iter().zip(groups.values()) {
        let mut ranked: Vec<([u8; 32], usize)> = members
            .iter()
            .map(|&i| (rank_key(seed, ids[i]), i))
            .collect();
        ranked.sort();
        out.extend(ranked.into_iter().take(*quota).map(|(_, i)| i));
    }
    out.sort_by(|&a, &b| ids[a].cmp(ids[b]));
    Ok(out)
}

/// The domain a dialogue is mainly about: the first goal domain it visits, else its first
/// goal domain by name, else `none`.
pub fn primary_domain(d: &SixRoleDialogue) -> &str {
    d.turns
        .iter()
        .map(|t| t.domain.as_str())
        .find(|name| d.goal.contains_key(*name))
        .or_else(|| d.goal.keys().next().map(String::as_str))
        .unwrap_or("none")
}

/// A few-shot subset of `dialogues`, ordered by id.
pub fn sample_fewshot(
    dialogues: &[SixRoleDialogue],
    fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<Vec<SixRoleDialogue>, FewShotError> {
    let ids: Vec<&str> = dialogues.iter().map(|d| d.id.as_str()).collect();
    let picked = if stratified {
        let strata: Vec<&str> = dialogues.iter().map(primary_domain).collect();
        select_ids_stratified(&ids, &strata, fraction, seed)?
    } else {
        select_ids(&ids, fraction, seed)?
    };
    Ok(picked.into_iter().map(|i| dialogues[i].clone()).collect())
}
