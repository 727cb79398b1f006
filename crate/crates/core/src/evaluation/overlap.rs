//! Seed-level intersection of two methods' top-k neighbors.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::retrieval::RetrievalResult;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapEntry {
    pub method_a: String,
    pub method_b: String,
    pub k: usize,
    /// Mean of `|top-k(A) ∩ top-k(B)| / k` over seeds.
    pub mean: f64,
    pub per_seed: BTreeMap<String, f64>,
}

pub fn overlap(
    results_a: &BTreeMap<String, RetrievalResult>,
    results_b: &BTreeMap<String, RetrievalResult>,
    k: usize,
) -> Result<OverlapEntry> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if results_a.is_empty()
        || results_a.len() != results_b.len()
        || results_a.keys().ne(results_b.keys())
    {
        return Err(Error::invalid(
            "overlap needs identical, non-empty seed sets",
        ));
    }
    let mut per_seed = BTreeMap::new();
    for ((seed, a), b) in results_a.iter().zip(results_b.values()) {
        if a.hits.len() < k || b.hits.len() < k {
            return Err(Error::invalid(format!(
                "seed `{seed}` has fewer than {k} neighbors"
            )));
        }
        let top_a: HashSet<&str> = a.ids().take(k).collect();
        let shared = b.ids().take(k).filter(|id| top_a.contains(id)).count();
        per_seed.insert(seed.clone(), shared as f64 / k as f64);
    }
    let mean = per_seed.values().sum::<f64>() / per_seed.len() as f64;
    let tag = |r: &BTreeMap<String, RetrievalResult>| {
        r.values()
            .next()
            .map(|r| r.method_tag.clone())
            .unwrap_or_default()
    };
    Ok(OverlapEntry {
        method_a: tag(results_a),
        method_b: tag(results_b),
        k,
        mean,
        per_seed,
    })
}

/// Overlap ratios keyed by an optional group (e.g. the aspect).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OverlapReport {
    pub entries: Vec<(String, OverlapEntry)>,
}

impl OverlapReport {
    pub fn push(&mut self, group: impl Into<String>, entry: OverlapEntry) {
        self.entries.push((group.into(), entry));
    }

    /// Order-insensitive lookup.
    pub fn get(&self, group: &str, a: &str, b: &str) -> Option<&OverlapEntry> {
        self.entries.iter().map(|(g, e)| (g, e)).find_map(|(g, e)| {
            let hit = (e.method_a == a && e.method_b == b) || (e.method_a == b && e.method_b == a);
            (g == group && hit).then_some(e)
        })
    }

    /// `group,method_a,method_b,k,overlap,seeds`
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "group,method_a,method_b,k,overlap,seeds")?;
        for (group, e) in &self.entries {
            writeln!(
                out,
                "{group},{},{},{},{:.6},{}",
                e.method_a,
                e.method_b,
                e.k,
                e.mean,
                e.per_seed.len()
            )?;
        }
        Ok(())
    }
}
