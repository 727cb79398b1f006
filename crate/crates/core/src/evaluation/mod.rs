//! Retrieval metrics, classification reports and ranking overlap.
//!
//! Every test paper is used as a seed. A candidate is relevant when it shares
//! a filtered label with the seed for the aspect under evaluation; the
//! relevant count `R` spans the whole corpus. Conventions:
//!
//! - `P@k = hits / k`, `R@k = hits / R`;
//! - reciprocal rank is taken inside the top-k window (0 without a hit);
//! - `AP@k = (1 / min(R, k)) * sum_i rel_i * P@i`;
//! - seeds with `R = 0` are skipped and counted, metrics are macro-averaged
//!   over the remaining seeds.

mod classification;
mod overlap;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::AspectId;
use crate::error::{Error, Result};
use crate::ground_truth::RelevanceIndex;
use crate::retrieval::RetrievalResult;

pub use classification::{classification_report, ClassMetrics, ClassificationReport};
pub use overlap::{overlap, OverlapEntry, OverlapReport};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub mrr: f64,
    pub map: f64,
}

impl Metrics {
    fn fields(&self) -> [f64; 4] {
        [self.precision, self.recall, self.mrr, self.map]
    }

    fn from_fields(f: [f64; 4]) -> Self {
        Metrics {
            precision: f[0],
            recall: f[1],
            mrr: f[2],
            map: f[3],
        }
    }
}

pub fn is_relevant(seed: &str, candidate: &str, relevance: &RelevanceIndex) -> bool {
    relevance.is_relevant(seed, candidate)
}

/// Per-seed metrics for relevance flags in rank order. Flags beyond `k` are
/// ignored, missing ones count as non-relevant. `None` when `R = 0`.
pub fn retrieval_metrics(flags: &[bool], total_relevant: usize, k: usize) -> Option<Metrics> {
    if total_relevant == 0 || k == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut first_hit = None;
    let mut precision_sum = 0.0;
    for (i, &rel) in flags.iter().take(k).enumerate() {
        if rel {
            hits += 1;
            first_hit.get_or_insert(i + 1);
            precision_sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(Metrics {
        precision: hits as f64 / k as f64,
        recall: hits as f64 / total_relevant as f64,
        mrr: first_hit.map_or(0.0, |r| 1.0 / r as f64),
        map: precision_sum / total_relevant.min(k) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub aspect: AspectId,
    pub fold: usize,
    pub k: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
    /// Seeds that entered the average.
    pub seeds: usize,
    /// Seeds without any relevant paper.
    pub skipped: usize,
}

/// Macro-averaged metrics of one method for one fold.
pub fn evaluate_method(
    results: &BTreeMap<String, RetrievalResult>,
    relevance: &RelevanceIndex,
    k: usize,
    fold: usize,
) -> Result<MetricsRow> {
    let method = match results.values().next() {
        Some(r) => r.method_tag.clone(),
        None => return Err(Error::invalid("no seeds to evaluate")),
    };
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut sum = [0.0; 4];
    let (mut seeds, mut skipped) = (0, 0);
    for (seed, result) in results {
        if k > result.k {
            return Err(Error::invalid(format!(
                "k = {k} exceeds the retrieval depth {} of seed `{seed}`",
                result.k
            )));
        }
        let flags: Vec<bool> = result
            .ids()
            .take(k)
            .map(|c| relevance.is_relevant(seed, c))
            .collect();
        match retrieval_metrics(&flags, relevance.relevant_count(seed), k) {
            Some(m) => {
                for (s, v) in sum.iter_mut().zip(m.fields()) {
                    *s += v;
                }
                seeds += 1;
            }
            None => skipped += 1,
        }
    }
    let metrics = if seeds == 0 {
        Metrics::default()
    } else {
        Metrics::from_fields(sum.map(|s| s / seeds as f64))
    };
    Ok(MetricsRow {
        method,
        aspect: relevance.aspect().clone(),
        fold,
        k,
        metrics,
        seeds,
        skipped,
    })
}

/// Metrics at several cut-offs from the same rankings.
pub fn k_sweep(
    results: &BTreeMap<String, RetrievalResult>,
    relevance: &RelevanceIndex,
    ks: &[usize],
    fold: usize,
) -> Result<Vec<MetricsRow>> {
    let depth = results.values().map(|r| r.k).min().unwrap_or(0);
    if let Some(&too_deep) = ks.iter().find(|&&k| k > depth) {
        return Err(Error::invalid(format!(
            "k = {too_deep} exceeds the retrieval depth {depth}"
        )));
    }
    ks.iter()
        .map(|&k| evaluate_method(results, relevance, k, fold))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub method: String,
    pub aspect: AspectId,
    pub k: usize,
    pub folds: usize,
    pub mean: Metrics,
    /// Sample standard deviation across folds (0 for a single fold).
    pub std: Metrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_CSV_HEADER: &str = "method,aspect,fold,k,precision,recall,mrr,map,seeds,skipped";

impl MetricsReport {
    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = MetricsRow>) {
        self.rows.extend(rows);
    }

    /// Mean and standard deviation across folds per (method, aspect, k), in
    /// order of first appearance.
    pub fn aggregates(&self) -> Vec<AggregateRow> {
        type Key<'a> = (&'a str, &'a AspectId, usize);
        let mut groups: Vec<(Key, Vec<&MetricsRow>)> = Vec::new();
        for row in &self.rows {
            let key = (row.method.as_str(), &row.aspect, row.k);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, rows)) => rows.push(row),
                None => groups.push((key, vec![row])),
            }
        }
        groups
            .into_iter()
            .map(|((method, aspect, k), rows)| {
                let n = rows.len() as f64;
                let mut mean = [0.0; 4];
                for r in &rows {
                    for (m, v) in mean.iter_mut().zip(r.metrics.fields()) {
                        *m += v / n;
                    }
                }
                let mut std = [0.0; 4];
                if rows.len() > 1 {
                    for r in &rows {
                        for ((s, v), m) in std.iter_mut().zip(r.metrics.fields()).zip(mean) {
                            *s += (v - m) * (v - m);
                        }
                    }
                    std = std.map(|s| (s / (n - 1.0)).sqrt());
                }
                AggregateRow {
                    method: method.to_string(),
                    aspect: aspect.clone(),
                    k,
                    folds: rows.len(),
                    mean: Metrics::from_fields(mean),
                    std: Metrics::from_fields(std),
                }
            })
            .collect()
    }

    /// Per-fold rows followed by `mean` and `std` rows per group.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{METRICS_CSV_HEADER}")?;
        for r in &self.rows {
            let m = &r.metrics;
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.method,
                r.aspect,
                r.fold,
                r.k,
                m.precision,
                m.recall,
                m.mrr,
                m.map,
                r.seeds,
                r.skipped
            )?;
        }
        for a in self.aggregates() {
            let (seeds, skipped) = self
                .rows
                .iter()
                .filter(|r| r.method == a.method && r.aspect == a.aspect && r.k == a.k)
                .fold((0, 0), |(s, k), r| (s + r.seeds, k + r.skipped));
            for (label, m) in [("mean", a.mean), ("std", a.std)] {
                writeln!(
                    out,
                    "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
                    a.method,
                    a.aspect,
                    label,
                    a.k,
                    m.precision,
                    m.recall,
                    m.mrr,
                    m.map,
                    seeds,
                    skipped
                )?;
            }
        }
        Ok(())
    }

    /// Aligned text table at cut-off `k`: one line per method, P/R/MRR/MAP
    /// per aspect (cross-fold means).
    pub fn table(&self, k: usize) -> String {
        let aggregates: Vec<AggregateRow> =
            self.aggregates().into_iter().filter(|a| a.k == k).collect();
        let mut aspects: Vec<&AspectId> = Vec::new();
        let mut methods: Vec<&str> = Vec::new();
        for a in &aggregates {
            if !aspects.contains(&&a.aspect) {
                aspects.push(&a.aspect);
            }
            if !methods.contains(&a.method.as_str()) {
                methods.push(&a.method);
            }
        }
        let width = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = write!(s, "{:width$}", format!("k={k}"));
        for aspect in &aspects {
            let _ = write!(s, " | {:^27}", aspect.as_str());
        }
        s.push('\n');
        let _ = write!(s, "{:width$}", "method");
        for _ in &aspects {
            let _ = write!(s, " | {:>6} {:>6} {:>6} {:>6}", "P", "R", "MRR", "MAP");
        }
        s.push('\n');
        for method in methods {
            let _ = write!(s, "{method:width$}");
            for aspect in &aspects {
                match aggregates
                    .iter()
                    .find(|a| a.method == method && &a.aspect == *aspect)
                {
                    Some(a) => {
                        let m = a.mean;
                        let _ = write!(
                            s,
                            " | {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
                            m.precision, m.recall, m.mrr, m.map
                        );
                    }
                    None => {
                        let _ = write!(s, " | {:>27}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}
