//! Per-aspect binary classification report with micro and macro averages.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::corpus::AspectId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl ClassMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: tp + fn_,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub classes: Vec<(AspectId, ClassMetrics)>,
    /// Pooled confusion counts over all classes.
    pub micro: ClassMetrics,
    /// Unweighted means of the per-class precision, recall and F1.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Builds the report from per-pair decisions. Both maps must have the same
/// keys and one decision per class for every key.
pub fn classification_report<K: Ord + fmt::Debug>(
    classes: &[AspectId],
    predictions: &BTreeMap<K, Vec<bool>>,
    gold: &BTreeMap<K, Vec<bool>>,
) -> Result<ClassificationReport> {
    if classes.is_empty() {
        return Err(Error::invalid("no classes"));
    }
    if predictions.len() != gold.len() || predictions.keys().zip(gold.keys()).any(|(a, b)| a != b) {
        return Err(Error::invalid("prediction and gold keys differ"));
    }
    let mut counts = vec![(0usize, 0usize, 0usize); classes.len()];
    for ((key, pred), gold) in predictions.iter().zip(gold.values()) {
        if pred.len() != classes.len() || gold.len() != classes.len() {
            return Err(Error::invalid(format!(
                "pair {key:?} does not have one decision per class"
            )));
        }
        for (c, (&p, &g)) in counts.iter_mut().zip(pred.iter().zip(gold)) {
            match (p, g) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => {}
            }
        }
    }
    let per_class: Vec<(AspectId, ClassMetrics)> = classes
        .iter()
        .cloned()
        .zip(
            counts
                .iter()
                .map(|&(tp, fp, fn_)| ClassMetrics::from_counts(tp, fp, fn_)),
        )
        .collect();
    let pooled = counts
        .iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|(_, m)| f(m)).sum::<f64>() / n;
    Ok(ClassificationReport {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        micro: ClassMetrics::from_counts(pooled.0, pooled.1, pooled.2),
        classes: per_class,
    })
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>12} {:>9} {:>9} {:>9} {:>9}",
            "", "precision", "recall", "f1-score", "support"
        );
        for (class, m) in &self.classes {
            let _ = writeln!(
                s,
                "{:>12} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                class.as_str(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            );
        }
        let _ = writeln!(
            s,
            "{:>12} {:>9.2} {:>9.2} {:>9.2} {:>9}",
            "micro avg", self.micro.precision, self.micro.recall, self.micro.f1, self.micro.support
        );
        let _ = writeln!(
            s,
            "{:>12} {:>9.2} {:>9.2} {:>9.2} {:>9}",
            "macro avg", self.macro_precision, self.macro_recall, self.macro_f1, self.micro.support
        );
        f.write_str(&s)
    }
}
