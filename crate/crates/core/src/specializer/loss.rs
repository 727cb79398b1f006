//! Objectives over specialized vectors, with exact gradients.

use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector("loss input".into()));
    }
    Ok((na, nb))
}

/// Cosine similarity with its gradients with respect to both arguments.
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (na, nb) = check_pair(a, b)?;
    let cos = dot(a, b) / (na * nb);
    let grad_a = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - cos * x / (na * na))
        .collect();
    let grad_b = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - cos * y / (nb * nb))
        .collect();
    Ok((cos, grad_a, grad_b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// Attract/repel hinge on cosine similarity.
///
/// Similar pairs pay `max(0, margin_pos - cos)`, dissimilar pairs pay
/// `max(0, cos - margin_neg)`.
pub fn contrastive_loss(
    fa: &[f64],
    fb: &[f64],
    similar: bool,
    margin_pos: f64,
    margin_neg: f64,
) -> Result<PairLoss> {
    if !(0.0 <= margin_neg && margin_neg < margin_pos && margin_pos <= 1.0) {
        return Err(Error::invalid(format!(
            "margins must satisfy 0 <= margin_neg < margin_pos <= 1, got {margin_neg} and {margin_pos}"
        )));
    }
    let (cos, mut grad_a, mut grad_b) = cosine_with_grad(fa, fb)?;
    let (loss, sign) = if similar {
        (margin_pos - cos, -1.0)
    } else {
        (cos - margin_neg, 1.0)
    };
    if loss <= 0.0 {
        grad_a
            .iter_mut()
            .chain(grad_b.iter_mut())
            .for_each(|g| *g = 0.0);
        return Ok(PairLoss {
            loss: 0.0,
            grad_a,
            grad_b,
        });
    }
    grad_a
        .iter_mut()
        .chain(grad_b.iter_mut())
        .for_each(|g| *g *= sign);
    Ok(PairLoss {
        loss,
        grad_a,
        grad_b,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub grad_anchors: Vec<Vec<f64>>,
    pub grad_positives: Vec<Vec<f64>>,
}

/// Multiple negatives ranking loss: row-wise softmax cross-entropy over
/// `scale * cos(anchor_i, positive_j)` with the diagonal as the target, so
/// every other positive in the batch acts as a negative.
pub fn mnrl_loss(anchors: &[Vec<f64>], positives: &[Vec<f64>], scale: f64) -> Result<BatchLoss> {
    let b = anchors.len();
    if b == 0 || positives.len() != b {
        return Err(Error::invalid(format!(
            "need equally sized non-empty batches, got {} anchors and {} positives",
            b,
            positives.len()
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid("scale must be positive"));
    }
    let dim = anchors[0].len();
    let unit = |rows: &[Vec<f64>]| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut units = Vec::with_capacity(rows.len());
        let mut norms = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != dim {
                return Err(Error::invalid("batch rows differ in length"));
            }
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::ZeroVector("batch row".into()));
            }
            units.push(row.iter().map(|x| x / n).collect());
            norms.push(n);
        }
        Ok((units, norms))
    };
    let (ua, na) = unit(anchors)?;
    let (up, np) = unit(positives)?;

    let mut loss = 0.0;
    // d loss / d cos(i, j)
    let mut coeff = vec![0.0; b * b];
    let mut logits = vec![0.0; b];
    for i in 0..b {
        for j in 0..b {
            logits[j] = scale * dot(&ua[i], &up[j]);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|s| (s - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - logits[i];
        for j in 0..b {
            let p = (logits[j] - lse).exp();
            let target = if i == j { 1.0 } else { 0.0 };
            coeff[i * b + j] = scale * (p - target) / b as f64;
        }
    }
    loss /= b as f64;

    // gradients with respect to the unit vectors, then through normalization
    let project = |g: Vec<f64>, u: &[f64], n: f64| -> Vec<f64> {
        let radial = dot(&g, u);
        g.iter()
            .zip(u)
            .map(|(gi, ui)| (gi - radial * ui) / n)
            .collect()
    };
    let mut grad_anchors = Vec::with_capacity(b);
    for i in 0..b {
        let mut g = vec![0.0; dim];
        for j in 0..b {
            let c = coeff[i * b + j];
            g.iter_mut().zip(&up[j]).for_each(|(gk, pk)| *gk += c * pk);
        }
        grad_anchors.push(project(g, &ua[i], na[i]));
    }
    let mut grad_positives = Vec::with_capacity(b);
    for j in 0..b {
        let mut g = vec![0.0; dim];
        for i in 0..b {
            let c = coeff[i * b + j];
            g.iter_mut().zip(&ua[i]).for_each(|(gk, ak)| *gk += c * ak);
        }
        grad_positives.push(project(g, &up[j], np[j]));
    }
    Ok(BatchLoss {
        loss: loss.max(0.0),
        grad_anchors,
        grad_positives,
    })
}
