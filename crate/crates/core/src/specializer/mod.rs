//! Aspect specializers: trainable maps from a generic embedding space to an
//! aspect-specific one.
//!
//! The map is a small feed-forward network with a residual connection, so it
//! is defined for any input vector, including papers that never appeared in
//! a training pair. Two objectives are available:
//!
//! - [`LossKind::Contrastive`]: cosine attract/repel hinge over positive and
//!   negative pairs plus `lambda * |f(x) - x|^2`, which keeps outputs close
//!   to their inputs.
//! - [`LossKind::Mnrl`]: multiple negatives ranking loss over batches of
//!   positive pairs only; the other positives in a batch act as negatives.

mod io;
pub mod loss;
pub mod network;

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::AspectId;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::ground_truth::PairSample;
use crate::optim::Adam;

pub use io::MODEL_MAGIC;
pub use loss::{contrastive_loss, cosine_with_grad, mnrl_loss, BatchLoss, PairLoss};
pub use network::{Activation, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Contrastive,
    Mnrl,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Contrastive => "contrastive",
            LossKind::Mnrl => "mnrl",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(LossKind::Contrastive),
            "mnrl" => Ok(LossKind::Mnrl),
            other => Err(Error::invalid(format!(
                "unknown loss `{other}` (expected contrastive or mnrl)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecializerConfig {
    pub loss_kind: LossKind,
    /// Hidden layer widths; `None` means a single hidden layer of twice the
    /// input width.
    pub hidden_widths: Option<Vec<usize>>,
    pub margin_pos: f64,
    pub margin_neg: f64,
    pub lambda: f64,
    pub scale: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SpecializerConfig {
    fn default() -> Self {
        SpecializerConfig {
            loss_kind: LossKind::Mnrl,
            hidden_widths: None,
            margin_pos: 0.9,
            margin_neg: 0.3,
            lambda: 0.1,
            scale: 20.0,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 10,
            seed: 0,
        }
    }
}

impl SpecializerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.margin_neg && self.margin_neg < self.margin_pos && self.margin_pos <= 1.0)
        {
            return Err(Error::invalid(
                "margins must satisfy 0 <= margin_neg < margin_pos <= 1",
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and non-negative"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid("scale must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be positive"));
        }
        if self.hidden_widths.as_ref().is_some_and(|w| w.contains(&0)) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    fn widths(&self, dim: usize) -> Vec<usize> {
        let hidden = self.hidden_widths.clone().unwrap_or_else(|| vec![2 * dim]);
        std::iter::once(dim)
            .chain(hidden)
            .chain(std::iter::once(dim))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecializerModel {
    pub aspect: AspectId,
    pub loss_kind: LossKind,
    pub network: Network,
    pub config: SpecializerConfig,
}

impl SpecializerModel {
    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.network.output_dim()
    }

    /// Maps one generic vector into the aspect space.
    pub fn apply(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "vector has dimension {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        Ok(self
            .network
            .forward(&x)
            .into_iter()
            .map(|v| v as f32)
            .collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch, measured before each update.
    pub loss_trace: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    /// Pairs with an endpoint missing from the generic matrix.
    pub dropped_pairs: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// `(row of a, row of b, similar)`
type IndexedPair = (usize, usize, bool);

/// Trains a specializer for the aspect of `pairs`.
pub fn train_specializer(
    generic: &EmbeddingMatrix,
    pairs: &[PairSample],
    config: &SpecializerConfig,
) -> Result<(SpecializerModel, TrainReport)> {
    config.validate()?;
    let start = Instant::now();
    let aspect = match pairs.first() {
        Some(p) => p.aspect.clone(),
        None => return Err(Error::invalid("no training pairs")),
    };
    if let Some(other) = pairs.iter().find(|p| p.aspect != aspect) {
        return Err(Error::invalid(format!(
            "pairs mix aspects `{aspect}` and `{}`",
            other.aspect
        )));
    }

    let mut indexed: Vec<IndexedPair> = Vec::with_capacity(pairs.len());
    let mut dropped = 0;
    for p in pairs {
        if config.loss_kind == LossKind::Mnrl && !p.y {
            continue;
        }
        match (generic.position(&p.doc_a), generic.position(&p.doc_b)) {
            (Some(a), Some(b)) => indexed.push((a, b, p.y)),
            _ => dropped += 1,
        }
    }
    let positives = indexed.iter().filter(|p| p.2).count();
    let negatives = indexed.len() - positives;
    match config.loss_kind {
        LossKind::Contrastive if positives == 0 || negatives == 0 => {
            return Err(Error::invalid(
                "contrastive training needs both similar and dissimilar pairs",
            ))
        }
        LossKind::Mnrl if positives == 0 => return Err(Error::invalid("no usable positive pairs")),
        _ => {}
    }

    let inputs: Vec<f64> = generic.as_slice().iter().map(|&v| f64::from(v)).collect();
    let trainer = Trainer {
        inputs: &inputs,
        dim: generic.dim(),
        config,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut network = Network::zeros(config.widths(generic.dim()), Activation::Tanh, true, true);
    network.init(&mut rng, true);

    let reference_plan = trainer.plan(indexed.clone(), None);
    let initial_loss = trainer.objective(&network, &reference_plan)?;

    let mut adam = Adam::new(network.n_params(), config.learning_rate);
    let mut grads = vec![0.0; network.n_params()];
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for epoch in 0..config.epochs {
        let plan = trainer.plan(indexed.clone(), Some(&mut rng));
        let mut total = 0.0;
        for (batch_no, batch) in plan.iter().enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let loss = trainer.batch(&network, batch, Some(&mut grads))?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            adam.update(&mut network.params, &grads);
            total += loss;
            steps += 1;
        }
        loss_trace.push(total / plan.len() as f64);
    }
    network.round_to_f32();
    let final_loss = trainer.objective(&network, &reference_plan)?;

    let model = SpecializerModel {
        aspect,
        loss_kind: config.loss_kind,
        network,
        config: config.clone(),
    };
    let report = TrainReport {
        loss_trace,
        initial_loss,
        final_loss,
        positive_pairs: positives,
        negative_pairs: negatives,
        dropped_pairs: dropped,
        steps,
        seed: config.seed,
        wall_time: start.elapsed(),
    };
    Ok((model, report))
}

struct Trainer<'a> {
    inputs: &'a [f64],
    dim: usize,
    config: &'a SpecializerConfig,
}

impl Trainer<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// Splits pairs into batches, shuffled when an rng is given. MNRL batches
    /// never contain the same paper twice and pairs are randomly oriented.
    fn plan(
        &self,
        mut pairs: Vec<IndexedPair>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Vec<Vec<IndexedPair>> {
        let bs = self.config.batch_size;
        match (self.config.loss_kind, rng) {
            (LossKind::Contrastive, rng) => {
                if let Some(rng) = rng {
                    pairs.shuffle(rng);
                }
                pairs.chunks(bs).map(<[IndexedPair]>::to_vec).collect()
            }
            (LossKind::Mnrl, rng) => {
                if let Some(rng) = rng {
                    pairs.shuffle(rng);
                    for p in &mut pairs {
                        if rng.random::<bool>() {
                            *p = (p.1, p.0, p.2);
                        }
                    }
                }
                collision_free_batches(pairs, bs)
            }
        }
    }

    fn objective(&self, network: &Network, plan: &[Vec<IndexedPair>]) -> Result<f64> {
        let losses = plan
            .iter()
            .map(|batch| self.batch(network, batch, None))
            .collect::<Result<Vec<f64>>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Mean loss of a batch; accumulates parameter gradients when asked.
    fn batch(
        &self,
        network: &Network,
        batch: &[IndexedPair],
        grads: Option<&mut Vec<f64>>,
    ) -> Result<f64> {
        let n = batch.len() as f64;
        match self.config.loss_kind {
            LossKind::Contrastive => {
                let c = self.config;
                let mut total = 0.0;
                let mut grads = grads;
                for &(a, b, y) in batch {
                    let ta = network.forward_trace(self.row(a));
                    let tb = network.forward_trace(self.row(b));
                    let pair =
                        contrastive_loss(&ta.output, &tb.output, y, c.margin_pos, c.margin_neg)?;
                    let reg_a = squared_distance(&ta.output, ta.input());
                    let reg_b = squared_distance(&tb.output, tb.input());
                    total += pair.loss + 0.5 * c.lambda * (reg_a + reg_b);
                    if let Some(grads) = grads.as_deref_mut() {
                        let upstream = |g: &[f64], t: &network::Trace| -> Vec<f64> {
                            g.iter()
                                .zip(t.output.iter().zip(t.input()))
                                .map(|(gi, (o, x))| (gi + c.lambda * (o - x)) / n)
                                .collect()
                        };
                        network.backward(&ta, &upstream(&pair.grad_a, &ta), grads);
                        network.backward(&tb, &upstream(&pair.grad_b, &tb), grads);
                    }
                }
                Ok(total / n)
            }
            LossKind::Mnrl => {
                let anchors: Vec<_> = batch
                    .iter()
                    .map(|p| network.forward_trace(self.row(p.0)))
                    .collect();
                let positives: Vec<_> = batch
                    .iter()
                    .map(|p| network.forward_trace(self.row(p.1)))
                    .collect();
                let out = |t: &Vec<network::Trace>| {
                    t.iter().map(|t| t.output.clone()).collect::<Vec<_>>()
                };
                let result = mnrl_loss(&out(&anchors), &out(&positives), self.config.scale)?;
                if let Some(grads) = grads {
                    for (t, g) in anchors.iter().zip(&result.grad_anchors) {
                        network.backward(t, g, grads);
                    }
                    for (t, g) in positives.iter().zip(&result.grad_positives) {
                        network.backward(t, g, grads);
                    }
                }
                Ok(result.loss)
            }
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy batching in order; a pair whose paper is already in the current
/// batch is deferred to the next one.
fn collision_free_batches(pairs: Vec<IndexedPair>, batch_size: usize) -> Vec<Vec<IndexedPair>> {
    let mut pending: VecDeque<IndexedPair> = pairs.into();
    let mut batches = Vec::new();
    while !pending.is_empty() {
        let mut batch = Vec::with_capacity(batch_size);
        let mut used = HashSet::with_capacity(2 * batch_size);
        let mut deferred = Vec::new();
        while batch.len() < batch_size {
            let Some(p) = pending.pop_front() else { break };
            if used.contains(&p.0) || used.contains(&p.1) || p.0 == p.1 {
                deferred.push(p);
                continue;
            }
            used.insert(p.0);
            used.insert(p.1);
            batch.push(p);
        }
        for p in deferred.into_iter().rev() {
            pending.push_front(p);
        }
        batches.push(batch);
    }
    batches
}

/// Checks that no paper occurs twice among the anchors and positives of a
/// batch; a repeated paper would be scored as its own negative.
pub fn check_batch_ids<S: AsRef<str>>(batch: &[(S, S)]) -> Result<()> {
    let mut seen = HashSet::with_capacity(batch.len() * 2);
    for (a, b) in batch {
        for id in [a.as_ref(), b.as_ref()] {
            if !seen.insert(id) {
                return Err(Error::invalid(format!(
                    "paper `{id}` appears twice in one batch"
                )));
            }
        }
    }
    Ok(())
}

/// Runs the model over every row. The result carries the model's aspect and
/// a method tag of the form `<input tag>+<loss>`.
pub fn apply_specializer(model: &SpecializerModel, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if m.dim() != model.input_dim() {
        return Err(Error::invalid(format!(
            "matrix has dimension {}, model expects {}",
            m.dim(),
            model.input_dim()
        )));
    }
    let rows: Vec<Vec<f32>> = (0..m.len())
        .into_par_iter()
        .map(|i| model.apply(m.row(i)))
        .collect::<Result<_>>()?;
    let tag = format!("{}+{}", m.method_tag(), model.loss_kind);
    let mut out =
        EmbeddingMatrix::new(tag, model.output_dim())?.with_aspect(Some(model.aspect.clone()));
    for (id, row) in m.ids().iter().zip(rows) {
        out.push(id.clone(), &row)?;
    }
    Ok(out)
}
