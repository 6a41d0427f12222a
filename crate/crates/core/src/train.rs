//! Mini-batch training: BPR ranking loss, the confidence penalty on
//! negatives, L2 on layer-0 embeddings, and Adam.
//!
//! The confidence penalty for one candidate set `{pos} ∪ negs` with softmax
//! probabilities `q` and labels `y` (1 for the positive) is
//!
//! ```text
//! sum_c (1 - y_c) * q_c * ln(1 + exp(q_c))
//! ```
//!
//! averaged over the batch. Positives contribute nothing; the penalty grows
//! with the confidence the model puts on an unobserved item.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, NormalizedAdjacency};
use crate::matrix::{axpy, dot, Matrix};
use crate::model::{propagate, EmbeddingState};
use crate::optim::Adam;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub embed_dim: usize,
    pub layers: usize,
    pub l2_weight: f64,
    /// Weight of the confidence penalty; 0 disables it exactly.
    pub conf_weight: f64,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            learning_rate: 0.01,
            embed_dim: 32,
            layers: 2,
            l2_weight: 1e-4,
            conf_weight: 0.1,
            negatives: 1,
            seed: 2024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_owned()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if self.embed_dim == 0 {
            return bad("embedding dimension must be >= 1");
        }
        if self.negatives == 0 {
            return bad("negatives per positive must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and >= 0");
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return bad("l2 weight must be finite and >= 0");
        }
        if !(self.conf_weight >= 0.0 && self.conf_weight.is_finite()) {
            return bad("confidence weight must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub negs: Vec<usize>,
}

impl Triple {
    /// `pos` followed by the negatives.
    pub fn candidates(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.pos).chain(self.negs.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainBatch {
    pub triples: Vec<Triple>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Draws `batch_size` triples from the edges of `train`: a uniformly chosen
/// edge gives `(user, pos)`, then `negatives` distinct items the user has
/// not interacted with.
pub fn sample_batch(
    train: &InteractionGraph,
    batch_size: usize,
    negatives: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainBatch> {
    let edges = train.num_edges();
    if edges == 0 {
        return Err(Error::EmptyGraph);
    }
    let offsets = train.user_adj().offsets();
    let mut triples = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let e = rng.random_range(0..edges);
        let user = offsets.partition_point(|&o| o <= e) - 1;
        let pos = train.user_items(user)[e - offsets[user]] as usize;
        let negs = sample_negatives(train, user, negatives, rng)?;
        triples.push(Triple { user, pos, negs });
    }
    Ok(TrainBatch { triples })
}

fn sample_negatives(
    train: &InteractionGraph,
    user: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let m = train.num_items();
    let seen = train.user_items(user);
    let available = m - seen.len();
    if available < k {
        return Err(Error::NoNegativesAvailable {
            user,
            needed: k,
            available,
        });
    }
    if available <= 2 * k {
        // Dense case: partial Fisher-Yates over the complement.
        let mut pool: Vec<usize> = (0..m)
            .filter(|&i| seen.binary_search(&(i as u32)).is_err())
            .collect();
        for j in 0..k {
            let r = rng.random_range(j..pool.len());
            pool.swap(j, r);
        }
        pool.truncate(k);
        return Ok(pool);
    }
    let mut negs = Vec::with_capacity(k);
    while negs.len() < k {
        let i = rng.random_range(0..m);
        if seen.binary_search(&(i as u32)).is_err() && !negs.contains(&i) {
            negs.push(i);
        }
    }
    Ok(negs)
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln(sigmoid(pos - neg))`.
pub fn bpr_loss(pos_score: f64, neg_score: f64) -> f64 {
    softplus(neg_score - pos_score)
}

/// Penalty of one candidate set; see the module docs.
pub fn conf_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (1.0 - y) * confidence_penalty(p))
        .sum())
}

#[inline]
fn confidence_penalty(p: f64) -> f64 {
    p * softplus(p)
}

#[inline]
fn confidence_penalty_grad(p: f64) -> f64 {
    softplus(p) + p * sigmoid(p)
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut q: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x /= total);
    q
}

/// Weighted objective components for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub bpr: f64,
    /// `conf_weight` times the mean penalty; exactly 0 when the weight is 0.
    pub conf: f64,
    /// `l2_weight` times half the squared norm of the batch's layer-0 rows,
    /// per triple.
    pub l2: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.bpr + self.conf + self.l2
    }
}

/// Gradient of the total objective with respect to the layer-0 tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub users: Matrix,
    pub items: Matrix,
}

struct TripleGrad {
    bpr: f64,
    conf: f64,
    user: Vec<f64>,
    items: Vec<(usize, Vec<f64>)>,
}

/// Loss of `batch` at the given layer-0 tables, and its gradient if asked.
///
/// The readout is recomputed by propagation, so gradients flow through
/// every layer back to the layer-0 rows.
pub fn batch_objective(
    user_emb: &Matrix,
    item_emb: &Matrix,
    adj: &NormalizedAdjacency,
    batch: &TrainBatch,
    config: &TrainConfig,
    with_grad: bool,
) -> Result<(LossParts, Option<Gradients>)> {
    if batch.is_empty() {
        return Ok((LossParts::default(), None));
    }
    let fwd = propagate(user_emb, item_emb, adj, config.layers, false)?;
    let (fu, fi) = (&fwd.users, &fwd.items);
    let dim = user_emb.cols();
    let b = batch.len() as f64;
    let pairs = batch.triples.iter().map(|t| t.negs.len()).sum::<usize>() as f64;
    let lambda = config.conf_weight;

    let per_triple = par::map_slice(&batch.triples, |t| {
        let user_vec = fu.row(t.user);
        let cands: Vec<usize> = t.candidates().collect();
        let scores: Vec<f64> = cands.iter().map(|&c| dot(user_vec, fi.row(c))).collect();
        let mut dscore = vec![0.0; cands.len()];

        let mut bpr = 0.0;
        for k in 1..cands.len() {
            let x = scores[k] - scores[0];
            bpr += softplus(x);
            let g = sigmoid(x) / pairs;
            dscore[k] += g;
            dscore[0] -= g;
        }

        let mut conf = 0.0;
        if lambda > 0.0 {
            let q = softmax(&scores);
            // label 1 at index 0
            let a: Vec<f64> = (0..q.len())
                .map(|c| {
                    if c == 0 {
                        0.0
                    } else {
                        confidence_penalty_grad(q[c])
                    }
                })
                .collect();
            conf = q[1..].iter().map(|&p| confidence_penalty(p)).sum();
            let mean_a: f64 = a.iter().zip(&q).map(|(x, y)| x * y).sum();
            for c in 0..q.len() {
                dscore[c] += lambda / b * q[c] * (a[c] - mean_a);
            }
        }

        let mut grad = TripleGrad {
            bpr,
            conf,
            user: vec![0.0; dim],
            items: Vec::with_capacity(cands.len()),
        };
        if with_grad {
            for (c, &item) in cands.iter().enumerate() {
                axpy(dscore[c], fi.row(item), &mut grad.user);
                grad.items
                    .push((item, user_vec.iter().map(|x| dscore[c] * x).collect()));
            }
        }
        grad
    });

    // Sequential reduction in triple order keeps runs reproducible.
    let mut parts = LossParts::default();
    let mut g_user = Matrix::zeros(user_emb.rows(), dim);
    let mut g_item = Matrix::zeros(item_emb.rows(), dim);
    let mut conf_sum = 0.0;
    for (t, tg) in batch.triples.iter().zip(&per_triple) {
        parts.bpr += tg.bpr;
        conf_sum += tg.conf;
        if with_grad {
            axpy(1.0, &tg.user, g_user.row_mut(t.user));
            for (item, g) in &tg.items {
                axpy(1.0, g, g_item.row_mut(*item));
            }
        }
    }
    parts.bpr /= pairs;
    parts.conf = if lambda > 0.0 {
        lambda * conf_sum / b
    } else {
        0.0
    };

    let mut l2 = 0.0;
    for t in &batch.triples {
        l2 += user_emb.row(t.user).iter().map(|x| x * x).sum::<f64>();
        for c in t.candidates() {
            l2 += item_emb.row(c).iter().map(|x| x * x).sum::<f64>();
        }
    }
    parts.l2 = config.l2_weight * 0.5 * l2 / b;

    if !with_grad {
        return Ok((parts, None));
    }
    let back = propagate(&g_user, &g_item, adj, config.layers, false)?;
    let (mut gu, mut gi) = (back.users, back.items);
    if config.l2_weight > 0.0 {
        let coef = config.l2_weight / b;
        for t in &batch.triples {
            axpy(coef, user_emb.row(t.user), gu.row_mut(t.user));
            for c in t.candidates() {
                axpy(coef, item_emb.row(c), gi.row_mut(c));
            }
        }
    }
    Ok((
        parts,
        Some(Gradients {
            users: gu,
            items: gi,
        }),
    ))
}

/// Mean softmax probability assigned to the negatives of each triple's
/// candidate set, under the current readout of `state`.
pub fn mean_negative_confidence(state: &EmbeddingState, batch: &TrainBatch) -> f64 {
    let per = par::map_slice(&batch.triples, |t| {
        let scores: Vec<f64> = t
            .candidates()
            .map(|c| state.score_pair(t.user, c))
            .collect();
        let q = softmax(&scores);
        (q[1..].iter().sum::<f64>(), q.len() - 1)
    });
    let (sum, n) = per
        .iter()
        .fold((0.0, 0usize), |(s, n), &(ps, pn)| (s + ps, n + pn));
    sum / n as f64
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub bpr: f64,
    pub conf: f64,
    pub l2: f64,
    pub batches: usize,
    pub wall_secs: f64,
}

/// Owns the optimizer and sampling stream across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    /// The sampler uses stream 1 of the ChaCha8 generator seeded with
    /// `config.seed`; initialization uses stream 0.
    pub fn new(config: TrainConfig, state: &EmbeddingState) -> Result<Self> {
        config.validate()?;
        if state.dim() != config.embed_dim {
            return Err(Error::DimensionMismatch(format!(
                "state dim {} != configured dim {}",
                state.dim(),
                config.embed_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let adam = Adam::new(
            config.learning_rate,
            &[
                state.user_emb.as_slice().len(),
                state.item_emb.as_slice().len(),
            ],
        );
        Ok(Self {
            config,
            adam,
            rng,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// `ceil(|train edges| / batch_size)` batches, then a readout refresh.
    pub fn train_epoch(
        &mut self,
        state: &mut EmbeddingState,
        adj: &NormalizedAdjacency,
    ) -> Result<EpochStats> {
        let start = Instant::now();
        let graph = adj.graph();
        let batches = graph.num_edges().div_ceil(self.config.batch_size);
        let mut sums = LossParts::default();
        for batch_ix in 0..batches {
            let batch = sample_batch(
                graph,
                self.config.batch_size,
                self.config.negatives,
                &mut self.rng,
            )?;
            let (parts, grads) = batch_objective(
                &state.user_emb,
                &state.item_emb,
                adj,
                &batch,
                &self.config,
                true,
            )?;
            let grads = grads.expect("gradient requested");
            self.adam.step(
                &mut [state.user_emb.as_mut_slice(), state.item_emb.as_mut_slice()],
                &[grads.users.as_slice(), grads.items.as_slice()],
            );
            if !(state.user_emb.is_finite() && state.item_emb.is_finite())
                || !parts.total().is_finite()
            {
                return Err(Error::DivergenceDetected {
                    epoch: self.epoch + 1,
                    batch: batch_ix,
                    detail: format!(
                        "non-finite parameters (bpr {}, conf {}, l2 {})",
                        parts.bpr, parts.conf, parts.l2
                    ),
                });
            }
            sums.bpr += parts.bpr;
            sums.conf += parts.conf;
            sums.l2 += parts.l2;
        }
        state.propagate(adj, self.config.layers)?;
        self.epoch += 1;
        let n = batches as f64;
        Ok(EpochStats {
            epoch: self.epoch,
            bpr: sums.bpr / n,
            conf: sums.conf / n,
            l2: sums.l2 / n,
            batches,
            wall_secs: start.elapsed().as_secs_f64(),
        })
    }

    /// Runs the remaining configured epochs, handing each epoch's stats to
    /// `on_epoch`. Returning `false` from the callback stops early.
    pub fn fit(
        &mut self,
        state: &mut EmbeddingState,
        adj: &NormalizedAdjacency,
        mut on_epoch: impl FnMut(&EpochStats, &EmbeddingState) -> bool,
    ) -> Result<Vec<EpochStats>> {
        let mut log = Vec::new();
        while self.epoch < self.config.epochs {
            let stats = self.train_epoch(state, adj)?;
            let keep_going = on_epoch(&stats, state);
            log.push(stats);
            if !keep_going {
                break;
            }
        }
        Ok(log)
    }
}

/// Initializes from `config.seed` and trains for `config.epochs`.
pub fn train(
    adj: &NormalizedAdjacency,
    config: &TrainConfig,
) -> Result<(EmbeddingState, Vec<EpochStats>)> {
    config.validate()?;
    let mut state = EmbeddingState::init(
        adj.num_users(),
        adj.num_items(),
        config.embed_dim,
        config.seed,
    )?;
    state.propagate(adj, config.layers)?;
    let mut trainer = Trainer::new(config.clone(), &state)?;
    let log = trainer.fit(&mut state, adj, |_, _| true)?;
    Ok((state, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_graph() -> InteractionGraph {
        InteractionGraph::build([(0, 0), (0, 1), (1, 0)], 2, 3).unwrap()
    }

    #[test]
    fn forced_negatives() {
        let g = toy_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let b = sample_batch(&g, 4, 1, &mut rng).unwrap();
            for t in &b.triples {
                assert!(g.has_edge(t.user, t.pos));
                if t.user == 0 {
                    assert_eq!(t.negs, vec![2]);
                }
            }
        }
        let g = InteractionGraph::build([(0, 0)], 1, 3).unwrap();
        let b = sample_batch(&g, 8, 2, &mut rng).unwrap();
        for t in &b.triples {
            let mut n = t.negs.clone();
            n.sort();
            assert_eq!(n, vec![1, 2]);
        }
    }

    #[test]
    fn no_negatives_left() {
        let g = InteractionGraph::build([(0, 0), (0, 1)], 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_batch(&g, 1, 1, &mut rng),
            Err(Error::NoNegativesAvailable { user: 0, .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = toy_graph();
        let a = sample_batch(&g, 16, 1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_batch(&g, 16, 1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bpr_values() {
        assert!((bpr_loss(1.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bpr_loss(20.0, 0.0) - 2.061153620314381e-9).abs() < 1e-21);
        assert!((bpr_loss(0.0, 20.0) - 20.000000002061153).abs() < 1e-12);
        assert!(bpr_loss(0.0, 1e5).is_finite());
    }

    #[test]
    fn conf_loss_values() {
        assert_eq!(conf_loss(&[0.9], &[1.0]).unwrap(), 0.0);
        assert_eq!(conf_loss(&[0.0], &[0.0]).unwrap(), 0.0);
        assert!((conf_loss(&[0.5], &[0.0]).unwrap() - 0.487_038).abs() < 1e-6);
        assert!(matches!(
            conf_loss(&[0.5], &[0.0, 1.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let zero_lr = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(zero_lr.validate().is_ok());
        for bad in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                conf_weight: -0.1,
                ..Default::default()
            },
            TrainConfig {
                negatives: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: f64::NAN,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
