//! Two-stage training.
//!
//! Stage 1 fits every binary classifier on its binarized claim labels with
//! binary cross-entropy. Stage 2 freezes the bank and fits only the
//! aggregation encoder, on the summed per-class cross-entropy of the
//! regrouped veracity scores. Optimization is one Adam step per claim.

use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Gradients, Graph, NodeId, ParamStore, Tensor};
use crate::data::{PropagationTree, Veracity};
use crate::error::{Error, Result};
use crate::milbank::{
    argmax, binarize_label, classifier_attention, veracity_scores_node, BinaryClassifier, ClassifierBank, EncodedTree,
};
use crate::scalar::Scalar;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            max_epochs: 150,
            patience: 10,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// One epoch of one model. `model` is `clf{k}` or `agg`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub stage: u8,
    pub model: String,
    pub epoch: usize,
    pub loss: f64,
    pub val_loss: Option<f64>,
    /// Stage 1: binary accuracy; stage 2: veracity accuracy.
    pub val_accuracy: Option<f64>,
}

/// `-[y log ŷ + (1 - y) log(1 - ŷ)]` with `ŷ` clamped.
pub fn loss_bin<T: Scalar>(g: &mut Graph<'_, T>, y_hat: NodeId, y: u8) -> Result<NodeId> {
    let eps = T::of(PROB_CLAMP);
    let p = g.clamp(y_hat, eps, T::one() - eps)?;
    let q = if y == 1 { p } else { g.one_minus(p)? };
    let l = g.log(q)?;
    g.scale(l, -T::one())
}

/// Sum over classes of binary cross-entropy between each score and the
/// one-hot indicator of `gold`.
pub fn loss_agg<T: Scalar>(g: &mut Graph<'_, T>, scores: NodeId, gold: usize) -> Result<NodeId> {
    let n = g.value(scores).len();
    if gold >= n {
        return Err(Error::Index { index: gold, len: n });
    }
    let eps = T::of(PROB_CLAMP);
    let p = g.clamp(scores, eps, T::one() - eps)?;
    let q = g.one_minus(p)?;
    let lp = g.log(p)?;
    let lq = g.log(q)?;
    let mut onehot = vec![T::zero(); n];
    onehot[gold] = T::one();
    let rest: Vec<T> = onehot.iter().map(|&t| T::one() - t).collect();
    let pos = g.input(Tensor::vector(onehot))?;
    let neg = g.input(Tensor::vector(rest))?;
    let a = g.dot(pos, lp)?;
    let b = g.dot(neg, lq)?;
    let s = g.add(a, b)?;
    g.scale(s, -T::one())
}

/// A labelled, encoded claim.
#[derive(Clone, Debug)]
pub struct Example {
    pub tree: EncodedTree,
    pub veracity: Veracity,
}

pub fn encode_examples<T: Scalar>(bank: &ClassifierBank<T>, trees: &[PropagationTree]) -> Result<Vec<Example>> {
    trees
        .iter()
        .map(|t| {
            if !bank.veracities.contains(&t.veracity) {
                return Err(Error::Contract(format!(
                    "claim {} has veracity {} outside the bank's label set",
                    t.claim_id, t.veracity
                )));
            }
            Ok(Example {
                tree: bank.encode(t)?,
                veracity: t.veracity,
            })
        })
        .collect()
}

/// A non-finite value anywhere in a training forward pass is a divergence.
fn diverged<V>(r: Result<V>, label: &str, epoch: usize) -> Result<V> {
    match r {
        Err(Error::NonFinite { .. }) => Err(Error::Divergence {
            what: label.to_string(),
            epoch,
        }),
        other => other,
    }
}

fn finite(loss: f64, what: impl Fn() -> String, epoch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Divergence { what: what(), epoch })
    }
}

/// Shared epoch loop with early stopping on validation loss. `step` runs one
/// optimizer step and returns the training loss; `validate` returns
/// `(loss, accuracy)`. The best-validation parameters are restored at the end.
fn fit_loop<T: Scalar>(
    store: &mut ParamStore<T>,
    n_train: usize,
    has_val: bool,
    cfg: &TrainConfig,
    rng_stream: u64,
    label: &str,
    stage: u8,
    mut step: impl FnMut(&mut ParamStore<T>, &mut Adam<T>, &mut Gradients<T>, usize, usize) -> Result<f64>,
    validate: impl Fn(&ParamStore<T>) -> Result<(f64, f64)>,
) -> Result<Vec<LossRecord>> {
    let mut adam = Adam::new(store, T::of(cfg.lr));
    let mut grads = Gradients::zeros_like(store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(rng_stream);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut records = Vec::new();
    let mut best: Option<(f64, ParamStore<T>)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            grads.zero();
            let l = diverged(step(store, &mut adam, &mut grads, i, epoch), label, epoch)?;
            total += l;
        }
        let loss = total / n_train.max(1) as f64;
        let (val_loss, val_accuracy) = if has_val {
            let (l, a) = diverged(validate(store), label, epoch)?;
            (Some(finite(l, || label.to_string(), epoch)?), Some(a))
        } else {
            (None, None)
        };
        debug!(
            "stage {stage} {label} epoch {epoch}: loss {loss:.5} val {val_loss:?} ({:.2?})",
            started.elapsed()
        );
        records.push(LossRecord {
            stage,
            model: label.to_string(),
            epoch,
            loss,
            val_loss,
            val_accuracy,
        });
        if let Some(v) = val_loss {
            match &best {
                Some((b, _)) if v >= *b => {
                    stale += 1;
                    if stale >= cfg.patience {
                        break;
                    }
                }
                _ => {
                    best = Some((v, store.clone()));
                    stale = 0;
                }
            }
        }
    }
    if let Some((_, snapshot)) = best {
        *store = snapshot;
    }
    Ok(records)
}

fn classifier_loss<T: Scalar>(clf: &BinaryClassifier<T>, store: &ParamStore<T>, ex: &Example, veracities: &[Veracity], grads: Option<&mut Gradients<T>>) -> Result<(f64, f64)> {
    let y = binarize_label(ex.veracity, clf.pair, veracities)?;
    let mut g = Graph::with_params(store);
    let nodes = clf.forward(&mut g, &ex.tree)?;
    let y_hat = g.scalar(nodes.tree.veracity).as_f64();
    let loss = loss_bin(&mut g, nodes.tree.veracity, y)?;
    if let Some(gr) = grads {
        g.backward(loss, Some(gr))?;
    }
    let correct = f64::from(u8::from((y_hat >= 0.5) == (y == 1)));
    Ok((g.scalar(loss).as_f64(), correct))
}

/// Trains one binary classifier in place.
pub fn train_classifier<T: Scalar>(
    clf: &mut BinaryClassifier<T>,
    veracities: &[Veracity],
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    let label = format!("clf{}", clf.index);
    let mut store = std::mem::take(&mut clf.store);
    let model: &BinaryClassifier<T> = clf;
    let result = fit_loop(
        &mut store,
        train.len(),
        !val.is_empty(),
        cfg,
        model.index as u64 + 1,
        &label,
        1,
        |store, adam, grads, i, epoch| {
            let (l, _) = classifier_loss(model, store, &train[i], veracities, Some(grads))?;
            finite(l, || format!("classifier {} ({})", model.index, model.pair), epoch)?;
            adam.step(store, grads)?;
            Ok(l)
        },
        |store| {
            let mut l = 0.0;
            let mut acc = 0.0;
            for ex in val {
                let (li, ai) = classifier_loss(model, store, ex, veracities, None)?;
                l += li;
                acc += ai;
            }
            Ok((l / val.len() as f64, acc / val.len() as f64))
        },
    );
    clf.store = store;
    result
}

/// Stage 1: every classifier independently, in parallel across the rayon
/// pool. Records come back ordered by classifier then epoch.
pub fn train_stage1<T: Scalar>(
    bank: &mut ClassifierBank<T>,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    if train.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let started = Instant::now();
    let veracities = bank.veracities.clone();
    let per_clf: Vec<Result<Vec<LossRecord>>> = bank
        .classifiers
        .par_iter_mut()
        .map(|clf| train_classifier(clf, &veracities, train, val, cfg))
        .collect();
    let mut records = Vec::new();
    for r in per_clf {
        records.extend(r?);
    }
    info!(
        "stage 1: {} classifiers trained in {:.1?}",
        bank.classifiers.len(),
        started.elapsed()
    );
    Ok(records)
}

/// Classifier outputs the aggregation stage consumes, computed once.
#[derive(Clone, Debug)]
pub struct FrozenClaim<T> {
    pub claim_tokens: Vec<usize>,
    pub claim_vecs: Vec<Vec<T>>,
    pub veracity_probs: Vec<T>,
    pub gold: usize,
}

pub fn freeze_outputs<T: Scalar>(bank: &ClassifierBank<T>, examples: &[Example]) -> Result<Vec<FrozenClaim<T>>> {
    examples
        .iter()
        .map(|ex| {
            let out = bank.bank_outputs(&ex.tree)?;
            Ok(FrozenClaim {
                claim_tokens: ex.tree.tokens[0].clone(),
                claim_vecs: out.claim_vecs,
                veracity_probs: out.veracity,
                gold: bank
                    .veracities
                    .iter()
                    .position(|&v| v == ex.veracity)
                    .expect("label checked at encoding"),
            })
        })
        .collect()
}

fn aggregation_loss<T: Scalar>(
    bank: &ClassifierBank<T>,
    store: &ParamStore<T>,
    claim: &FrozenClaim<T>,
    grads: Option<&mut Gradients<T>>,
) -> Result<(f64, f64)> {
    let mut g = Graph::with_params(store);
    let q = bank.agg.query(&mut g, &claim.claim_tokens)?;
    let cs = claim
        .claim_vecs
        .iter()
        .map(|c| g.input(Tensor::vector(c.clone())))
        .collect::<Result<Vec<_>>>()?;
    let beta = classifier_attention(&mut g, q, &cs)?;
    let scores = veracity_scores_node(&mut g, beta, &claim.veracity_probs, &bank.pairs, &bank.veracities)?;
    let correct = f64::from(u8::from(argmax(g.value(scores).data()) == claim.gold));
    let loss = loss_agg(&mut g, scores, claim.gold)?;
    if let Some(gr) = grads {
        g.backward(loss, Some(gr))?;
    }
    Ok((g.scalar(loss).as_f64(), correct))
}

/// Stage 2: fits the aggregation encoder against frozen classifier outputs.
/// No classifier parameter is touched.
pub fn train_stage2<T: Scalar>(
    bank: &mut ClassifierBank<T>,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    if train.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let started = Instant::now();
    let frozen_train = freeze_outputs(bank, train)?;
    let frozen_val = freeze_outputs(bank, val)?;
    let mut store = std::mem::take(&mut bank.agg.store);
    let model: &ClassifierBank<T> = bank;
    let result = fit_loop(
        &mut store,
        frozen_train.len(),
        !frozen_val.is_empty(),
        cfg,
        0,
        "agg",
        2,
        |store, adam, grads, i, epoch| {
            let (l, _) = aggregation_loss(model, store, &frozen_train[i], Some(grads))?;
            finite(l, || "aggregation encoder".to_string(), epoch)?;
            adam.step(store, grads)?;
            Ok(l)
        },
        |store| {
            let mut l = 0.0;
            let mut acc = 0.0;
            for c in &frozen_val {
                let (li, ai) = aggregation_loss(model, store, c, None)?;
                l += li;
                acc += ai;
            }
            Ok((l / frozen_val.len() as f64, acc / frozen_val.len() as f64))
        },
    );
    bank.agg.store = store;
    info!("stage 2 trained in {:.1?}", started.elapsed());
    result
}
