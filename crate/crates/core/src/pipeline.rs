//! End-to-end plumbing: data splits, two-stage fitting, evaluation and
//! prediction dumps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{PropagationTree, Stance, Veracity, Vocabulary};
use crate::error::{Error, Result};
use crate::evalmetrics::{EvalReport, Task};
use crate::milbank::{AttentionValues, ClassifierBank, JointPrediction, ModelConfig};
use crate::scalar::Scalar;
use crate::training::{encode_examples, train_stage1, train_stage2, LossRecord, TrainConfig};

pub const DEFAULT_HOLDOUT: f64 = 0.2;

/// Splits off a seeded holdout. Both halves keep the input order.
pub fn split_holdout(
    trees: Vec<PropagationTree>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<PropagationTree>, Vec<PropagationTree>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("holdout fraction {fraction} outside [0, 1)")));
    }
    let n = trees.len();
    let n_val = (n as f64 * fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &i in &idx[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (t, v) in trees.into_iter().zip(is_val) {
        if v {
            val.push(t);
        } else {
            train.push(t);
        }
    }
    Ok((train, val))
}

/// All four classes when any non-rumor is present, otherwise the three rumor
/// classes.
pub fn label_set(trees: &[PropagationTree]) -> Vec<Veracity> {
    if trees.iter().any(|t| t.veracity == Veracity::N) {
        Veracity::ALL.to_vec()
    } else {
        Veracity::RUMOR_ONLY.to_vec()
    }
}

/// Fresh bank with the vocabulary drawn from `train`.
pub fn new_bank<T: Scalar>(
    train: &[PropagationTree],
    veracities: &[Veracity],
    config: &ModelConfig,
    seed: u64,
) -> Result<ClassifierBank<T>> {
    config.validate()?;
    let vocab = Vocabulary::build(train, config.embed_dim, seed);
    ClassifierBank::new(veracities, vocab, config.clone(), seed)
}

pub fn run_stage1<T: Scalar>(
    bank: &mut ClassifierBank<T>,
    train: &[PropagationTree],
    val: &[PropagationTree],
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let tr = encode_examples(bank, train)?;
    let va = encode_examples(bank, val)?;
    train_stage1(bank, &tr, &va, cfg)
}

pub fn run_stage2<T: Scalar>(
    bank: &mut ClassifierBank<T>,
    train: &[PropagationTree],
    val: &[PropagationTree],
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let tr = encode_examples(bank, train)?;
    let va = encode_examples(bank, val)?;
    train_stage2(bank, &tr, &va, cfg)
}

pub struct Fitted<T> {
    pub bank: ClassifierBank<T>,
    pub records: Vec<LossRecord>,
}

/// Builds a bank and runs both stages. Without `val` a seeded holdout of
/// `DEFAULT_HOLDOUT` is taken from `train`.
pub fn fit<T: Scalar>(
    train: Vec<PropagationTree>,
    val: Option<Vec<PropagationTree>>,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Fitted<T>> {
    let (train, val) = match val {
        Some(v) => (train, v),
        None => split_holdout(train, DEFAULT_HOLDOUT, cfg.seed)?,
    };
    if train.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let veracities = label_set(&train);
    let mut bank = new_bank(&train, &veracities, model, cfg.seed)?;
    let mut records = run_stage1(&mut bank, &train, &val, cfg)?;
    records.extend(run_stage2(&mut bank, &train, &val, cfg)?);
    Ok(Fitted { bank, records })
}

/// Predictions for every tree, computed in parallel and returned in input
/// order.
pub fn predict_all<T: Scalar>(bank: &ClassifierBank<T>, trees: &[PropagationTree]) -> Result<Vec<JointPrediction<T>>> {
    trees.par_iter().map(|t| bank.predict(t)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evaluation {
    pub rumor: EvalReport,
    /// Absent when the test trees carry no gold stances.
    pub stance: Option<EvalReport>,
}

/// Rumor and stance reports. Stance scoring skips the claim node and any
/// post without a gold label.
pub fn evaluate<T: Scalar>(
    method: &str,
    trees: &[PropagationTree],
    preds: &[JointPrediction<T>],
    veracities: &[Veracity],
) -> Result<Evaluation> {
    if trees.len() != preds.len() {
        return Err(Error::Contract(format!("{} predictions for {} trees", preds.len(), trees.len())));
    }
    let names: Vec<&str> = veracities.iter().map(|v| v.as_str()).collect();
    let mut scores = Vec::new();
    let mut pred_ix = Vec::new();
    let mut gold_ix = Vec::new();
    for (t, p) in trees.iter().zip(preds) {
        let gold = veracities.iter().position(|&v| v == t.veracity).ok_or_else(|| {
            Error::Structure {
                claim_id: t.claim_id.clone(),
                msg: format!("veracity {} outside the model's label set", t.veracity),
            }
        })?;
        scores.push(p.veracity_scores.iter().map(|x| x.as_f64()).collect());
        pred_ix.push(veracities.iter().position(|&v| v == p.predicted_veracity).expect("own label"));
        gold_ix.push(gold);
    }
    let rumor = EvalReport::compute(Task::Rumor, method, &names, &scores, &pred_ix, &gold_ix)?;

    let stance = if trees.iter().any(|t| t.has_stance_labels()) {
        let mut s_scores = Vec::new();
        let mut s_pred = Vec::new();
        let mut s_gold = Vec::new();
        for (t, p) in trees.iter().zip(preds) {
            for (i, node) in t.nodes.iter().enumerate().skip(1) {
                if let Some(g) = node.gold_stance {
                    s_scores.push(p.stance_scores[i].iter().map(|x| x.as_f64()).collect());
                    s_pred.push(p.predicted_stances[i].index());
                    s_gold.push(g.index());
                }
            }
        }
        let names: Vec<&str> = Stance::ALL.iter().map(|s| s.as_str()).collect();
        Some(EvalReport::compute(Task::Stance, method, &names, &s_scores, &s_pred, &s_gold)?)
    } else {
        None
    };
    Ok(Evaluation { rumor, stance })
}

/// Gold stance labels of all non-claim posts, as class indices.
pub fn gold_stances(trees: &[PropagationTree]) -> Vec<usize> {
    trees
        .iter()
        .flat_map(|t| t.nodes.iter().skip(1))
        .filter_map(|n| n.gold_stance.map(Stance::index))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeDump {
    pub id: String,
    pub stance: Stance,
    /// S, D, Q, C.
    pub scores: [f64; 4],
    pub gold: Option<Stance>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassifierDump {
    pub pair: String,
    pub veracity_prob: f64,
    pub stances: Vec<f64>,
    pub attention: Vec<AttentionValues>,
}

/// One line of the prediction dump.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub claim_id: String,
    pub predicted: Veracity,
    pub gold: Veracity,
    pub veracity_scores: Vec<(Veracity, f64)>,
    pub beta: Vec<f64>,
    pub nodes: Vec<NodeDump>,
    pub classifiers: Vec<ClassifierDump>,
}

pub fn prediction_record<T: Scalar>(
    bank: &ClassifierBank<T>,
    tree: &PropagationTree,
    pred: &JointPrediction<T>,
) -> PredictionRecord {
    PredictionRecord {
        claim_id: pred.claim_id.clone(),
        predicted: pred.predicted_veracity,
        gold: tree.veracity,
        veracity_scores: pred
            .veracities
            .iter()
            .zip(&pred.veracity_scores)
            .map(|(&v, s)| (v, s.as_f64()))
            .collect(),
        beta: pred.beta.iter().map(|b| b.as_f64()).collect(),
        nodes: tree
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeDump {
                id: n.post_id.clone(),
                stance: pred.predicted_stances[i],
                scores: pred.stance_scores[i].map(|x| x.as_f64()),
                gold: n.gold_stance,
            })
            .collect(),
        classifiers: bank
            .pairs
            .iter()
            .enumerate()
            .map(|(k, pair)| ClassifierDump {
                pair: pair.to_string(),
                veracity_prob: pred.raw_veracity[k].as_f64(),
                stances: pred.raw_stances[k].iter().map(|x| x.as_f64()).collect(),
                attention: pred.attention[k].clone(),
            })
            .collect(),
    }
}
