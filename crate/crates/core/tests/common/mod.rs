//! Independent reference implementations used as test oracles. Plain loops
//! over `f64`, no graph.

#![allow(dead_code)]

pub mod suites;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use treemil::data::{Stance, Veracity};
use treemil::milbank::TargetPair;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Random parents for an `n`-node tree in creation order.
pub fn random_parents(rng: &mut ChaCha8Rng, n: usize) -> Vec<Option<usize>> {
    (0..n).map(|i| if i == 0 { None } else { Some(rng.gen_range(0..i)) }).collect()
}

pub fn random_vecs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.01..0.99)).collect()
}

fn children_of(parents: &[Option<usize>], i: usize) -> Vec<usize> {
    (0..parents.len()).filter(|&j| parents[j] == Some(i)).collect()
}

/// Bottom-up pooled probability at node `i`, by recursion.
pub fn bu_pooled(parents: &[Option<usize>], ctx: &[Vec<f64>], p: &[f64], hc: &[f64], i: usize) -> f64 {
    let kids = children_of(parents, i);
    if kids.is_empty() {
        return p[i];
    }
    let mut scores = vec![dot(&ctx[i], hc)];
    let mut vals = vec![p[i]];
    for &c in &kids {
        scores.push(dot(&ctx[c], hc));
        vals.push(bu_pooled(parents, ctx, p, hc, c));
    }
    let a = softmax(&scores);
    a.iter().zip(&vals).map(|(w, v)| w * v).sum()
}

pub fn bu_claim(parents: &[Option<usize>], ctx: &[Vec<f64>], p: &[f64], hc: &[f64]) -> f64 {
    bu_pooled(parents, ctx, p, hc, 0)
}

pub fn leaves(parents: &[Option<usize>]) -> Vec<usize> {
    (0..parents.len()).filter(|&i| children_of(parents, i).is_empty()).collect()
}

pub fn path_to(parents: &[Option<usize>], leaf: usize) -> Vec<usize> {
    let mut path = vec![leaf];
    let mut cur = leaf;
    while let Some(p) = parents[cur] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    path
}

pub fn td_path(path: &[usize], ctx: &[Vec<f64>], p: &[f64], hc: &[f64]) -> f64 {
    let scores: Vec<f64> = path.iter().map(|&j| dot(&ctx[j], hc)).collect();
    let a = softmax(&scores);
    path.iter().zip(&a).map(|(&j, w)| w * p[j]).sum()
}

pub fn td_claim(parents: &[Option<usize>], ctx: &[Vec<f64>], p: &[f64], hc: &[f64]) -> f64 {
    let ls = leaves(parents);
    let s: Vec<f64> = ls.iter().map(|&l| td_path(&path_to(parents, l), ctx, p, hc)).collect();
    let scores: Vec<f64> = ls.iter().map(|&l| dot(&ctx[l], hc)).collect();
    let a = softmax(&scores);
    a.iter().zip(&s).map(|(w, v)| w * v).sum()
}

pub fn beta(query: &[f64], claim_vecs: &[Vec<f64>]) -> Vec<f64> {
    let scores: Vec<f64> = claim_vecs.iter().map(|c| dot(query, c)).collect();
    softmax(&scores)
}

pub fn regroup_stance(raw: &[f64], beta: &[f64], pairs: &[TargetPair]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (s, slot) in Stance::ALL.iter().zip(out.iter_mut()) {
        for k in 0..pairs.len() {
            if pairs[k].stance == *s {
                *slot += beta[k] * raw[k];
            }
        }
    }
    out
}

pub fn regroup_veracity(raw: &[f64], beta: &[f64], pairs: &[TargetPair], vs: &[Veracity]) -> Vec<f64> {
    vs.iter()
        .map(|v| {
            (0..pairs.len())
                .filter(|&k| pairs[k].veracity == *v)
                .map(|k| beta[k] * raw[k])
                .sum()
        })
        .collect()
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly, ties
/// counting one half.
pub fn brute_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

pub struct ConfusionF1 {
    pub per_class: Vec<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

/// F1 from an explicit confusion matrix `m[gold][pred]`.
pub fn confusion_f1(preds: &[usize], labels: &[usize], n: usize) -> ConfusionF1 {
    let mut m = vec![vec![0usize; n]; n];
    for (&p, &l) in preds.iter().zip(labels) {
        m[l][p] += 1;
    }
    let per_class: Vec<f64> = (0..n)
        .map(|c| {
            let tp = m[c][c] as f64;
            let fp: f64 = (0..n).filter(|&r| r != c).map(|r| m[r][c] as f64).sum();
            let fn_: f64 = (0..n).filter(|&k| k != c).map(|k| m[c][k] as f64).sum();
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            }
        })
        .collect();
    let trace: usize = (0..n).map(|c| m[c][c]).sum();
    ConfusionF1 {
        macro_f1: per_class.iter().sum::<f64>() / n as f64,
        micro_f1: trace as f64 / preds.len() as f64,
        per_class,
    }
}
