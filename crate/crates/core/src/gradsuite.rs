//! The finite-difference suite run by `treemil gradcheck` and the
//! acceptance tests: every graph op on random inputs, the GRU cell, both
//! tree directions end to end, and the aggregation loss.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::gradcheck::{check_inputs, check_params, GradCheck, DEFAULT_EPS, DEFAULT_TOLERANCE};
use crate::autodiff::{Graph, NodeId, ParamStore, Tensor};
use crate::data::{PostNode, PropagationTree, Veracity, Vocabulary};
use crate::encoder::{gru_cell, GruParams};
use crate::error::Result;
use crate::milbank::{classifier_attention, veracity_scores_node, ClassifierBank, ModelConfig};
use crate::training::{loss_agg, loss_bin};
use crate::treemodel::Direction;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Reduces any tensor to a scalar with a fixed random weighting so every
/// output element contributes a distinct gradient.
fn weighted_sum(g: &mut Graph<'_, f64>, x: NodeId, seed: u64) -> Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    if shape.is_empty() {
        return Ok(x);
    }
    let w = rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &shape, -1.0, 1.0);
    let w = g.input(w)?;
    let p = g.mul(x, w)?;
    g.sum(p)
}

type InputBuild = fn(&mut Graph<'_, f64>, &[NodeId]) -> Result<NodeId>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, (f64, f64), InputBuild)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], (-1.0, 1.0), |g, x| g.matmul(x[0], x[1])),
        ("matvec", vec![vec![3, 4], vec![4]], (-1.0, 1.0), |g, x| g.matvec(x[0], x[1])),
        ("add", vec![vec![5], vec![5]], (-1.0, 1.0), |g, x| g.add(x[0], x[1])),
        ("sub", vec![vec![5], vec![5]], (-1.0, 1.0), |g, x| g.sub(x[0], x[1])),
        ("mul", vec![vec![2, 3], vec![2, 3]], (-1.0, 1.0), |g, x| g.mul(x[0], x[1])),
        ("scale", vec![vec![4]], (-1.0, 1.0), |g, x| g.scale(x[0], -1.7)),
        ("add_scalar", vec![vec![4]], (-1.0, 1.0), |g, x| g.add_scalar(x[0], 0.3)),
        ("one_minus", vec![vec![4]], (-1.0, 1.0), |g, x| g.one_minus(x[0])),
        ("sigmoid", vec![vec![6]], (-3.0, 3.0), |g, x| g.sigmoid(x[0])),
        ("tanh", vec![vec![6]], (-2.0, 2.0), |g, x| g.tanh(x[0])),
        ("log", vec![vec![5]], (0.2, 3.0), |g, x| g.log(x[0])),
        ("softmax", vec![vec![5]], (-2.0, 2.0), |g, x| g.softmax(x[0])),
        ("concat", vec![vec![2], vec![3]], (-1.0, 1.0), |g, x| g.concat(&[x[0], x[1]])),
        ("stack", vec![vec![], vec![], vec![]], (-1.0, 1.0), |g, x| g.stack(x)),
        ("sum", vec![vec![2, 3]], (-1.0, 1.0), |g, x| g.sum(x[0])),
        ("dot", vec![vec![4], vec![4]], (-1.0, 1.0), |g, x| g.dot(x[0], x[1])),
        ("index", vec![vec![4]], (-1.0, 1.0), |g, x| g.index(x[0], 2)),
        // interior points only; the clamp is not differentiable at its bounds
        ("clamp", vec![vec![5]], (0.1, 0.9), |g, x| g.clamp(x[0], 0.0, 1.0)),
    ]
}

fn random_tree(rng: &mut ChaCha8Rng, n: usize, words: &[&str]) -> PropagationTree {
    let text = |rng: &mut ChaCha8Rng| {
        let k = rng.gen_range(1..=3);
        (0..k).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
    };
    let nodes = (0..n)
        .map(|i| PostNode {
            post_id: format!("p{i}"),
            parent: if i == 0 { None } else { Some(rng.gen_range(0..i)) },
            text: text(rng),
            gold_stance: None,
        })
        .collect();
    PropagationTree {
        claim_id: "gradcheck".into(),
        veracity: Veracity::F,
        nodes,
    }
}

/// A tiny bank whose parameters are redrawn from `[-scale, scale]` so the
/// check sees non-trivial curvature.
fn tiny_bank(direction: Direction, seed: u64, scale: f64) -> Result<(ClassifierBank<f64>, PropagationTree)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["alpha", "beta", "gamma", "delta", "eps"];
    let tree = random_tree(&mut rng, 4, &words);
    let vocab = Vocabulary::build(std::slice::from_ref(&tree), 3, seed);
    let config = ModelConfig {
        hidden: 3,
        embed_dim: 3,
        direction,
        ..ModelConfig::default()
    };
    let mut bank = ClassifierBank::new(&Veracity::ALL, vocab, config, seed)?;
    let redraw = |store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng| {
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = rand_tensor(rng, &shape, -scale, scale);
        }
    };
    redraw(&mut bank.classifiers[0].store, &mut rng);
    redraw(&mut bank.agg.store, &mut rng);
    Ok((bank, tree))
}

fn end_to_end(direction: Direction, seed: u64) -> Result<GradCheck> {
    let (bank, tree) = tiny_bank(direction, seed, 0.8)?;
    let enc = bank.encode(&tree)?;
    let clf = &bank.classifiers[0];
    check_params(&format!("end_to_end_{direction}"), &clf.store, DEFAULT_EPS, |g| {
        let out = clf.forward(g, &enc)?;
        loss_bin(g, out.tree.veracity, 1)
    })
}

fn aggregation(seed: u64) -> Result<GradCheck> {
    let (bank, tree) = tiny_bank(Direction::TopDown, seed, 0.8)?;
    let enc = bank.encode(&tree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let k = bank.len();
    let claim_vecs: Vec<Tensor<f64>> = (0..k).map(|_| rand_tensor(&mut rng, &[3], -1.0, 1.0)).collect();
    let probs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..0.95)).collect();
    check_params("aggregation_loss", &bank.agg.store, DEFAULT_EPS, |g| {
        let q = bank.agg.query(g, &enc.tokens[0])?;
        let cs = claim_vecs
            .iter()
            .map(|c| g.input(c.clone()))
            .collect::<Result<Vec<_>>>()?;
        let beta = classifier_attention(g, q, &cs)?;
        let scores = veracity_scores_node(g, beta, &probs, &bank.pairs, &bank.veracities)?;
        loss_agg(g, scores, 2)
    })
}

fn gru(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = GruParams::register(&mut store, "gru", 4, 3, &mut rng)?;
    for id in p.ids() {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = rand_tensor(&mut rng, &shape, -0.8, 0.8);
    }
    let x = rand_tensor(&mut rng, &[4], -1.0, 1.0);
    let h = rand_tensor(&mut rng, &[3], -1.0, 1.0);
    check_params("gru_cell", &store, DEFAULT_EPS, |g| {
        let xn = g.input(x.clone())?;
        let hn = g.input(h.clone())?;
        let out = gru_cell(g, xn, hn, &p)?;
        weighted_sum(g, out, seed)
    })
}

/// Worst relative error of every component.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub checks: Vec<SuiteEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub passed: bool,
}

impl SuiteReport {
    pub fn from_checks(checks: Vec<GradCheck>, tolerance: f64) -> Self {
        SuiteReport {
            tolerance,
            checks: checks
                .into_iter()
                .map(|c| SuiteEntry {
                    passed: c.passes(tolerance),
                    name: c.name,
                    max_rel_err: c.max_rel_err,
                    checked: c.checked,
                })
                .collect(),
        }
    }

    pub fn failures(&self) -> Vec<&SuiteEntry> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<24} {:>12} {:>8}  status\n", "component", "max_rel_err", "checked");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<24} {:>12.3e} {:>8}  {}",
                c.name,
                c.max_rel_err,
                c.checked,
                if c.passed { "ok" } else { "FAIL" }
            );
        }
        s
    }
}

/// Runs every component. `seed` varies the random inputs and trees.
pub fn standard_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for (i, (name, shapes, (lo, hi), build)) in op_cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(&mut rng, s, lo, hi)).collect();
        let wseed = seed.wrapping_mul(31).wrapping_add(i as u64);
        out.push(check_inputs(name, &inputs, DEFAULT_EPS, |g, x| {
            let y = build(g, x)?;
            weighted_sum(g, y, wseed)
        })?);
    }
    out.push(gather_row(seed)?);
    out.push(gru(seed)?);
    out.push(end_to_end(Direction::TopDown, seed)?);
    out.push(end_to_end(Direction::BottomUp, seed)?);
    out.push(aggregation(seed)?);
    Ok(out)
}

fn gather_row(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let table = store.add("table", rand_tensor(&mut rng, &[4, 3], -1.0, 1.0))?;
    check_params("gather_row", &store, DEFAULT_EPS, |g| {
        let a = g.gather_row(table, 1)?;
        let b = g.gather_row(table, 3)?;
        let c = g.gather_row(table, 1)?;
        let ab = g.mul(a, b)?;
        let s = g.add(ab, c)?;
        weighted_sum(g, s, seed)
    })
}

pub fn standard_suite(seed: u64) -> Result<SuiteReport> {
    Ok(SuiteReport::from_checks(standard_checks(seed)?, DEFAULT_TOLERANCE))
}
