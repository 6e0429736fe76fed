//! Checks shared by the integration tests and the acceptance target. Each
//! returns the measured quantity; callers decide how to judge it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treemil::autodiff::{Graph, NodeId, Tensor};
use treemil::data::{generate_synthetic, PostNode, PropagationTree, SynthConfig, Veracity, Vocabulary};
use treemil::evalmetrics::{f1_suite, roc_auc_binary};
use treemil::milbank::{
    aggregate_stance, aggregate_veracity, classifier_attention, target_pairs, ClassifierBank, ModelConfig,
};
use treemil::treemodel::{bu_aggregate, td_aggregate, td_path_stance, Direction, TreeShape};

use super::*;

fn scalars(g: &mut Graph<'_, f64>, xs: &[f64]) -> Vec<NodeId> {
    xs.iter().map(|&x| g.input(Tensor::scalar(x)).unwrap()).collect()
}

fn vectors(g: &mut Graph<'_, f64>, xs: &[Vec<f64>]) -> Vec<NodeId> {
    xs.iter().map(|x| g.input(Tensor::vector(x.clone())).unwrap()).collect()
}

/// Largest absolute deviation between each library routine and its oracle
/// over `instances` random trees of 1 to 6 nodes.
pub fn oracle_deviations(seed: u64, instances: usize) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 6];
    let names = [
        "bu_aggregate",
        "td_path_stance",
        "td_aggregate",
        "classifier_attention",
        "aggregate_stance",
        "aggregate_veracity",
    ];
    for _ in 0..instances {
        let n = rng.gen_range(1..=6);
        let d = rng.gen_range(2..=5);
        let parents = random_parents(&mut rng, n);
        let ctx = random_vecs(&mut rng, n, d);
        let p = random_probs(&mut rng, n);
        let hc = random_vecs(&mut rng, 1, d).remove(0);
        let shape = TreeShape::from_parents(parents.clone()).unwrap();

        let mut g = Graph::new();
        let cn = vectors(&mut g, &ctx);
        let pn = scalars(&mut g, &p);
        let hn = g.input(Tensor::vector(hc.clone())).unwrap();

        let bu = bu_aggregate(&mut g, &shape, &cn, &pn, hn).unwrap();
        let mut dev: f64 = (g.scalar(bu.veracity) - bu_claim(&parents, &ctx, &p, &hc)).abs();
        for i in 0..n {
            dev = dev.max((g.scalar(bu.aggregated[i]) - bu_pooled(&parents, &ctx, &p, &hc, i)).abs());
        }
        worst[0] = worst[0].max(dev);

        let scores: Vec<NodeId> = cn.iter().map(|&c| g.dot(c, hn).unwrap()).collect();
        for l in leaves(&parents) {
            let path = path_to(&parents, l);
            let (_, s) = td_path_stance(&mut g, &path, &scores, &pn).unwrap();
            worst[1] = worst[1].max((g.scalar(s) - td_path(&path, &ctx, &p, &hc)).abs());
        }

        let td = td_aggregate(&mut g, &shape, &cn, &pn, hn).unwrap();
        worst[2] = worst[2].max((g.scalar(td.veracity) - td_claim(&parents, &ctx, &p, &hc)).abs());

        // bank-level regrouping over a 4- or 3-class label set
        let vs: Vec<Veracity> = if rng.gen_bool(0.5) {
            Veracity::ALL.to_vec()
        } else {
            Veracity::RUMOR_ONLY.to_vec()
        };
        let pairs = target_pairs(&vs);
        let k = pairs.len();
        let q = random_vecs(&mut rng, 1, d).remove(0);
        let cvs = random_vecs(&mut rng, k, d);
        let qn = g.input(Tensor::vector(q.clone())).unwrap();
        let cvn = vectors(&mut g, &cvs);
        let bn = classifier_attention(&mut g, qn, &cvn).unwrap();
        let b_lib = g.value(bn).data().to_vec();
        let b_ref = beta(&q, &cvs);
        let bdev = b_lib.iter().zip(&b_ref).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst[3] = worst[3].max(bdev);

        let raw = random_probs(&mut rng, k);
        let s_lib = aggregate_stance(&raw, &b_ref, &pairs);
        let s_ref = regroup_stance(&raw, &b_ref, &pairs);
        let sdev = s_lib.iter().zip(&s_ref).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst[4] = worst[4].max(sdev);

        let v_lib = aggregate_veracity(&raw, &b_ref, &pairs, &vs);
        let v_ref = regroup_veracity(&raw, &b_ref, &pairs, &vs);
        let vdev = v_lib.iter().zip(&v_ref).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst[5] = worst[5].max(vdev);
    }
    names.into_iter().zip(worst).collect()
}

/// Result of running the full forward pass over random trees.
pub struct Normalization {
    pub distributions: usize,
    /// Largest `|Σ weights − 1|` over every attention distribution and β.
    pub max_sum_dev: f64,
    /// Probabilities checked, and how many fell outside `(0, 1)`.
    pub probabilities: usize,
    pub out_of_range: usize,
}

fn random_tree(rng: &mut ChaCha8Rng, words: &[String], i: usize) -> PropagationTree {
    let n = rng.gen_range(1..=15);
    let nodes = (0..n)
        .map(|j| {
            let k = rng.gen_range(1..=6);
            let text: Vec<&str> = (0..k).map(|_| words[rng.gen_range(0..words.len())].as_str()).collect();
            PostNode {
                post_id: format!("{i}-{j}"),
                parent: if j == 0 { None } else { Some(rng.gen_range(0..j)) },
                text: text.join(" "),
                gold_stance: None,
            }
        })
        .collect();
    PropagationTree {
        claim_id: format!("rand-{i}"),
        veracity: Veracity::ALL[i % 4],
        nodes,
    }
}

/// Predictions of untrained TD and BU banks on `trees` random trees.
pub fn normalization(seed: u64, trees: usize) -> Normalization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
    let sample: Vec<PropagationTree> = (0..trees).map(|i| random_tree(&mut rng, &words, i)).collect();
    let vocab = Vocabulary::build(&sample, 8, seed);
    let mut r = Normalization {
        distributions: 0,
        max_sum_dev: 0.0,
        probabilities: 0,
        out_of_range: 0,
    };
    for dir in [Direction::TopDown, Direction::BottomUp] {
        let cfg = ModelConfig {
            hidden: 8,
            embed_dim: 8,
            direction: dir,
            ..ModelConfig::default()
        };
        let bank: ClassifierBank<f64> = ClassifierBank::new(&Veracity::ALL, vocab.clone(), cfg, seed).unwrap();
        for t in &sample {
            let pred = bank.predict(t).unwrap();
            let mut dists: Vec<&[f64]> = vec![&pred.beta];
            for per_clf in &pred.attention {
                for a in per_clf {
                    dists.push(&a.weights);
                }
            }
            for w in dists {
                r.distributions += 1;
                r.max_sum_dev = r.max_sum_dev.max((w.iter().sum::<f64>() - 1.0).abs());
                if w.iter().any(|&x| !(x > 0.0 && x < 1.0 + 1e-15)) {
                    r.out_of_range += 1;
                }
            }
            let mut probs: Vec<f64> = pred.raw_veracity.clone();
            probs.extend(pred.raw_stances.iter().flatten());
            probs.extend(pred.veracity_scores.iter());
            probs.extend(pred.stance_scores.iter().flatten());
            r.probabilities += probs.len();
            r.out_of_range += probs.iter().filter(|&&p| !(p > 0.0 && p < 1.0)).count();
        }
    }
    r
}

pub struct MetricCheck {
    pub auc_max_dev: f64,
    pub auc_cases: usize,
    pub f1_max_dev: f64,
    pub micro_accuracy_max_dev: f64,
}

/// Rank AUC against pairwise counting and the F1 suite against a
/// confusion-matrix oracle on random data with deliberate ties.
pub fn metric_check(seed: u64, n: usize, repeats: usize) -> MetricCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MetricCheck {
        auc_max_dev: 0.0,
        auc_cases: 0,
        f1_max_dev: 0.0,
        micro_accuracy_max_dev: 0.0,
    };
    for _ in 0..repeats {
        // a coarse grid forces many ties
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..50) as f64) / 50.0).collect();
        let pos: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        if let (Some(a), Some(b)) = (roc_auc_binary(&scores, &pos), brute_auc(&scores, &pos)) {
            out.auc_max_dev = out.auc_max_dev.max((a - b).abs());
            out.auc_cases += 1;
        }

        let k = 4;
        let m = 200;
        let labels: Vec<usize> = (0..m).map(|_| rng.gen_range(0..k)).collect();
        let preds: Vec<usize> = labels
            .iter()
            .map(|&l| if rng.gen_bool(0.6) { l } else { rng.gen_range(0..k) })
            .collect();
        let lib = f1_suite(&preds, &labels, k).unwrap();
        let oracle = confusion_f1(&preds, &labels, k);
        let mut dev = (lib.macro_f1 - oracle.macro_f1).abs().max((lib.micro_f1 - oracle.micro_f1).abs());
        for c in 0..k {
            dev = dev.max((lib.per_class[c] - oracle.per_class[c]).abs());
        }
        out.f1_max_dev = out.f1_max_dev.max(dev);
        let acc = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / m as f64;
        out.micro_accuracy_max_dev = out.micro_accuracy_max_dev.max((lib.micro_f1 - acc).abs());
    }
    out
}

/// Classifier count for a 4-class and a 3-class synthetic corpus.
pub fn classifier_counts() -> (usize, usize) {
    let count = |vs: Vec<Veracity>| {
        let trees = generate_synthetic(&SynthConfig {
            claims_per_class: 2,
            veracities: vs,
            ..SynthConfig::default()
        })
        .unwrap();
        let labels = treemil::pipeline::label_set(&trees);
        let cfg = ModelConfig {
            hidden: 4,
            embed_dim: 4,
            ..ModelConfig::default()
        };
        let bank: ClassifierBank<f64> = treemil::pipeline::new_bank(&trees, &labels, &cfg, 1).unwrap();
        bank.len()
    };
    (count(Veracity::ALL.to_vec()), count(Veracity::RUMOR_ONLY.to_vec()))
}
