mod common;

use proptest::prelude::*;

use treemil::autodiff::{Graph, Tensor};
use treemil::data::{parse_dataset, write_dataset_to, PostNode, PropagationTree, Stance, Veracity};
use treemil::evalmetrics::{f1_suite, roc_auc_ovr};

fn labelled(max: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (2usize..max).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), n),
            prop::collection::vec(0usize..3, n),
        )
    })
}

fn tree_strategy() -> impl Strategy<Value = PropagationTree> {
    (1usize..10)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(any::<prop::sample::Index>(), n),
                prop::collection::vec("[a-z ]{0,12}", n),
                prop::collection::vec(prop::option::of(0usize..4), n),
                0usize..4,
            )
        })
        .prop_map(|(parents, texts, stances, v)| PropagationTree {
            claim_id: "c".into(),
            veracity: Veracity::ALL[v],
            nodes: parents
                .iter()
                .zip(texts)
                .zip(stances)
                .enumerate()
                .map(|(i, ((p, text), s))| PostNode {
                    post_id: format!("p{i}"),
                    parent: if i == 0 { None } else { Some(p.index(i)) },
                    text,
                    gold_stance: s.map(|k| Stance::ALL[k]),
                })
                .collect(),
        })
}

proptest! {
    #[test]
    fn auc_ignores_monotone_transforms((scores, labels) in labelled(40)) {
        let a = roc_auc_ovr(&scores, &labels, 3);
        let warped: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|x| (3.0 * x).exp() - 7.0).collect()).collect();
        let b = roc_auc_ovr(&warped, &labels, 3);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn metrics_ignore_instance_order((scores, labels) in labelled(40), rot in 0usize..40) {
        let n = labels.len();
        let r = rot % n;
        let mut s2 = scores.clone();
        let mut l2 = labels.clone();
        s2.rotate_left(r);
        l2.rotate_left(r);
        if let (Ok(a), Ok(b)) = (roc_auc_ovr(&scores, &labels, 3), roc_auc_ovr(&s2, &l2, 3)) {
            prop_assert!((a.macro_auc - b.macro_auc).abs() < 1e-12);
        }
        let preds: Vec<usize> = scores.iter().map(|r| treemil::milbank::argmax(r)).collect();
        let mut p2 = preds.clone();
        p2.rotate_left(r);
        let f = f1_suite(&preds, &labels, 3).unwrap();
        let g = f1_suite(&p2, &l2, 3).unwrap();
        prop_assert!((f.macro_f1 - g.macro_f1).abs() < 1e-12);
        prop_assert!((f.micro_f1 - g.micro_f1).abs() < 1e-12);
    }

    #[test]
    fn micro_f1_is_accuracy_and_macro_is_bounded(
        labels in prop::collection::vec(0usize..4, 1..80),
        noise in prop::collection::vec(0usize..4, 80),
        flip in prop::collection::vec(any::<bool>(), 80),
    ) {
        let preds: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| if flip[i] { noise[i] } else { l }).collect();
        let f = f1_suite(&preds, &labels, 4).unwrap();
        let acc = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64;
        prop_assert!((f.micro_f1 - acc).abs() < 1e-12);
        let lo = f.per_class.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f.per_class.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(f.macro_f1 >= lo - 1e-15 && f.macro_f1 <= hi + 1e-15);
        prop_assert!(f.per_class.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert_eq!(f.support.iter().sum::<usize>(), labels.len());
    }

    #[test]
    fn softmax_is_a_distribution(xs in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(xs.clone())).unwrap();
        let s = g.softmax(x).unwrap();
        let v = g.value(s).data();
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|&p| p >= 0.0));
        let oracle = common::softmax(&xs);
        prop_assert!(v.iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn node_order_is_valid_only_when_parents_come_first(tree in tree_strategy(), perm in prop::collection::vec(any::<prop::sample::Index>(), 10)) {
        // shuffle positions and remap parent indices accordingly
        let n = tree.len();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, perm[i].index(i + 1));
        }
        let mut pos = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            pos[old] = new;
        }
        let nodes: Vec<PostNode> = order
            .iter()
            .map(|&old| {
                let mut node = tree.nodes[old].clone();
                node.parent = node.parent.map(|p| pos[p]);
                node
            })
            .collect();
        let valid = order[0] == 0 && (1..n).all(|old| pos[tree.nodes[old].parent.unwrap()] < pos[old]);
        let shuffled = PropagationTree { nodes, ..tree.clone() };
        prop_assert_eq!(shuffled.validate().is_ok(), valid);
    }

    #[test]
    fn dataset_lines_roundtrip(trees in prop::collection::vec(tree_strategy(), 1..5)) {
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, &trees).unwrap();
        let back = parse_dataset(buf.as_slice()).unwrap();
        let mut again = Vec::new();
        write_dataset_to(&mut again, &back).unwrap();
        // retweet filtering may drop nodes on the first pass, never after
        let twice = parse_dataset(again.as_slice()).unwrap();
        prop_assert_eq!(&back, &twice);
        if trees.iter().all(|t| t.nodes.iter().skip(1).all(|n| n.text != t.claim_text())) {
            prop_assert_eq!(buf, again);
        }
    }
}
