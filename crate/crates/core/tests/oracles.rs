mod common;

use common::suites::{classifier_counts, metric_check, normalization, oracle_deviations};

#[test]
fn pooling_and_regrouping_match_explicit_loops() {
    for (name, dev) in oracle_deviations(11, 50) {
        assert!(dev <= 1e-12, "{name}: deviation {dev:e}");
    }
}

#[test]
fn attention_and_probabilities_are_normalized() {
    let r = normalization(5, 100);
    assert!(r.distributions > 100);
    assert!(r.max_sum_dev <= 1e-9, "{}", r.max_sum_dev);
    assert_eq!(r.out_of_range, 0);
}

#[test]
fn metrics_match_brute_force() {
    let m = metric_check(3, 1000, 5);
    assert_eq!(m.auc_cases, 5);
    assert_eq!(m.auc_max_dev, 0.0);
    assert!(m.f1_max_dev <= 1e-12);
    assert!(m.micro_accuracy_max_dev <= 1e-12);
}

#[test]
fn bank_sizes_follow_the_label_set() {
    assert_eq!(classifier_counts(), (16, 12));
}
