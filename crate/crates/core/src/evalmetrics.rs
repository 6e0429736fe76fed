//! AUC, micro/macro F1 and per-class F1 for claim veracity and post stance.
//!
//! Multi-class AUC is the unweighted mean of one-vs-rest AUCs over classes
//! that have both positive and negative instances.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary ROC AUC via the rank-sum statistic with midranks for ties.
/// `None` when either class is absent.
pub fn roc_auc_binary(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // rank sums are kept doubled so midranks stay integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the midrank (i + j + 2) / 2
        let mid_x2 = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| positive[k]).count() as u128;
        rank_sum_x2 += mid_x2 * pos_in_group;
        i = j + 1;
    }
    let (np, nn) = (n_pos as u128, n_neg as u128);
    let u_x2 = rank_sum_x2 - np * (np + 1);
    Some(u_x2 as f64 / (2 * np * nn) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub macro_auc: f64,
    pub per_class: Vec<Option<f64>>,
    /// Classes without both positives and negatives.
    pub skipped: Vec<usize>,
}

/// Macro one-vs-rest AUC. `scores[i][c]` is instance `i`'s score for class `c`.
pub fn roc_auc_ovr(scores: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<AucSummary> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} score rows for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.len() != n_classes) {
        return Err(Error::Contract(format!("score rows must have {n_classes} entries")));
    }
    let mut per_class = Vec::with_capacity(n_classes);
    let mut skipped = Vec::new();
    for c in 0..n_classes {
        let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let auc = roc_auc_binary(&col, &pos);
        if auc.is_none() {
            skipped.push(c);
        }
        per_class.push(auc);
    }
    let vals: Vec<f64> = per_class.iter().flatten().copied().collect();
    if vals.is_empty() {
        return Err(Error::MetricUndefined("no class has both positive and negative instances".into()));
    }
    Ok(AucSummary {
        macro_auc: vals.iter().sum::<f64>() / vals.len() as f64,
        per_class,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub support: Vec<usize>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1 with `0/0 = 0`; macro F1 averages over the
/// whole class set; micro F1 pools counts.
pub fn f1_suite(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<F1Summary> {
    if preds.is_empty() {
        return Err(Error::MetricUndefined("no instances".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Contract(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if let Some(&bad) = preds.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(Error::Index {
            index: bad,
            len: n_classes,
        });
    }
    let mut tp = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        predicted[p] += 1;
        support[l] += 1;
        if p == l {
            tp[p] += 1;
        }
    }
    let precision: Vec<f64> = (0..n_classes).map(|c| ratio(tp[c], predicted[c])).collect();
    let recall: Vec<f64> = (0..n_classes).map(|c| ratio(tp[c], support[c])).collect();
    let per_class: Vec<f64> = (0..n_classes)
        .map(|c| {
            let (p, r) = (precision[c], recall[c]);
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .collect();
    let total_tp: usize = tp.iter().sum();
    let total_pred: usize = predicted.iter().sum();
    let micro_p = ratio(total_tp, total_pred);
    let micro_r = ratio(total_tp, preds.len());
    let micro_f1 = if micro_p + micro_r == 0.0 {
        0.0
    } else {
        2.0 * micro_p * micro_r / (micro_p + micro_r)
    };
    Ok(F1Summary {
        micro_f1,
        macro_f1: per_class.iter().sum::<f64>() / n_classes as f64,
        per_class,
        precision,
        recall,
        support,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Rumor,
    Stance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub method: String,
    /// Class names in task order.
    pub classes: Vec<String>,
    /// `None` when no class is evaluable.
    pub auc: Option<f64>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<String, f64>,
    pub support: BTreeMap<String, usize>,
    pub auc_skipped: Vec<String>,
    pub instances: usize,
}

impl EvalReport {
    /// `class_names` fixes the class order of `scores`, `preds` and `labels`.
    pub fn compute(
        task: Task,
        method: &str,
        class_names: &[&str],
        scores: &[Vec<f64>],
        preds: &[usize],
        labels: &[usize],
    ) -> Result<Self> {
        let n = class_names.len();
        let f1 = f1_suite(preds, labels, n)?;
        let (auc, skipped) = match roc_auc_ovr(scores, labels, n) {
            Ok(a) => (Some(a.macro_auc), a.skipped),
            Err(Error::MetricUndefined(_)) => (None, (0..n).collect()),
            Err(e) => return Err(e),
        };
        Ok(EvalReport {
            task,
            method: method.to_string(),
            classes: class_names.iter().map(|c| c.to_string()).collect(),
            auc,
            micro_f1: f1.micro_f1,
            macro_f1: f1.macro_f1,
            per_class_f1: class_names
                .iter()
                .zip(&f1.per_class)
                .map(|(c, &v)| (c.to_string(), v))
                .collect(),
            support: class_names
                .iter()
                .zip(&f1.support)
                .map(|(c, &v)| (c.to_string(), v))
                .collect(),
            auc_skipped: skipped.iter().map(|&c| class_names[c].to_string()).collect(),
            instances: preds.len(),
        })
    }

    /// Column names after the method: AUC, MicF, MacF, then one F1 per class.
    pub fn header(class_order: &[&str]) -> String {
        let mut s = format!("{:<18} {:>6} {:>6} {:>6}", "Method", "AUC", "MicF", "MacF");
        for c in class_order {
            let _ = write!(s, " {:>6}", format!("{c}:F1"));
        }
        s
    }

    pub fn row(&self, class_order: &[&str]) -> String {
        let auc = self.auc.map_or("-".to_string(), |a| format!("{a:.3}"));
        let mut s = format!(
            "{:<18} {:>6} {:>6.3} {:>6.3}",
            self.method, auc, self.micro_f1, self.macro_f1
        );
        for c in class_order {
            let v = self.per_class_f1.get(*c).map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = write!(s, " {v:>6}");
        }
        s
    }

    /// Header plus one row.
    pub fn table(&self) -> String {
        let classes: Vec<&str> = self.classes.iter().map(String::as_str).collect();
        format!("{}\n{}", Self::header(&classes), self.row(&classes))
    }
}

/// Macro F1 of always predicting the most frequent gold class (first in
/// class order on ties).
pub fn majority_baseline_macro_f1(labels: &[usize], n_classes: usize) -> Result<f64> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for c in 1..n_classes {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    Ok(f1_suite(&vec![best; labels.len()], labels, n_classes)?.macro_f1)
}
