//! Multiclass precision, recall, F1 and one-vs-rest AUC.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// One-vs-rest AUC; `None` when the class is absent from the truth.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
    /// Macro one-vs-rest AUC over classes present in the truth.
    pub auc: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[t][p]` counts samples of true class `t` predicted as `p`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Mann–Whitney estimate of P(score of a positive > score of a negative),
/// counting ties as one half.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            if positive[i] {
                rank_sum += mid_rank;
            }
        }
        start = end + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Metrics of `predicted` against `truth`, with `scores[i][c]` the score of
/// sample `i` for class `c`. Classes absent from the truth are left out of the
/// macro averages.
pub fn classification_metrics(truth: &[usize], predicted: &[usize], scores: ArrayView2<f64>) -> Result<MetricsReport> {
    let n = truth.len();
    if predicted.len() != n || scores.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "metric inputs",
            expected: n,
            got: predicted.len().min(scores.nrows()),
        });
    }
    if n == 0 {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let n_classes = scores
        .ncols()
        .max(truth.iter().chain(predicted).max().map_or(0, |&c| c + 1));
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let mut per_class = Vec::with_capacity(n_classes);
    let (mut sp, mut sr, mut sf, mut sa) = (0.0, 0.0, 0.0, 0.0);
    let (mut n_present, mut n_auc) = (0usize, 0usize);
    for c in 0..n_classes {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted_c: usize = confusion.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted_c);
        let recall = ratio(tp, support);
        let f1 = harmonic(precision, recall);
        let auc = if c < scores.ncols() {
            let col: Vec<f64> = scores.column(c).to_vec();
            let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            binary_auc(&col, &pos)
        } else {
            None
        };
        if support == 0 {
            log::warn!("class {c} is absent from the truth labels; excluded from macro averages");
        } else {
            n_present += 1;
            sp += precision;
            sr += recall;
            sf += f1;
        }
        if let Some(a) = auc {
            n_auc += 1;
            sa += a;
        }
        per_class.push(ClassMetrics {
            class: c,
            precision,
            recall,
            f1,
            support,
            auc,
        });
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / n as f64;
    let macro_avg = |s: f64| if n_present > 0 { s / n_present as f64 } else { 0.0 };
    Ok(MetricsReport {
        macro_precision: macro_avg(sp),
        macro_recall: macro_avg(sr),
        macro_f1: macro_avg(sf),
        micro_precision: accuracy,
        micro_recall: accuracy,
        micro_f1: accuracy,
        accuracy,
        auc: if n_auc > 0 { sa / n_auc as f64 } else { f64::NAN },
        per_class,
        confusion,
    })
}
