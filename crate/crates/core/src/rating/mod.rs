//! From cluster labels to ordinal resilience levels.

mod forest;
mod metrics;
mod search;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use forest::{feature_importances, fit_forest, fit_tree, DecisionTree, ForestConfig, ForestModel, TreeNode};
pub use metrics::{binary_auc, classification_metrics, ClassMetrics, MetricsReport};
pub use search::{grid_search, silhouette, SearchEntry, SearchReport, SearchSpace};

use crate::rng::substream;
use crate::{Error, Result};

/// Per-column ranges learned by [`min_max_scale`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl MinMaxScaler {
    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.mins.len()).filter(|&j| self.maxs[j] == self.mins[j]).collect()
    }

    /// Apply the stored ranges; constant columns map to 0.
    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mins.len() {
            return Err(Error::DimensionMismatch {
                context: "scaled columns",
                expected: self.mins.len(),
                got: x.ncols(),
            });
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, hi) = (self.mins[j], self.maxs[j]);
            if hi > lo {
                col.mapv_inplace(|v| (v - lo) / (hi - lo));
            } else {
                col.fill(0.0);
            }
        }
        Ok(out)
    }
}

/// Rescale every column to `[0, 1]`.
pub fn min_max_scale(x: ArrayView2<f64>) -> Result<(Array2<f64>, MinMaxScaler)> {
    if x.nrows() == 0 {
        return Err(Error::invalid("cannot scale an empty matrix"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("min-max scaling needs finite values"));
    }
    let mins: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.fold(f64::INFINITY, |a, &b| a.min(b))).collect();
    let maxs: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.fold(f64::NEG_INFINITY, |a, &b| a.max(b))).collect();
    let scaler = MinMaxScaler { mins, maxs };
    for j in scaler.constant_columns() {
        log::warn!("column {j} is constant ({}); scaled to 0", scaler.mins[j]);
    }
    Ok((scaler.transform(x)?, scaler))
}

/// Relabel clusters to `0..k'` in order of first appearance of each used
/// label value, dropping empty clusters. Returns the new labels and `k'`.
pub fn compact_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut used: Vec<usize> = labels.to_vec();
    used.sort_unstable();
    used.dedup();
    let relabeled = labels
        .iter()
        .map(|l| used.binary_search(l).expect("label present"))
        .collect();
    (relabeled, used.len())
}

/// Mean feature vector of each cluster (`k × d`).
pub fn cluster_means(x: ArrayView2<f64>, labels: &[usize], k: usize) -> Result<Array2<f64>> {
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "cluster labels",
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    let mut sums = Array2::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &l) in x.outer_iter().zip(labels) {
        if l >= k {
            return Err(Error::invalid(format!("label {l} out of range for {k} clusters")));
        }
        sums.row_mut(l).scaled_add(1.0, &row);
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("cluster {empty} has no members")));
    }
    for (mut row, &c) in sums.outer_iter_mut().zip(&counts) {
        row /= c as f64;
    }
    Ok(sums)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLevels {
    /// Importance-weighted score of each cluster.
    pub scores: Vec<f64>,
    /// Level of each cluster, 1 = lowest score.
    pub levels: Vec<usize>,
    pub tied: bool,
}

/// Weight each cluster's mean features by `importances`, then rank the
/// clusters by ascending score.
pub fn aggregate_and_rank(means: ArrayView2<f64>, importances: &[f64]) -> Result<ClusterLevels> {
    if importances.len() != means.ncols() {
        return Err(Error::DimensionMismatch {
            context: "importance weights",
            expected: means.ncols(),
            got: importances.len(),
        });
    }
    let scores: Vec<f64> = means
        .outer_iter()
        .map(|row| row.iter().zip(importances).map(|(m, w)| m * w).sum())
        .collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite cluster score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let tied = order.windows(2).any(|w| scores[w[0]] == scores[w[1]]);
    if tied {
        log::warn!("clusters share an aggregated score; ties ordered by cluster label");
    }
    let mut levels = vec![0; scores.len()];
    for (rank, &c) in order.iter().enumerate() {
        levels[c] = rank + 1;
    }
    Ok(ClusterLevels { scores, levels, tied })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAssignment {
    pub means: Array2<f64>,
    pub clusters: ClusterLevels,
    /// Level of every row.
    pub cell_levels: Vec<usize>,
}

impl LevelAssignment {
    pub fn k(&self) -> usize {
        self.clusters.levels.len()
    }
}

pub fn assign_levels(x: ArrayView2<f64>, labels: &[usize], k: usize, importances: &[f64]) -> Result<LevelAssignment> {
    let means = cluster_means(x, labels, k)?;
    let clusters = aggregate_and_rank(means.view(), importances)?;
    let cell_levels = labels.iter().map(|&l| clusters.levels[l]).collect();
    Ok(LevelAssignment {
        means,
        clusters,
        cell_levels,
    })
}

/// Seeded split of `0..n` into (train, test) index sets.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "rating/split", 0));
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let n_test = n_test.min(n.saturating_sub(1));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// Forest predictions on the held-out cells; AUC from the soft cluster assignments.
    pub metrics: MetricsReport,
    /// Macro AUC of the forest's own class probabilities on the held-out cells.
    pub forest_auc: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub importances: Vec<f64>,
    pub levels: LevelAssignment,
    pub fidelity: Option<FidelityReport>,
    pub forest: ForestModel,
}

/// Fit the classifier, measure its fidelity on a held-out split, weight
/// cluster means by its importances and rank clusters into levels.
///
/// `labels` must be compact (`0..k`); `soft` holds one score row per cell.
pub fn rate_clusters(
    x: ArrayView2<f64>,
    labels: &[usize],
    soft: ArrayView2<f64>,
    forest_cfg: &ForestConfig,
    test_fraction: f64,
) -> Result<Rating> {
    let (compact, k) = compact_labels(labels);
    if compact != labels {
        return Err(Error::invalid("cluster labels must be contiguous from 0"));
    }
    let (train, test) = train_test_split(x.nrows(), test_fraction, forest_cfg.seed);
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let fidelity = if test.is_empty() || compact_labels(&train_labels).1 < 2 {
        log::warn!("too few cells for a held-out fidelity estimate");
        None
    } else {
        let xt = x.select(Axis(0), &train);
        let xs = x.select(Axis(0), &test);
        let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let split_forest = fit_forest(xt.view(), &train_labels, forest_cfg)?;
        let mut proba = Array2::zeros((test.len(), k));
        let p = split_forest.predict_proba(xs.view())?;
        proba.slice_mut(ndarray::s![.., ..p.ncols()]).assign(&p);
        let predicted = crate::dec::hard_assignment(proba.view());
        let soft_test = soft.select(Axis(0), &test);
        let metrics = classification_metrics(&truth, &predicted, soft_test.view())?;
        let forest_auc = classification_metrics(&truth, &predicted, proba.view())?.auc;
        Some(FidelityReport {
            metrics,
            forest_auc,
            n_train: train.len(),
            n_test: test.len(),
        })
    };
    let forest = fit_forest(x, labels, forest_cfg)?;
    let importances = feature_importances(&forest);
    let levels = assign_levels(x, labels, k, &importances)?;
    Ok(Rating {
        importances,
        levels,
        fidelity,
        forest,
    })
}
