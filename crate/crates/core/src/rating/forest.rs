//! Random forest of CART classification trees with Gini impurity.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{substream, StageRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure or cannot be split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        /// Weighted class counts of the training samples reaching the leaf.
        counts: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary tree stored as an arena; node 0 is the root. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    /// Total weighted impurity decrease attributed to each feature.
    pub impurity_decrease: Vec<f64>,
}

impl DecisionTree {
    pub fn leaf_counts(&self, x: ArrayView1<f64>) -> &[f64] {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { counts } => return counts,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_classes: usize,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
    pub seed: u64,
    pub importances: Vec<f64>,
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    weights: Vec<f64>,
    n_classes: usize,
    max_features: usize,
    min_leaf: f64,
    max_depth: Option<usize>,
    nodes: Vec<TreeNode>,
    importance: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl Builder<'_> {
    fn class_counts(&self, idx: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += self.weights[i];
        }
        counts
    }

    fn best_split_on(&self, idx: &mut [usize], feature: usize, parent: &[f64], total: f64) -> Option<BestSplit> {
        idx.sort_by(|&a, &b| self.x[[a, feature]].total_cmp(&self.x[[b, feature]]).then(a.cmp(&b)));
        let parent_impurity = total * gini(parent, total);
        let mut left = vec![0.0; self.n_classes];
        let mut left_w = 0.0;
        let mut best: Option<BestSplit> = None;
        for pos in 0..idx.len() - 1 {
            let i = idx[pos];
            left[self.y[i]] += self.weights[i];
            left_w += self.weights[i];
            let (v, next) = (self.x[[i, feature]], self.x[[idx[pos + 1], feature]]);
            if v >= next {
                continue;
            }
            let right_w = total - left_w;
            if left_w < self.min_leaf || right_w < self.min_leaf {
                continue;
            }
            let right: Vec<f64> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
            let decrease = parent_impurity - left_w * gini(&left, left_w) - right_w * gini(&right, right_w);
            if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                let mut threshold = 0.5 * (v + next);
                if threshold >= next {
                    threshold = v;
                }
                best = Some(BestSplit {
                    feature,
                    threshold,
                    decrease,
                });
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut StageRng) -> usize {
        let counts = self.class_counts(idx);
        let total: f64 = counts.iter().sum();
        let node_id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { counts: counts.clone() });
        let pure = counts.iter().filter(|c| **c > 0.0).count() <= 1;
        if pure || self.max_depth.is_some_and(|d| depth >= d) || total < 2.0 * self.min_leaf {
            return node_id;
        }
        let mut features: Vec<usize> = (0..self.x.ncols()).collect();
        features.shuffle(rng);
        let mut best: Option<BestSplit> = None;
        for (n_seen, &f) in features.iter().enumerate() {
            if n_seen >= self.max_features && best.is_some() {
                break;
            }
            if let Some(s) = self.best_split_on(idx, f, &counts, total) {
                if best.as_ref().is_none_or(|b| s.decrease > b.decrease) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else {
            return node_id;
        };
        self.importance[split.feature] += split.decrease.max(0.0);
        let mid = stable_partition(idx, |&i| self.x[[i, split.feature]] <= split.threshold);
        let (l, r) = idx.split_at_mut(mid);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[node_id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        node_id
    }
}

/// Stable in-place partition; returns the number of elements satisfying `pred`.
fn stable_partition(v: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let (yes, no): (Vec<usize>, Vec<usize>) = v.iter().partition(|i| pred(i));
    let n = yes.len();
    v[..n].copy_from_slice(&yes);
    v[n..].copy_from_slice(&no);
    n
}

/// Fit one tree on rows weighted by `weights` (zero-weight rows are ignored).
pub fn fit_tree(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    weights: Vec<f64>,
    cfg: &ForestConfig,
    rng: &mut StageRng,
) -> DecisionTree {
    let d = x.ncols();
    let max_features = cfg
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().floor() as usize)
        .clamp(1, d);
    let mut idx: Vec<usize> = (0..x.nrows()).filter(|&i| weights[i] > 0.0).collect();
    let mut b = Builder {
        x,
        y,
        weights,
        n_classes,
        max_features,
        min_leaf: cfg.min_samples_leaf.max(1) as f64,
        max_depth: cfg.max_depth,
        nodes: Vec::new(),
        importance: vec![0.0; d],
    };
    b.grow(&mut idx, 0, rng);
    DecisionTree {
        nodes: b.nodes,
        impurity_decrease: b.importance,
    }
}

/// Train `cfg.n_trees` trees on seeded bootstrap samples of `(x, labels)`.
pub fn fit_forest(x: ArrayView2<f64>, labels: &[usize], cfg: &ForestConfig) -> Result<ForestModel> {
    let (m, d) = x.dim();
    if labels.len() != m {
        return Err(Error::DimensionMismatch {
            context: "forest labels",
            expected: m,
            got: labels.len(),
        });
    }
    if m == 0 || d == 0 || cfg.n_trees == 0 {
        return Err(Error::invalid("random forest needs samples, features and at least one tree"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("random forest input must be finite"));
    }
    let n_classes = labels.iter().max().map_or(0, |&l| l + 1);
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::invalid("random forest needs at least two classes"));
    }
    let trees: Vec<DecisionTree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(cfg.seed, "forest/tree", t as u64);
            let weights = if cfg.bootstrap {
                let mut w = vec![0.0; m];
                for _ in 0..m {
                    w[rng.random_range(0..m)] += 1.0;
                }
                w
            } else {
                vec![1.0; m]
            };
            fit_tree(x, labels, n_classes, weights, cfg, &mut rng)
        })
        .collect();
    let importances = average_importances(&trees, d);
    Ok(ForestModel {
        n_classes,
        n_features: d,
        trees,
        seed: cfg.seed,
        importances,
    })
}

fn average_importances(trees: &[DecisionTree], d: usize) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    for t in trees {
        let total: f64 = t.impurity_decrease.iter().sum();
        if total > 0.0 {
            for (a, v) in acc.iter_mut().zip(&t.impurity_decrease) {
                *a += v / total;
            }
        }
    }
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        acc.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / d as f64; d]
    }
}

/// Normalised mean decrease in Gini impurity per feature.
pub fn feature_importances(forest: &ForestModel) -> Vec<f64> {
    forest.importances.clone()
}

impl ForestModel {
    /// Mean over trees of each leaf's class distribution.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                context: "forest input",
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let mut out = Array2::zeros((x.nrows(), self.n_classes));
        for (i, row) in x.outer_iter().enumerate() {
            for t in &self.trees {
                let counts = t.leaf_counts(row);
                let total: f64 = counts.iter().sum();
                for (c, v) in counts.iter().enumerate() {
                    out[[i, c]] += v / total;
                }
            }
        }
        out /= self.trees.len() as f64;
        Ok(out)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(crate::dec::hard_assignment(self.predict_proba(x)?.view()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separable_toy_is_fit_exactly() {
        let x = array![[0.1, 5.0], [0.2, 1.0], [0.3, 3.0], [0.7, 2.0], [0.8, 4.0], [0.9, 0.0]];
        let y = [0, 0, 0, 1, 1, 1];
        let f = fit_forest(x.view(), &y, &ForestConfig { n_trees: 10, seed: 1, ..Default::default() }).unwrap();
        assert_eq!(f.predict(x.view()).unwrap(), y.to_vec());
        assert!((f.importances.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        let x = array![[0.0], [1.0]];
        assert!(fit_forest(x.view(), &[0, 0], &ForestConfig::default()).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let x = Array2::from_shape_fn((60, 4), |(i, j)| ((i * 7 + j * 13) % 17) as f64);
        let y: Vec<usize> = (0..60).map(|i| (i * 7 % 17 > 8) as usize).collect();
        let cfg = ForestConfig { n_trees: 15, seed: 9, ..Default::default() };
        assert_eq!(fit_forest(x.view(), &y, &cfg).unwrap(), fit_forest(x.view(), &y, &cfg).unwrap());
    }

    #[test]
    fn zero_gain_splits_still_reach_purity() {
        // XOR: the first split cannot reduce impurity
        let x = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let y = [0, 1, 1, 0];
        let cfg = ForestConfig { n_trees: 1, bootstrap: false, max_features: Some(2), ..Default::default() };
        let f = fit_forest(x.view(), &y, &cfg).unwrap();
        assert_eq!(f.predict(x.view()).unwrap(), y.to_vec());
    }
}
