//! Grid search over embedding width and cluster count.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pipeline::{train_clusters, ModelConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub embedding_dims: Vec<usize>,
    pub cluster_counts: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            embedding_dims: vec![10, 12, 24, 36],
            cluster_counts: vec![4, 5, 6, 7],
        }
    }
}

impl SearchSpace {
    /// Configurations in selection-preference order: smaller width, then fewer clusters.
    pub fn configs(&self) -> Vec<(usize, usize)> {
        let mut dims = self.embedding_dims.clone();
        let mut ks = self.cluster_counts.clone();
        dims.sort_unstable();
        dims.dedup();
        ks.sort_unstable();
        ks.dedup();
        dims.iter().flat_map(|&d| ks.iter().map(move |&k| (d, k))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEntry {
    pub embedding_dim: usize,
    pub k: usize,
    /// Mean silhouette of the hard labels in embedding space; `-inf` on failure.
    pub score: f64,
    /// Distinct clusters actually populated.
    pub clusters_found: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub entries: Vec<SearchEntry>,
    pub embedding_dim: usize,
    pub k: usize,
}

/// Mean silhouette coefficient of `labels` over the rows of `points`.
///
/// Points in singleton clusters score 0. Fewer than two populated clusters
/// give -1.
pub fn silhouette(points: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let m = points.nrows();
    let k = labels.iter().max().map_or(0, |&l| l + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return -1.0;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..m {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let pi = points.row(i);
        for j in 0..m {
            if i != j {
                let d: f64 = pi
                    .iter()
                    .zip(points.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                sums[labels[j]] += d;
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let s = if a.max(b) > 0.0 { (b - a) / a.max(b) } else { 0.0 };
        total += s;
    }
    total / m as f64
}

/// Train SDAE + DEC for every configuration of `space` on the scaled matrix
/// `x` and choose the best silhouette; ties keep the earlier configuration.
pub fn grid_search(x: ArrayView2<f64>, space: &SearchSpace, cfg: &ModelConfig) -> Result<SearchReport> {
    let configs = space.configs();
    if configs.is_empty() {
        return Err(Error::invalid("empty search space"));
    }
    let entries: Vec<SearchEntry> = configs
        .par_iter()
        .map(|&(d_e, k)| match train_clusters(x, d_e, k, cfg) {
            Ok(run) => {
                let (labels, found) = super::compact_labels(&run.dec.labels);
                let score = silhouette(run.embeddings.view(), &labels);
                log::info!("search d_e={d_e} k={k}: silhouette {score:.4} ({found} clusters)");
                SearchEntry {
                    embedding_dim: d_e,
                    k,
                    score,
                    clusters_found: found,
                    note: (found < k).then(|| format!("only {found} of {k} clusters populated")),
                }
            }
            Err(e) => {
                log::warn!("search d_e={d_e} k={k} failed: {e}");
                SearchEntry {
                    embedding_dim: d_e,
                    k,
                    score: f64::NEG_INFINITY,
                    clusters_found: 0,
                    note: Some(e.to_string()),
                }
            }
        })
        .collect();
    let mut best = 0;
    for (i, e) in entries.iter().enumerate() {
        if e.score > entries[best].score {
            best = i;
        }
    }
    if entries[best].score == f64::NEG_INFINITY {
        return Err(Error::Divergence("every grid-search configuration failed".into()));
    }
    Ok(SearchReport {
        embedding_dim: entries[best].embedding_dim,
        k: entries[best].k,
        entries,
    })
}
