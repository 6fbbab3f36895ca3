//! End-to-end model: scale, embed, cluster and rate.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dec::{dec_train, DecConfig, DecOutcome};
use crate::features::ResilienceFeatureMatrix;
use crate::neural::TrainConfig;
use crate::rating::{
    compact_labels, grid_search, min_max_scale, rate_clusters, ForestConfig, MinMaxScaler, Rating, SearchReport,
    SearchSpace,
};
use crate::rng::substream_seed;
use crate::sdae::{train_sdae, SdaeModel, DEFAULT_EMBEDDING_DIM, DEFAULT_HIDDEN};
use crate::{Error, Result};

/// Hyperparameters of the whole model.
///
/// Only `seed` drives randomness: the seeds inside `train`, `dec` and
/// `forest` are replaced by values derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub train: TrainConfig,
    pub dec: DecConfig,
    pub forest: ForestConfig,
    /// Fraction of cells held out to measure classifier fidelity.
    pub test_fraction: f64,
    pub grid_search: bool,
    pub search: SearchSpace,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            train: TrainConfig::default(),
            dec: DecConfig::default(),
            forest: ForestConfig::default(),
            test_fraction: 0.2,
            grid_search: false,
            search: SearchSpace::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.dec.validate()?;
        if self.hidden.contains(&0) || self.embedding_dim == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::invalid(format!(
                "test fraction must lie in [0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.forest.n_trees == 0 {
            return Err(Error::invalid("the forest needs at least one tree"));
        }
        Ok(())
    }

    /// Copy with grid search disabled and the given architecture fixed.
    pub fn with_choice(&self, embedding_dim: usize, k: usize) -> ModelConfig {
        let mut c = self.clone();
        c.grid_search = false;
        c.embedding_dim = embedding_dim;
        c.dec.k = k;
        c
    }
}

/// Seed index of one (width, cluster count) configuration, so that a search
/// run and a direct run of the same configuration coincide.
fn config_index(embedding_dim: usize, k: usize) -> u64 {
    ((embedding_dim as u64) << 32) | k as u64
}

#[derive(Debug, Clone)]
pub struct ClusterRun {
    pub sdae: SdaeModel,
    pub dec: DecOutcome,
    /// Embeddings from the refined encoder.
    pub embeddings: Array2<f64>,
}

/// Train the autoencoder and refine clusters for one configuration on an
/// already scaled matrix.
pub fn train_clusters(x: ArrayView2<f64>, embedding_dim: usize, k: usize, cfg: &ModelConfig) -> Result<ClusterRun> {
    let idx = config_index(embedding_dim, k);
    let train = TrainConfig {
        seed: substream_seed(cfg.seed, "sdae", idx),
        ..cfg.train.clone()
    };
    let sdae = train_sdae(x, &train, &cfg.hidden, embedding_dim)?;
    let dec_cfg = DecConfig {
        k,
        seed: substream_seed(cfg.seed, "dec", idx),
        ..cfg.dec.clone()
    };
    let dec = dec_train(&sdae.encoder, x, &dec_cfg)?;
    let embeddings = dec.encoder.predict(x)?;
    Ok(ClusterRun { sdae, dec, embeddings })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub cell_ids: Vec<usize>,
    pub scaler: MinMaxScaler,
    pub scaled: Array2<f64>,
    pub embedding_dim: usize,
    /// Requested cluster count.
    pub k: usize,
    pub run: ClusterRun,
    /// Cluster labels renumbered to `0..n_clusters`.
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    /// Soft assignments restricted to populated clusters, rows renormalised.
    pub soft: Array2<f64>,
    pub rating: Rating,
    pub search: Option<SearchReport>,
}

impl PipelineOutput {
    pub fn cell_levels(&self) -> &[usize] {
        &self.rating.levels.cell_levels
    }
}

/// Drop columns of unpopulated clusters from `q` and renormalise.
pub fn compact_soft(q: ArrayView2<f64>, labels: &[usize]) -> Array2<f64> {
    let mut used: Vec<usize> = labels.to_vec();
    used.sort_unstable();
    used.dedup();
    let mut out = q.select(Axis(1), &used);
    for mut row in out.outer_iter_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    out
}

/// Rate clusters already found on the scaled matrix.
pub fn rate_run(x: ArrayView2<f64>, raw_labels: &[usize], q: ArrayView2<f64>, cfg: &ModelConfig) -> Result<(Vec<usize>, usize, Array2<f64>, Rating)> {
    let (labels, n_clusters) = compact_labels(raw_labels);
    if n_clusters < 2 {
        return Err(Error::Divergence("clustering collapsed into a single cluster".into()));
    }
    if n_clusters < q.ncols() {
        log::warn!(
            "{} of {} clusters are empty after refinement; levels run 1..{n_clusters}",
            q.ncols() - n_clusters,
            q.ncols()
        );
    }
    let soft = compact_soft(q, raw_labels);
    let forest_cfg = ForestConfig {
        seed: substream_seed(cfg.seed, "forest", 0),
        ..cfg.forest.clone()
    };
    let rating = rate_clusters(x, &labels, soft.view(), &forest_cfg, cfg.test_fraction)?;
    Ok((labels, n_clusters, soft, rating))
}

/// Run scaling, optional grid search, SDAE, DEC and rating on `rf`.
pub fn run_pipeline(rf: &ResilienceFeatureMatrix, cfg: &ModelConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let (scaled, scaler) = min_max_scale(rf.values.view())?;
    let search = if cfg.grid_search {
        Some(grid_search(scaled.view(), &cfg.search, cfg)?)
    } else {
        None
    };
    let (embedding_dim, k) = search
        .as_ref()
        .map_or((cfg.embedding_dim, cfg.dec.k), |s| (s.embedding_dim, s.k));
    let run = train_clusters(scaled.view(), embedding_dim, k, cfg)?;
    let (labels, n_clusters, soft, rating) = rate_run(scaled.view(), &run.dec.labels, run.dec.state.q.view(), cfg)?;
    Ok(PipelineOutput {
        cell_ids: rf.cell_ids.clone(),
        scaler,
        scaled,
        embedding_dim,
        k,
        run,
        labels,
        n_clusters,
        soft,
        rating,
        search,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hidden, vec![500, 500, 2000]);
        assert_eq!((c.embedding_dim, c.dec.k), (10, 5));
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&text).unwrap(), c);
    }

    #[test]
    fn with_choice_disables_search() {
        let c = ModelConfig {
            grid_search: true,
            ..ModelConfig::default()
        };
        let d = c.with_choice(24, 6);
        assert!(!d.grid_search);
        assert_eq!((d.embedding_dim, d.dec.k), (24, 6));
    }
}
