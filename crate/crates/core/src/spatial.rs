//! Queen contiguity, Global Moran's I, scenario re-rating and the combined
//! flood-risk / resilience categories.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureSchema, ResilienceFeatureMatrix};
use crate::geodata::Grid;
use crate::pipeline::{run_pipeline, ModelConfig};
use crate::rng::substream;
use crate::{Error, Result};

/// Row-standardised queen-contiguity weights indexed by cell id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialWeights {
    pub neighbors: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
}

impl SpatialWeights {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Cells that take part in autocorrelation sums.
    pub fn connected(&self) -> Vec<bool> {
        self.neighbors.iter().map(|n| !n.is_empty()).collect()
    }
}

/// 8-neighbourhood of every active cell among active cells.
pub fn queen_weights(grid: &Grid, active: Option<&[bool]>) -> Result<SpatialWeights> {
    if let Some(mask) = active {
        if mask.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                context: "cell mask",
                expected: grid.len(),
                got: mask.len(),
            });
        }
    }
    let is_active = |id: usize| active.is_none_or(|m| m[id]);
    let mut neighbors = vec![Vec::new(); grid.len()];
    let mut weights = vec![Vec::new(); grid.len()];
    let mut isolated = 0;
    for cell in &grid.cells {
        if !is_active(cell.id) {
            continue;
        }
        let mut list = Vec::with_capacity(8);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (r, c) = (cell.row as i64 + dr, cell.col as i64 + dc);
                if r < 0 || c < 0 || r >= grid.n_rows as i64 || c >= grid.n_cols as i64 {
                    continue;
                }
                let id = r as usize * grid.n_cols + c as usize;
                if is_active(id) {
                    list.push(id);
                }
            }
        }
        list.sort_unstable();
        if list.is_empty() {
            isolated += 1;
        }
        weights[cell.id] = vec![1.0 / list.len() as f64; list.len()];
        neighbors[cell.id] = list;
    }
    if isolated > 0 {
        log::warn!("{isolated} active cells have no active neighbours and are left out of Moran's I");
    }
    Ok(SpatialWeights { neighbors, weights })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub i: f64,
    /// One-sided (greater) permutation p-value.
    pub p_value: f64,
    pub expected: f64,
    pub n: usize,
    pub permutations: usize,
}

fn participants(values: &[f64], w: &SpatialWeights) -> Result<Vec<usize>> {
    if values.len() != w.len() {
        return Err(Error::DimensionMismatch {
            context: "Moran values",
            expected: w.len(),
            got: values.len(),
        });
    }
    let idx: Vec<usize> = (0..w.len()).filter(|&i| !w.neighbors[i].is_empty()).collect();
    if let Some(&i) = idx.iter().find(|&&i| !values[i].is_finite()) {
        return Err(Error::invalid(format!("non-finite value at cell {i}")));
    }
    Ok(idx)
}

fn statistic(values: &[f64], w: &SpatialWeights, idx: &[usize]) -> Result<f64> {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| values[i]).sum::<f64>() / n;
    let denom: f64 = idx.iter().map(|&i| (values[i] - mean).powi(2)).sum();
    if !(denom > 0.0) {
        return Err(Error::invalid("Moran's I is undefined for a constant field"));
    }
    let mut num = 0.0;
    let mut s0 = 0.0;
    for &i in idx {
        let zi = values[i] - mean;
        for (&j, &wij) in w.neighbors[i].iter().zip(&w.weights[i]) {
            num += wij * zi * (values[j] - mean);
            s0 += wij;
        }
    }
    Ok(n / s0 * num / denom)
}

/// Global Moran's I of `values` (one per cell id) without a significance test.
pub fn morans_i_statistic(values: &[f64], w: &SpatialWeights) -> Result<f64> {
    let idx = participants(values, w)?;
    if idx.len() < 2 {
        return Err(Error::invalid("Moran's I needs at least two connected cells"));
    }
    statistic(values, w, &idx)
}

/// Global Moran's I with a seeded permutation p-value.
pub fn morans_i(values: &[f64], w: &SpatialWeights, permutations: usize, seed: u64) -> Result<MoranResult> {
    let idx = participants(values, w)?;
    if idx.len() < 2 {
        return Err(Error::invalid("Moran's I needs at least two connected cells"));
    }
    let observed = statistic(values, w, &idx)?;
    let exceed: usize = (0..permutations)
        .into_par_iter()
        .map(|p| {
            let mut shuffled = values.to_vec();
            let mut pool: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            pool.shuffle(&mut substream(seed, "moran/permutation", p as u64));
            for (&i, v) in idx.iter().zip(pool) {
                shuffled[i] = v;
            }
            let s = statistic(&shuffled, w, &idx).expect("permutation keeps variance");
            usize::from(s >= observed)
        })
        .sum();
    Ok(MoranResult {
        i: observed,
        p_value: (exceed + 1) as f64 / (permutations + 1) as f64,
        expected: -1.0 / (idx.len() - 1) as f64,
        n: idx.len(),
        permutations,
    })
}

/// Multiplicative raw-feature changes for cells at selected levels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub levels: BTreeSet<usize>,
    /// Feature name to multiplier.
    pub multipliers: BTreeMap<String, f64>,
}

impl ScenarioSpec {
    pub fn validate(&self, schema: &FeatureSchema) -> Result<Vec<(usize, f64)>> {
        self.multipliers
            .iter()
            .map(|(name, &m)| {
                let j = schema
                    .index_of(name)
                    .ok_or_else(|| Error::invalid(format!("unknown feature `{name}` in scenario")))?;
                if !(m > 0.0 && m.is_finite()) {
                    return Err(Error::invalid(format!("multiplier for `{name}` must be positive, got {m}")));
                }
                Ok((j, m))
            })
            .collect()
    }
}

/// Multiply the raw values of targeted features in cells whose level is
/// selected, then realign.
pub fn apply_scenario(
    rf: &ResilienceFeatureMatrix,
    levels: &[usize],
    spec: &ScenarioSpec,
    schema: &FeatureSchema,
) -> Result<ResilienceFeatureMatrix> {
    let targets = spec.validate(schema)?;
    if levels.len() != rf.n_cells() {
        return Err(Error::DimensionMismatch {
            context: "scenario levels",
            expected: rf.n_cells(),
            got: levels.len(),
        });
    }
    let mut raw = rf.raw.clone();
    for (i, level) in levels.iter().enumerate() {
        if spec.levels.contains(level) {
            for &(j, m) in &targets {
                raw[[i, j]] *= m;
            }
        }
    }
    ResilienceFeatureMatrix::from_raw(rf.cell_ids.clone(), raw, rf.imputed.clone(), schema)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelComparison {
    pub cell_ids: Vec<usize>,
    pub before: Vec<usize>,
    pub after: Vec<usize>,
    /// `after - before` per cell.
    pub deltas: Vec<i64>,
}

pub fn compare_levels(cell_ids: &[usize], before: &[usize], after: &[usize]) -> Result<LevelComparison> {
    if before.len() != cell_ids.len() || after.len() != cell_ids.len() {
        return Err(Error::DimensionMismatch {
            context: "level vectors",
            expected: cell_ids.len(),
            got: before.len().min(after.len()),
        });
    }
    Ok(LevelComparison {
        cell_ids: cell_ids.to_vec(),
        before: before.to_vec(),
        after: after.to_vec(),
        deltas: before.iter().zip(after).map(|(&b, &a)| a as i64 - b as i64).collect(),
    })
}

/// Re-run the full model on `after` with the same hyperparameters and seed
/// as on `before` and report per-cell level changes.
pub fn rerate_and_compare(
    before: &ResilienceFeatureMatrix,
    after: &ResilienceFeatureMatrix,
    cfg: &ModelConfig,
) -> Result<LevelComparison> {
    if before.cell_ids != after.cell_ids {
        return Err(Error::invalid("scenario matrix covers different cells than the baseline"));
    }
    let base = run_pipeline(before, cfg)?;
    let fixed = cfg.with_choice(base.embedding_dim, base.k);
    let new = run_pipeline(after, &fixed)?;
    compare_levels(&before.cell_ids, base.cell_levels(), new.cell_levels())
}

/// Like [`rerate_and_compare`] against already known baseline levels.
pub fn rerate_against(
    baseline_levels: &[usize],
    after: &ResilienceFeatureMatrix,
    cfg: &ModelConfig,
) -> Result<LevelComparison> {
    let new = run_pipeline(after, cfg)?;
    compare_levels(&after.cell_ids, baseline_levels, new.cell_levels())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskBand {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResilienceBand {
    Poor,
    Medium,
    Good,
}

impl RiskBand {
    pub fn from_level(level: u32) -> Option<Self> {
        match level {
            1 | 2 => Some(RiskBand::Low),
            3 | 4 => Some(RiskBand::Medium),
            5 | 6 => Some(RiskBand::High),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            RiskBand::Low => "low",
            RiskBand::Medium => "medium",
            RiskBand::High => "high",
        }
    }
}

impl ResilienceBand {
    pub fn from_level(level: u32) -> Option<Self> {
        match level {
            1 | 2 => Some(ResilienceBand::Poor),
            3 => Some(ResilienceBand::Medium),
            4 | 5 => Some(ResilienceBand::Good),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ResilienceBand::Poor => "poor",
            ResilienceBand::Medium => "medium",
            ResilienceBand::Good => "good",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RiskResilienceLabel {
    pub risk: RiskBand,
    pub resilience: ResilienceBand,
}

impl RiskResilienceLabel {
    pub fn from_levels(risk: u32, resilience: u32) -> Option<Self> {
        Some(RiskResilienceLabel {
            risk: RiskBand::from_level(risk)?,
            resilience: ResilienceBand::from_level(resilience)?,
        })
    }

    /// High-poor, high-medium and medium-poor areas need special attention.
    pub fn flagged(&self) -> bool {
        matches!(
            (self.risk, self.resilience),
            (RiskBand::High, ResilienceBand::Poor)
                | (RiskBand::High, ResilienceBand::Medium)
                | (RiskBand::Medium, ResilienceBand::Poor)
        )
    }
}

impl fmt::Display for RiskResilienceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.risk.name(), self.resilience.name())
    }
}

/// Label every cell from its flood-risk level (1–6) and resilience level (1–5).
pub fn combine_risk_resilience(cell_ids: &[usize], risk: &[u32], resilience: &[u32]) -> Result<Vec<RiskResilienceLabel>> {
    if risk.len() != cell_ids.len() || resilience.len() != cell_ids.len() {
        return Err(Error::DimensionMismatch {
            context: "risk and resilience levels",
            expected: cell_ids.len(),
            got: risk.len().min(resilience.len()),
        });
    }
    cell_ids
        .iter()
        .zip(risk.iter().zip(resilience))
        .map(|(&id, (&r, &s))| {
            RiskResilienceLabel::from_levels(r, s).ok_or_else(|| {
                Error::invalid(format!(
                    "cell {id}: risk level {r} must be 1-6 and resilience level {s} must be 1-5"
                ))
            })
        })
        .collect()
}
