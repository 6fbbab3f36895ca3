//! The subcommands. Each reads its inputs from the output directory (or the
//! configured layers), writes its artifacts there and records a manifest entry.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use resilience_core::features::{assemble_rf, FeatureLayers};
use resilience_core::geodata::{build_grid, load_point_layer, load_polygon_layer, load_road_segments, Grid};
use resilience_core::io::{self, LevelRecord};
use resilience_core::neural::StackFile;
use resilience_core::pipeline::rate_run;
use resilience_core::rating::{min_max_scale, Rating};
use resilience_core::rng::substream_seed;
use resilience_core::sdae::SdaeFile;
use resilience_core::spatial::{apply_scenario, combine_risk_resilience, morans_i, queen_weights, rerate_against};
use resilience_core::{run_pipeline, FeatureSchema, ResilienceFeatureMatrix};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::Loaded;
use crate::error::{CliError, CliResult};
use crate::manifest::StageTimer;
use crate::report;

/// Artifact names inside the output directory.
pub mod files {
    pub const RF: &str = "rf.csv";
    pub const IMPUTED: &str = "imputed.csv";
    pub const MASK: &str = "mask.csv";
    pub const SDAE: &str = "model/sdae.json";
    pub const ENCODER: &str = "model/encoder.json";
    pub const CLUSTER_STATE: &str = "model/cluster_state.json";
    pub const FOREST: &str = "model/forest.json";
    pub const MODEL: &str = "model/model.json";
    pub const CLUSTERS: &str = "clusters.csv";
    pub const LEVELS: &str = "levels.csv";
    pub const LEVELS_GEOJSON: &str = "levels.geojson";
    pub const IMPORTANCES: &str = "importances.csv";
    pub const CLUSTER_MEANS: &str = "cluster_means.csv";
    pub const METRICS: &str = "metrics.json";
    pub const TRAINING: &str = "training.json";
    pub const SEARCH: &str = "search.csv";
    pub const MORAN: &str = "moran.json";
    pub const SCENARIO_RF: &str = "scenario_rf.csv";
    pub const DELTAS: &str = "deltas.csv";
    pub const DELTAS_GEOJSON: &str = "deltas.geojson";
    pub const RISK_RESILIENCE: &str = "risk_resilience.csv";
    pub const RISK_RESILIENCE_GEOJSON: &str = "risk_resilience.geojson";
    pub const REPORT: &str = "report.md";
    pub const CELLS_GEOJSON: &str = "cells.geojson";
}

/// Architecture chosen by `train`, needed to re-rate scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub embedding_dim: usize,
    pub k: usize,
    pub n_clusters: usize,
    pub seed: u64,
    pub scaler: resilience_core::rating::MinMaxScaler,
}

pub struct Ctx {
    pub loaded: Loaded,
    pub schema: FeatureSchema,
}

impl Ctx {
    pub fn new(loaded: Loaded) -> Self {
        Ctx {
            loaded,
            schema: FeatureSchema::standard(),
        }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.loaded.out.join(name)
    }

    fn grid(&self) -> CliResult<Grid> {
        Ok(build_grid(self.loaded.cfg.bbox(), self.loaded.cfg.grid.cell_size)?)
    }

    /// Fails with a data error naming the artifact and the command producing it.
    fn need(&self, name: &str, producer: &str) -> CliResult<PathBuf> {
        let p = self.out(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Data(format!("{} not found; run `resili {producer}` first", p.display())))
        }
    }

    fn timer(&self, stage: &str, inputs: &[(&str, &Path)]) -> CliResult<StageTimer> {
        let owned: Vec<(String, &Path)> = inputs.iter().map(|(k, p)| (k.to_string(), *p)).collect();
        StageTimer::start(stage, &owned)
    }

    fn finish(&self, t: StageTimer, outputs: &[&str]) -> CliResult<()> {
        t.finish(&self.loaded.out, outputs, &self.loaded.hash, self.loaded.cfg.seed)
    }

    fn read_rf(&self) -> CliResult<ResilienceFeatureMatrix> {
        let rf = self.need(files::RF, "extract")?;
        let imputed = self.out(files::IMPUTED);
        let imputed = imputed.exists().then_some(imputed);
        Ok(io::read_rf_csv(&rf, imputed.as_deref(), &self.schema)?)
    }

    fn read_levels(&self) -> CliResult<Vec<LevelRecord>> {
        Ok(io::read_levels_csv(&self.need(files::LEVELS, "train")?)?)
    }
}

fn existing(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} input {} does not exist", path.display())))
    }
}

pub fn extract(ctx: &Ctx) -> CliResult<()> {
    let cfg = &ctx.loaded.cfg;
    let inputs = cfg.inputs.layers();
    for (name, path) in &inputs {
        existing(path, name)?;
    }
    let mut hashed: Vec<(&str, &Path)> = inputs.clone();
    if let Some(m) = &cfg.grid.mask {
        existing(m, "mask")?;
        hashed.push(("mask", m));
    }
    let timer = ctx.timer("extract", &hashed)?;

    let p = &cfg.inputs;
    let value = p.value_property.as_str();
    log::info!("loading layers");
    let layers = FeatureLayers {
        building_age: load_polygon_layer(&p.building_age, value)?,
        poverty_rate: load_polygon_layer(&p.poverty_rate, value)?,
        social_connectedness: load_polygon_layer(&p.social_connectedness, value)?,
        internet_speed: load_polygon_layer(&p.internet_speed, value)?,
        education_level: load_polygon_layer(&p.education_level, value)?,
        land_cover: load_polygon_layer(&p.land_cover, &p.land_cover_property)?,
        towers: load_point_layer(&p.towers)?,
        facilities: load_point_layer(&p.facilities)?,
        roads: load_road_segments(&p.roads, &p.road_class_property, &cfg.features.road_classes)?,
    };
    let grid = ctx.grid()?;
    let mask = match &cfg.grid.mask {
        Some(m) => io::read_mask_csv(m, grid.len())?,
        None => vec![true; grid.len()],
    };
    log::info!("computing features for {} cells", mask.iter().filter(|a| **a).count());
    let rf = assemble_rf(&grid, Some(&mask), &layers, &cfg.features)?;
    io::write_rf_csv(&ctx.out(files::RF), &rf, &ctx.schema)?;
    io::write_imputed_csv(&ctx.out(files::IMPUTED), &rf, &ctx.schema)?;
    io::write_mask_csv(&ctx.out(files::MASK), &grid, &mask)?;
    ctx.finish(timer, &[files::RF, files::IMPUTED, files::MASK])
}

fn level_records(cell_ids: &[usize], labels: &[usize], rating: &Rating) -> Vec<LevelRecord> {
    let clusters = &rating.levels.clusters;
    cell_ids
        .iter()
        .zip(labels)
        .map(|(&cell_id, &c)| LevelRecord {
            cell_id,
            cluster: c,
            level: clusters.levels[c],
            score: clusters.scores[c],
        })
        .collect()
}

/// Levels, importances, cluster means, metrics and the level map.
fn write_rating(ctx: &Ctx, cell_ids: &[usize], labels: &[usize], rating: &Rating) -> CliResult<Vec<&'static str>> {
    let records = level_records(cell_ids, labels, rating);
    io::write_levels_csv(&ctx.out(files::LEVELS), &records)?;
    io::write_importances_csv(&ctx.out(files::IMPORTANCES), &ctx.schema, &rating.importances)?;
    let n = rating.levels.k();
    let mut sizes = vec![0; n];
    for &l in labels {
        sizes[l] += 1;
    }
    io::write_cluster_means_csv(
        &ctx.out(files::CLUSTER_MEANS),
        &ctx.schema,
        rating.levels.means.view(),
        &rating.levels.clusters.levels,
        &rating.levels.clusters.scores,
        &sizes,
    )?;
    let importances: BTreeMap<&str, f64> = ctx.schema.names().into_iter().zip(rating.importances.iter().copied()).collect();
    let metrics = json!({
        "n_cells": cell_ids.len(),
        "n_clusters": n,
        "levels_tied": rating.levels.clusters.tied,
        "importances": importances,
        "fidelity": rating.fidelity,
    });
    io::write_json(&ctx.out(files::METRICS), &metrics)?;
    io::write_json_compact(&ctx.out(files::FOREST), &rating.forest)?;

    let grid = ctx.grid()?;
    let rows: Vec<(usize, Map<String, Value>)> = records
        .iter()
        .map(|r| {
            let mut m = Map::new();
            m.insert("cluster".into(), json!(r.cluster));
            m.insert("level".into(), json!(r.level));
            m.insert("score".into(), json!(r.score));
            (r.cell_id, m)
        })
        .collect();
    io::write_json(&ctx.out(files::LEVELS_GEOJSON), &io::cells_geojson(&grid, &rows)?)?;
    Ok(vec![
        files::LEVELS,
        files::IMPORTANCES,
        files::CLUSTER_MEANS,
        files::METRICS,
        files::FOREST,
        files::LEVELS_GEOJSON,
    ])
}

pub fn train(ctx: &Ctx) -> CliResult<()> {
    let rf_path = ctx.need(files::RF, "extract")?;
    let timer = ctx.timer("train", &[("rf", &rf_path)])?;
    let rf = ctx.read_rf()?;
    let model = &ctx.loaded.cfg.model;
    if model.grid_search {
        log::info!(
            "grid search over {} configurations",
            model.search.embedding_dims.len() * model.search.cluster_counts.len()
        );
    }
    let out = run_pipeline(&rf, model)?;
    log::info!(
        "trained d_e = {}, k = {} ({} populated clusters)",
        out.embedding_dim,
        out.k,
        out.n_clusters
    );

    let seed = Some(out.run.sdae.config.seed);
    io::write_json_compact(&ctx.out(files::SDAE), &SdaeFile::from_model(&out.run.sdae))?;
    io::write_json_compact(&ctx.out(files::ENCODER), &StackFile::from_stack(&out.run.dec.encoder, seed))?;
    io::write_json_compact(&ctx.out(files::CLUSTER_STATE), &out.run.dec.state)?;
    let summary = ModelSummary {
        embedding_dim: out.embedding_dim,
        k: out.k,
        n_clusters: out.n_clusters,
        seed: model.seed,
        scaler: out.scaler.clone(),
    };
    io::write_json(&ctx.out(files::MODEL), &summary)?;
    let training = json!({
        "pretrain_losses": out.run.sdae.history.pretrain,
        "finetune_losses": out.run.sdae.history.finetune,
        "dec_iterations": out.run.dec.iterations,
        "dec_converged": out.run.dec.converged,
        "dec_losses": out.run.dec.losses,
        "dec_label_changes": out.run.dec.label_changes,
    });
    io::write_json(&ctx.out(files::TRAINING), &training)?;
    io::write_clusters_csv(&ctx.out(files::CLUSTERS), &out.cell_ids, &out.labels, out.soft.view())?;

    let mut outputs = vec![
        files::SDAE,
        files::ENCODER,
        files::CLUSTER_STATE,
        files::MODEL,
        files::TRAINING,
        files::CLUSTERS,
    ];
    if let Some(search) = &out.search {
        io::write_search_csv(&ctx.out(files::SEARCH), search)?;
        outputs.push(files::SEARCH);
    } else if ctx.out(files::SEARCH).exists() {
        std::fs::remove_file(ctx.out(files::SEARCH))?;
    }
    outputs.extend(write_rating(ctx, &out.cell_ids, &out.labels, &out.rating)?);
    ctx.finish(timer, &outputs)
}

/// Re-derive levels from stored clusters without retraining.
pub fn rate(ctx: &Ctx) -> CliResult<()> {
    let rf_path = ctx.need(files::RF, "extract")?;
    let clusters_path = ctx.need(files::CLUSTERS, "train")?;
    let timer = ctx.timer("rate", &[("rf", &rf_path), ("clusters", &clusters_path)])?;
    let rf = ctx.read_rf()?;
    let (ids, labels, soft) = io::read_clusters_csv(&clusters_path)?;
    if ids != rf.cell_ids {
        return Err(CliError::Data(format!(
            "{} covers different cells than {}",
            clusters_path.display(),
            rf_path.display()
        )));
    }
    let (scaled, _) = min_max_scale(rf.values.view())?;
    let (labels, _, _, rating) = rate_run(scaled.view(), &labels, soft.view(), &ctx.loaded.cfg.model)?;
    let outputs = write_rating(ctx, &ids, &labels, &rating)?;
    ctx.finish(timer, &outputs)
}

/// Per-cell values on the full grid plus the mask of cells that carry one.
fn grid_field(grid: &Grid, records: &[LevelRecord]) -> CliResult<(Vec<f64>, Vec<bool>)> {
    let mut values = vec![0.0; grid.len()];
    let mut active = vec![false; grid.len()];
    for r in records {
        if r.cell_id >= grid.len() {
            return Err(CliError::Data(format!("cell {} is outside the configured grid", r.cell_id)));
        }
        values[r.cell_id] = r.level as f64;
        active[r.cell_id] = true;
    }
    Ok((values, active))
}

pub fn moran(ctx: &Ctx) -> CliResult<()> {
    let levels_path = ctx.need(files::LEVELS, "train")?;
    let timer = ctx.timer("moran", &[("levels", &levels_path)])?;
    let records = ctx.read_levels()?;
    let grid = ctx.grid()?;
    let (values, active) = grid_field(&grid, &records)?;
    let w = queen_weights(&grid, Some(&active))?;
    let perms = ctx.loaded.cfg.moran.permutations;
    let r = morans_i(&values, &w, perms, substream_seed(ctx.loaded.cfg.seed, "moran", 0))?;
    log::info!("Moran's I = {:.4}, p = {:.4}", r.i, r.p_value);
    io::write_json(
        &ctx.out(files::MORAN),
        &json!({
            "variable": "resilience_level",
            "weights": "queen, row-standardised",
            "i": r.i,
            "expected": r.expected,
            "p_value": r.p_value,
            "alternative": "greater",
            "n": r.n,
            "permutations": r.permutations,
        }),
    )?;
    ctx.finish(timer, &[files::MORAN])
}

/// Baseline levels aligned with the rows of `rf`.
fn aligned_levels(rf: &ResilienceFeatureMatrix, records: &[LevelRecord]) -> CliResult<Vec<usize>> {
    let by_id: HashMap<usize, usize> = records.iter().map(|r| (r.cell_id, r.level)).collect();
    rf.cell_ids
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| CliError::Data(format!("cell {id} has no baseline level")))
        })
        .collect()
}

pub fn scenario(ctx: &Ctx) -> CliResult<()> {
    let rf_path = ctx.need(files::RF, "extract")?;
    let levels_path = ctx.need(files::LEVELS, "train")?;
    let model_path = ctx.need(files::MODEL, "train")?;
    let timer = ctx.timer(
        "scenario",
        &[("rf", &rf_path), ("levels", &levels_path), ("model", &model_path)],
    )?;
    let rf = ctx.read_rf()?;
    let baseline = aligned_levels(&rf, &ctx.read_levels()?)?;
    let summary: ModelSummary = io::read_json(&model_path)?;
    let spec = &ctx.loaded.cfg.scenario;
    let after = apply_scenario(&rf, &baseline, spec, &ctx.schema)?;
    let touched = baseline.iter().filter(|l| spec.levels.contains(l)).count();
    log::info!("scenario touches {touched} cells; re-training");
    let model = ctx.loaded.cfg.model.with_choice(summary.embedding_dim, summary.k);
    let cmp = rerate_against(&baseline, &after, &model)?;
    io::write_rf_csv(&ctx.out(files::SCENARIO_RF), &after, &ctx.schema)?;
    io::write_deltas_csv(&ctx.out(files::DELTAS), &cmp)?;
    let rows: Vec<(usize, Map<String, Value>)> = (0..cmp.cell_ids.len())
        .map(|i| {
            let mut m = Map::new();
            m.insert("level".into(), json!(cmp.after[i]));
            m.insert("level_before".into(), json!(cmp.before[i]));
            m.insert("delta".into(), json!(cmp.deltas[i]));
            (cmp.cell_ids[i], m)
        })
        .collect();
    io::write_json(&ctx.out(files::DELTAS_GEOJSON), &io::cells_geojson(&ctx.grid()?, &rows)?)?;
    ctx.finish(timer, &[files::SCENARIO_RF, files::DELTAS, files::DELTAS_GEOJSON])
}

/// Resilience levels must be on the five-level scale that the binning assumes.
const RESILIENCE_LEVELS: usize = 5;

pub fn risk_combine(ctx: &Ctx) -> CliResult<()> {
    let risk_path = ctx
        .loaded
        .cfg
        .inputs
        .risk
        .clone()
        .ok_or_else(|| CliError::Config("inputs.risk is required for risk-combine".into()))?;
    existing(&risk_path, "risk")?;
    let levels_path = ctx.need(files::LEVELS, "train")?;
    let timer = ctx.timer("risk-combine", &[("levels", &levels_path), ("risk", &risk_path)])?;
    let records = ctx.read_levels()?;
    let n_levels = records.iter().map(|r| r.level).max().unwrap_or(0);
    if n_levels != RESILIENCE_LEVELS {
        return Err(CliError::Data(format!(
            "risk-combine needs resilience levels 1-{RESILIENCE_LEVELS}, but {} has levels 1-{n_levels}",
            levels_path.display()
        )));
    }
    let risk = io::read_risk_csv(&risk_path)?;
    let ids: Vec<usize> = records.iter().map(|r| r.cell_id).collect();
    let risk_levels: Vec<u32> = ids
        .iter()
        .map(|id| {
            risk.get(id)
                .copied()
                .ok_or_else(|| CliError::Data(format!("cell {id} has no flood-risk level in {}", risk_path.display())))
        })
        .collect::<CliResult<_>>()?;
    let res_levels: Vec<u32> = records.iter().map(|r| r.level as u32).collect();
    let labels = combine_risk_resilience(&ids, &risk_levels, &res_levels)?;

    let mut w = csv::Writer::from_path(ctx.out(files::RISK_RESILIENCE))?;
    w.write_record(["cell_id", "risk", "resilience", "label", "flagged"])?;
    let mut rows = Vec::with_capacity(ids.len());
    for i in 0..ids.len() {
        let l = labels[i];
        w.write_record([
            ids[i].to_string(),
            risk_levels[i].to_string(),
            res_levels[i].to_string(),
            l.to_string(),
            u8::from(l.flagged()).to_string(),
        ])?;
        let mut m = Map::new();
        m.insert("risk".into(), json!(risk_levels[i]));
        m.insert("level".into(), json!(res_levels[i]));
        m.insert("label".into(), json!(l.to_string()));
        m.insert("flag".into(), json!(l.flagged()));
        rows.push((ids[i], m));
    }
    w.flush()?;
    let flagged = labels.iter().filter(|l| l.flagged()).count();
    log::info!("{flagged} of {} cells need special attention", labels.len());
    io::write_json(&ctx.out(files::RISK_RESILIENCE_GEOJSON), &io::cells_geojson(&ctx.grid()?, &rows)?)?;
    ctx.finish(timer, &[files::RISK_RESILIENCE, files::RISK_RESILIENCE_GEOJSON])
}

pub fn report(ctx: &Ctx) -> CliResult<()> {
    let rf_path = ctx.need(files::RF, "extract")?;
    let levels_path = ctx.need(files::LEVELS, "train")?;
    let mut inputs: Vec<(&str, PathBuf)> = vec![("rf", rf_path), ("levels", levels_path)];
    for (name, file) in [
        ("metrics", files::METRICS),
        ("moran", files::MORAN),
        ("deltas", files::DELTAS),
        ("risk_resilience", files::RISK_RESILIENCE),
        ("search", files::SEARCH),
    ] {
        let p = ctx.out(file);
        if p.exists() {
            inputs.push((name, p));
        }
    }
    let borrowed: Vec<(&str, &Path)> = inputs.iter().map(|(k, p)| (*k, p.as_path())).collect();
    let timer = ctx.timer("report", &borrowed)?;
    let rf = ctx.read_rf()?;
    let records = ctx.read_levels()?;
    let built = report::build(ctx, &rf, &records)?;
    std::fs::write(ctx.out(files::REPORT), built.markdown)?;
    io::write_json(&ctx.out(files::CELLS_GEOJSON), &io::cells_geojson(&ctx.grid()?, &built.cells)?)?;
    ctx.finish(timer, &[files::REPORT, files::CELLS_GEOJSON])
}
