//! Markdown summary of a run and the merged per-cell GeoJSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use resilience_core::io::{read_json, LevelRecord};
use resilience_core::rating::{cluster_means, min_max_scale};
use resilience_core::ResilienceFeatureMatrix;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::commands::{files, Ctx};
use crate::error::{CliError, CliResult};

pub struct Built {
    pub markdown: String,
    pub cells: Vec<(usize, Map<String, Value>)>,
}

#[derive(Debug, Deserialize)]
struct DeltaRow {
    cell_id: usize,
    level_before: usize,
    level_after: usize,
    delta: i64,
}

#[derive(Debug, Deserialize)]
struct RiskRow {
    cell_id: usize,
    risk: u32,
    label: String,
    flagged: u8,
}

#[derive(Debug, Deserialize)]
struct SearchRow {
    embedding_dim: usize,
    k: usize,
    silhouette: f64,
    clusters_found: usize,
    selected: u8,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Option<Vec<T>>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path)?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Some(rows))
}

fn optional_json(path: &Path) -> CliResult<Option<Value>> {
    if path.exists() {
        Ok(Some(read_json(path)?))
    } else {
        Ok(None)
    }
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn f(v: f64) -> String {
    format!("{v:.3}")
}

/// Per-cluster table of level, size, score and feature means, ordered by level.
fn cluster_table(out: &mut String, names: &[&str], means: &Array2<f64>, records: &[LevelRecord]) {
    let mut header: Vec<String> = ["cluster", "level", "cells", "score"].iter().map(|s| s.to_string()).collect();
    header.extend(names.iter().map(|s| s.to_string()));
    let mut by_cluster: BTreeMap<usize, (usize, f64, usize)> = BTreeMap::new();
    for r in records {
        let e = by_cluster.entry(r.cluster).or_insert((r.level, r.score, 0));
        e.2 += 1;
    }
    let mut order: Vec<(&usize, &(usize, f64, usize))> = by_cluster.iter().collect();
    order.sort_by_key(|(_, (level, _, _))| *level);
    let rows: Vec<Vec<String>> = order
        .into_iter()
        .map(|(&c, &(level, score, size))| {
            let mut row = vec![c.to_string(), level.to_string(), size.to_string(), f(score)];
            row.extend((0..names.len()).map(|j| f(means[[c, j]])));
            row
        })
        .collect();
    table(out, &header, &rows);
}

pub fn build(ctx: &Ctx, rf: &ResilienceFeatureMatrix, records: &[LevelRecord]) -> CliResult<Built> {
    let cfg = &ctx.loaded.cfg;
    let names = ctx.schema.names();
    let by_id: BTreeMap<usize, &LevelRecord> = records.iter().map(|r| (r.cell_id, r)).collect();
    let mut labels = Vec::with_capacity(rf.n_cells());
    for id in &rf.cell_ids {
        let r = by_id
            .get(id)
            .ok_or_else(|| CliError::Data(format!("cell {id} has no level")))?;
        labels.push(r.cluster);
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let (scaled, _) = min_max_scale(rf.values.view())?;
    let scaled_means = cluster_means(scaled.view(), &labels, k)?;
    let raw_means = cluster_means(rf.raw.view(), &labels, k)?;

    let mut md = String::new();
    let _ = writeln!(md, "# Community resilience report\n");
    let _ = writeln!(md, "- cells rated: {}", rf.n_cells());
    let _ = writeln!(md, "- grid cell size: {} m", cfg.grid.cell_size);
    let _ = writeln!(md, "- seed: {}", cfg.seed);
    let _ = writeln!(md, "- configuration hash: `{}`\n", ctx.loaded.hash);

    let _ = writeln!(md, "## Resilience levels\n");
    let _ = writeln!(md, "Level 1 is the least resilient.\n");
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for r in records {
        *hist.entry(r.level).or_default() += 1;
    }
    let rows: Vec<Vec<String>> = hist
        .iter()
        .map(|(l, n)| vec![l.to_string(), n.to_string(), format!("{:.1}%", 100.0 * *n as f64 / records.len() as f64)])
        .collect();
    table(&mut md, &["level".into(), "cells".into(), "share".into()], &rows);

    let _ = writeln!(md, "## Cluster characteristics\n");
    let _ = writeln!(md, "Mean min-max scaled feature values per cluster (larger is more resilient).\n");
    cluster_table(&mut md, &names, &scaled_means, records);
    let _ = writeln!(md, "Mean raw feature values per cluster.\n");
    cluster_table(&mut md, &names, &raw_means, records);

    if let Some(metrics) = optional_json(&ctx.out(files::METRICS))? {
        if let Some(imp) = metrics.get("importances").and_then(Value::as_object) {
            let _ = writeln!(md, "## Feature importances\n");
            let mut rows: Vec<(String, f64)> = imp.iter().map(|(k, v)| (k.clone(), v.as_f64().unwrap_or(0.0))).collect();
            rows.sort_by(|a, b| b.1.total_cmp(&a.1));
            let rows: Vec<Vec<String>> = rows.into_iter().map(|(k, v)| vec![k, f(v)]).collect();
            table(&mut md, &["feature".into(), "importance".into()], &rows);
        }
        if let Some(fid) = metrics.get("fidelity").filter(|v| !v.is_null()) {
            let m = &fid["metrics"];
            let _ = writeln!(md, "## Classifier fidelity\n");
            let _ = writeln!(
                md,
                "Random forest trained on cluster labels, evaluated on {} held-out cells.\n",
                fid["n_test"]
            );
            let num = |v: &Value| v.as_f64().map_or("n/a".to_string(), f);
            let rows = vec![
                vec!["macro precision".into(), num(&m["macro_precision"])],
                vec!["macro recall".into(), num(&m["macro_recall"])],
                vec!["macro F1".into(), num(&m["macro_f1"])],
                vec!["micro F1".into(), num(&m["micro_f1"])],
                vec!["accuracy".into(), num(&m["accuracy"])],
                vec!["macro AUC (soft assignments)".into(), num(&m["auc"])],
                vec!["macro AUC (forest)".into(), num(&fid["forest_auc"])],
            ];
            table(&mut md, &["metric".into(), "value".into()], &rows);
        }
    }

    if let Some(m) = optional_json(&ctx.out(files::MORAN))? {
        let _ = writeln!(md, "## Spatial autocorrelation\n");
        let num = |k: &str| m[k].as_f64().map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let rows = vec![
            vec!["Moran's I".into(), num("i")],
            vec!["expected I".into(), num("expected")],
            vec!["p-value (one-sided)".into(), num("p_value")],
            vec!["cells".into(), m["n"].to_string()],
            vec!["permutations".into(), m["permutations"].to_string()],
        ];
        table(&mut md, &["statistic".into(), "value".into()], &rows);
    }

    if let Some(search) = read_rows::<SearchRow>(&ctx.out(files::SEARCH))? {
        let _ = writeln!(md, "## Architecture search\n");
        let rows: Vec<Vec<String>> = search
            .iter()
            .map(|s| {
                vec![
                    s.embedding_dim.to_string(),
                    s.k.to_string(),
                    if s.silhouette.is_finite() { f(s.silhouette) } else { "n/a".into() },
                    s.clusters_found.to_string(),
                    if s.selected == 1 { "yes".into() } else { String::new() },
                ]
            })
            .collect();
        let header = ["embedding dim", "k", "silhouette", "clusters found", "selected"];
        table(&mut md, &header.map(String::from), &rows);
    }

    let mut cells: Vec<(usize, Map<String, Value>)> = records
        .iter()
        .map(|r| {
            let mut m = Map::new();
            m.insert("cluster".into(), json!(r.cluster));
            m.insert("level".into(), json!(r.level));
            m.insert("score".into(), json!(r.score));
            (r.cell_id, m)
        })
        .collect();
    let index: BTreeMap<usize, usize> = cells.iter().enumerate().map(|(i, (id, _))| (*id, i)).collect();

    if let Some(deltas) = read_rows::<DeltaRow>(&ctx.out(files::DELTAS))? {
        let _ = writeln!(md, "## Scenario\n");
        let spec = &cfg.scenario;
        let selected: Vec<String> = spec.levels.iter().map(|l| l.to_string()).collect();
        let changes: Vec<String> = spec.multipliers.iter().map(|(k, v)| format!("{k} x{v}")).collect();
        let _ = writeln!(
            md,
            "Cells at levels [{}] changed by [{}], then the model was re-trained.\n",
            selected.join(", "),
            changes.join(", ")
        );
        let mut hist: BTreeMap<i64, usize> = BTreeMap::new();
        for d in &deltas {
            *hist.entry(d.delta).or_default() += 1;
            if let Some(&i) = index.get(&d.cell_id) {
                let props = &mut cells[i].1;
                props.insert("delta".into(), json!(d.delta));
                props.insert("level_before".into(), json!(d.level_before));
                props.insert("level_after".into(), json!(d.level_after));
            }
        }
        let rows: Vec<Vec<String>> = hist.iter().map(|(d, n)| vec![format!("{d:+}"), n.to_string()]).collect();
        table(&mut md, &["level change".into(), "cells".into()], &rows);
    }

    if let Some(risk) = read_rows::<RiskRow>(&ctx.out(files::RISK_RESILIENCE))? {
        let _ = writeln!(md, "## Flood risk and resilience\n");
        let mut hist: BTreeMap<&str, (usize, bool)> = BTreeMap::new();
        for r in &risk {
            let e = hist.entry(r.label.as_str()).or_insert((0, r.flagged == 1));
            e.0 += 1;
            if let Some(&i) = index.get(&r.cell_id) {
                let props = &mut cells[i].1;
                props.insert("risk".into(), json!(r.risk));
                props.insert("label".into(), json!(r.label));
                props.insert("flag".into(), json!(r.flagged == 1));
            }
        }
        let rows: Vec<Vec<String>> = hist
            .iter()
            .map(|(l, (n, flag))| vec![l.to_string(), n.to_string(), if *flag { "yes".into() } else { String::new() }])
            .collect();
        table(&mut md, &["category".into(), "cells".into(), "special attention".into()], &rows);
    }

    Ok(Built { markdown: md, cells })
}
