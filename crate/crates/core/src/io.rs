//! CSV, JSON and GeoJSON readers and writers for pipeline artifacts.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::features::{FeatureSchema, ResilienceFeatureMatrix};
use crate::geodata::{Grid, PointLayer, PolygonLayer, RoadSegment};
use crate::{Error, Result};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(|e| Error::parse(path.display(), e.to_string()))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Single-line JSON for large artifacts such as network weights.
pub fn write_json_compact<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display(), e.to_string()))
}

fn header_index(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::parse(path.display(), format!("missing column `{name}`")))
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::parse(path.display(), format!("row {line}: bad value in column {}", i + 1)))
}

/// Imputed raw feature values, one row per cell, in schema order.
pub fn write_rf_csv(path: &Path, rf: &ResilienceFeatureMatrix, schema: &FeatureSchema) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["cell_id".to_string()];
    header.extend(schema.names().iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (i, id) in rf.cell_ids.iter().enumerate() {
        let mut rec = vec![id.to_string()];
        rec.extend(rf.raw.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-cell flags of imputed features.
pub fn write_imputed_csv(path: &Path, rf: &ResilienceFeatureMatrix, schema: &FeatureSchema) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["cell_id".to_string()];
    header.extend(schema.names().iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (i, id) in rf.cell_ids.iter().enumerate() {
        let mut rec = vec![id.to_string()];
        rec.extend(rf.imputed.row(i).iter().map(|&b| u8::from(b).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_feature_table(path: &Path, schema: &FeatureSchema) -> Result<(Vec<usize>, Vec<Vec<String>>)> {
    let mut r = csv_reader(path)?;
    let headers = r.headers()?.clone();
    let id_col = header_index(path, &headers, "cell_id")?;
    let cols: Vec<usize> = schema
        .names()
        .iter()
        .map(|n| header_index(path, &headers, n))
        .collect::<Result<_>>()?;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        ids.push(field(path, &rec, id_col, line + 1)?);
        rows.push(cols.iter().map(|&c| rec.get(c).unwrap_or("").trim().to_string()).collect());
    }
    Ok((ids, rows))
}

/// Read raw values (and optionally imputation flags) and realign them.
pub fn read_rf_csv(path: &Path, imputed: Option<&Path>, schema: &FeatureSchema) -> Result<ResilienceFeatureMatrix> {
    let (ids, rows) = read_feature_table(path, schema)?;
    let d = schema.len();
    let mut raw = Array2::zeros((ids.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for (j, s) in row.iter().enumerate() {
            raw[[i, j]] = s
                .parse()
                .map_err(|_| Error::parse(path.display(), format!("row {}: bad number `{s}`", i + 1)))?;
        }
    }
    let mut flags = Array2::from_elem((ids.len(), d), false);
    if let Some(p) = imputed {
        let (fids, frows) = read_feature_table(p, schema)?;
        if fids != ids {
            return Err(Error::parse(p.display(), "cell ids differ from the feature matrix"));
        }
        for (i, row) in frows.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                flags[[i, j]] = s == "1";
            }
        }
    }
    ResilienceFeatureMatrix::from_raw(ids, raw, flags, schema).map_err(|e| Error::parse(path.display(), e.to_string()))
}

/// `cell_id,row,col,active` for every grid cell.
pub fn write_mask_csv(path: &Path, grid: &Grid, active: &[bool]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cell_id", "row", "col", "active"])?;
    for c in &grid.cells {
        w.write_record([
            c.id.to_string(),
            c.row.to_string(),
            c.col.to_string(),
            u8::from(active[c.id]).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mask_csv(path: &Path, n_cells: usize) -> Result<Vec<bool>> {
    let mut r = csv_reader(path)?;
    let headers = r.headers()?.clone();
    let id_col = header_index(path, &headers, "cell_id")?;
    let act_col = header_index(path, &headers, "active")?;
    let mut mask = vec![false; n_cells];
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let id: usize = field(path, &rec, id_col, line + 1)?;
        let a: u8 = field(path, &rec, act_col, line + 1)?;
        if id >= n_cells {
            return Err(Error::parse(path.display(), format!("cell {id} is outside the grid")));
        }
        mask[id] = a == 1;
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    pub cell_id: usize,
    pub cluster: usize,
    pub level: usize,
    pub score: f64,
}

pub fn write_levels_csv(path: &Path, records: &[LevelRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cell_id", "cluster", "level", "score"])?;
    for r in records {
        w.write_record([
            r.cell_id.to_string(),
            r.cluster.to_string(),
            r.level.to_string(),
            r.score.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_levels_csv(path: &Path) -> Result<Vec<LevelRecord>> {
    let mut r = csv_reader(path)?;
    let h = r.headers()?.clone();
    let (ci, cl, lv, sc) = (
        header_index(path, &h, "cell_id")?,
        header_index(path, &h, "cluster")?,
        header_index(path, &h, "level")?,
        header_index(path, &h, "score")?,
    );
    r.records()
        .enumerate()
        .map(|(line, rec)| {
            let rec = rec?;
            Ok(LevelRecord {
                cell_id: field(path, &rec, ci, line + 1)?,
                cluster: field(path, &rec, cl, line + 1)?,
                level: field(path, &rec, lv, line + 1)?,
                score: field(path, &rec, sc, line + 1)?,
            })
        })
        .collect()
}

/// `cell_id,cluster,q_0,..` with one soft-assignment column per cluster.
pub fn write_clusters_csv(path: &Path, cell_ids: &[usize], labels: &[usize], soft: ArrayView2<f64>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["cell_id".to_string(), "cluster".to_string()];
    header.extend((0..soft.ncols()).map(|j| format!("q_{j}")));
    w.write_record(&header)?;
    for (i, id) in cell_ids.iter().enumerate() {
        let mut rec = vec![id.to_string(), labels[i].to_string()];
        rec.extend(soft.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_clusters_csv(path: &Path) -> Result<(Vec<usize>, Vec<usize>, Array2<f64>)> {
    let mut r = csv_reader(path)?;
    let h = r.headers()?.clone();
    let ci = header_index(path, &h, "cell_id")?;
    let cl = header_index(path, &h, "cluster")?;
    let q_cols: Vec<usize> = (0..)
        .map_while(|j| h.iter().position(|x| x.trim() == format!("q_{j}")))
        .collect();
    let (mut ids, mut labels, mut q) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        ids.push(field(path, &rec, ci, line + 1)?);
        labels.push(field(path, &rec, cl, line + 1)?);
        for &c in &q_cols {
            q.push(field::<f64>(path, &rec, c, line + 1)?);
        }
    }
    let soft = Array2::from_shape_vec((ids.len(), q_cols.len()), q).map_err(|e| Error::parse(path.display(), e.to_string()))?;
    Ok((ids, labels, soft))
}

pub fn write_importances_csv(path: &Path, schema: &FeatureSchema, importances: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["feature", "importance"])?;
    for (name, v) in schema.names().iter().zip(importances) {
        w.write_record([name.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-cluster level, score, size and mean scaled features.
pub fn write_cluster_means_csv(
    path: &Path,
    schema: &FeatureSchema,
    means: ArrayView2<f64>,
    levels: &[usize],
    scores: &[f64],
    sizes: &[usize],
) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["cluster", "level", "score", "size"].iter().map(|s| s.to_string()).collect();
    header.extend(schema.names().iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (c, row) in means.outer_iter().enumerate() {
        let mut rec = vec![c.to_string(), levels[c].to_string(), scores[c].to_string(), sizes[c].to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_search_csv(path: &Path, report: &crate::rating::SearchReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["embedding_dim", "k", "silhouette", "clusters_found", "selected", "note"])?;
    for e in &report.entries {
        let selected = e.embedding_dim == report.embedding_dim && e.k == report.k;
        w.write_record([
            e.embedding_dim.to_string(),
            e.k.to_string(),
            e.score.to_string(),
            e.clusters_found.to_string(),
            u8::from(selected).to_string(),
            e.note.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_deltas_csv(path: &Path, cmp: &crate::spatial::LevelComparison) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cell_id", "level_before", "level_after", "delta"])?;
    for i in 0..cmp.cell_ids.len() {
        w.write_record([
            cmp.cell_ids[i].to_string(),
            cmp.before[i].to_string(),
            cmp.after[i].to_string(),
            cmp.deltas[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `cell_id,risk` rows; returns a map from cell id to flood-risk level.
pub fn read_risk_csv(path: &Path) -> Result<HashMap<usize, u32>> {
    let mut r = csv_reader(path)?;
    let h = r.headers()?.clone();
    let ci = header_index(path, &h, "cell_id")?;
    let ri = header_index(path, &h, "risk")?;
    let mut out = HashMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let id: usize = field(path, &rec, ci, line + 1)?;
        let risk: u32 = field(path, &rec, ri, line + 1)?;
        if out.insert(id, risk).is_some() {
            return Err(Error::parse(path.display(), format!("cell {id} listed twice")));
        }
    }
    Ok(out)
}

pub fn write_risk_csv(path: &Path, rows: &[(usize, u32)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cell_id", "risk"])?;
    for (id, r) in rows {
        w.write_record([id.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn ring_coords(ring: &[crate::geodata::Point]) -> Value {
    let mut pts: Vec<Value> = ring.iter().map(|p| json!([p.x, p.y])).collect();
    if ring.first() != ring.last() {
        if let Some(p) = ring.first() {
            pts.push(json!([p.x, p.y]));
        }
    }
    Value::Array(pts)
}

/// FeatureCollection of cell squares carrying the given properties.
pub fn cells_geojson(grid: &Grid, rows: &[(usize, Map<String, Value>)]) -> Result<Value> {
    let features = rows
        .iter()
        .map(|(id, props)| {
            let cell = grid
                .cells
                .get(*id)
                .ok_or_else(|| Error::invalid(format!("cell {id} is outside the grid")))?;
            let mut props = props.clone();
            props.insert("cell_id".into(), json!(id));
            Ok(json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring_coords(&cell.square.ring())]},
                "properties": props,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({"type": "FeatureCollection", "features": features}))
}

/// Structural GeoJSON check: closed rings of at least four finite positions.
pub fn validate_geojson(doc: &Value) -> Result<usize> {
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .filter(|_| doc.get("type") == Some(&json!("FeatureCollection")))
        .ok_or_else(|| Error::invalid("not a FeatureCollection"))?;
    for (i, f) in features.iter().enumerate() {
        let bad = |msg: &str| Error::invalid(format!("feature {i}: {msg}"));
        let geom = f.get("geometry").ok_or_else(|| bad("no geometry"))?;
        let coords = geom.get("coordinates").ok_or_else(|| bad("no coordinates"))?;
        let polygons: Vec<&Value> = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![coords],
            Some("MultiPolygon") => coords.as_array().ok_or_else(|| bad("bad MultiPolygon"))?.iter().collect(),
            Some("Point") | Some("LineString") | Some("MultiLineString") => continue,
            _ => return Err(bad("unsupported geometry")),
        };
        for poly in polygons {
            for ring in poly.as_array().ok_or_else(|| bad("bad rings"))? {
                let pts = ring.as_array().ok_or_else(|| bad("bad ring"))?;
                if pts.len() < 4 || pts.first() != pts.last() {
                    return Err(bad("ring is not closed"));
                }
                let finite = pts.iter().all(|p| {
                    p.as_array()
                        .is_some_and(|c| c.len() >= 2 && c.iter().all(|v| v.as_f64().is_some_and(f64::is_finite)))
                });
                if !finite {
                    return Err(bad("non-finite position"));
                }
            }
        }
    }
    Ok(features.len())
}

/// Polygon layer as GeoJSON with each unit's value under `property`.
pub fn write_polygon_layer(path: &Path, layer: &PolygonLayer, property: &str) -> Result<()> {
    let features: Vec<Value> = layer
        .units
        .iter()
        .map(|u| {
            let polys: Vec<Value> = u
                .parts
                .iter()
                .map(|p| {
                    let mut rings = vec![ring_coords(&p.exterior)];
                    rings.extend(p.holes.iter().map(|h| ring_coords(h)));
                    Value::Array(rings)
                })
                .collect();
            let geometry = if polys.len() == 1 {
                json!({"type": "Polygon", "coordinates": polys[0]})
            } else {
                json!({"type": "MultiPolygon", "coordinates": polys})
            };
            json!({"type": "Feature", "geometry": geometry, "properties": {property: u.value}})
        })
        .collect();
    write_json(path, &json!({"type": "FeatureCollection", "features": features}))
}

/// Points as CSV with `x,y,age,range,category` columns.
pub fn write_point_csv(path: &Path, layer: &PointLayer) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["x", "y", "age", "range", "category"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in &layer.points {
        w.write_record([
            p.location.x.to_string(),
            p.location.y.to_string(),
            opt(p.age),
            opt(p.range),
            p.category.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Road segments as LineStrings with their class under `class_property`.
pub fn write_road_layer(path: &Path, roads: &[RoadSegment], class_property: &str) -> Result<()> {
    let features: Vec<Value> = roads
        .iter()
        .map(|s| {
            let coords: Vec<Value> = s.polyline.iter().map(|p| json!([p.x, p.y])).collect();
            json!({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": {class_property: s.road_class},
            })
        })
        .collect();
    write_json(path, &json!({"type": "FeatureCollection", "features": features}))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{align_directions, RawFeatures, N_FEATURES};
    use crate::geodata::{build_grid, Rect};

    #[test]
    fn rf_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let dir = dir.path();
        let schema = FeatureSchema::standard();
        let mut rows = vec![[Some(0.1 + 0.2); N_FEATURES], [Some(1.0 / 3.0); N_FEATURES]];
        rows[1][4] = None;
        let rf = align_directions(&RawFeatures { cell_ids: vec![3, 8], rows }, &schema).unwrap();
        let (a, b) = (dir.join("rf.csv"), dir.join("imputed.csv"));
        write_rf_csv(&a, &rf, &schema).unwrap();
        write_imputed_csv(&b, &rf, &schema).unwrap();
        let back = read_rf_csv(&a, Some(&b), &schema).unwrap();
        assert_eq!(back, rf);
    }

    #[test]
    fn cell_geojson_is_valid() {
        let g = build_grid(Rect::new(0.0, 0.0, 4.0, 2.0), 2.0).unwrap();
        let rows: Vec<_> = (0..g.len()).map(|i| (i, Map::new())).collect();
        let doc = cells_geojson(&g, &rows).unwrap();
        assert_eq!(validate_geojson(&doc).unwrap(), 2);
        let open = json!({"type": "FeatureCollection", "features": [
            {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [[[0,0],[1,0],[1,1],[0,1]]]}, "properties": {}}
        ]});
        assert!(validate_geojson(&open).is_err());
    }
}
