use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::geom::{polyline_length, Point, Polygon, Rect};
use crate::{Error, Result};

/// One areal unit (tract, block group, zip code, raster pixel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonUnit {
    pub parts: Vec<Polygon>,
    pub value: f64,
    pub unit: String,
    pub bbox: Rect,
}

impl PolygonUnit {
    pub fn new(polygon: Polygon, value: f64) -> Self {
        Self::multi(vec![polygon], value, "")
    }

    pub fn multi(parts: Vec<Polygon>, value: f64, unit: impl Into<String>) -> Self {
        let pts: Vec<Point> = parts.iter().flat_map(|p| p.exterior.iter().copied()).collect();
        let bbox = Rect::bounding(&pts).unwrap_or(Rect::new(0.0, 0.0, 0.0, 0.0));
        PolygonUnit {
            parts,
            value,
            unit: unit.into(),
            bbox,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolygonLayer {
    pub units: Vec<PolygonUnit>,
}

impl PolygonLayer {
    pub fn new(units: Vec<PolygonUnit>) -> Result<Self> {
        for (i, u) in units.iter().enumerate() {
            if !u.value.is_finite() {
                return Err(Error::invalid(format!("unit {i} has non-finite value {}", u.value)));
            }
            if u.parts.is_empty() {
                return Err(Error::invalid(format!("unit {i} has no polygon")));
            }
            for p in &u.parts {
                p.validate()
                    .map_err(|e| Error::invalid(format!("unit {i} has an invalid polygon: {e}")))?;
            }
        }
        Ok(PolygonLayer { units })
    }

    /// Units whose value equals `code` (land-cover class filtering).
    pub fn filter_value(&self, code: f64) -> PolygonLayer {
        PolygonLayer {
            units: self.units.iter().filter(|u| u.value == code).cloned().collect(),
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> PolygonLayer {
        PolygonLayer {
            units: self
                .units
                .iter()
                .map(|u| {
                    PolygonUnit::multi(
                        u.parts.iter().map(|p| p.translate(dx, dy)).collect(),
                        u.value,
                        u.unit.clone(),
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub location: Point,
    /// Tower age in years.
    pub age: Option<f64>,
    /// Tower service radius in meters.
    pub range: Option<f64>,
    /// Facility category code.
    pub category: Option<String>,
}

impl PointRecord {
    pub fn at(x: f64, y: f64) -> Self {
        PointRecord {
            location: Point::new(x, y),
            age: None,
            range: None,
            category: None,
        }
    }

    pub fn tower(x: f64, y: f64, age: f64, range: f64) -> Self {
        PointRecord {
            age: Some(age),
            range: Some(range),
            ..Self::at(x, y)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointLayer {
    pub points: Vec<PointRecord>,
}

impl PointLayer {
    pub fn new(points: Vec<PointRecord>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !p.location.is_finite() {
                return Err(Error::invalid(format!("point {i} has non-finite coordinates")));
            }
            if let Some(r) = p.range {
                if !(r >= 0.0) {
                    return Err(Error::invalid(format!("point {i} has negative service range {r}")));
                }
            }
        }
        Ok(PointLayer { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub polyline: Vec<Point>,
    pub road_class: String,
    pub length: f64,
}

impl RoadSegment {
    pub fn new(polyline: Vec<Point>, road_class: impl Into<String>) -> Result<Self> {
        if polyline.len() < 2 || polyline.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("road polyline needs at least two finite points"));
        }
        let length = polyline_length(&polyline);
        if !(length > 0.0) {
            return Err(Error::invalid("road segment has zero length"));
        }
        Ok(RoadSegment {
            polyline,
            road_class: road_class.into(),
            length,
        })
    }
}

fn read_geojson(path: &Path) -> Result<Vec<Value>> {
    let text = std::fs::read_to_string(path)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::parse(path.display(), e.to_string()))?;
    match doc.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => Ok(doc
            .get("features")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default()),
        Some("Feature") => Ok(vec![doc]),
        other => Err(Error::parse(
            path.display(),
            format!("expected a FeatureCollection, found {other:?}"),
        )),
    }
}

fn parse_position(v: &Value) -> Option<Point> {
    let a = v.as_array()?;
    Some(Point::new(a.first()?.as_f64()?, a.get(1)?.as_f64()?))
}

fn parse_line(v: &Value) -> Option<Vec<Point>> {
    v.as_array()?.iter().map(parse_position).collect()
}

fn parse_polygon(v: &Value) -> Option<Polygon> {
    let rings: Vec<Vec<Point>> = v.as_array()?.iter().map(parse_line).collect::<Option<_>>()?;
    let mut it = rings.into_iter();
    let exterior = it.next()?;
    Some(Polygon::with_holes(exterior, it.collect()))
}

fn property_f64(feature: &Value, key: &str) -> Option<f64> {
    let v = feature.get("properties")?.get(key)?;
    v.as_f64().or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
}

/// Load a GeoJSON FeatureCollection of (Multi)Polygons carrying the numeric
/// property `property`.
pub fn load_polygon_layer(path: &Path, property: &str) -> Result<PolygonLayer> {
    let features = read_geojson(path)?;
    let mut units = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let geom = f
            .get("geometry")
            .ok_or_else(|| Error::parse(path.display(), format!("feature {i} has no geometry")))?;
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        let parts = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => parse_polygon(coords).map(|p| vec![p]),
            Some("MultiPolygon") => coords
                .as_array()
                .and_then(|ps| ps.iter().map(parse_polygon).collect::<Option<Vec<_>>>()),
            other => {
                return Err(Error::parse(
                    path.display(),
                    format!("feature {i}: expected Polygon geometry, found {other:?}"),
                ))
            }
        }
        .ok_or_else(|| Error::parse(path.display(), format!("feature {i}: malformed coordinates")))?;
        let value = property_f64(f, property).ok_or_else(|| {
            Error::parse(path.display(), format!("feature {i}: missing numeric property `{property}`"))
        })?;
        units.push(PolygonUnit::multi(parts, value, property));
    }
    PolygonLayer::new(units).map_err(|e| Error::parse(path.display(), e.to_string()))
}

/// Load points from CSV (`x`, `y` and optional `age`, `range`, `category`
/// columns) or from a GeoJSON FeatureCollection of Points.
pub fn load_point_layer(path: &Path) -> Result<PointLayer> {
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let points = if is_csv {
        load_point_csv(path)?
    } else {
        load_point_geojson(path)?
    };
    PointLayer::new(points).map_err(|e| Error::parse(path.display(), e.to_string()))
}

fn load_point_csv(path: &Path) -> Result<Vec<PointRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let (Some(xi), Some(yi)) = (col("x"), col("y")) else {
        return Err(Error::parse(path.display(), "point CSV needs `x` and `y` columns"));
    };
    let age_i = col("age");
    let range_i = col("range");
    let cat_i = col("category");
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::parse(path.display(), format!("row {}: bad number in column {i}", line + 2)))
        };
        let opt = |i: Option<usize>| -> Result<Option<f64>> {
            match i {
                Some(i) if !rec.get(i).unwrap_or("").trim().is_empty() => num(i).map(Some),
                _ => Ok(None),
            }
        };
        out.push(PointRecord {
            location: Point::new(num(xi)?, num(yi)?),
            age: opt(age_i)?,
            range: opt(range_i)?,
            category: cat_i.and_then(|i| rec.get(i)).map(|s| s.trim().to_string()),
        });
    }
    Ok(out)
}

fn load_point_geojson(path: &Path) -> Result<Vec<PointRecord>> {
    let mut out = Vec::new();
    for (i, f) in read_geojson(path)?.iter().enumerate() {
        let location = f
            .get("geometry")
            .filter(|g| g.get("type").and_then(Value::as_str) == Some("Point"))
            .and_then(|g| parse_position(g.get("coordinates")?))
            .ok_or_else(|| Error::parse(path.display(), format!("feature {i}: expected Point geometry")))?;
        let category = f
            .get("properties")
            .and_then(|p| p.get("category"))
            .map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()));
        out.push(PointRecord {
            location,
            age: property_f64(f, "age"),
            range: property_f64(f, "range"),
            category,
        });
    }
    Ok(out)
}

/// Load (Multi)LineString road features. Features whose `class_property` is
/// not in `classes` are dropped.
pub fn load_road_segments(path: &Path, class_property: &str, classes: &[String]) -> Result<Vec<RoadSegment>> {
    let mut out = Vec::new();
    let mut dropped = 0usize;
    for (i, f) in read_geojson(path)?.iter().enumerate() {
        let class = f
            .get("properties")
            .and_then(|p| p.get(class_property))
            .and_then(Value::as_str)
            .ok_or_else(|| {
                Error::parse(path.display(), format!("feature {i}: missing string property `{class_property}`"))
            })?;
        if !classes.iter().any(|c| c == class) {
            dropped += 1;
            continue;
        }
        let geom = f.get("geometry").unwrap_or(&Value::Null);
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        let lines = match geom.get("type").and_then(Value::as_str) {
            Some("LineString") => parse_line(coords).map(|l| vec![l]),
            Some("MultiLineString") => coords
                .as_array()
                .and_then(|ls| ls.iter().map(parse_line).collect::<Option<Vec<_>>>()),
            other => {
                return Err(Error::parse(
                    path.display(),
                    format!("feature {i}: expected LineString geometry, found {other:?}"),
                ))
            }
        }
        .ok_or_else(|| Error::parse(path.display(), format!("feature {i}: malformed coordinates")))?;
        for line in lines {
            out.push(
                RoadSegment::new(line, class)
                    .map_err(|e| Error::parse(path.display(), format!("feature {i}: {e}")))?,
            );
        }
    }
    if dropped > 0 {
        log::info!("{}: dropped {dropped} road features outside the configured classes", path.display());
    }
    Ok(out)
}
