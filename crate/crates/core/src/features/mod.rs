//! The twelve resilience features, their direction alignment and assembly of
//! the per-cell resilience feature matrix.

mod cells;
pub mod road;

pub use cells::{
    areal_mean, boundary_road_count, greenspace_area, road_density, road_length,
    service_circle_stats, TowerStats,
};
pub use road::{
    assortativity_coefficient, build_road_graph, contract_degree_two, healthcare_access_count,
    planarize, travel_time_matrix, RoadEdge, RoadNetwork, SpeedTable, TravelTimeMatrix,
};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::geodata::{clip_segments_to_cell, Grid, GridCell, Point, PointLayer, PolygonLayer, RoadSegment};
use crate::{Error, Result};

pub const N_FEATURES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsystem {
    Facility,
    Transportation,
    Communication,
    Society,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Robustness,
    Redundancy,
    Resourcefulness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Larger raw value means more resilient.
    Positive,
    /// Larger raw value means less resilient; mapped through `1 / (1 + x)`.
    Inverse,
}

/// How a raw column becomes its direction-aligned counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Raw,
    Reciprocal,
    Shifted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSpec {
    pub name: &'static str,
    pub subsystem: Subsystem,
    pub component: Component,
    pub direction: Direction,
    pub unit: &'static str,
}

impl FeatureSpec {
    pub fn provenance(&self) -> Provenance {
        match (self.direction, self.name) {
            (Direction::Inverse, _) => Provenance::Reciprocal,
            (_, col::ROAD_ASSORTATIVITY_NAME) => Provenance::Shifted,
            _ => Provenance::Raw,
        }
    }

    fn align(&self, x: f64) -> f64 {
        match self.provenance() {
            Provenance::Raw => x,
            Provenance::Reciprocal => 1.0 / (1.0 + x),
            Provenance::Shifted => x + 1.0,
        }
    }
}

/// Column indices in schema order.
pub mod col {
    pub const BUILDING_AGE: usize = 0;
    pub const HEALTHCARE_ACCESS: usize = 1;
    pub const GREENSPACE_AREA: usize = 2;
    pub const ROAD_ASSORTATIVITY: usize = 3;
    pub const BOUNDARY_ROADS: usize = 4;
    pub const ROAD_DENSITY: usize = 5;
    pub const TOWER_AGE: usize = 6;
    pub const TOWER_COUNT: usize = 7;
    pub const INTERNET_SPEED: usize = 8;
    pub const POVERTY_RATE: usize = 9;
    pub const SOCIAL_CONNECTEDNESS: usize = 10;
    pub const EDUCATION_LEVEL: usize = 11;

    pub(crate) const ROAD_ASSORTATIVITY_NAME: &str = "road_assortativity";
}

/// Twelve features laid out as subsystem rows by resilience-component columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSchema {
    pub entries: Vec<FeatureSpec>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::standard()
    }
}

impl FeatureSchema {
    pub fn standard() -> Self {
        use Component::*;
        use Direction::*;
        use Subsystem::*;
        let e = |name, subsystem, component, direction, unit| FeatureSpec {
            name,
            subsystem,
            component,
            direction,
            unit,
        };
        FeatureSchema {
            entries: vec![
                e("building_age", Facility, Robustness, Inverse, "years"),
                e("healthcare_access", Facility, Redundancy, Positive, "facilities"),
                e("greenspace_area", Facility, Resourcefulness, Positive, "m2"),
                e(col::ROAD_ASSORTATIVITY_NAME, Transportation, Robustness, Positive, "coefficient"),
                e("boundary_roads", Transportation, Redundancy, Positive, "segments"),
                e("road_density", Transportation, Resourcefulness, Positive, "m/m2"),
                e("tower_age", Communication, Robustness, Inverse, "years"),
                e("tower_count", Communication, Redundancy, Positive, "towers"),
                e("internet_speed", Communication, Resourcefulness, Positive, "mbps"),
                e("poverty_rate", Society, Robustness, Inverse, "fraction"),
                e("social_connectedness", Society, Redundancy, Positive, "index"),
                e("education_level", Society, Resourcefulness, Positive, "fraction"),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }
}

/// Per-cell raw feature values; `None` marks missing data.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub cell_ids: Vec<usize>,
    pub rows: Vec<[Option<f64>; N_FEATURES]>,
}

/// Direction-aligned cell × feature matrix.
///
/// `raw` holds the imputed values before alignment (needed by scenarios that
/// perturb raw quantities); `values` is what the model consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct ResilienceFeatureMatrix {
    pub cell_ids: Vec<usize>,
    pub raw: Array2<f64>,
    pub values: Array2<f64>,
    pub imputed: Array2<bool>,
    pub provenance: Vec<Provenance>,
}

impl ResilienceFeatureMatrix {
    /// Rebuild the aligned matrix from imputed raw values.
    pub fn from_raw(
        cell_ids: Vec<usize>,
        raw: Array2<f64>,
        imputed: Array2<bool>,
        schema: &FeatureSchema,
    ) -> Result<Self> {
        let (m, d) = raw.dim();
        if d != schema.len() {
            return Err(Error::DimensionMismatch {
                context: "feature columns",
                expected: schema.len(),
                got: d,
            });
        }
        if cell_ids.len() != m || imputed.dim() != (m, d) {
            return Err(Error::DimensionMismatch {
                context: "feature rows",
                expected: m,
                got: cell_ids.len(),
            });
        }
        let mut values = raw.clone();
        for (j, spec) in schema.entries.iter().enumerate() {
            let mut column = values.column_mut(j);
            if spec.provenance() == Provenance::Reciprocal {
                if let Some(bad) = column.iter().find(|x| **x < 0.0) {
                    return Err(Error::invalid(format!(
                        "feature `{}` must be non-negative for the reciprocal transform, found {bad}",
                        spec.name
                    )));
                }
            }
            column.mapv_inplace(|x| spec.align(x));
        }
        if let Some(((i, j), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value {v} for cell {} feature `{}`",
                cell_ids[i], schema.entries[j].name
            )));
        }
        Ok(ResilienceFeatureMatrix {
            cell_ids,
            raw,
            values,
            imputed,
            provenance: schema.entries.iter().map(FeatureSpec::provenance).collect(),
        })
    }

    pub fn n_cells(&self) -> usize {
        self.values.nrows()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Impute missing entries with the column median and align directions so that
/// larger always means more resilient.
pub fn align_directions(raw: &RawFeatures, schema: &FeatureSchema) -> Result<ResilienceFeatureMatrix> {
    let m = raw.rows.len();
    let d = schema.len();
    let mut values = Array2::zeros((m, d));
    let mut imputed = Array2::from_elem((m, d), false);
    for j in 0..d {
        let mut present: Vec<f64> = raw.rows.iter().filter_map(|r| r[j]).collect();
        if present.is_empty() {
            return Err(Error::NoData(schema.entries[j].name.to_string()));
        }
        if let Some(bad) = present.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "feature `{}` has non-finite raw value {bad}",
                schema.entries[j].name
            )));
        }
        let fill = median(&mut present);
        for (i, row) in raw.rows.iter().enumerate() {
            match row[j] {
                Some(v) => values[[i, j]] = v,
                None => {
                    values[[i, j]] = fill;
                    imputed[[i, j]] = true;
                }
            }
        }
    }
    ResilienceFeatureMatrix::from_raw(raw.cell_ids.clone(), values, imputed, schema)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadMetric {
    /// In-cell road length divided by cell area.
    #[default]
    Density,
    /// In-cell road length in meters.
    Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub road_classes: Vec<String>,
    pub speeds_kmh: SpeedTable,
    pub access_threshold_minutes: f64,
    pub road_metric: RoadMetric,
    /// Land-cover class treated as green space.
    pub greenspace_class: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let speeds = SpeedTable::default();
        FeatureConfig {
            road_classes: speeds.classes(),
            speeds_kmh: speeds,
            access_threshold_minutes: 30.0,
            road_metric: RoadMetric::Density,
            greenspace_class: 71.0,
        }
    }
}

/// All inputs needed to compute the twelve features.
#[derive(Debug, Clone, Default)]
pub struct FeatureLayers {
    pub building_age: PolygonLayer,
    pub poverty_rate: PolygonLayer,
    pub social_connectedness: PolygonLayer,
    pub internet_speed: PolygonLayer,
    pub education_level: PolygonLayer,
    /// Land-cover pixels valued by class code.
    pub land_cover: PolygonLayer,
    pub towers: PointLayer,
    pub facilities: PointLayer,
    pub roads: Vec<RoadSegment>,
}

/// Raw (unaligned) feature values for the selected cells.
pub fn compute_raw_features(
    cells: &[&GridCell],
    layers: &FeatureLayers,
    cfg: &FeatureConfig,
) -> Result<RawFeatures> {
    let roads: Vec<RoadSegment> = layers
        .roads
        .iter()
        .filter(|s| cfg.road_classes.contains(&s.road_class))
        .cloned()
        .collect();
    let network = build_road_graph(&roads, &cfg.road_classes, &cfg.speeds_kmh)?;
    let centroids: Vec<Point> = cells.iter().map(|c| c.centroid).collect();
    let travel = travel_time_matrix(&network, &centroids, &layers.facilities);
    let green = layers.land_cover.filter_value(cfg.greenspace_class);

    let mut rows = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        let towers = service_circle_stats(cell, &layers.towers)?;
        let in_cell = clip_segments_to_cell(&roads, cell);
        let local = build_road_graph(&in_cell, &cfg.road_classes, &cfg.speeds_kmh)?;
        let road_value = match cfg.road_metric {
            RoadMetric::Density => road_density(cell, &roads),
            RoadMetric::Length => road_length(cell, &roads),
        };
        let mut row = [None; N_FEATURES];
        row[col::BUILDING_AGE] = areal_mean(cell, &layers.building_age);
        row[col::HEALTHCARE_ACCESS] =
            Some(healthcare_access_count(travel.row(i), cfg.access_threshold_minutes) as f64);
        row[col::GREENSPACE_AREA] = Some(greenspace_area(cell, &green));
        row[col::ROAD_ASSORTATIVITY] = assortativity_coefficient(&local);
        row[col::BOUNDARY_ROADS] = Some(boundary_road_count(cell, &roads) as f64);
        row[col::ROAD_DENSITY] = Some(road_value);
        row[col::TOWER_AGE] = towers.mean_age;
        row[col::TOWER_COUNT] = Some(towers.count as f64);
        row[col::INTERNET_SPEED] = areal_mean(cell, &layers.internet_speed);
        row[col::POVERTY_RATE] = areal_mean(cell, &layers.poverty_rate);
        row[col::SOCIAL_CONNECTEDNESS] = areal_mean(cell, &layers.social_connectedness);
        row[col::EDUCATION_LEVEL] = areal_mean(cell, &layers.education_level);
        rows.push(row);
    }
    Ok(RawFeatures {
        cell_ids: cells.iter().map(|c| c.id).collect(),
        rows,
    })
}

/// Compute, impute and align the feature matrix for every active cell of the grid.
pub fn assemble_rf(
    grid: &Grid,
    active: Option<&[bool]>,
    layers: &FeatureLayers,
    cfg: &FeatureConfig,
) -> Result<ResilienceFeatureMatrix> {
    if let Some(mask) = active {
        if mask.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                context: "cell mask",
                expected: grid.len(),
                got: mask.len(),
            });
        }
    }
    let cells: Vec<&GridCell> = grid
        .cells
        .iter()
        .filter(|c| active.is_none_or(|m| m[c.id]))
        .collect();
    let raw = compute_raw_features(&cells, layers, cfg)?;
    let schema = FeatureSchema::standard();
    let rf = align_directions(&raw, &schema)?;
    for (j, name) in schema.names().iter().enumerate() {
        let n = rf.imputed.index_axis(Axis(1), j).iter().filter(|b| **b).count();
        if n > 0 {
            log::info!("imputed {n} of {} cells for `{name}`", rf.n_cells());
        }
    }
    Ok(rf)
}
