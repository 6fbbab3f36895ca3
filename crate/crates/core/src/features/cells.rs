//! Per-cell aggregations of polygon, point and road layers.

use crate::geodata::{circle_intersects_cell, clip_segments_to_cell, intersecting_units, segments_touch};
use crate::geodata::{GridCell, PointLayer, PolygonLayer, RoadSegment};
use crate::{Error, Result};

/// Sum in ascending order so the result does not depend on record order.
fn ordered_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Unweighted mean of the values of all units overlapping the cell, or `None`
/// when no unit overlaps it.
pub fn areal_mean(cell: &GridCell, layer: &PolygonLayer) -> Option<f64> {
    let hits = intersecting_units(cell, layer);
    if hits.is_empty() {
        return None;
    }
    let sum = ordered_sum(hits.iter().map(|&(i, _)| layer.units[i].value).collect());
    Some(sum / hits.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TowerStats {
    pub count: usize,
    /// `None` when no tower serves the cell.
    pub mean_age: Option<f64>,
}

/// Towers whose service circle reaches the cell, and their mean age.
pub fn service_circle_stats(cell: &GridCell, towers: &PointLayer) -> Result<TowerStats> {
    let mut count = 0;
    let mut ages = Vec::new();
    for (i, t) in towers.points.iter().enumerate() {
        let range = t.range.unwrap_or(0.0);
        if !(range >= 0.0) {
            return Err(Error::invalid(format!("tower {i} has negative service range {range}")));
        }
        if circle_intersects_cell(t.location, range, cell) {
            count += 1;
            if let Some(age) = t.age {
                ages.push(age);
            }
        }
    }
    Ok(TowerStats {
        count,
        mean_age: (!ages.is_empty()).then(|| {
            let n = ages.len() as f64;
            ordered_sum(ages) / n
        }),
    })
}

/// Number of distinct segments that touch the cell boundary at least once.
pub fn boundary_road_count(cell: &GridCell, segments: &[RoadSegment]) -> usize {
    let ring = cell.square.ring();
    segments
        .iter()
        .filter(|s| {
            s.polyline.windows(2).any(|w| {
                ring.windows(2)
                    .any(|side| segments_touch(w[0], w[1], side[0], side[1]))
            })
        })
        .count()
}

/// Total intersection area of the given land-cover pixels with the cell.
pub fn greenspace_area(cell: &GridCell, pixels: &PolygonLayer) -> f64 {
    ordered_sum(intersecting_units(cell, pixels).iter().map(|&(_, a)| a).collect())
}

/// Length of road inside the cell, in meters.
pub fn road_length(cell: &GridCell, segments: &[RoadSegment]) -> f64 {
    ordered_sum(clip_segments_to_cell(segments, cell).iter().map(|s| s.length).collect())
}

/// In-cell road length per unit cell area (m / m²).
pub fn road_density(cell: &GridCell, segments: &[RoadSegment]) -> f64 {
    road_length(cell, segments) / cell.area()
}
