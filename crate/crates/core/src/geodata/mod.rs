//! Study-area gridding and the raw layers that get joined against cells.

mod geom;
mod layers;

pub use geom::{
    clip_ring_to_rect, clip_segment_to_rect, polyline_length, ring_area, segment_split_params,
    segments_touch, Point, Polygon, Rect,
};
pub use layers::{
    load_point_layer, load_polygon_layer, load_road_segments, PointLayer, PointRecord,
    PolygonLayer, PolygonUnit, RoadSegment,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    pub square: Rect,
    pub centroid: Point,
}

impl GridCell {
    pub fn area(&self) -> f64 {
        self.square.area()
    }
}

/// Row-major lattice of congruent square cells. Row 0 sits at `origin_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub cells: Vec<GridCell>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&GridCell> {
        if row < self.n_rows && col < self.n_cols {
            self.cells.get(row * self.n_cols + col)
        } else {
            None
        }
    }

    pub fn extent(&self) -> Rect {
        Rect::new(
            self.origin_x,
            self.origin_y,
            self.origin_x + self.n_cols as f64 * self.cell_size,
            self.origin_y + self.n_rows as f64 * self.cell_size,
        )
    }
}

fn cells_needed(span: f64, cell_size: f64) -> usize {
    let n = (span / cell_size).ceil().max(1.0) as usize;
    // guard against 4000/2000 = 2.0000000000000004 style round-up
    if n > 1 && (n - 1) as f64 * cell_size >= span * (1.0 - 1e-12) {
        n - 1
    } else {
        n
    }
}

/// Partition `bbox` into `cell_size` squares. The last row and column may
/// overhang the box so every cell is congruent.
pub fn build_grid(bbox: Rect, cell_size: f64) -> Result<Grid> {
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(Error::invalid(format!("cell size must be positive, got {cell_size}")));
    }
    let (w, h) = (bbox.width(), bbox.height());
    if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
        return Err(Error::invalid(format!(
            "degenerate bounding box {w} x {h}; both sides must be positive"
        )));
    }
    let n_cols = cells_needed(w, cell_size);
    let n_rows = cells_needed(h, cell_size);
    let mut cells = Vec::with_capacity(n_rows * n_cols);
    for row in 0..n_rows {
        for col in 0..n_cols {
            let min_x = bbox.min_x + col as f64 * cell_size;
            let min_y = bbox.min_y + row as f64 * cell_size;
            let square = Rect::new(min_x, min_y, min_x + cell_size, min_y + cell_size);
            cells.push(GridCell {
                id: row * n_cols + col,
                row,
                col,
                square,
                centroid: square.center(),
            });
        }
    }
    Ok(Grid {
        origin_x: bbox.min_x,
        origin_y: bbox.min_y,
        cell_size,
        n_rows,
        n_cols,
        cells,
    })
}

/// Units whose polygon overlaps the cell with positive area, with that area.
pub fn intersecting_units(cell: &GridCell, layer: &PolygonLayer) -> Vec<(usize, f64)> {
    let sq = &cell.square;
    let floor = sq.area() * 1e-12;
    layer
        .units
        .iter()
        .enumerate()
        .filter(|(_, u)| u.bbox.intersects(sq))
        .filter_map(|(i, u)| {
            let area: f64 = u.parts.iter().map(|p| p.intersection_area(sq)).sum();
            (area > floor).then_some((i, area))
        })
        .collect()
}

pub fn circle_intersects_cell(center: Point, radius: f64, cell: &GridCell) -> bool {
    cell.square.distance_to(&center) <= radius
}

/// Pieces of each segment lying inside the cell. A polyline that leaves and
/// re-enters the cell yields one piece per visit.
pub fn clip_segments_to_cell(segments: &[RoadSegment], cell: &GridCell) -> Vec<RoadSegment> {
    let sq = &cell.square;
    let mut out = Vec::new();
    for seg in segments {
        let Some(bb) = Rect::bounding(&seg.polyline) else { continue };
        if !bb.intersects(sq) {
            continue;
        }
        if sq.contains(&Point::new(bb.min_x, bb.min_y)) && sq.contains(&Point::new(bb.max_x, bb.max_y))
        {
            out.push(seg.clone());
            continue;
        }
        let mut current: Vec<Point> = Vec::new();
        for w in seg.polyline.windows(2) {
            match clip_segment_to_rect(w[0], w[1], sq) {
                Some((a, b)) => {
                    if current.last() != Some(&a) {
                        flush_piece(&mut current, seg, &mut out);
                        current.push(a);
                    }
                    current.push(b);
                }
                None => flush_piece(&mut current, seg, &mut out),
            }
        }
        flush_piece(&mut current, seg, &mut out);
    }
    out
}

fn flush_piece(current: &mut Vec<Point>, parent: &RoadSegment, out: &mut Vec<RoadSegment>) {
    let pts = std::mem::take(current);
    if pts.len() >= 2 {
        let length = polyline_length(&pts);
        if length > 0.0 {
            out.push(RoadSegment {
                polyline: pts,
                road_class: parent.road_class.clone(),
                length,
            });
        }
    }
}
