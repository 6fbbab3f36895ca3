//! Planar geometry on projected coordinates (meters).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    fn lerp(&self, other: &Point, t: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub const fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new(
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        )
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.min_x <= other.max_x
            && other.min_x <= self.max_x
            && self.min_y <= other.max_y
            && other.min_y <= self.max_y
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Rect {
        Rect::new(self.min_x + dx, self.min_y + dy, self.max_x + dx, self.max_y + dy)
    }

    /// Euclidean distance from `p` to the closest point of the rectangle (0 inside).
    pub fn distance_to(&self, p: &Point) -> f64 {
        let dx = (self.min_x - p.x).max(0.0).max(p.x - self.max_x);
        let dy = (self.min_y - p.y).max(0.0).max(p.y - self.max_y);
        dx.hypot(dy)
    }

    /// Closed ring, counter-clockwise, first vertex repeated at the end.
    pub fn ring(&self) -> Vec<Point> {
        vec![
            Point::new(self.min_x, self.min_y),
            Point::new(self.max_x, self.min_y),
            Point::new(self.max_x, self.max_y),
            Point::new(self.min_x, self.max_y),
            Point::new(self.min_x, self.min_y),
        ]
    }

    pub fn bounding(points: &[Point]) -> Option<Rect> {
        let first = points.first()?;
        let mut r = Rect::new(first.x, first.y, first.x, first.y);
        for p in &points[1..] {
            r.min_x = r.min_x.min(p.x);
            r.min_y = r.min_y.min(p.y);
            r.max_x = r.max_x.max(p.x);
            r.max_y = r.max_y.max(p.y);
        }
        Some(r)
    }
}

/// Simple polygon with optional holes. Rings are stored open (no repeated
/// closing vertex).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Vec<Point>,
    pub holes: Vec<Vec<Point>>,
}

impl Polygon {
    pub fn new(exterior: Vec<Point>) -> Self {
        Polygon {
            exterior: open_ring(exterior),
            holes: Vec::new(),
        }
    }

    pub fn with_holes(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Self {
        Polygon {
            exterior: open_ring(exterior),
            holes: holes.into_iter().map(open_ring).collect(),
        }
    }

    pub fn from_rect(r: &Rect) -> Self {
        Polygon::new(r.ring())
    }

    pub fn area(&self) -> f64 {
        let holes: f64 = self.holes.iter().map(|h| ring_area(h)).sum();
        (ring_area(&self.exterior) - holes).max(0.0)
    }

    pub fn bbox(&self) -> Option<Rect> {
        Rect::bounding(&self.exterior)
    }

    /// Area of the intersection with an axis-aligned rectangle.
    pub fn intersection_area(&self, rect: &Rect) -> f64 {
        let outer = ring_area(&clip_ring_to_rect(&self.exterior, rect));
        let holes: f64 = self
            .holes
            .iter()
            .map(|h| ring_area(&clip_ring_to_rect(h, rect)))
            .sum();
        (outer - holes).max(0.0)
    }

    /// Checks the polygon is usable for clipping: finite coordinates, at least
    /// three vertices per ring, non-zero area and no self-intersections.
    pub fn validate(&self) -> Result<(), String> {
        for ring in std::iter::once(&self.exterior).chain(self.holes.iter()) {
            if ring.len() < 3 {
                return Err(format!("ring has {} vertices, need at least 3", ring.len()));
            }
            if ring.iter().any(|p| !p.is_finite()) {
                return Err("ring has non-finite coordinates".into());
            }
            if ring_area(ring) <= 0.0 {
                return Err("ring has zero area".into());
            }
            if ring_self_intersects(ring) {
                return Err("ring is self-intersecting".into());
            }
        }
        Ok(())
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Polygon {
        let shift = |r: &Vec<Point>| r.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect();
        Polygon {
            exterior: shift(&self.exterior),
            holes: self.holes.iter().map(shift).collect(),
        }
    }
}

fn open_ring(mut ring: Vec<Point>) -> Vec<Point> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

/// Unsigned shoelace area of an open ring.
pub fn ring_area(ring: &[Point]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for (i, p) in ring.iter().enumerate() {
        let q = &ring[(i + 1) % ring.len()];
        twice += p.x * q.y - q.x * p.y;
    }
    0.5 * twice.abs()
}

fn ring_self_intersects(ring: &[Point]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            // adjacent edges share a vertex legitimately
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if segments_touch(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// True if closed segments `ab` and `cd` share at least one point.
pub fn segments_touch(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Sutherland–Hodgman clip of an (open) ring against a rectangle.
pub fn clip_ring_to_rect(ring: &[Point], rect: &Rect) -> Vec<Point> {
    #[derive(Clone, Copy)]
    enum Edge {
        Left(f64),
        Right(f64),
        Bottom(f64),
        Top(f64),
    }
    impl Edge {
        fn inside(self, p: &Point) -> bool {
            match self {
                Edge::Left(x) => p.x >= x,
                Edge::Right(x) => p.x <= x,
                Edge::Bottom(y) => p.y >= y,
                Edge::Top(y) => p.y <= y,
            }
        }
        fn cross(self, a: &Point, b: &Point) -> Point {
            match self {
                Edge::Left(x) | Edge::Right(x) => {
                    let t = (x - a.x) / (b.x - a.x);
                    Point::new(x, a.y + (b.y - a.y) * t)
                }
                Edge::Bottom(y) | Edge::Top(y) => {
                    let t = (y - a.y) / (b.y - a.y);
                    Point::new(a.x + (b.x - a.x) * t, y)
                }
            }
        }
    }

    let mut output: Vec<Point> = ring.to_vec();
    for edge in [
        Edge::Left(rect.min_x),
        Edge::Right(rect.max_x),
        Edge::Bottom(rect.min_y),
        Edge::Top(rect.max_y),
    ] {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().expect("non-empty");
        for cur in input {
            let (cin, pin) = (edge.inside(&cur), edge.inside(&prev));
            if cin {
                if !pin {
                    output.push(edge.cross(&prev, &cur));
                }
                output.push(cur);
            } else if pin {
                output.push(edge.cross(&prev, &cur));
            }
            prev = cur;
        }
    }
    output
}

/// Liang–Barsky clip of segment `ab`; returns the sub-segment inside `rect`.
pub fn clip_segment_to_rect(a: Point, b: Point, rect: &Rect) -> Option<(Point, Point)> {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    for (p, q) in [
        (-dx, a.x - rect.min_x),
        (dx, rect.max_x - a.x),
        (-dy, a.y - rect.min_y),
        (dy, rect.max_y - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    let start = if t0 == 0.0 { a } else { a.lerp(&b, t0) };
    let end = if t1 == 1.0 { b } else { a.lerp(&b, t1) };
    Some((start, end))
}

pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

/// Parameter `t` along `ab` of every point shared with segment `cd`.
///
/// Proper crossings and T-junctions yield one value; collinear overlaps yield
/// the projections of the overlapping endpoints.
pub fn segment_split_params(a: Point, b: Point, c: Point, d: Point) -> Vec<f64> {
    const EPS: f64 = 1e-12;
    let r = Point::new(b.x - a.x, b.y - a.y);
    let s = Point::new(d.x - c.x, d.y - c.y);
    let denom = r.x * s.y - r.y * s.x;
    let len2 = r.x * r.x + r.y * r.y;
    let ac = Point::new(c.x - a.x, c.y - a.y);
    let scale = len2.sqrt() * (s.x * s.x + s.y * s.y).sqrt();
    if denom.abs() <= EPS * scale {
        // parallel: only collinear overlaps matter
        if (ac.x * r.y - ac.y * r.x).abs() > 1e-9 * len2.sqrt().max(1.0) {
            return Vec::new();
        }
        return [c, d]
            .iter()
            .map(|p| ((p.x - a.x) * r.x + (p.y - a.y) * r.y) / len2)
            .filter(|t| (-EPS..=1.0 + EPS).contains(t))
            .map(|t| t.clamp(0.0, 1.0))
            .collect();
    }
    let t = (ac.x * s.y - ac.y * s.x) / denom;
    let u = (ac.x * r.y - ac.y * r.x) / denom;
    let tol = 1e-9;
    if (-tol..=1.0 + tol).contains(&t) && (-tol..=1.0 + tol).contains(&u) {
        vec![t.clamp(0.0, 1.0)]
    } else {
        Vec::new()
    }
}
