//! Road graph construction, degree-2 simplification, degree assortativity and
//! free-flow travel times.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use petgraph::graph::{NodeIndex, UnGraph};
use serde::{Deserialize, Serialize};

use crate::geodata::{segment_split_params, Point, PointLayer, Rect, RoadSegment};
use crate::{Error, Result};

/// Free-flow speeds in km/h keyed by road class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeedTable(pub BTreeMap<String, f64>);

impl Default for SpeedTable {
    fn default() -> Self {
        let mut t = BTreeMap::new();
        for (class, kmh) in [
            ("motorway", 100.0),
            ("trunk", 80.0),
            ("primary", 60.0),
            ("secondary", 50.0),
            ("tertiary", 40.0),
        ] {
            t.insert(class.to_string(), kmh);
            t.insert(format!("{class}_link"), f64::max(kmh - 10.0, 30.0));
        }
        SpeedTable(t)
    }
}

impl SpeedTable {
    pub fn classes(&self) -> Vec<String> {
        self.0.keys().cloned().collect()
    }

    /// Minutes needed to drive `length` meters on `class`.
    pub fn minutes(&self, class: &str, length: f64) -> Result<f64> {
        let kmh = self
            .0
            .get(class)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no free-flow speed configured for road class `{class}`")))?;
        if !(kmh > 0.0) {
            return Err(Error::invalid(format!("speed for `{class}` must be positive")));
        }
        Ok(length / (kmh * 1000.0 / 60.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadEdge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
    pub minutes: f64,
    pub road_class: String,
}

impl RoadEdge {
    fn other(&self, v: usize) -> usize {
        if self.a == v {
            self.b
        } else {
            self.a
        }
    }
}

/// Undirected multigraph of intersections (nodes) and road links (edges).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub nodes: Vec<Point>,
    pub edges: Vec<RoadEdge>,
}

impl RoadNetwork {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Degree per node; a self-loop adds two.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for e in &self.edges {
            deg[e.a] += 1;
            deg[e.b] += 1;
        }
        deg
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// Index of the node nearest to `p`; ties go to the lowest id.
    pub fn nearest_node(&self, p: &Point) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n.x - p.x).powi(2) + (n.y - p.y).powi(2);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    fn to_petgraph(&self) -> UnGraph<(), f64> {
        let mut g = UnGraph::with_capacity(self.nodes.len(), self.edges.len());
        for _ in &self.nodes {
            g.add_node(());
        }
        for e in &self.edges {
            g.add_edge(NodeIndex::new(e.a), NodeIndex::new(e.b), e.minutes);
        }
        g
    }

    /// Shortest free-flow minutes from `source` to every node (+inf when unreachable).
    pub fn shortest_minutes(&self, source: usize) -> Vec<f64> {
        let g = self.to_petgraph();
        let dist = petgraph::algo::dijkstra(&g, NodeIndex::new(source), None, |e| *e.weight());
        let mut out = vec![f64::INFINITY; self.nodes.len()];
        for (n, d) in dist {
            out[n.index()] = d;
        }
        out
    }
}

const KEY_SCALE: f64 = 1e6;

fn node_key(p: &Point) -> (i64, i64) {
    ((p.x * KEY_SCALE).round() as i64, (p.y * KEY_SCALE).round() as i64)
}

fn cmp_points(a: &[Point], b: &[Point]) -> std::cmp::Ordering {
    for (p, q) in a.iter().zip(b) {
        let o = p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y));
        if o.is_ne() {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

struct Piece {
    a: Point,
    b: Point,
    class: String,
    bbox: Rect,
}

/// Uniform bucket index over piece bounding boxes for candidate lookup.
struct BucketIndex {
    origin: Point,
    size: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl BucketIndex {
    fn new(pieces: &[Piece]) -> Self {
        let pts: Vec<Point> = pieces.iter().flat_map(|p| [p.a, p.b]).collect();
        let ext = Rect::bounding(&pts).unwrap_or(Rect::new(0.0, 0.0, 1.0, 1.0));
        let span = ext.width().max(ext.height()).max(1.0);
        let per_axis = (pieces.len() as f64).sqrt().ceil().max(1.0);
        let mut idx = BucketIndex {
            origin: Point::new(ext.min_x, ext.min_y),
            size: span / per_axis,
            buckets: HashMap::new(),
        };
        for (i, p) in pieces.iter().enumerate() {
            for key in idx.keys(&p.bbox) {
                idx.buckets.entry(key).or_default().push(i);
            }
        }
        idx
    }

    fn keys(&self, r: &Rect) -> Vec<(i64, i64)> {
        let f = |v: f64, o: f64| ((v - o) / self.size).floor() as i64;
        let (x0, x1) = (f(r.min_x, self.origin.x), f(r.max_x, self.origin.x));
        let (y0, y1) = (f(r.min_y, self.origin.y), f(r.max_y, self.origin.y));
        let mut out = Vec::new();
        for x in x0..=x1 {
            for y in y0..=y1 {
                out.push((x, y));
            }
        }
        out
    }

    fn candidates(&self, r: &Rect) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .keys(r)
            .iter()
            .filter_map(|k| self.buckets.get(k))
            .flatten()
            .copied()
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Planar road graph: nodes at segment endpoints, polyline vertices and
/// crossings, no simplification. Segments outside `classes` are ignored.
pub fn planarize(segments: &[RoadSegment], classes: &[String], speeds: &SpeedTable) -> Result<RoadNetwork> {
    let mut kept: Vec<&RoadSegment> = segments
        .iter()
        .filter(|s| classes.contains(&s.road_class))
        .collect();
    // canonical order so the graph does not depend on input record order
    kept.sort_by(|a, b| {
        a.road_class
            .cmp(&b.road_class)
            .then_with(|| cmp_points(&a.polyline, &b.polyline))
    });

    let pieces: Vec<Piece> = kept
        .iter()
        .flat_map(|s| {
            s.polyline.windows(2).filter(|w| w[0] != w[1]).map(|w| Piece {
                a: w[0],
                b: w[1],
                class: s.road_class.clone(),
                bbox: Rect::bounding(w).expect("two points"),
            })
        })
        .collect();
    if pieces.is_empty() {
        return Ok(RoadNetwork::default());
    }
    let index = BucketIndex::new(&pieces);

    let mut key_to_node: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    let mut raw_edges: Vec<((i64, i64), (i64, i64), f64, &str)> = Vec::new();
    for (i, p) in pieces.iter().enumerate() {
        let mut ts = vec![0.0, 1.0];
        for j in index.candidates(&p.bbox) {
            if j != i && pieces[j].bbox.intersects(&p.bbox) {
                ts.extend(segment_split_params(p.a, p.b, pieces[j].a, pieces[j].b));
            }
        }
        ts.sort_by(f64::total_cmp);
        let len = p.a.distance(&p.b);
        ts.dedup_by(|x, y| (*x - *y).abs() * len < 1e-9);
        let points: Vec<Point> = ts
            .iter()
            .map(|&t| match t {
                t if t <= 0.0 => p.a,
                t if t >= 1.0 => p.b,
                t => Point::new(p.a.x + (p.b.x - p.a.x) * t, p.a.y + (p.b.y - p.a.y) * t),
            })
            .collect();
        for w in points.windows(2) {
            let (ka, kb) = (node_key(&w[0]), node_key(&w[1]));
            if ka == kb {
                continue;
            }
            key_to_node.insert(ka, 0);
            key_to_node.insert(kb, 0);
            raw_edges.push((ka, kb, w[0].distance(&w[1]), p.class.as_str()));
        }
    }
    let mut nodes = Vec::with_capacity(key_to_node.len());
    for (i, (key, id)) in key_to_node.iter_mut().enumerate() {
        *id = i;
        nodes.push(Point::new(key.0 as f64 / KEY_SCALE, key.1 as f64 / KEY_SCALE));
    }
    let mut edges = Vec::with_capacity(raw_edges.len());
    for (ka, kb, length, class) in raw_edges {
        let (a, b) = (key_to_node[&ka], key_to_node[&kb]);
        edges.push(RoadEdge {
            a: a.min(b),
            b: a.max(b),
            length,
            minutes: speeds.minutes(class, length)?,
            road_class: class.to_string(),
        });
    }
    edges.sort_by(|x, y| {
        (x.a, x.b)
            .cmp(&(y.a, y.b))
            .then(x.length.total_cmp(&y.length))
            .then_with(|| x.road_class.cmp(&y.road_class))
    });
    Ok(RoadNetwork { nodes, edges })
}

/// Remove every node of degree exactly two by merging its two links into one
/// (lengths and times add). Components that are pure cycles keep their
/// lowest-id node as an anchor carrying a self-loop.
pub fn contract_degree_two(net: &RoadNetwork) -> RoadNetwork {
    let n = net.nodes.len();
    let mut edges: Vec<Option<RoadEdge>> = net.edges.iter().cloned().map(Some).collect();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, e) in net.edges.iter().enumerate() {
        incident[e.a].push(i);
        incident[e.b].push(i);
    }
    let degrees = net.degrees();

    // pure-cycle components: every node has degree 2
    let mut comp = vec![usize::MAX; n];
    let mut anchor = vec![false; n];
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        let mut members = Vec::new();
        comp[start] = start;
        while let Some(v) = stack.pop() {
            members.push(v);
            for &ei in &incident[v] {
                let w = net.edges[ei].other(v);
                if comp[w] == usize::MAX {
                    comp[w] = start;
                    stack.push(w);
                }
            }
        }
        if members.iter().all(|&v| degrees[v] == 2) {
            // start is the smallest id in its component
            anchor[start] = true;
        }
    }

    let mut removed = vec![false; n];
    for v in 0..n {
        if anchor[v] || incident[v].len() != 2 {
            continue;
        }
        let (e1, e2) = (incident[v][0], incident[v][1]);
        if e1 == e2 {
            continue;
        }
        let first = edges[e1].take().expect("live edge");
        let second = edges[e2].take().expect("live edge");
        let (a, b) = (first.other(v), second.other(v));
        let road_class = if first.road_class == second.road_class || first.length >= second.length {
            first.road_class.clone()
        } else {
            second.road_class.clone()
        };
        let merged = RoadEdge {
            a: a.min(b),
            b: a.max(b),
            length: first.length + second.length,
            minutes: first.minutes + second.minutes,
            road_class,
        };
        let new_id = edges.len();
        edges.push(Some(merged));
        for (end, old) in [(a, e1), (b, e2)] {
            let slot = incident[end]
                .iter()
                .position(|&x| x == old)
                .expect("incidence is consistent");
            incident[end][slot] = new_id;
        }
        incident[v].clear();
        removed[v] = true;
    }

    let mut remap = vec![usize::MAX; n];
    let mut nodes = Vec::new();
    for v in 0..n {
        if !removed[v] && !incident[v].is_empty() {
            remap[v] = nodes.len();
            nodes.push(net.nodes[v]);
        }
    }
    let mut out_edges: Vec<RoadEdge> = edges
        .into_iter()
        .flatten()
        .map(|mut e| {
            let (a, b) = (remap[e.a], remap[e.b]);
            e.a = a.min(b);
            e.b = a.max(b);
            e
        })
        .collect();
    out_edges.sort_by(|x, y| (x.a, x.b).cmp(&(y.a, y.b)).then(x.length.total_cmp(&y.length)));
    RoadNetwork {
        nodes,
        edges: out_edges,
    }
}

/// Planarize the segments of the configured classes and contract degree-2 nodes.
pub fn build_road_graph(segments: &[RoadSegment], classes: &[String], speeds: &SpeedTable) -> Result<RoadNetwork> {
    Ok(contract_degree_two(&planarize(segments, classes, speeds)?))
}

/// Newman degree assortativity: Pearson correlation of the degrees found at
/// the two ends of every edge, each edge counted in both orientations.
///
/// Returns `None` when undefined (no edges, or all edge ends share one degree).
pub fn assortativity_coefficient(net: &RoadNetwork) -> Option<f64> {
    if net.edges.is_empty() {
        return None;
    }
    let deg = net.degrees();
    let n = 2.0 * net.edges.len() as f64;
    let (mut s, mut ss, mut sxy) = (0.0, 0.0, 0.0);
    for e in &net.edges {
        let (x, y) = (deg[e.a] as f64, deg[e.b] as f64);
        s += x + y;
        ss += x * x + y * y;
        sxy += 2.0 * x * y;
    }
    let mean = s / n;
    let var = ss / n - mean * mean;
    if var <= 1e-12 * mean * mean {
        return None;
    }
    let r = (sxy / n - mean * mean) / var;
    Some(r.clamp(-1.0, 1.0))
}

/// Free-flow driving minutes from origin points to facility points.
///
/// Rows follow `origins`, columns follow `facilities.points`. Both sides are
/// snapped to their nearest network node.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeMatrix {
    pub minutes: Array2<f64>,
}

impl TravelTimeMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        self.minutes
            .row(i)
            .to_slice()
            .expect("travel time matrix is standard layout")
    }
}

pub fn travel_time_matrix(net: &RoadNetwork, origins: &[Point], facilities: &PointLayer) -> TravelTimeMatrix {
    let mut minutes = Array2::from_elem((origins.len(), facilities.len()), f64::INFINITY);
    if net.nodes.is_empty() {
        if !origins.is_empty() && !facilities.is_empty() {
            log::warn!("road network is empty; every travel time is infinite");
        }
        return TravelTimeMatrix { minutes };
    }
    let fac_nodes: Vec<usize> = facilities
        .points
        .iter()
        .map(|p| net.nearest_node(&p.location).expect("non-empty network"))
        .collect();
    let mut cache: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (i, o) in origins.iter().enumerate() {
        let src = net.nearest_node(o).expect("non-empty network");
        let dist = cache.entry(src).or_insert_with(|| net.shortest_minutes(src));
        for (j, &f) in fac_nodes.iter().enumerate() {
            minutes[[i, j]] = dist[f];
        }
    }
    TravelTimeMatrix { minutes }
}

/// Facilities reachable within `threshold` minutes (inclusive).
pub fn healthcare_access_count(times: &[f64], threshold: f64) -> usize {
    times.iter().filter(|&&t| t <= threshold).count()
}
