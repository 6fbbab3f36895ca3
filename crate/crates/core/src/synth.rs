//! Seeded synthetic data: planted clusters, low-rank matrices and a small
//! city with all input layers.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::features::FeatureLayers;
use crate::geodata::{Point, PointLayer, PointRecord, Polygon, PolygonLayer, PolygonUnit, Rect, RoadSegment};
use crate::rng::substream;
use crate::Result;

#[derive(Debug, Clone)]
pub struct Blobs {
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub centers: Array2<f64>,
}

/// `m` points in `d` dimensions drawn around `k` centres in `[0.1, 0.9]^d`
/// with isotropic Gaussian noise of standard deviation `spread`. Centres are
/// at least 0.4 apart; labels cycle through the clusters and are shuffled.
pub fn planted_blobs(m: usize, d: usize, k: usize, spread: f64, seed: u64) -> Blobs {
    let mut rng = substream(seed, "synth/blobs", 0);
    let mut centers = Array2::zeros((k, d));
    let mut placed = 0;
    let mut attempts = 0;
    while placed < k {
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..0.9)).collect();
        let far = (0..placed).all(|j| {
            let d2: f64 = c.iter().zip(centers.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= 0.4
        });
        attempts += 1;
        if far || attempts > 10_000 {
            centers.row_mut(placed).assign(&ndarray::Array1::from(c));
            placed += 1;
        }
    }
    let mut labels: Vec<usize> = (0..m).map(|i| i % k).collect();
    labels.shuffle(&mut rng);
    let noise = Normal::new(0.0, spread).expect("valid spread");
    let x = Array2::from_shape_fn((m, d), |(i, j)| centers[[labels[i], j]] + noise.sample(&mut rng));
    Blobs { x, labels, centers }
}

/// Min-max scaled product of two random non-negative factors of rank `rank`.
pub fn low_rank(m: usize, d: usize, rank: usize, seed: u64) -> Array2<f64> {
    let mut rng = substream(seed, "synth/low-rank", 0);
    let u = Array2::from_shape_fn((m, rank), |_| rng.random::<f64>());
    let v = Array2::from_shape_fn((rank, d), |_| rng.random::<f64>());
    let x = u.dot(&v);
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    x.mapv(|v| (v - lo) / (hi - lo))
}

/// Districts of the synthetic city.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum District {
    Downtown,
    InnerRing,
    WestSuburb,
    EastSuburb,
    Rural,
}

impl District {
    pub const ALL: [District; 5] = [
        District::Downtown,
        District::InnerRing,
        District::WestSuburb,
        District::EastSuburb,
        District::Rural,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

struct Profile {
    building_age: f64,
    poverty: f64,
    social: f64,
    internet: f64,
    education: f64,
    street_spacing: Option<f64>,
    parks: usize,
    towers: usize,
    tower_range: f64,
    tower_age: f64,
}

fn profile(d: District) -> Profile {
    match d {
        District::Downtown => Profile {
            building_age: 70.0,
            poverty: 0.25,
            social: 0.6,
            internet: 300.0,
            education: 0.45,
            street_spacing: Some(400.0),
            parks: 5,
            towers: 4,
            tower_range: 800.0,
            tower_age: 5.0,
        },
        District::InnerRing => Profile {
            building_age: 50.0,
            poverty: 0.15,
            social: 0.7,
            internet: 250.0,
            education: 0.4,
            street_spacing: Some(2000.0 / 3.0),
            parks: 20,
            towers: 3,
            tower_range: 1200.0,
            tower_age: 8.0,
        },
        District::WestSuburb => Profile {
            building_age: 25.0,
            poverty: 0.05,
            social: 0.9,
            internet: 200.0,
            education: 0.6,
            street_spacing: Some(1000.0),
            parks: 60,
            towers: 2,
            tower_range: 2000.0,
            tower_age: 6.0,
        },
        District::EastSuburb => Profile {
            building_age: 40.0,
            poverty: 0.2,
            social: 0.5,
            internet: 120.0,
            education: 0.2,
            street_spacing: Some(1000.0),
            parks: 10,
            towers: 1,
            tower_range: 2000.0,
            tower_age: 12.0,
        },
        District::Rural => Profile {
            building_age: 60.0,
            poverty: 0.18,
            social: 0.4,
            internet: 30.0,
            education: 0.15,
            street_spacing: None,
            parks: 40,
            towers: 0,
            tower_range: 0.0,
            tower_age: 15.0,
        },
    }
}

#[derive(Debug, Clone)]
pub struct MiniCity {
    pub bbox: Rect,
    pub cell_size: f64,
    pub n_side: usize,
    pub layers: FeatureLayers,
    /// District of every cell, by cell id.
    pub districts: Vec<District>,
    /// Flood-risk level (1–6) of every cell, by cell id.
    pub risk: Vec<u32>,
}

const CELL: f64 = 2000.0;
const SIDE: usize = 10;

fn district_at(p: Point) -> District {
    let half = CELL * SIDE as f64 / 2.0;
    let (dx, dy) = (p.x - half, p.y - half);
    let r = (dx * dx + dy * dy).sqrt();
    if r < 3500.0 {
        District::Downtown
    } else if r < 6500.0 {
        District::InnerRing
    } else if r < 9500.0 {
        if dx < 0.0 {
            District::WestSuburb
        } else {
            District::EastSuburb
        }
    } else {
        District::Rural
    }
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, v: f64, rel: f64) -> f64 {
    v * (1.0 + rng.random_range(-rel..rel))
}

fn segment(a: (f64, f64), b: (f64, f64), class: &str) -> RoadSegment {
    RoadSegment::new(vec![Point::new(a.0, a.1), Point::new(b.0, b.1)], class).expect("valid segment")
}

/// A 10 × 10-cell (20 km) city with five concentric/sectoral districts.
pub fn mini_city(seed: u64) -> MiniCity {
    let extent = CELL * SIDE as f64;
    let bbox = Rect::new(0.0, 0.0, extent, extent);
    let centre = |r: usize, c: usize| Point::new(CELL * (c as f64 + 0.5), CELL * (r as f64 + 0.5));
    let districts: Vec<District> = (0..SIDE * SIDE).map(|id| district_at(centre(id / SIDE, id % SIDE))).collect();

    // census-style tracts offset by half a cell so every cell overlaps four
    let mut rng = substream(seed, "synth/city/tracts", 0);
    let mut tracts: [Vec<PolygonUnit>; 5] = Default::default();
    for r in 0..=SIDE {
        for c in 0..=SIDE {
            let x0 = (c as f64 - 0.5) * CELL;
            let y0 = (r as f64 - 0.5) * CELL;
            let rect = Rect::new(x0.max(0.0), y0.max(0.0), (x0 + CELL).min(extent), (y0 + CELL).min(extent));
            let p = profile(district_at(rect.center()));
            let poly = Polygon::from_rect(&rect);
            let values = [
                jitter(&mut rng, p.building_age, 0.08),
                jitter(&mut rng, p.poverty, 0.08),
                jitter(&mut rng, p.social, 0.08),
                jitter(&mut rng, p.internet, 0.08),
                jitter(&mut rng, p.education, 0.08),
            ];
            for (layer, v) in tracts.iter_mut().zip(values) {
                layer.push(PolygonUnit::new(poly.clone(), v));
            }
        }
    }
    let [building_age, poverty_rate, social_connectedness, internet_speed, education_level] =
        tracts.map(|u| PolygonLayer::new(u).expect("valid tracts"));

    let mut rng = substream(seed, "synth/city/cover", 0);
    let mut pixels = Vec::new();
    let pixel = 100.0;
    let per_side = (CELL / pixel) as usize;
    for id in 0..SIDE * SIDE {
        let (r, c) = (id / SIDE, id % SIDE);
        let p = profile(districts[id]);
        let mut slots: Vec<usize> = (0..per_side * per_side).collect();
        slots.shuffle(&mut rng);
        let n_parks = p.parks + rng.random_range(0..=p.parks / 2);
        for (n, &s) in slots.iter().take(n_parks + 3).enumerate() {
            let x0 = c as f64 * CELL + (s % per_side) as f64 * pixel;
            let y0 = r as f64 * CELL + (s / per_side) as f64 * pixel;
            let class = if n < n_parks { 71.0 } else { 21.0 };
            pixels.push(PolygonUnit::new(Polygon::from_rect(&Rect::new(x0, y0, x0 + pixel, y0 + pixel)), class));
        }
    }
    let land_cover = PolygonLayer::new(pixels).expect("valid pixels");

    let mut rng = substream(seed, "synth/city/towers", 0);
    let mut towers = Vec::new();
    for id in 0..SIDE * SIDE {
        let (r, c) = (id / SIDE, id % SIDE);
        let p = profile(districts[id]);
        let n = if p.towers == 0 {
            usize::from(rng.random_bool(0.3))
        } else {
            p.towers
        };
        for _ in 0..n {
            let x = c as f64 * CELL + rng.random_range(100.0..CELL - 100.0);
            let y = r as f64 * CELL + rng.random_range(100.0..CELL - 100.0);
            let range = if p.tower_range > 0.0 { p.tower_range } else { 3000.0 };
            towers.push(PointRecord::tower(x, y, jitter(&mut rng, p.tower_age, 0.2), range));
        }
    }
    let towers = PointLayer::new(towers).expect("valid towers");

    let hospital = |x: f64, y: f64| {
        let mut p = PointRecord::at(x, y);
        p.category = Some("hospital".into());
        p
    };
    let facilities = PointLayer::new(vec![
        hospital(3000.0, 3000.0),
        hospital(5000.0, 13000.0),
        hospital(9000.0, 9000.0),
        hospital(11000.0, 11000.0),
        hospital(15000.0, 3000.0),
        hospital(17000.0, 17000.0),
    ])
    .expect("valid facilities");

    let mut roads = Vec::new();
    for i in 0..SIDE {
        let v = CELL * (i as f64 + 0.5);
        roads.push(segment((v, 0.0), (v, extent), "tertiary"));
        roads.push(segment((0.0, v), (extent, v), "tertiary"));
    }
    let motorway_y = extent / 2.0 + 0.2 * CELL;
    roads.push(segment((0.0, motorway_y), (extent, motorway_y), "motorway"));
    for id in 0..SIDE * SIDE {
        let (r, c) = (id / SIDE, id % SIDE);
        let Some(spacing) = profile(districts[id]).street_spacing else {
            continue;
        };
        let (x0, y0) = (c as f64 * CELL, r as f64 * CELL);
        let n = (CELL / spacing).round() as usize;
        for k in 0..n {
            let off = spacing * (k as f64 + 0.5);
            if (off - CELL / 2.0).abs() < 1.0 {
                continue;
            }
            roads.push(segment((x0 + off, y0), (x0 + off, y0 + CELL), "tertiary"));
            roads.push(segment((x0, y0 + off), (x0 + CELL, y0 + off), "tertiary"));
        }
    }

    let mut rng = substream(seed, "synth/city/risk", 0);
    let risk = (0..SIDE * SIDE)
        .map(|id| {
            let row = id / SIDE;
            let base = 6 - (row * 6 / SIDE) as i64;
            (base + rng.random_range(-1..=0)).clamp(1, 6) as u32
        })
        .collect();

    MiniCity {
        bbox,
        cell_size: CELL,
        n_side: SIDE,
        layers: FeatureLayers {
            building_age,
            poverty_rate,
            social_connectedness,
            internet_speed,
            education_level,
            land_cover,
            towers,
            facilities,
            roads,
        },
        districts,
        risk,
    }
}

/// File names used by [`write_mini_city`].
pub mod files {
    pub const BUILDING_AGE: &str = "building_age.geojson";
    pub const POVERTY_RATE: &str = "poverty_rate.geojson";
    pub const SOCIAL_CONNECTEDNESS: &str = "social_connectedness.geojson";
    pub const INTERNET_SPEED: &str = "internet_speed.geojson";
    pub const EDUCATION_LEVEL: &str = "education_level.geojson";
    pub const LAND_COVER: &str = "land_cover.geojson";
    pub const TOWERS: &str = "towers.csv";
    pub const FACILITIES: &str = "hospitals.csv";
    pub const ROADS: &str = "roads.geojson";
    pub const RISK: &str = "flood_risk.csv";
}

/// Write every layer of `city` into `dir` (polygon values under `value`,
/// land cover under `class`, road classes under `highway`).
pub fn write_mini_city(city: &MiniCity, dir: &Path) -> Result<()> {
    use crate::io::{write_point_csv, write_polygon_layer, write_risk_csv, write_road_layer};
    let l = &city.layers;
    write_polygon_layer(&dir.join(files::BUILDING_AGE), &l.building_age, "value")?;
    write_polygon_layer(&dir.join(files::POVERTY_RATE), &l.poverty_rate, "value")?;
    write_polygon_layer(&dir.join(files::SOCIAL_CONNECTEDNESS), &l.social_connectedness, "value")?;
    write_polygon_layer(&dir.join(files::INTERNET_SPEED), &l.internet_speed, "value")?;
    write_polygon_layer(&dir.join(files::EDUCATION_LEVEL), &l.education_level, "value")?;
    write_polygon_layer(&dir.join(files::LAND_COVER), &l.land_cover, "class")?;
    write_point_csv(&dir.join(files::TOWERS), &l.towers)?;
    write_point_csv(&dir.join(files::FACILITIES), &l.facilities)?;
    write_road_layer(&dir.join(files::ROADS), &l.roads, "highway")?;
    let risk: Vec<(usize, u32)> = city.risk.iter().copied().enumerate().collect();
    write_risk_csv(&dir.join(files::RISK), &risk)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{assemble_rf, FeatureConfig};
    use crate::geodata::build_grid;

    #[test]
    fn blobs_are_balanced_and_seeded() {
        let b = planted_blobs(100, 3, 5, 0.02, 1);
        assert_eq!(b.x.dim(), (100, 3));
        for c in 0..5 {
            assert_eq!(b.labels.iter().filter(|&&l| l == c).count(), 20);
        }
        assert_eq!(planted_blobs(100, 3, 5, 0.02, 1).x, b.x);
    }

    #[test]
    fn city_covers_every_district_and_yields_features() {
        let city = mini_city(7);
        for d in District::ALL {
            assert!(city.districts.contains(&d), "{d:?}");
        }
        let grid = build_grid(city.bbox, city.cell_size).unwrap();
        assert_eq!(grid.len(), 100);
        let rf = assemble_rf(&grid, None, &city.layers, &FeatureConfig::default()).unwrap();
        assert_eq!(rf.values.dim(), (100, 12));
        assert!(rf.values.iter().all(|v| v.is_finite()));
    }
}
