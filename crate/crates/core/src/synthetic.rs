//! Procedurally generated labeled scenes for end-to-end runs without real data.
//!
//! [`town`] builds a small street intersection (roads, pavements, buildings,
//! trees, cars, poles, benches) and samples it the way a mobile scanner does:
//! by casting rays on an angular grid from stations on the road and keeping the
//! first surface hit. The stations double as projection reference points.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{CategoryId, LabeledCloud, Rgb};
use crate::projection::ReferencePoint;

pub const BUILDING: CategoryId = 0;
pub const CAR: CategoryId = 1;
pub const NATURAL_GROUND: CategoryId = 2;
pub const GROUND: CategoryId = 3;
pub const POLE_LIKE: CategoryId = 4;
pub const ROAD: CategoryId = 5;
pub const STREET_FURNITURE: CategoryId = 6;
pub const TREE: CategoryId = 7;
pub const PAVEMENT: CategoryId = 8;

pub fn category_names() -> BTreeMap<CategoryId, String> {
    [
        (BUILDING, "Building"),
        (CAR, "Car"),
        (NATURAL_GROUND, "Natural Ground"),
        (GROUND, "Ground"),
        (POLE_LIKE, "Pole Like"),
        (ROAD, "Road"),
        (STREET_FURNITURE, "Street Furniture"),
        (TREE, "Tree"),
        (PAVEMENT, "Pavement"),
    ]
    .into_iter()
    .map(|(id, name)| (id, name.to_string()))
    .collect()
}

fn base_color(label: CategoryId) -> Rgb {
    match label {
        BUILDING => [170, 120, 90],
        CAR => [40, 60, 160],
        NATURAL_GROUND => [90, 140, 60],
        GROUND => [120, 100, 70],
        POLE_LIKE => [150, 150, 150],
        ROAD => [60, 60, 60],
        STREET_FURNITURE => [160, 40, 40],
        TREE => [30, 110, 30],
        PAVEMENT => [190, 190, 180],
        _ => [255, 255, 255],
    }
}

#[derive(Debug, Clone)]
pub struct TownParams {
    pub seed: u64,
    /// Scanner stations, which are also the scene reference points.
    pub stations: Vec<ReferencePoint>,
    /// Azimuth samples per station over the full circle.
    pub azimuth_steps: usize,
    /// Polar-angle samples per station between `polar_range`.
    pub polar_steps: usize,
    pub polar_range: (f64, f64),
    /// Half extent of the square town, meters.
    pub extent: f64,
}

impl Default for TownParams {
    fn default() -> Self {
        Self {
            seed: 7,
            stations: vec![
                ReferencePoint::new("intersection", 0.0, 0.0, 2.0),
                ReferencePoint::new("east_road", 40.0, 0.0, 2.0),
                ReferencePoint::new("south_road", 0.0, -40.0, 2.0),
            ],
            azimuth_steps: 720,
            polar_steps: 64,
            polar_range: (20.0_f64.to_radians(), 150.0_f64.to_radians()),
            extent: 80.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cloud: LabeledCloud,
    pub scenes: Vec<ReferencePoint>,
    pub building_label: CategoryId,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Boxed { min: [f64; 3], max: [f64; 3] },
    /// Vertical cylinder without caps.
    Cylinder { center: [f64; 2], radius: f64, z: [f64; 2] },
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Solid {
    shape: Shape,
    label: CategoryId,
}

impl Shape {
    fn hit(&self, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
        match *self {
            Shape::Boxed { min, max } => {
                let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[k] - o[k]) / d[k];
                    let b = (max[k] - o[k]) / d[k];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                (t0 <= t1 && t0 > 1e-9).then_some(t0)
            }
            Shape::Cylinder { center, radius, z } => {
                let (ox, oy) = (o[0] - center[0], o[1] - center[1]);
                let a = d[0] * d[0] + d[1] * d[1];
                if a < 1e-15 {
                    return None;
                }
                let b = 2.0 * (ox * d[0] + oy * d[1]);
                let c = ox * ox + oy * oy - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / (2.0 * a);
                let hz = o[2] + t * d[2];
                (t > 1e-9 && hz >= z[0] && hz <= z[1]).then_some(t)
            }
            Shape::Sphere { center, radius } => {
                let oc = [o[0] - center[0], o[1] - center[1], o[2] - center[2]];
                let b = oc[0] * d[0] + oc[1] * d[1] + oc[2] * d[2];
                let c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                (t > 1e-9).then_some(t)
            }
        }
    }
}

fn ground_label(x: f64, y: f64) -> CategoryId {
    let (ax, ay) = (x.abs(), y.abs());
    if ax < 5.0 || ay < 5.0 {
        ROAD
    } else if ax < 8.0 || ay < 8.0 {
        PAVEMENT
    } else if ((x / 15.0).floor() + (y / 15.0).floor()) as i64 % 2 == 0 {
        NATURAL_GROUND
    } else {
        GROUND
    }
}

fn town_solids(rng: &mut ChaCha8Rng) -> Vec<Solid> {
    let mut solids = Vec::new();
    for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
        // Lattice cells along both roads; cell (0,0) is the corner block.
        for (i, j) in [(0, 0), (1, 0), (2, 0), (0, 1), (0, 2)] {
            let (x0, x1) = (10.0 + 20.0 * f64::from(i), 26.0 + 20.0 * f64::from(i));
            let (y0, y1) = (10.0 + 20.0 * f64::from(j), 26.0 + 20.0 * f64::from(j));
            let h = rng.gen_range(6.0..25.0);
            let (xa, xb) = (sx * x0, sx * x1);
            let (ya, yb) = (sy * y0, sy * y1);
            solids.push(Solid {
                shape: Shape::Boxed {
                    min: [xa.min(xb), ya.min(yb), 0.0],
                    max: [xa.max(xb), ya.max(yb), h],
                },
                label: BUILDING,
            });
        }
        // Trees in the gaps between buildings, set back from the pavement.
        for k in 0..2 {
            let along = 28.0 + 20.0 * f64::from(k);
            for (tx, ty) in [(along, 16.0), (16.0, along)] {
                let (cx, cy) = (sx * tx, sy * ty);
                solids.push(Solid {
                    shape: Shape::Cylinder {
                        center: [cx, cy],
                        radius: 0.25,
                        z: [0.0, 3.5],
                    },
                    label: TREE,
                });
                solids.push(Solid {
                    shape: Shape::Sphere {
                        center: [cx, cy, 5.0],
                        radius: 1.8,
                    },
                    label: TREE,
                });
            }
        }
        // Poles and a bench on the pavement.
        for along in [20.0, 50.0] {
            for (px, py) in [(along * sx, 7.5 * sy), (7.5 * sx, along * sy)] {
                solids.push(Solid {
                    shape: Shape::Cylinder {
                        center: [px, py],
                        radius: 0.12,
                        z: [0.0, 6.0],
                    },
                    label: POLE_LIKE,
                });
            }
        }
        let bx = sx * 36.0;
        let by = sy * 6.5;
        solids.push(Solid {
            shape: Shape::Boxed {
                min: [bx - 0.8, by.min(by + sy * 0.5), 0.0],
                max: [bx + 0.8, by.max(by + sy * 0.5), 0.8],
            },
            label: STREET_FURNITURE,
        });
    }
    // Parked cars near the far ends of the roads.
    for (cx, cy, along_x) in [
        (62.0, 3.5, true),
        (-62.0, -3.5, true),
        (3.5, 62.0, false),
        (-3.5, -62.0, false),
    ] {
        let (hx, hy) = if along_x { (2.0, 0.9) } else { (0.9, 2.0) };
        solids.push(Solid {
            shape: Shape::Boxed {
                min: [cx - hx, cy - hy, 0.0],
                max: [cx + hx, cy + hy, 1.5],
            },
            label: CAR,
        });
    }
    solids
}

/// Simulated scan of a street intersection. With the default parameters this
/// yields roughly 10⁵ points from three stations.
pub fn town(params: &TownParams) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let solids = town_solids(&mut rng);
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();

    let (phi_lo, phi_hi) = params.polar_range;
    let az_step = 2.0 * PI / params.azimuth_steps as f64;
    let phi_step = (phi_hi - phi_lo) / params.polar_steps.max(1) as f64;
    for station in &params.stations {
        let o = [station.x0, station.y0, station.z0];
        for a in 0..params.azimuth_steps {
            for p in 0..params.polar_steps {
                let theta = -PI + (a as f64 + rng.gen_range(0.1..0.9)) * az_step;
                let phi = phi_lo + (p as f64 + rng.gen_range(0.1..0.9)) * phi_step;
                let d = [phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos()];

                let mut best: Option<(f64, CategoryId)> = None;
                if d[2] < 0.0 {
                    let t = -o[2] / d[2];
                    let (x, y) = (o[0] + t * d[0], o[1] + t * d[1]);
                    if x.abs() <= params.extent && y.abs() <= params.extent {
                        best = Some((t, ground_label(x, y)));
                    }
                }
                for s in &solids {
                    if let Some(t) = s.shape.hit(o, d) {
                        if best.is_none_or(|(bt, _)| t < bt) {
                            best = Some((t, s.label));
                        }
                    }
                }
                if let Some((t, label)) = best {
                    positions.push([o[0] + t * d[0], o[1] + t * d[1], (o[2] + t * d[2]).max(0.0)]);
                    let c = base_color(label);
                    let j: i16 = rng.gen_range(-12..=12);
                    colors.push(c.map(|v| (i16::from(v) + j).clamp(0, 255) as u8));
                    labels.push(label);
                }
            }
        }
    }
    let cloud = LabeledCloud::new(positions, Some(colors), labels, category_names())
        .expect("columns built together");
    SyntheticScene {
        cloud,
        scenes: params.stations.clone(),
        building_label: BUILDING,
    }
}

/// A building facade occluding a road surface behind it at identical angles.
///
/// The facade is a vertical grid of `n × n` points on the plane `x = near`
/// seen from the origin; every facade point has a road twin at the same
/// direction and `far / near` times the distance. A strip of unoccluded road
/// below the facade completes the scene.
pub fn occlusion_scene(n: usize, near: f64, far: f64) -> SyntheticScene {
    let mut positions = Vec::new();
    let mut labels = Vec::new();
    let scale = far / near;
    let step = 6.0 / n.max(2) as f64;
    for i in 0..n {
        for j in 0..n {
            let y = -3.0 + (i as f64 + 0.5) * step;
            let z = -1.0 + (j as f64 + 0.5) * step;
            positions.push([near, y, z]);
            labels.push(BUILDING);
            positions.push([near * scale, y * scale, z * scale]);
            labels.push(ROAD);
        }
    }
    for i in 0..n {
        let y = -3.0 + (i as f64 + 0.5) * step;
        positions.push([near * 0.5, y, -3.0]);
        labels.push(GROUND);
    }
    let colors = labels.iter().map(|&l| base_color(l)).collect();
    let cloud = LabeledCloud::new(positions, Some(colors), labels, category_names())
        .expect("columns built together");
    SyntheticScene {
        cloud,
        scenes: vec![ReferencePoint::new("occlusion", 0.0, 0.0, 0.0)],
        building_label: BUILDING,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn town_is_deterministic_and_labeled() {
        let params = TownParams {
            azimuth_steps: 90,
            polar_steps: 16,
            ..Default::default()
        };
        let a = town(&params);
        let b = town(&params);
        assert_eq!(a.cloud, b.cloud);
        a.cloud.ensure_valid().unwrap();
        let has = |l| a.cloud.labels().contains(&l);
        assert!(has(BUILDING) && has(ROAD) && has(PAVEMENT));
    }

    #[test]
    fn default_town_size() {
        let t = town(&TownParams::default());
        assert!((80_000..=140_000).contains(&t.cloud.len()), "{}", t.cloud.len());
        assert!(t.scenes.len() >= 2);
    }

    #[test]
    fn occlusion_twins_share_direction() {
        let s = occlusion_scene(4, 10.0, 20.0);
        let p = s.cloud.positions();
        assert_eq!(s.cloud.labels()[0], BUILDING);
        assert_eq!(s.cloud.labels()[1], ROAD);
        for k in 0..3 {
            assert_eq!(p[1][k], p[0][k] * 2.0);
        }
    }

    #[test]
    fn ray_shapes() {
        let o = [0.0, 0.0, 1.0];
        let d = [1.0, 0.0, 0.0];
        let b = Shape::Boxed {
            min: [5.0, -1.0, 0.0],
            max: [6.0, 1.0, 2.0],
        };
        assert_eq!(b.hit(o, d), Some(5.0));
        let c = Shape::Cylinder {
            center: [10.0, 0.0],
            radius: 1.0,
            z: [0.0, 3.0],
        };
        assert_eq!(c.hit(o, d), Some(9.0));
        let s = Shape::Sphere {
            center: [10.0, 0.0, 1.0],
            radius: 2.0,
        };
        assert_eq!(s.hit(o, d), Some(8.0));
        assert_eq!(s.hit(o, [-1.0, 0.0, 0.0]), None);
    }
}
