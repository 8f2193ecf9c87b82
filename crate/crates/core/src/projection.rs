//! Spherical coordinates and equirectangular rasterization of a labeled cloud.
//!
//! A point is translated to the reference, converted to `(r, θ, φ)`, and the
//! angles alone pick the pixel. Radial depth is kept in the [`PixelMapping`]
//! so that later stages can tell near and far points in the same pixel apart.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{CloudError, LabeledCloud, Rgb};
use crate::image::EquirectImage;
use crate::mapping::{MappingEntry, PixelMapping};

pub const DEFAULT_WIDTH: u32 = 4096;
pub const DEFAULT_HEIGHT: u32 = 2048;
pub const BACKGROUND: Rgb = [0, 0, 0];
/// Pixel color used for every point when the cloud carries no colors.
pub const UNCOLORED: Rgb = [255, 255, 255];

#[derive(Debug, thiserror::Error)]
pub enum ProjectionError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    BadDimensions { width: u32, height: u32 },
    #[error("reference point `{0}` has a non-finite coordinate")]
    BadReference(String),
    #[error("max_range must be positive, got {0}")]
    BadMaxRange(f64),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub name: String,
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
}

impl ReferencePoint {
    pub fn new(name: impl Into<String>, x0: f64, y0: f64, z0: f64) -> Self {
        Self {
            name: name.into(),
            x0,
            y0,
            z0,
        }
    }

    pub fn origin() -> Self {
        Self::new("origin", 0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x0.is_finite() && self.y0.is_finite() && self.z0.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    pub r: f64,
    /// Azimuth in (−π, π].
    pub theta: f64,
    /// Polar angle from +z in [0, π].
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelCoord {
    pub px: u32,
    pub py: u32,
}

/// Returned by [`to_spherical`] for a point that coincides with the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("point coincides with the reference point")]
pub struct DegenerateOrigin;

pub fn normalize_point(p: [f64; 3], reference: &ReferencePoint) -> [f64; 3] {
    [p[0] - reference.x0, p[1] - reference.y0, p[2] - reference.z0]
}

pub fn to_spherical(p: [f64; 3]) -> Result<SphericalCoord, DegenerateOrigin> {
    let [x, y, z] = p;
    let r = (x * x + y * y + z * z).sqrt();
    if r == 0.0 {
        return Err(DegenerateOrigin);
    }
    // On the polar axis azimuth is 0 regardless of the signs of zero; atan2
    // returns −π for (−0.0, negative x), which is folded onto +π.
    let theta = if x == 0.0 && y == 0.0 {
        0.0
    } else {
        match y.atan2(x) {
            t if t == -PI => PI,
            t => t,
        }
    };
    let phi = (z / r).clamp(-1.0, 1.0).acos();
    Ok(SphericalCoord { r, theta, phi })
}

pub fn to_pixel(c: SphericalCoord, width: u32, height: u32) -> PixelCoord {
    debug_assert!(width >= 1 && height >= 1);
    let u = (c.theta + PI) / (2.0 * PI) * f64::from(width);
    let v = c.phi / PI * f64::from(height);
    let px = (u.floor() as i64).rem_euclid(i64::from(width)) as u32;
    let py = (v.floor().max(0.0) as u32).min(height - 1);
    PixelCoord { px, py }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ProjectionStats {
    pub n_points: usize,
    pub projected: usize,
    pub dropped_degenerate: usize,
    pub dropped_out_of_range: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub image: EquirectImage,
    pub mapping: PixelMapping,
    pub stats: ProjectionStats,
}

enum Placement {
    Mapped { pixel: u32, depth: f64 },
    Degenerate,
    OutOfRange,
}

fn place(
    p: [f64; 3],
    reference: &ReferencePoint,
    width: u32,
    height: u32,
    max_range: Option<f64>,
) -> Placement {
    match to_spherical(normalize_point(p, reference)) {
        Err(DegenerateOrigin) => Placement::Degenerate,
        Ok(s) if max_range.is_some_and(|m| s.r > m) => Placement::OutOfRange,
        Ok(s) => {
            let PixelCoord { px, py } = to_pixel(s, width, height);
            Placement::Mapped {
                pixel: py * width + px,
                depth: s.r,
            }
        }
    }
}

/// Projects a cloud using the current rayon pool.
pub fn project_scene(
    cloud: &LabeledCloud,
    reference: &ReferencePoint,
    width: u32,
    height: u32,
    max_range: Option<f64>,
) -> Result<Projection, ProjectionError> {
    check_inputs(cloud, reference, width, height, max_range)?;
    Ok(project_unchecked(cloud, reference, width, height, max_range))
}

/// Same as [`project_scene`] but on a dedicated pool of `workers` threads.
pub fn project_scene_with_workers(
    cloud: &LabeledCloud,
    reference: &ReferencePoint,
    width: u32,
    height: u32,
    max_range: Option<f64>,
    workers: usize,
) -> Result<Projection, ProjectionError> {
    check_inputs(cloud, reference, width, height, max_range)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ProjectionError::Pool(e.to_string()))?;
    Ok(pool.install(|| project_unchecked(cloud, reference, width, height, max_range)))
}

fn check_inputs(
    cloud: &LabeledCloud,
    reference: &ReferencePoint,
    width: u32,
    height: u32,
    max_range: Option<f64>,
) -> Result<(), ProjectionError> {
    if width == 0 || height == 0 || u64::from(width) * u64::from(height) > u64::from(u32::MAX) {
        return Err(ProjectionError::BadDimensions { width, height });
    }
    if !reference.is_finite() {
        return Err(ProjectionError::BadReference(reference.name.clone()));
    }
    if let Some(m) = max_range {
        if !(m > 0.0) {
            return Err(ProjectionError::BadMaxRange(m));
        }
    }
    cloud.ensure_valid()?;
    Ok(())
}

fn project_unchecked(
    cloud: &LabeledCloud,
    reference: &ReferencePoint,
    width: u32,
    height: u32,
    max_range: Option<f64>,
) -> Projection {
    let placements: Vec<Placement> = cloud
        .positions()
        .par_iter()
        .with_min_len(4096)
        .map(|&p| place(p, reference, width, height, max_range))
        .collect();

    let mut stats = ProjectionStats {
        n_points: cloud.len(),
        ..Default::default()
    };
    // Depths are positive and finite, so their bit patterns order like the values.
    let mut keyed: Vec<(u32, u64, usize)> = Vec::with_capacity(placements.len());
    for (i, pl) in placements.into_iter().enumerate() {
        match pl {
            Placement::Mapped { pixel, depth } => keyed.push((pixel, depth.to_bits(), i)),
            Placement::Degenerate => stats.dropped_degenerate += 1,
            Placement::OutOfRange => stats.dropped_out_of_range += 1,
        }
    }
    stats.projected = keyed.len();
    // Keys are unique (point index), so the unstable sort is deterministic.
    keyed.par_sort_unstable();

    let n_pixels = width as usize * height as usize;
    let mut offsets = vec![0usize; n_pixels + 1];
    for &(pixel, _, _) in &keyed {
        offsets[pixel as usize + 1] += 1;
    }
    for k in 0..n_pixels {
        offsets[k + 1] += offsets[k];
    }
    let entries: Vec<MappingEntry> = keyed
        .par_iter()
        .map(|&(_, bits, i)| MappingEntry {
            point_index: i as u64,
            depth: f64::from_bits(bits),
        })
        .collect();
    let mapping = PixelMapping::from_sorted_parts(width, height, offsets, entries);

    let colors = cloud.colors();
    let mut rgb = vec![0u8; n_pixels * 3];
    let mut min_depth = vec![f64::INFINITY; n_pixels];
    rgb.par_chunks_mut(3)
        .zip(min_depth.par_iter_mut())
        .enumerate()
        .for_each(|(pixel, (px_rgb, d))| match mapping.pixel_entries(pixel).first() {
            Some(nearest) => {
                let c = colors.map_or(UNCOLORED, |c| c[nearest.point_index as usize]);
                px_rgb.copy_from_slice(&c);
                *d = nearest.depth;
            }
            None => px_rgb.copy_from_slice(&BACKGROUND),
        });
    let image = EquirectImage::from_parts(width, height, rgb, min_depth);
    Projection {
        image,
        mapping,
        stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn cloud(points: &[[f64; 3]], colors: Option<Vec<Rgb>>) -> LabeledCloud {
        let labels = vec![0; points.len()];
        let names = BTreeMap::from([(0, "Building".to_string())]);
        LabeledCloud::new(points.to_vec(), colors, labels, names).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9
    }

    #[test]
    fn normalization_subtracts_reference() {
        let r = ReferencePoint::new("r", 1.0, 1.0, 1.0);
        assert_eq!(normalize_point([5.0, 3.0, 2.0], &r), [4.0, 2.0, 1.0]);
        assert_eq!(normalize_point([1.0, 1.0, 1.0], &r), [0.0, 0.0, 0.0]);
        assert_eq!(
            normalize_point([-2.5, 0.0, 7.0], &ReferencePoint::origin()),
            [-2.5, 0.0, 7.0]
        );
    }

    #[test]
    fn spherical_axes_and_pole() {
        let s = to_spherical([1.0, 0.0, 0.0]).unwrap();
        assert!(close(s.r, 1.0) && close(s.theta, 0.0) && close(s.phi, PI / 2.0));
        let s = to_spherical([0.0, 0.0, 1.0]).unwrap();
        assert!(close(s.r, 1.0) && close(s.theta, 0.0) && close(s.phi, 0.0));
        let s = to_spherical([0.0, 1.0, 0.0]).unwrap();
        assert!(close(s.r, 1.0) && close(s.theta, PI / 2.0) && close(s.phi, PI / 2.0));
        let s = to_spherical([0.0, 0.0, -3.0]).unwrap();
        assert!(close(s.phi, PI));
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn spherical_diagonal() {
        // Reference values from an arbitrary-precision evaluation.
        let s = to_spherical([1.0, 1.0, 1.0]).unwrap();
        assert!(close(s.r, 1.7320508075688772));
        assert!(close(s.theta, 0.7853981633974483));
        assert!(close(s.phi, 0.9553166181245093));
    }

    #[test]
    fn negative_x_axis_has_theta_pi() {
        assert_eq!(to_spherical([-1.0, 0.0, 0.0]).unwrap().theta, PI);
        assert_eq!(to_spherical([-1.0, -0.0, 0.0]).unwrap().theta, PI);
    }

    #[test]
    fn origin_is_degenerate() {
        assert_eq!(to_spherical([0.0, 0.0, 0.0]), Err(DegenerateOrigin));
    }

    #[test]
    fn pixel_center_seam_and_clamp() {
        let c = SphericalCoord {
            r: 1.0,
            theta: 0.0,
            phi: PI / 2.0,
        };
        assert_eq!(to_pixel(c, 1024, 512), PixelCoord { px: 512, py: 256 });
        let seam = SphericalCoord {
            r: 1.0,
            theta: PI,
            phi: 1.0,
        };
        assert_eq!(to_pixel(seam, 1024, 512).px, 0);
        let down = SphericalCoord {
            r: 1.0,
            theta: 0.3,
            phi: PI,
        };
        assert_eq!(to_pixel(down, 1024, 512).py, 511);
    }

    #[test]
    fn single_point_scene() {
        let c = cloud(&[[1.0, 0.0, 0.0]], Some(vec![[9, 8, 7]]));
        let p = project_scene(&c, &ReferencePoint::origin(), 4, 2, None).unwrap();
        assert_eq!(p.mapping.occupied_pixels(), 1);
        assert_eq!(
            p.mapping.entries_at(2, 1),
            &[MappingEntry {
                point_index: 0,
                depth: 1.0
            }]
        );
        assert_eq!(p.image.pixel(2, 1), [9, 8, 7]);
        assert_eq!(p.image.depth(2, 1), 1.0);
        assert_eq!(p.image.pixel(0, 0), BACKGROUND);
        assert!(p.image.depth(0, 0).is_infinite());
    }

    #[test]
    fn collinear_points_share_a_pixel_nearest_first() {
        let c = cloud(
            &[[2.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            Some(vec![[0, 0, 255], [255, 0, 0]]),
        );
        let p = project_scene(&c, &ReferencePoint::origin(), 4, 2, None).unwrap();
        let depths: Vec<(u64, f64)> = p
            .mapping
            .entries_at(2, 1)
            .iter()
            .map(|e| (e.point_index, e.depth))
            .collect();
        assert_eq!(depths, vec![(1, 1.0), (0, 2.0)]);
        assert_eq!(p.image.pixel(2, 1), [255, 0, 0]);
    }

    #[test]
    fn equal_depth_ties_break_by_index_and_uncolored_is_white() {
        let c = cloud(&[[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]], None);
        let p = project_scene(&c, &ReferencePoint::origin(), 4, 2, None).unwrap();
        let idx: Vec<u64> = p.mapping.entries_at(2, 0).iter().map(|e| e.point_index).collect();
        assert_eq!(idx, vec![0, 1]);
        assert_eq!(p.image.pixel(2, 0), UNCOLORED);
    }

    #[test]
    fn empty_cloud_gives_background_image() {
        let c = cloud(&[], None);
        let p = project_scene(&c, &ReferencePoint::origin(), 4, 2, None).unwrap();
        assert_eq!(p.mapping.occupied_pixels(), 0);
        assert!(p.image.rgb().iter().all(|&b| b == 0));
    }

    #[test]
    fn drops_are_counted() {
        let c = cloud(&[[0.0, 0.0, 0.0], [100.0, 0.0, 0.0], [1.0, 2.0, 3.0]], None);
        let p = project_scene(&c, &ReferencePoint::origin(), 8, 4, Some(50.0)).unwrap();
        assert_eq!(p.stats.dropped_degenerate, 1);
        assert_eq!(p.stats.dropped_out_of_range, 1);
        assert_eq!(p.stats.projected, 1);
        assert_eq!(p.mapping.n_entries(), 1);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let c = cloud(&[[1.0, 0.0, 0.0]], None);
        let o = ReferencePoint::origin();
        assert!(matches!(
            project_scene(&c, &o, 0, 2, None),
            Err(ProjectionError::BadDimensions { .. })
        ));
        let bad = ReferencePoint::new("bad", f64::NAN, 0.0, 0.0);
        assert!(matches!(
            project_scene(&c, &bad, 4, 2, None),
            Err(ProjectionError::BadReference(_))
        ));
        let nan = cloud(&[[f64::INFINITY, 0.0, 0.0]], None);
        assert!(matches!(
            project_scene(&nan, &o, 4, 2, None),
            Err(ProjectionError::Cloud(_))
        ));
    }
}
