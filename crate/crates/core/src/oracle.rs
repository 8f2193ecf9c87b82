//! Ground-truth masks and controlled mask corruption, standing in for a
//! neural segmenter.

use serde::{Deserialize, Serialize};

use crate::cloud::{CategoryId, LabeledCloud};
use crate::mapping::PixelMapping;
use crate::masks::Mask;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("mapping references point {index} but the cloud has {n_points} points")]
    IndexOutOfRange { index: u64, n_points: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleRule {
    /// A pixel is building iff any of its points is.
    Any,
    /// A pixel is building iff its nearest point is.
    #[default]
    Nearest,
}

pub fn oracle_mask(
    mapping: &PixelMapping,
    cloud: &LabeledCloud,
    building_label: CategoryId,
    rule: OracleRule,
) -> Result<Mask, OracleError> {
    if let Some(max) = mapping.max_point_index() {
        if max >= cloud.len() as u64 {
            return Err(OracleError::IndexOutOfRange {
                index: max,
                n_points: cloud.len(),
            });
        }
    }
    let labels = cloud.labels();
    let is_building = |i: u64| labels[i as usize] == building_label;
    let bits = (0..mapping.n_pixels())
        .map(|p| {
            let entries = mapping.pixel_entries(p);
            match rule {
                OracleRule::Any => entries.iter().any(|e| is_building(e.point_index)),
                OracleRule::Nearest => entries.first().is_some_and(|e| is_building(e.point_index)),
            }
        })
        .collect();
    Ok(Mask::from_bits(mapping.width(), mapping.height(), bits).expect("one bit per pixel"))
}

/// Grows the mask by `dilate_px` pixels in every direction (square structuring
/// element, clipped at the image border), imitating segmenter contour bleed.
///
/// `seed` is accepted for stochastic corruption models; dilation ignores it.
pub fn perturb_mask(mask: &Mask, dilate_px: u32, _seed: u64) -> Mask {
    if dilate_px == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let r = dilate_px as usize;
    let bits = mask.bits();

    // Separable max filter: rows first, then columns, each via prefix counts.
    let mut horizontal = vec![false; w * h];
    let mut prefix = vec![0u32; w.max(h) + 1];
    for y in 0..h {
        let row = &bits[y * w..(y + 1) * w];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + u32::from(row[x]);
        }
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            horizontal[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = vec![false; w * h];
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + u32::from(horizontal[y * w + x]);
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            out[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    Mask::from_bits(mask.width(), mask.height(), out).expect("same dimensions")
}
