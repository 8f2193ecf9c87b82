//! Lifting a 2D mask back onto the 3D points through a pixel mapping.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{LabeledCloud, Rgb};
use crate::mapping::PixelMapping;
use crate::masks::Mask;

pub const DEFAULT_EPSILON_REL: f64 = 0.02;
pub const HIGHLIGHT: Rgb = [255, 255, 0];

#[derive(Debug, thiserror::Error)]
pub enum BackprojectError {
    #[error("mask is {mask_w}x{mask_h} but mapping is {map_w}x{map_h}")]
    DimensionMismatch {
        mask_w: u32,
        mask_h: u32,
        map_w: u32,
        map_h: u32,
    },
    #[error("point index {index} out of range for {n_points} points")]
    IndexOutOfRange { index: u64, n_points: usize },
    #[error("prediction covers {found} points, expected {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("epsilon_rel must lie in [0, 1), got {0}")]
    BadEpsilon(f64),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// Which points of a masked pixel become predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DepthMode {
    /// Every point of the pixel, however far behind the nearest one.
    All,
    /// Points within `(1 + epsilon_rel)` of the pixel's minimum depth.
    Nearest { epsilon_rel: f64 },
}

impl DepthMode {
    pub fn nearest(epsilon_rel: f64) -> Result<Self, BackprojectError> {
        let m = DepthMode::Nearest { epsilon_rel };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), BackprojectError> {
        match *self {
            DepthMode::Nearest { epsilon_rel } if !(0.0..1.0).contains(&epsilon_rel) => {
                Err(BackprojectError::BadEpsilon(epsilon_rel))
            }
            _ => Ok(()),
        }
    }
}

impl Default for DepthMode {
    fn default() -> Self {
        DepthMode::Nearest {
            epsilon_rel: DEFAULT_EPSILON_REL,
        }
    }
}

/// Points predicted as building, as a sorted set of indices into a cloud.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PredictionSet {
    n_points: usize,
    predicted: Vec<usize>,
}

impl PredictionSet {
    pub fn empty(n_points: usize) -> Self {
        Self {
            n_points,
            predicted: Vec::new(),
        }
    }

    pub fn new(
        n_points: usize,
        indices: impl IntoIterator<Item = usize>,
    ) -> Result<Self, BackprojectError> {
        let mut predicted: Vec<usize> = indices.into_iter().collect();
        predicted.sort_unstable();
        predicted.dedup();
        if let Some(&last) = predicted.last() {
            if last >= n_points {
                return Err(BackprojectError::IndexOutOfRange {
                    index: last as u64,
                    n_points,
                });
            }
        }
        Ok(Self {
            n_points,
            predicted,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    /// Ascending point indices.
    pub fn indices(&self) -> &[usize] {
        &self.predicted
    }

    pub fn contains(&self, index: usize) -> bool {
        self.predicted.binary_search(&index).is_ok()
    }

    pub fn is_subset_of(&self, other: &PredictionSet) -> bool {
        self.predicted.iter().all(|&i| other.contains(i))
    }

    pub fn membership(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_points];
        for &i in &self.predicted {
            m[i] = true;
        }
        m
    }
}

/// Predicts the points behind every masked pixel according to `mode`.
pub fn backproject(
    mask: &Mask,
    mapping: &PixelMapping,
    mode: DepthMode,
    n_points: usize,
) -> Result<PredictionSet, BackprojectError> {
    if (mask.width(), mask.height()) != (mapping.width(), mapping.height()) {
        return Err(BackprojectError::DimensionMismatch {
            mask_w: mask.width(),
            mask_h: mask.height(),
            map_w: mapping.width(),
            map_h: mapping.height(),
        });
    }
    mode.validate()?;
    if let Some(max) = mapping.max_point_index() {
        if max >= n_points as u64 {
            return Err(BackprojectError::IndexOutOfRange {
                index: max,
                n_points,
            });
        }
    }
    let predicted: Vec<usize> = mask
        .bits()
        .par_iter()
        .enumerate()
        .filter(|(_, &on)| on)
        .flat_map_iter(|(pixel, _)| {
            let entries = mapping.pixel_entries(pixel);
            let keep = match (mode, entries.first()) {
                (_, None) => 0,
                (DepthMode::All, Some(_)) => entries.len(),
                (DepthMode::Nearest { epsilon_rel }, Some(nearest)) => {
                    let limit = nearest.depth * (1.0 + epsilon_rel);
                    entries.partition_point(|e| e.depth <= limit)
                }
            };
            entries[..keep].iter().map(|e| e.point_index as usize)
        })
        .collect();
    PredictionSet::new(n_points, predicted)
}

/// Copy of `cloud` with predicted points recolored. Clouds without colors are
/// first given a white base color.
pub fn apply_labels(
    cloud: &LabeledCloud,
    pred: &PredictionSet,
    highlight: Rgb,
) -> Result<LabeledCloud, BackprojectError> {
    if pred.n_points != cloud.len() {
        return Err(BackprojectError::SizeMismatch {
            expected: cloud.len(),
            found: pred.n_points,
        });
    }
    let mut colors = cloud
        .colors()
        .map(<[Rgb]>::to_vec)
        .unwrap_or_else(|| vec![crate::projection::UNCOLORED; cloud.len()]);
    for &i in &pred.predicted {
        colors[i] = highlight;
    }
    Ok(cloud
        .clone()
        .with_colors(Some(colors))
        .expect("color column has cloud length"))
}

pub fn merge_predictions(sets: &[PredictionSet]) -> Result<PredictionSet, BackprojectError> {
    let Some(first) = sets.first() else {
        return Ok(PredictionSet::default());
    };
    if let Some(bad) = sets.iter().find(|s| s.n_points != first.n_points) {
        return Err(BackprojectError::SizeMismatch {
            expected: first.n_points,
            found: bad.n_points,
        });
    }
    PredictionSet::new(
        first.n_points,
        sets.iter().flat_map(|s| s.predicted.iter().copied()),
    )
}

/// `# n_points=N` header, then one ascending index per line.
pub fn write_prediction(pred: &PredictionSet, path: &Path) -> Result<(), BackprojectError> {
    let mut text = format!("# n_points={}\n", pred.n_points);
    for i in &pred.predicted {
        text.push_str(&i.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| BackprojectError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_prediction(path: &Path) -> Result<PredictionSet, BackprojectError> {
    let text = fs::read_to_string(path).map_err(|source| BackprojectError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let err = |line: usize, reason: String| BackprojectError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let n_points = match lines.next() {
        Some((_, header)) => header
            .trim()
            .strip_prefix('#')
            .and_then(|h| h.trim().strip_prefix("n_points="))
            .and_then(|n| n.trim().parse::<usize>().ok())
            .ok_or_else(|| err(1, "expected `# n_points=N` header".into()))?,
        None => return Err(err(1, "empty file".into())),
    };
    let mut predicted = Vec::new();
    for (k, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let i: usize = line
            .parse()
            .map_err(|_| err(k + 1, format!("not a point index: {line:?}")))?;
        if i >= n_points {
            return Err(err(k + 1, format!("index {i} >= n_points {n_points}")));
        }
        if predicted.last().is_some_and(|&p| p >= i) {
            return Err(err(k + 1, "indices must be strictly ascending".into()));
        }
        predicted.push(i);
    }
    Ok(PredictionSet {
        n_points,
        predicted,
    })
}
