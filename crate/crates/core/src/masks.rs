//! Interchange formats between the projection stage and any 2D segmenter.
//!
//! Boxes travel as JSON, masks as binary PGM (`P5`, maxval 255). A scene's
//! mask directory holds `boxes.json`, one `mask_<k>.pgm` per box and an
//! optional pre-merged `mask_union.pgm`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::image::{self, ImageError};

pub const DEFAULT_MIN_SCORE: f64 = 0.35;
pub const BOXES_FILE: &str = "boxes.json";
pub const UNION_MASK_FILE: &str = "mask_union.pgm";
/// PGM values at or above this are building pixels.
pub const MASK_THRESHOLD: u8 = 128;

pub fn box_mask_file(k: usize) -> String {
    format!("mask_{k}.pgm")
}

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed box JSON: {source}")]
    MalformedJson {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("dimension mismatch: expected {expected_w}x{expected_h}, found {found_w}x{found_h}")]
    DimensionMismatch {
        expected_w: u32,
        expected_h: u32,
        found_w: u32,
        found_h: u32,
    },
    #[error("{0}: not a binary PGM (bad magic)")]
    BadMagic(PathBuf),
    #[error("{path}: PGM size mismatch: {reason}")]
    SizeMismatch { path: PathBuf, reason: String },
    #[error("cannot merge an empty list of masks")]
    NoMasks,
}

impl MaskError {
    fn dims(expected: (u32, u32), found: (u32, u32)) -> Self {
        MaskError::DimensionMismatch {
            expected_w: expected.0,
            expected_h: expected.1,
            found_w: found.0,
            found_h: found.1,
        }
    }
}

impl From<(PathBuf, ImageError)> for MaskError {
    fn from((path, e): (PathBuf, ImageError)) -> Self {
        match e {
            ImageError::Io { path, source } => MaskError::Io { path, source },
            ImageError::BadMagic { path, .. } => MaskError::BadMagic(path),
            ImageError::BadHeader { reason, .. } => MaskError::SizeMismatch { path, reason },
            ImageError::SizeMismatch {
                found, expected, ..
            } => MaskError::SizeMismatch {
                path,
                reason: format!("payload is {found} bytes, expected {expected}"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub score: f64,
    #[serde(default)]
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub boxes: Vec<ScoredBox>,
}

/// Reads a box file, clamping boxes to the image and dropping boxes that are
/// empty after clamping or carry a score outside `[0, 1]`.
///
/// The indices of surviving boxes are returned alongside so that callers can
/// pair them with the `mask_<k>.pgm` files written by the segmenter.
pub fn read_boxes_indexed(
    path: &Path,
    width: u32,
    height: u32,
) -> Result<(BoxSet, Vec<usize>), MaskError> {
    let text = fs::read_to_string(path).map_err(|source| MaskError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut set: BoxSet =
        serde_json::from_str(&text).map_err(|source| MaskError::MalformedJson {
            path: path.to_path_buf(),
            source,
        })?;
    if (set.width, set.height) != (width, height) {
        return Err(MaskError::dims((width, height), (set.width, set.height)));
    }
    let (w, h) = (f64::from(width), f64::from(height));
    let mut kept = Vec::with_capacity(set.boxes.len());
    let mut indices = Vec::with_capacity(set.boxes.len());
    for (k, mut b) in std::mem::take(&mut set.boxes).into_iter().enumerate() {
        b.x_min = b.x_min.clamp(0.0, w);
        b.x_max = b.x_max.clamp(0.0, w);
        b.y_min = b.y_min.clamp(0.0, h);
        b.y_max = b.y_max.clamp(0.0, h);
        if !(b.x_min < b.x_max && b.y_min < b.y_max) {
            log::warn!("{}: dropping box {k}, empty after clamping", path.display());
            continue;
        }
        if !(0.0..=1.0).contains(&b.score) {
            log::warn!("{}: dropping box {k}, score {} outside [0, 1]", path.display(), b.score);
            continue;
        }
        kept.push(b);
        indices.push(k);
    }
    set.boxes = kept;
    Ok((set, indices))
}

pub fn read_boxes(path: &Path, width: u32, height: u32) -> Result<BoxSet, MaskError> {
    read_boxes_indexed(path, width, height).map(|(set, _)| set)
}

pub fn write_boxes(boxes: &BoxSet, path: &Path) -> Result<(), MaskError> {
    let text = serde_json::to_string_pretty(boxes).expect("box set serializes");
    fs::write(path, text).map_err(|source| MaskError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn filter_boxes(boxes: &BoxSet, min_score: f64) -> BoxSet {
    BoxSet {
        boxes: boxes
            .boxes
            .iter()
            .filter(|b| b.score >= min_score)
            .cloned()
            .collect(),
        ..boxes.clone()
    }
}

/// Binary building mask, row-major from the top image row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        if bits.len() != width as usize * height as usize {
            return Err(MaskError::SizeMismatch {
                path: PathBuf::new(),
                reason: format!("{} bits for a {width}x{height} mask", bits.len()),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, px: u32, py: u32) -> bool {
        self.bits[py as usize * self.width as usize + px as usize]
    }

    pub fn set(&mut self, px: u32, py: u32, value: bool) {
        let w = self.width as usize;
        self.bits[py as usize * w + px as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True when every pixel set here is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn ensure_dims(&self, width: u32, height: u32) -> Result<(), MaskError> {
        if (self.width, self.height) != (width, height) {
            return Err(MaskError::dims((width, height), (self.width, self.height)));
        }
        Ok(())
    }
}

pub fn read_mask_pgm(path: &Path) -> Result<Mask, MaskError> {
    let raster =
        image::read_netpbm(path, "P5", 1).map_err(|e| MaskError::from((path.to_path_buf(), e)))?;
    Ok(Mask {
        width: raster.width,
        height: raster.height,
        bits: raster.data.iter().map(|&v| v >= MASK_THRESHOLD).collect(),
    })
}

pub fn write_mask_pgm(mask: &Mask, path: &Path) -> Result<(), MaskError> {
    let io = |source| MaskError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write!(w, "P5\n{} {}\n255\n", mask.width, mask.height).map_err(io)?;
    let payload: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    w.write_all(&payload).map_err(io)?;
    w.flush().map_err(io)
}

/// Pixelwise union of same-sized masks.
pub fn merge_masks(masks: &[Mask]) -> Result<Mask, MaskError> {
    let first = masks.first().ok_or(MaskError::NoMasks)?;
    let mut out = first.clone();
    for m in &masks[1..] {
        m.ensure_dims(first.width, first.height)?;
        for (o, &b) in out.bits.iter_mut().zip(&m.bits) {
            *o |= b;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    fn single(w: u32, h: u32, px: u32, py: u32) -> Mask {
        let mut m = Mask::new(w, h);
        m.set(px, py, true);
        m
    }

    #[test]
    fn reads_single_box() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "b.json",
            br#"{"width":4,"height":2,"boxes":[{"x_min":0,"y_min":0,"x_max":2,"y_max":2,"score":0.9,"phrase":"buildings"}]}"#,
        );
        let set = read_boxes(&p, 4, 2).unwrap();
        assert_eq!(set.boxes.len(), 1);
        assert_eq!(set.boxes[0].phrase, "buildings");
    }

    #[test]
    fn clamps_and_drops_boxes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "b.json",
            br#"{"width":4,"height":2,"prompt":"buildings","box_threshold":0.35,"boxes":[
                {"x_min":1,"y_min":0,"x_max":9,"y_max":1,"score":0.5,"phrase":"b"},
                {"x_min":5,"y_min":0,"x_max":9,"y_max":1,"score":0.5,"phrase":"b"},
                {"x_min":0,"y_min":0,"x_max":1,"y_max":1,"score":1.5,"phrase":"b"},
                {"x_min":-3,"y_min":-1,"x_max":1,"y_max":5,"score":0.1,"phrase":"b"}]}"#,
        );
        let (set, idx) = read_boxes_indexed(&p, 4, 2).unwrap();
        assert_eq!(idx, vec![0, 3]);
        assert_eq!(set.boxes[0].x_max, 4.0);
        assert_eq!(
            (set.boxes[1].x_min, set.boxes[1].y_min, set.boxes[1].y_max),
            (0.0, 0.0, 2.0)
        );
        assert_eq!(set.prompt.as_deref(), Some("buildings"));
    }

    #[test]
    fn empty_box_list_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "b.json", br#"{"width":4,"height":2,"boxes":[]}"#);
        assert!(read_boxes(&p, 4, 2).unwrap().boxes.is_empty());
        assert!(matches!(
            read_boxes(&p, 8, 2),
            Err(MaskError::DimensionMismatch { .. })
        ));
        let bad = write(dir.path(), "c.json", b"{not json");
        assert!(matches!(
            read_boxes(&bad, 4, 2),
            Err(MaskError::MalformedJson { .. })
        ));
    }

    #[test]
    fn box_filtering() {
        let b = |score| ScoredBox {
            x_min: 0.0,
            y_min: 0.0,
            x_max: 1.0,
            y_max: 1.0,
            score,
            phrase: "buildings".into(),
        };
        let set = BoxSet {
            width: 4,
            height: 2,
            prompt: None,
            boxes: vec![b(0.2), b(0.5)],
        };
        assert_eq!(filter_boxes(&set, 0.35).boxes, vec![b(0.5)]);
        assert_eq!(filter_boxes(&set, 0.0), set);
        assert!(filter_boxes(&set, 1.01).boxes.is_empty());
    }

    #[test]
    fn pgm_threshold_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let all = write(dir.path(), "a.pgm", b"P5\n2 2\n255\n\xff\xff\xff\xff");
        assert_eq!(read_mask_pgm(&all).unwrap().count(), 4);
        let none = write(dir.path(), "n.pgm", b"P5\n2 2\n255\n\x00\x00\x00\x00");
        assert_eq!(read_mask_pgm(&none).unwrap().count(), 0);
        let soft = write(dir.path(), "s.pgm", b"P5\n2 1\n255\n\x7f\x80");
        let m = read_mask_pgm(&soft).unwrap();
        assert_eq!(m.bits(), &[false, true]);

        let out = dir.path().join("o.pgm");
        write_mask_pgm(&m, &out).unwrap();
        assert_eq!(fs::read(&out).unwrap(), b"P5\n2 1\n255\n\x00\xff");
    }

    #[test]
    fn pgm_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ppm = write(dir.path(), "a.pgm", b"P6\n1 1\n255\n\x00\x00\x00");
        assert!(matches!(read_mask_pgm(&ppm), Err(MaskError::BadMagic(_))));
        let short = write(dir.path(), "b.pgm", b"P5\n2 2\n255\n\x00");
        assert!(matches!(
            read_mask_pgm(&short),
            Err(MaskError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn merge_rules() {
        let a = single(3, 2, 0, 0);
        let b = single(3, 2, 2, 1);
        let empty = Mask::new(3, 2);
        assert_eq!(merge_masks(&[a.clone(), empty]).unwrap(), a);
        assert_eq!(merge_masks(&[a.clone(), a.clone()]).unwrap(), a);
        let ab = merge_masks(&[a.clone(), b]).unwrap();
        assert_eq!(ab.count(), 2);
        assert!(a.is_subset_of(&ab));
        assert!(matches!(
            merge_masks(&[a, Mask::new(2, 2)]),
            Err(MaskError::DimensionMismatch { .. })
        ));
        assert!(matches!(merge_masks(&[]), Err(MaskError::NoMasks)));
    }
}
