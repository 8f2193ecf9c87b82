//! Point↔pixel mapping and its little-endian binary file format.
//!
//! Layout: magic `SPMAP1\0\0`, `u32` version (1), `u32` width, `u32` height,
//! `u64` record count, then records of `{u32 px, u32 py, u64 point_index,
//! f64 depth}` sorted by `(py, px, depth, point_index)`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const MAGIC: [u8; 8] = *b"SPMAP1\0\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 8;
const RECORD_LEN: usize = 4 + 4 + 8 + 8;

#[derive(Debug, thiserror::Error)]
pub enum MappingError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: not a pixel mapping file (bad magic)")]
    BadMagic(PathBuf),
    #[error("{path}: unsupported mapping version {found} (expected {VERSION})")]
    VersionMismatch { path: PathBuf, found: u32 },
    #[error("{path}: truncated ({len} bytes, expected {expected})")]
    Truncated {
        path: PathBuf,
        len: usize,
        expected: usize,
    },
    #[error("{path}: corrupt mapping: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingEntry {
    pub point_index: u64,
    /// Radial distance from the reference point, in meters.
    pub depth: f64,
}

/// For every pixel, the points that landed there, nearest first.
///
/// Stored as a compressed row layout: `offsets[p]..offsets[p + 1]` indexes the
/// entries of pixel `p = py * width + px`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMapping {
    width: u32,
    height: u32,
    offsets: Vec<usize>,
    entries: Vec<MappingEntry>,
}

impl PixelMapping {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            offsets: vec![0; n + 1],
            entries: Vec::new(),
        }
    }

    /// Caller guarantees entries are grouped by pixel and sorted by
    /// `(depth, point_index)` within each pixel.
    pub(crate) fn from_sorted_parts(
        width: u32,
        height: u32,
        offsets: Vec<usize>,
        entries: Vec<MappingEntry>,
    ) -> Self {
        debug_assert_eq!(offsets.len(), width as usize * height as usize + 1);
        debug_assert_eq!(*offsets.last().unwrap(), entries.len());
        Self {
            width,
            height,
            offsets,
            entries,
        }
    }

    /// Builds a mapping from `(px, py, entry)` records in any order,
    /// checking bounds and point-index uniqueness.
    pub fn from_records(
        width: u32,
        height: u32,
        records: impl IntoIterator<Item = (u32, u32, MappingEntry)>,
    ) -> Result<Self, String> {
        let mut recs: Vec<(u32, u32, MappingEntry)> = records.into_iter().collect();
        for (px, py, e) in &recs {
            if *px >= width || *py >= height {
                return Err(format!("pixel ({px}, {py}) outside {width}x{height}"));
            }
            if !(e.depth.is_finite() && e.depth > 0.0) {
                return Err(format!("point {} has invalid depth {}", e.point_index, e.depth));
            }
        }
        recs.sort_by(|a, b| {
            (a.1, a.0)
                .cmp(&(b.1, b.0))
                .then(a.2.depth.total_cmp(&b.2.depth))
                .then(a.2.point_index.cmp(&b.2.point_index))
        });
        let mut seen: Vec<u64> = recs.iter().map(|r| r.2.point_index).collect();
        seen.sort_unstable();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(format!("point {} appears more than once", w[0]));
        }
        let n = width as usize * height as usize;
        let mut offsets = vec![0usize; n + 1];
        for (px, py, _) in &recs {
            offsets[(*py as usize) * width as usize + *px as usize + 1] += 1;
        }
        for k in 0..n {
            offsets[k + 1] += offsets[k];
        }
        let entries = recs.into_iter().map(|r| r.2).collect();
        Ok(Self::from_sorted_parts(width, height, offsets, entries))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn n_pixels(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total number of mapped points.
    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn occupied_pixels(&self) -> usize {
        self.offsets.windows(2).filter(|w| w[1] > w[0]).count()
    }

    /// Entries of linear pixel `p = py * width + px`.
    pub fn pixel_entries(&self, pixel: usize) -> &[MappingEntry] {
        &self.entries[self.offsets[pixel]..self.offsets[pixel + 1]]
    }

    pub fn entries_at(&self, px: u32, py: u32) -> &[MappingEntry] {
        self.pixel_entries(py as usize * self.width as usize + px as usize)
    }

    /// Occupied pixels in row-major order.
    pub fn iter_pixels(&self) -> impl Iterator<Item = (u32, u32, &[MappingEntry])> + '_ {
        (0..self.n_pixels()).filter_map(move |p| {
            let e = self.pixel_entries(p);
            (!e.is_empty()).then(|| {
                (
                    (p % self.width as usize) as u32,
                    (p / self.width as usize) as u32,
                    e,
                )
            })
        })
    }

    pub fn max_point_index(&self) -> Option<u64> {
        self.entries.iter().map(|e| e.point_index).max()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * self.entries.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (px, py, entries) in self.iter_pixels() {
            for e in entries {
                out.extend_from_slice(&px.to_le_bytes());
                out.extend_from_slice(&py.to_le_bytes());
                out.extend_from_slice(&e.point_index.to_le_bytes());
                out.extend_from_slice(&e.depth.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, MappingError> {
        let truncated = |expected: usize| MappingError::Truncated {
            path: path.to_path_buf(),
            len: bytes.len(),
            expected,
        };
        if bytes.len() < MAGIC.len() {
            return Err(if MAGIC.starts_with(bytes) {
                truncated(HEADER_LEN)
            } else {
                MappingError::BadMagic(path.to_path_buf())
            });
        }
        if bytes[..8] != MAGIC {
            return Err(MappingError::BadMagic(path.to_path_buf()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated(HEADER_LEN));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != VERSION {
            return Err(MappingError::VersionMismatch {
                path: path.to_path_buf(),
                found: version,
            });
        }
        let width = u32_at(12);
        let height = u32_at(16);
        let count = u64_at(20);
        let corrupt = |reason: String| MappingError::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        if width == 0 || height == 0 {
            return Err(corrupt(format!("zero dimension {width}x{height}")));
        }
        let expected = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(RECORD_LEN))
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| corrupt(format!("record count {count} too large")))?;
        if bytes.len() < expected {
            return Err(truncated(expected));
        }
        if bytes.len() > expected {
            return Err(corrupt(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - expected
            )));
        }

        let n_pixels = width as usize * height as usize;
        let mut offsets = vec![0usize; n_pixels + 1];
        let mut entries = Vec::with_capacity(count as usize);
        let mut prev: Option<(u32, u32, f64, u64)> = None;
        for k in 0..count as usize {
            let o = HEADER_LEN + k * RECORD_LEN;
            let px = u32_at(o);
            let py = u32_at(o + 4);
            let point_index = u64_at(o + 8);
            let depth = f64::from_le_bytes(bytes[o + 16..o + 24].try_into().unwrap());
            if px >= width || py >= height {
                return Err(corrupt(format!("record {k}: pixel ({px}, {py}) out of bounds")));
            }
            if !(depth.is_finite() && depth > 0.0) {
                return Err(corrupt(format!("record {k}: invalid depth {depth}")));
            }
            if let Some((ppx, ppy, pd, pi)) = prev {
                let ordered = (ppy, ppx)
                    .cmp(&(py, px))
                    .then(pd.total_cmp(&depth))
                    .then(pi.cmp(&point_index))
                    .is_lt();
                if !ordered {
                    return Err(corrupt(format!("record {k} out of order")));
                }
            }
            prev = Some((px, py, depth, point_index));
            offsets[py as usize * width as usize + px as usize + 1] += 1;
            entries.push(MappingEntry { point_index, depth });
        }
        let mut seen: Vec<u64> = entries.iter().map(|e| e.point_index).collect();
        seen.sort_unstable();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(corrupt(format!("point {} appears more than once", w[0])));
        }
        for p in 0..n_pixels {
            offsets[p + 1] += offsets[p];
        }
        Ok(Self::from_sorted_parts(width, height, offsets, entries))
    }
}

pub fn write_mapping(mapping: &PixelMapping, path: &Path) -> Result<(), MappingError> {
    let io = |source| MappingError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(&mapping.to_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_mapping(path: &Path) -> Result<PixelMapping, MappingError> {
    let bytes = fs::read(path).map_err(|source| MappingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    PixelMapping::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(point_index: u64, depth: f64) -> MappingEntry {
        MappingEntry { point_index, depth }
    }

    fn two_point() -> PixelMapping {
        PixelMapping::from_records(4, 2, [(2, 1, e(1, 2.0)), (2, 1, e(0, 1.0))]).unwrap()
    }

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.spmap");
        let m = PixelMapping::empty(4, 2);
        write_mapping(&m, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), HEADER_LEN as u64);
        assert_eq!(read_mapping(&path).unwrap(), m);
    }

    #[test]
    fn two_point_layout_is_exact() {
        let m = two_point();
        assert_eq!(m.entries_at(2, 1), &[e(0, 1.0), e(1, 2.0)]);
        let bytes = m.to_bytes();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"SPMAP1\0\0");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&4u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        for (idx, d) in [(0u64, 1.0f64), (1, 2.0)] {
            expected.extend_from_slice(&2u32.to_le_bytes());
            expected.extend_from_slice(&1u32.to_le_bytes());
            expected.extend_from_slice(&idx.to_le_bytes());
            expected.extend_from_slice(&d.to_le_bytes());
        }
        assert_eq!(bytes, expected);
        assert_eq!(PixelMapping::from_bytes(&bytes, Path::new("m")).unwrap(), m);
    }

    #[test]
    fn read_errors_are_distinct() {
        let p = Path::new("m");
        let mut bytes = two_point().to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(PixelMapping::from_bytes(&bad, p), Err(MappingError::BadMagic(_))));

        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(
            PixelMapping::from_bytes(&v2, p),
            Err(MappingError::VersionMismatch { found: 2, .. })
        ));

        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            PixelMapping::from_bytes(&bytes, p),
            Err(MappingError::Truncated { .. })
        ));
        assert!(matches!(
            PixelMapping::from_bytes(&MAGIC[..5], p),
            Err(MappingError::Truncated { .. })
        ));
    }

    #[test]
    fn out_of_order_and_duplicate_records_are_corrupt() {
        let p = Path::new("m");
        let m = two_point();
        let mut bytes = m.to_bytes();
        // Swap the two records.
        let (a, b) = (HEADER_LEN, HEADER_LEN + RECORD_LEN);
        let first: Vec<u8> = bytes[a..b].to_vec();
        bytes.copy_within(b..b + RECORD_LEN, a);
        bytes[b..b + RECORD_LEN].copy_from_slice(&first);
        assert!(matches!(
            PixelMapping::from_bytes(&bytes, p),
            Err(MappingError::Corrupt { .. })
        ));

        assert!(PixelMapping::from_records(4, 2, [(0, 0, e(3, 1.0)), (1, 0, e(3, 2.0))]).is_err());
        assert!(PixelMapping::from_records(4, 2, [(4, 0, e(0, 1.0))]).is_err());
    }

    #[test]
    fn iter_pixels_is_row_major() {
        let m = PixelMapping::from_records(
            3,
            2,
            [(2, 0, e(0, 1.0)), (0, 1, e(1, 1.0)), (1, 0, e(2, 1.0))],
        )
        .unwrap();
        let order: Vec<(u32, u32)> = m.iter_pixels().map(|(x, y, _)| (x, y)).collect();
        assert_eq!(order, vec![(1, 0), (2, 0), (0, 1)]);
        assert_eq!(m.occupied_pixels(), 3);
        assert_eq!(m.max_point_index(), Some(2));
    }
}
