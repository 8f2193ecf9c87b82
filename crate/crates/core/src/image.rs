//! Equirectangular raster and binary PPM (P6) I/O.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::cloud::Rgb;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic, expected {expected}")]
    BadMagic { path: PathBuf, expected: &'static str },
    #[error("{path}: malformed header: {reason}")]
    BadHeader { path: PathBuf, reason: String },
    #[error("{path}: payload is {found} bytes, expected {expected}")]
    SizeMismatch {
        path: PathBuf,
        found: usize,
        expected: usize,
    },
}

/// RGB raster with the depth of the nearest point in every pixel
/// (`+∞` where no point landed).
#[derive(Debug, Clone, PartialEq)]
pub struct EquirectImage {
    width: u32,
    height: u32,
    rgb: Vec<u8>,
    min_depth: Vec<f64>,
}

impl EquirectImage {
    pub(crate) fn from_parts(width: u32, height: u32, rgb: Vec<u8>, min_depth: Vec<f64>) -> Self {
        debug_assert_eq!(rgb.len(), width as usize * height as usize * 3);
        debug_assert_eq!(min_depth.len(), width as usize * height as usize);
        Self {
            width,
            height,
            rgb,
            min_depth,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Row-major RGB bytes starting at row 0.
    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }

    pub fn min_depth(&self) -> &[f64] {
        &self.min_depth
    }

    pub fn pixel(&self, px: u32, py: u32) -> Rgb {
        let o = (py as usize * self.width as usize + px as usize) * 3;
        [self.rgb[o], self.rgb[o + 1], self.rgb[o + 2]]
    }

    pub fn depth(&self, px: u32, py: u32) -> f64 {
        self.min_depth[py as usize * self.width as usize + px as usize]
    }
}

pub fn write_image(img: &EquirectImage, path: &Path) -> Result<(), ImageError> {
    write_ppm(img.width, img.height, &img.rgb, path)
}

pub fn write_ppm(width: u32, height: u32, rgb: &[u8], path: &Path) -> Result<(), ImageError> {
    let expected = width as usize * height as usize * 3;
    if rgb.len() != expected {
        return Err(ImageError::SizeMismatch {
            path: path.to_path_buf(),
            found: rgb.len(),
            expected,
        });
    }
    let io = |source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write!(w, "P6\n{width} {height}\n255\n").map_err(io)?;
    w.write_all(rgb).map_err(io)?;
    w.flush().map_err(io)
}

/// Parsed netpbm raster: header fields plus raw 8-bit payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Netpbm {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

/// Reads a binary PPM (`P6`, maxval 255) as row-major RGB bytes.
pub fn read_ppm(path: &Path) -> Result<Netpbm, ImageError> {
    read_netpbm(path, "P6", 3)
}

pub(crate) fn read_netpbm(
    path: &Path,
    magic: &'static str,
    channels: usize,
) -> Result<Netpbm, ImageError> {
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_netpbm(&bytes, path, magic, channels)
}

pub(crate) fn parse_netpbm(
    bytes: &[u8],
    path: &Path,
    magic: &'static str,
    channels: usize,
) -> Result<Netpbm, ImageError> {
    if !bytes.starts_with(magic.as_bytes()) {
        return Err(ImageError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
        });
    }
    let bad = |reason: &str| ImageError::BadHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut pos = magic.len();
    let mut fields = [0u64; 3];
    for field in &mut fields {
        // Skip whitespace and `#` comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| bad("number out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace before payload"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(bad(&format!("maxval {maxval} unsupported, expected 255")));
    }
    let (width, height) = match (u32::try_from(w), u32::try_from(h)) {
        (Ok(w), Ok(h)) if w > 0 && h > 0 => (w, h),
        _ => return Err(bad(&format!("invalid dimensions {w}x{h}"))),
    };
    let expected = width as usize * height as usize * channels;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(ImageError::SizeMismatch {
            path: path.to_path_buf(),
            found: payload.len(),
            expected,
        });
    }
    Ok(Netpbm {
        width,
        height,
        data: payload.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_red_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.ppm");
        let img = EquirectImage::from_parts(1, 1, vec![255, 0, 0], vec![1.0]);
        write_image(&img, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"P6\n1 1\n255\n\xff\x00\x00");
        let back = read_ppm(&path).unwrap();
        assert_eq!((back.width, back.height, back.data), (1, 1, vec![255, 0, 0]));
    }

    #[test]
    fn all_background_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.ppm");
        let img = EquirectImage::from_parts(4, 2, vec![0; 24], vec![f64::INFINITY; 8]);
        write_image(&img, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P6\n4 2\n255\n");
        assert_eq!(bytes.len(), 11 + 24);
        assert!(bytes[11..].iter().all(|&b| b == 0));
    }

    #[test]
    fn parser_handles_comments_and_rejects_bad_input() {
        let p = Path::new("x");
        let ok = parse_netpbm(b"P6 # c\n2 1\n# more\n255\n\x01\x02\x03\x04\x05\x06", p, "P6", 3);
        assert_eq!(ok.unwrap().data, vec![1, 2, 3, 4, 5, 6]);
        assert!(matches!(
            parse_netpbm(b"P5\n1 1\n255\n\x00", p, "P6", 3),
            Err(ImageError::BadMagic { .. })
        ));
        assert!(matches!(
            parse_netpbm(b"P6\n2 1\n255\n\x00", p, "P6", 3),
            Err(ImageError::SizeMismatch { .. })
        ));
        assert!(matches!(
            parse_netpbm(b"P6\n1 1\n65535\n\x00\x00\x00", p, "P6", 3),
            Err(ImageError::BadHeader { .. })
        ));
    }
}
