//! Binary portable graymap (P5) reading and writing plus the key-value
//! sidecar that accompanies every exported raster.
//!
//! Rows are written top-down in image order, i.e. grid row `height - 1`
//! first, so exported maps display upright.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed graymap {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("malformed sidecar {path}: {reason}")]
    Sidecar { path: PathBuf, reason: String },
    #[error("unknown cell encoding {value} at ({x}, {y})")]
    UnknownEncoding { value: u8, x: usize, y: usize },
    #[error("resolution mismatch: expected {expected} m, found {found} m")]
    ResolutionMismatch { expected: f64, found: f64 },
    #[error("dimension mismatch: sidecar says {meta_w}x{meta_h}, raster is {raster_w}x{raster_h}")]
    DimensionMismatch {
        meta_w: usize,
        meta_h: usize,
        raster_w: usize,
        raster_h: usize,
    },
    #[error("inconsistent metadata: {0}")]
    Inconsistent(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterIoError + '_ {
    move |source| RasterIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Sidecar path for a raster: same stem, `.meta` extension.
pub fn sidecar_path(raster: &Path) -> PathBuf {
    raster.with_extension("meta")
}

/// Write `pixels` (row-major, grid row 0 first) as P5.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), RasterIoError> {
    assert_eq!(pixels.len(), width * height);
    let mut out = Vec::with_capacity(pixels.len() + 32);
    write!(out, "P5\n{width} {height}\n255\n").expect("writing to a Vec cannot fail");
    for row in (0..height).rev() {
        out.extend_from_slice(&pixels[row * width..(row + 1) * width]);
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Read a P5 file, returning `(width, height, pixels)` with grid row 0 first.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), RasterIoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_pgm(&bytes).map_err(|reason| RasterIoError::Malformed {
        path: path.to_path_buf(),
        reason,
    })
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while let Some(b) = bytes.get(pos) {
            if b.is_ascii_whitespace() || *b == b'#' {
                break;
            }
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ascii header")?.to_string());
    }
    if tokens[0] != "P5" {
        return Err(format!("bad magic {:?}", tokens[0]));
    }
    let parse = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} {s:?}"));
    let width = parse(&tokens[1], "width")?;
    let height = parse(&tokens[2], "height")?;
    let maxval = parse(&tokens[3], "maxval")?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("missing raster separator".into()),
    }
    let data = &bytes[pos..];
    if data.len() != width * height {
        return Err(format!("expected {} raster bytes, found {}", width * height, data.len()));
    }
    let mut pixels = vec![0u8; width * height];
    for (i, row) in data.chunks_exact(width.max(1)).enumerate().take(height) {
        let grid_row = height - 1 - i;
        pixels[grid_row * width..(grid_row + 1) * width].copy_from_slice(row);
    }
    Ok((width, height, pixels))
}

pub fn write_sidecar<T: Serialize>(path: &Path, meta: &T) -> Result<(), RasterIoError> {
    let text = toml::to_string(meta).map_err(|e| RasterIoError::Sidecar {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_sidecar<T: DeserializeOwned>(path: &Path) -> Result<T, RasterIoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| RasterIoError::Sidecar {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
