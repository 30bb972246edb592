//! Image and table file formats.
//!
//! Native grid layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TXGI"
//! 4       1     version (1)
//! 5       1     domain tag (0 raw counts, 1 hounsfield, 2 normalized)
//! 6       1     sample width in bytes (4 = f32, 8 = f64)
//! 7       1     has-spacing flag (0/1)
//! 8       4     width  (u32)
//! 12      4     height (u32)
//! 16      8     spacing x (f64, 0 when absent)
//! 24      8     spacing y (f64, 0 when absent)
//! 32      ...   width*height samples, row-major
//! ```
//!
//! PGM files are binary `P5` with maxval 65535 and big-endian samples holding
//! `HU + 1024`; they always load as Hounsfield images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{Domain, GrayImage, Spacing};

const MODULE: &str = "io";
const MAGIC: &[u8; 4] = b"TXGI";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 32;
pub const PGM_HU_OFFSET: f64 = 1024.0;

/// Sample precision used when writing the native format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleWidth {
    F32,
    F64,
}

impl SampleWidth {
    fn bytes(self) -> usize {
        match self {
            SampleWidth::F32 => 4,
            SampleWidth::F64 => 8,
        }
    }
}

/// Image container recognised from a path's extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Native,
    Pgm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<ImageFormat> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("pgm") => Ok(ImageFormat::Pgm),
            Some("txg") | Some("img") | Some("bin") => Ok(ImageFormat::Native),
            other => Err(Error::format(
                MODULE,
                format!(
                    "unsupported image extension {:?} for {}",
                    other.unwrap_or(""),
                    path.display()
                ),
            )),
        }
    }
}

pub fn encode_native(img: &GrayImage, width: SampleWidth) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + img.len() * width.bytes());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(img.domain().tag());
    buf.push(width.bytes() as u8);
    let spacing = img.spacing();
    buf.push(spacing.is_some() as u8);
    buf.extend_from_slice(&(img.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(img.height() as u32).to_le_bytes());
    let s = spacing.unwrap_or(Spacing::new(0.0, 0.0));
    buf.extend_from_slice(&s.x.to_le_bytes());
    buf.extend_from_slice(&s.y.to_le_bytes());
    for &v in img.data() {
        match width {
            SampleWidth::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            SampleWidth::F64 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    buf
}

pub fn decode_native(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            MODULE,
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(MODULE, "bad magic; not a native grid file"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(
            MODULE,
            format!("unsupported version {}", bytes[4]),
        ));
    }
    let domain = Domain::from_tag(bytes[5])
        .ok_or_else(|| Error::format(MODULE, format!("unknown domain tag {}", bytes[5])))?;
    let sample = match bytes[6] {
        4 => SampleWidth::F32,
        8 => SampleWidth::F64,
        w => {
            return Err(Error::format(
                MODULE,
                format!("unsupported sample width {w}"),
            ))
        }
    };
    let has_spacing = match bytes[7] {
        0 => false,
        1 => true,
        f => return Err(Error::format(MODULE, format!("bad spacing flag {f}"))),
    };
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (w, h) = (u32_at(8), u32_at(12));
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::format(MODULE, "dimension overflow"))?;
    let expected = n
        .checked_mul(sample.bytes())
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(MODULE, "dimension overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            MODULE,
            format!(
                "payload length {} does not match {w}x{h} header (expected {expected})",
                bytes.len()
            ),
        ));
    }
    let payload = &bytes[HEADER_LEN..];
    let data: Vec<f64> = match sample {
        SampleWidth::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        SampleWidth::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let img =
        GrayImage::new(w, h, data, domain).map_err(|e| Error::format(MODULE, e.to_string()))?;
    Ok(if has_spacing {
        img.with_spacing(Spacing::new(f64_at(16), f64_at(24)))
    } else {
        img
    })
}

/// Writes the native format at full (f64) precision.
pub fn save_native(path: &Path, img: &GrayImage) -> Result<()> {
    save_native_with(path, img, SampleWidth::F64)
}

pub fn save_native_with(path: &Path, img: &GrayImage, width: SampleWidth) -> Result<()> {
    fs::write(path, encode_native(img, width))
        .map_err(|e| Error::io(MODULE, path.display().to_string(), e))
}

pub fn load_native(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(MODULE, path.display().to_string(), e))?;
    decode_native(&bytes)
}

/// Encodes a Hounsfield image as 16-bit PGM, rounding `HU + 1024` to the
/// nearest integer and saturating to `[0, 65535]`.
pub fn encode_pgm(img: &GrayImage) -> Result<Vec<u8>> {
    img.require_domain(MODULE, Domain::Hounsfield)?;
    let mut buf = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for &v in img.data() {
        let q = (v + PGM_HU_OFFSET).round().clamp(0.0, 65535.0) as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    Ok(buf)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        // whitespace and comments
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(MODULE, "truncated PGM header"));
        }
        tokens.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| Error::format(MODULE, "non-ascii PGM header"))?,
        );
    }
    if tokens[0] != "P5" {
        return Err(Error::format(
            MODULE,
            format!("unsupported PGM magic {:?}", tokens[0]),
        ));
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::format(MODULE, format!("malformed PGM {what} {s:?}")))
    };
    let (w, h, maxval) = (
        parse(tokens[1], "width")?,
        parse(tokens[2], "height")?,
        parse(tokens[3], "maxval")?,
    );
    if maxval != 65535 {
        return Err(Error::format(
            MODULE,
            format!("only 16-bit PGM (maxval 65535) is supported, got {maxval}"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() {
        return Err(Error::format(MODULE, "truncated PGM: missing raster"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::format(MODULE, "dimension overflow"))?;
    if raster.len() != 2 * n {
        return Err(Error::format(
            MODULE,
            format!(
                "PGM raster has {} bytes, expected {} for {w}x{h}",
                raster.len(),
                2 * n
            ),
        ));
    }
    let data = raster
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 - PGM_HU_OFFSET)
        .collect();
    GrayImage::new(w, h, data, Domain::Hounsfield).map_err(|e| Error::format(MODULE, e.to_string()))
}

pub fn save_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let bytes = encode_pgm(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(MODULE, path.display().to_string(), e))
}

pub fn load_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(MODULE, path.display().to_string(), e))?;
    decode_pgm(&bytes)
}

/// Loads either format, picked by extension.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    match ImageFormat::from_path(path)? {
        ImageFormat::Native => load_native(path),
        ImageFormat::Pgm => load_pgm(path),
    }
}

pub fn save_image(path: &Path, img: &GrayImage) -> Result<()> {
    match ImageFormat::from_path(path)? {
        ImageFormat::Native => save_native(path, img),
        ImageFormat::Pgm => save_pgm(path, img),
    }
}

/// Fixed scientific notation with 9 significant digits.
pub fn fmt_sci(v: f64) -> String {
    // -0.0 prints as 0 so that sign-of-zero noise cannot leak into golden files.
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.8e}")
}

/// Writes a numeric matrix as CSV with an optional header row.
pub fn matrix_csv(header: Option<&[String]>, rows: usize, cols: usize, values: &[f64]) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for r in 0..rows {
        let line: Vec<String> = values[r * cols..(r + 1) * cols]
            .iter()
            .map(|&v| fmt_sci(v))
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
