//! Image data model and the CT preprocessing pipeline.
//!
//! The pipeline mirrors the usual slice preparation: raw scanner counts are
//! rescaled to Hounsfield units, resampled to isotropic spacing, the region
//! of interest is centered on a fixed canvas filled with air, and finally
//! intensities are clamped to a window and mapped to `[-1, 1]`.

use std::fmt;

use crate::error::{Error, Result};

const MODULE: &str = "imaging";

/// Intensity domain of an image's pixel values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    RawCounts,
    Hounsfield,
    Normalized,
}

impl Domain {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Domain::RawCounts => 0,
            Domain::Hounsfield => 1,
            Domain::Normalized => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Domain> {
        match tag {
            0 => Some(Domain::RawCounts),
            1 => Some(Domain::Hounsfield),
            2 => Some(Domain::Normalized),
            _ => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Domain::RawCounts => "raw-counts",
            Domain::Hounsfield => "hounsfield",
            Domain::Normalized => "normalized",
        };
        f.write_str(s)
    }
}

/// Pixel spacing in millimetres, `x` along columns and `y` along rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spacing {
    pub x: f64,
    pub y: f64,
}

impl Spacing {
    pub fn new(x: f64, y: f64) -> Self {
        Spacing { x, y }
    }

    pub fn isotropic(s: f64) -> Self {
        Spacing { x: s, y: s }
    }
}

/// A 2-D scalar image stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    domain: Domain,
    spacing: Option<Spacing>,
}

impl GrayImage {
    /// Builds an image, checking shape, finiteness and the `[-1, 1]` bound
    /// for normalized data.
    pub fn new(width: usize, height: usize, data: Vec<f64>, domain: Domain) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::size(
                MODULE,
                format!("image dimensions must be positive, got {width}x{height}"),
            ));
        }
        if data.len() != width * height {
            return Err(Error::size(
                MODULE,
                format!(
                    "data length {} does not match {}x{}",
                    data.len(),
                    width,
                    height
                ),
            ));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(
                MODULE,
                format!("non-finite pixel value {v}"),
            ));
        }
        if domain == Domain::Normalized {
            if let Some(v) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                return Err(Error::domain(
                    MODULE,
                    format!("normalized pixel {v} outside [-1, 1]"),
                ));
            }
        }
        Ok(GrayImage {
            width,
            height,
            data,
            domain,
            spacing: None,
        })
    }

    /// Builds an image from a row-major list of rows.
    pub fn from_rows(rows: &[Vec<f64>], domain: Domain) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::size(MODULE, "ragged rows"));
        }
        GrayImage::new(width, height, rows.concat(), domain)
    }

    pub fn filled(width: usize, height: usize, value: f64, domain: Domain) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height], domain)
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Self {
        self.spacing = Some(spacing);
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn spacing(&self) -> Option<Spacing> {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Pixel at `(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Same geometry and metadata, different pixel values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        let mut img = GrayImage::new(self.width, self.height, data, self.domain)?;
        img.spacing = self.spacing;
        Ok(img)
    }

    pub fn transpose(&self) -> GrayImage {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.width {
            for r in 0..self.height {
                data.push(self.get(r, c));
            }
        }
        GrayImage {
            width: self.height,
            height: self.width,
            data,
            domain: self.domain,
            spacing: self.spacing.map(|s| Spacing::new(s.y, s.x)),
        }
    }

    /// Rotates the image 90° counter-clockwise.
    pub fn rotate90(&self) -> GrayImage {
        let (w, h) = (self.width, self.height);
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..w {
            for c in 0..h {
                data.push(self.get(c, w - 1 - r));
            }
        }
        GrayImage {
            width: h,
            height: w,
            data,
            domain: self.domain,
            spacing: self.spacing.map(|s| Spacing::new(s.y, s.x)),
        }
    }

    pub(crate) fn require_domain(&self, module: &'static str, domain: Domain) -> Result<()> {
        if self.domain != domain {
            return Err(Error::domain(
                module,
                format!("expected {} image, got {}", domain, self.domain),
            ));
        }
        Ok(())
    }
}

/// Settings for the ingestion pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    pub target_spacing: f64,
    pub canvas_size: usize,
    pub background: f64,
    /// HU window clamped before mapping to `[-1, 1]`. Defaults to the full
    /// 12-bit CT range.
    pub clamp_window: (f64, f64),
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            rescale_slope: 1.0,
            rescale_intercept: 0.0,
            target_spacing: 1.0,
            canvas_size: 512,
            background: -1024.0,
            clamp_window: (-1024.0, 3071.0),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canvas_size == 0 {
            return Err(Error::config(MODULE, "canvas_size must be positive"));
        }
        if !(self.target_spacing > 0.0) || !self.target_spacing.is_finite() {
            return Err(Error::config(
                MODULE,
                format!(
                    "target_spacing must be positive, got {}",
                    self.target_spacing
                ),
            ));
        }
        let (lo, hi) = self.clamp_window;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::config(
                MODULE,
                format!("clamp window ({lo}, {hi}) must satisfy min < max"),
            ));
        }
        if !self.rescale_slope.is_finite()
            || !self.rescale_intercept.is_finite()
            || !self.background.is_finite()
        {
            return Err(Error::config(
                MODULE,
                "rescale and background values must be finite",
            ));
        }
        Ok(())
    }
}

/// Maps raw scanner counts to Hounsfield units: `hu = slope * raw + intercept`.
pub fn rescale_to_hu(img: &GrayImage, slope: f64, intercept: f64) -> Result<GrayImage> {
    img.require_domain(MODULE, Domain::RawCounts)?;
    let data = img.data.iter().map(|&v| slope * v + intercept).collect();
    let mut out = GrayImage::new(img.width, img.height, data, Domain::Hounsfield)?;
    out.spacing = img.spacing;
    Ok(out)
}

/// Bilinear resampling to isotropic `target` spacing.
///
/// Output pixel centers are mapped back to input coordinates with the
/// half-pixel convention `src = (dst + 0.5) * target / spacing - 0.5`, and
/// coordinates are clamped to the image edge.
pub fn resample2d(img: &GrayImage, spacing: Spacing, target: f64) -> Result<GrayImage> {
    if !(spacing.x > 0.0 && spacing.y > 0.0) || !spacing.x.is_finite() || !spacing.y.is_finite() {
        return Err(Error::config(
            MODULE,
            format!("spacing ({}, {}) must be positive", spacing.x, spacing.y),
        ));
    }
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::config(
            MODULE,
            format!("target spacing {target} must be positive"),
        ));
    }
    if spacing.x == target && spacing.y == target {
        return Ok(img.clone().with_spacing(Spacing::isotropic(target)));
    }

    let out_w = ((img.width as f64 * spacing.x / target).round() as usize).max(1);
    let out_h = ((img.height as f64 * spacing.y / target).round() as usize).max(1);
    let sx = target / spacing.x;
    let sy = target / spacing.y;

    let sample_axis = |dst: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, pos - i0 as f64)
    };

    let mut data = Vec::with_capacity(out_w * out_h);
    for r in 0..out_h {
        let (r0, r1, fy) = sample_axis(r, sy, img.height);
        for c in 0..out_w {
            let (c0, c1, fx) = sample_axis(c, sx, img.width);
            let top = img.get(r0, c0) * (1.0 - fx) + img.get(r0, c1) * fx;
            let bottom = img.get(r1, c0) * (1.0 - fx) + img.get(r1, c1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    // Interpolation can overshoot [-1, 1] by an ulp on normalized data.
    if img.domain == Domain::Normalized {
        data.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    }
    Ok(GrayImage::new(out_w, out_h, data, img.domain)?.with_spacing(Spacing::isotropic(target)))
}

/// Half-open bounding box `[row0, row1) x [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl BoundingBox {
    pub fn new(row0: usize, col0: usize, row1: usize, col1: usize) -> Self {
        BoundingBox {
            row0,
            col0,
            row1,
            col1,
        }
    }

    pub fn full(img: &GrayImage) -> Self {
        BoundingBox::new(0, 0, img.height, img.width)
    }

    pub fn rows(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn cols(&self) -> usize {
        self.col1 - self.col0
    }
}

/// Copies the bbox region onto a `canvas_size` square filled with the
/// background value, centered with ties resolved toward the top-left.
pub fn crop_center_pad(
    img: &GrayImage,
    bbox: BoundingBox,
    cfg: &PreprocessConfig,
) -> Result<GrayImage> {
    img.require_domain(MODULE, Domain::Hounsfield)?;
    if bbox.row1 <= bbox.row0 || bbox.col1 <= bbox.col0 {
        return Err(Error::argument(
            MODULE,
            format!("bounding box {bbox:?} is empty or inverted"),
        ));
    }
    if bbox.row1 > img.height || bbox.col1 > img.width {
        return Err(Error::argument(
            MODULE,
            format!(
                "bounding box {bbox:?} exceeds image {}x{}",
                img.width, img.height
            ),
        ));
    }
    let canvas = cfg.canvas_size;
    if bbox.rows() > canvas || bbox.cols() > canvas {
        return Err(Error::size(
            MODULE,
            format!(
                "bounding box {}x{} larger than canvas {canvas}",
                bbox.cols(),
                bbox.rows()
            ),
        ));
    }
    let top = (canvas - bbox.rows()) / 2;
    let left = (canvas - bbox.cols()) / 2;
    let mut data = vec![cfg.background; canvas * canvas];
    for r in 0..bbox.rows() {
        let src = &img.data[(bbox.row0 + r) * img.width + bbox.col0..][..bbox.cols()];
        let dst = (top + r) * canvas + left;
        data[dst..dst + bbox.cols()].copy_from_slice(src);
    }
    let mut out = GrayImage::new(canvas, canvas, data, Domain::Hounsfield)?;
    out.spacing = img.spacing;
    Ok(out)
}

/// Clamps to `window` then maps it affinely onto `[-1, 1]`.
pub fn normalize_unit(img: &GrayImage, window: (f64, f64)) -> Result<GrayImage> {
    img.require_domain(MODULE, Domain::Hounsfield)?;
    let (lo, hi) = window;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::argument(
            MODULE,
            format!("degenerate normalization window ({lo}, {hi})"),
        ));
    }
    let span = hi - lo;
    let data = img
        .data
        .iter()
        .map(|&v| (2.0 * (v.clamp(lo, hi) - lo) / span - 1.0).clamp(-1.0, 1.0))
        .collect();
    let mut out = GrayImage::new(img.width, img.height, data, Domain::Normalized)?;
    out.spacing = img.spacing;
    Ok(out)
}

/// Runs the full pipeline on a raw-count or Hounsfield slice.
///
/// Raw counts are rescaled first; Hounsfield input skips that step. Missing
/// spacing metadata is a configuration error unless it already matches the
/// target (in which case resampling is skipped).
pub fn preprocess(
    img: &GrayImage,
    bbox: Option<BoundingBox>,
    cfg: &PreprocessConfig,
) -> Result<GrayImage> {
    cfg.validate()?;
    let hu = match img.domain {
        Domain::RawCounts => rescale_to_hu(img, cfg.rescale_slope, cfg.rescale_intercept)?,
        Domain::Hounsfield => img.clone(),
        Domain::Normalized => {
            return Err(Error::domain(
                MODULE,
                "preprocess expects raw-counts or hounsfield input",
            ))
        }
    };
    let spacing = hu
        .spacing
        .ok_or_else(|| Error::config(MODULE, "image has no spacing metadata; cannot resample"))?;
    // Scale the bbox with the image so it still frames the same anatomy.
    let resampled = resample2d(&hu, spacing, cfg.target_spacing)?;
    let bbox = match bbox {
        Some(b) => {
            if b.row1 > hu.height || b.col1 > hu.width || b.row1 <= b.row0 || b.col1 <= b.col0 {
                return Err(Error::argument(
                    MODULE,
                    format!("bounding box {b:?} invalid for image"),
                ));
            }
            let fy = resampled.height as f64 / hu.height as f64;
            let fx = resampled.width as f64 / hu.width as f64;
            let scale = |v: usize, f: f64, n: usize| ((v as f64 * f).round() as usize).min(n);
            let mut s = BoundingBox::new(
                scale(b.row0, fy, resampled.height),
                scale(b.col0, fx, resampled.width),
                scale(b.row1, fy, resampled.height),
                scale(b.col1, fx, resampled.width),
            );
            s.row1 = s.row1.max(s.row0 + 1).min(resampled.height);
            s.col1 = s.col1.max(s.col0 + 1).min(resampled.width);
            s
        }
        None => BoundingBox::full(&resampled),
    };
    let centered = crop_center_pad(&resampled, bbox, cfg)?;
    normalize_unit(&centered, cfg.clamp_window)
}
