//! Multi-scale texture extractor.
//!
//! Evaluates the contrast descriptor `t(G) = Σ (i - j)^2 G(i, j)` on the soft
//! GLCM of every `(d, θ)` in an offset grid, giving a `p x q` texture matrix
//! with rows indexed by distance and columns by angle. `i` and `j` are
//! 1-based bin indices, so the descriptor does not depend on intensity units.

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::par;
use crate::softglcm::{self, soft_assignment, Angle, BinningConfig, Offset, SoftGlcm};

const MODULE: &str = "mste";

/// Distances `P` and angles `Q` spanned by a texture matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffsetGrid {
    distances: Vec<usize>,
    angles: Vec<Angle>,
}

impl OffsetGrid {
    pub fn new(distances: Vec<usize>, angles: Vec<Angle>) -> Result<Self> {
        if distances.is_empty() || angles.is_empty() {
            return Err(Error::config(
                MODULE,
                "offset grid needs at least one distance and one angle",
            ));
        }
        if distances[0] == 0 || distances.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(
                MODULE,
                format!("distances {distances:?} must be positive and strictly increasing"),
            ));
        }
        for (k, a) in angles.iter().enumerate() {
            if angles[..k].contains(a) {
                return Err(Error::config(MODULE, format!("duplicate angle {a}")));
            }
        }
        Ok(OffsetGrid { distances, angles })
    }

    pub fn distances(&self) -> &[usize] {
        &self.distances
    }

    pub fn angles(&self) -> &[Angle] {
        &self.angles
    }

    pub fn p(&self) -> usize {
        self.distances.len()
    }

    pub fn q(&self) -> usize {
        self.angles.len()
    }

    /// Offsets in row-major (distance-major) order.
    pub fn offsets(&self) -> Vec<Offset> {
        self.distances
            .iter()
            .flat_map(|&d| {
                self.angles
                    .iter()
                    .map(move |&a| Offset::new(d, a).expect("validated grid"))
            })
            .collect()
    }
}

impl Default for OffsetGrid {
    fn default() -> Self {
        OffsetGrid::new(vec![1, 3, 5, 7], Angle::ALL.to_vec()).expect("default grid is valid")
    }
}

/// `p x q` descriptor values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMatrix {
    values: Vec<f64>,
    grid: OffsetGrid,
}

impl TextureMatrix {
    pub fn new(values: Vec<f64>, grid: OffsetGrid) -> Result<Self> {
        if values.len() != grid.p() * grid.q() {
            return Err(Error::argument(
                MODULE,
                format!(
                    "{} values for a {}x{} grid",
                    values.len(),
                    grid.p(),
                    grid.q()
                ),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::numeric(
                MODULE,
                "texture values must be finite and non-negative",
            ));
        }
        Ok(TextureMatrix { values, grid })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> &OffsetGrid {
        &self.grid
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid.q() + col]
    }

    /// CSV with a header row of angles and one row per distance.
    pub fn to_csv(&self) -> String {
        let header: Vec<String> = self
            .grid
            .angles()
            .iter()
            .map(|a| a.degrees().to_string())
            .collect();
        crate::io::matrix_csv(Some(&header), self.grid.p(), self.grid.q(), &self.values)
    }
}

/// `Σ (i - j)^2 G(i, j)` over 1-based bin indices.
pub fn contrast_descriptor(glcm: &SoftGlcm) -> f64 {
    contrast_of(glcm.matrix(), glcm.n_bins())
}

fn contrast_of(matrix: &[f64], n: usize) -> f64 {
    let mut t = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = i as f64 - j as f64;
            t += d * d * matrix[i * n + j];
        }
    }
    t
}

/// `f(i, j) = (i - j)^2` as a row-major `n x n` weight matrix.
pub(crate) fn contrast_weights(n: usize) -> Vec<f64> {
    (0..n * n)
        .map(|k| {
            let d = (k / n) as f64 - (k % n) as f64;
            d * d
        })
        .collect()
}

fn check_geometry(img: &GrayImage, grid: &OffsetGrid) -> Result<Vec<Offset>> {
    let offsets = grid.offsets();
    if let Some(off) = offsets
        .iter()
        .find(|o| o.valid_pairs(img.width(), img.height()) == 0)
    {
        return Err(Error::geometry(
            MODULE,
            format!(
                "offset {off} has no in-bounds pixel pairs in a {}x{} image",
                img.width(),
                img.height()
            ),
        ));
    }
    Ok(offsets)
}

/// Computes the texture matrix of one image.
pub fn texture_matrix(
    img: &GrayImage,
    grid: &OffsetGrid,
    bins: &BinningConfig,
) -> Result<TextureMatrix> {
    let offsets = check_geometry(img, grid)?;
    let field = soft_assignment(img, bins)?;
    let (w, h) = (img.width(), img.height());
    let values = par::map(&offsets, |&off| {
        softglcm::forward_from_field(&field, w, h, off).map(|(g, _)| contrast_descriptor(&g))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    TextureMatrix::new(values, grid.clone())
}

/// Pixel gradient of `Σ upstream(r, c) · T(r, c)`.
pub fn texture_matrix_backward(
    img: &GrayImage,
    grid: &OffsetGrid,
    bins: &BinningConfig,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    if upstream.len() != grid.p() * grid.q() {
        return Err(Error::argument(
            MODULE,
            format!(
                "upstream has {} entries, expected {}x{}",
                upstream.len(),
                grid.p(),
                grid.q()
            ),
        ));
    }
    let offsets = check_geometry(img, grid)?;
    let field = soft_assignment(img, bins)?;
    let (w, h) = (img.width(), img.height());
    let weights = contrast_weights(bins.n_bins());

    let active: Vec<(Offset, f64)> = offsets
        .into_iter()
        .zip(upstream.iter().copied())
        .filter(|&(_, u)| u != 0.0)
        .collect();
    let parts = par::map(&active, |&(off, u)| -> Result<Vec<f64>> {
        let (glcm, total) = softglcm::forward_from_field(&field, w, h, off)?;
        let up: Vec<f64> = weights.iter().map(|f| u * f).collect();
        Ok(softglcm::backward_from_field(
            img.data(),
            bins,
            &field,
            w,
            h,
            &glcm,
            total,
            &up,
        ))
    });

    let mut grad = vec![0.0; img.len()];
    for part in parts {
        for (g, p) in grad.iter_mut().zip(part?) {
            *g += p;
        }
    }
    Ok(grad)
}
