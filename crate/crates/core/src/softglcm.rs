//! Differentiable gray-level co-occurrence matrix.
//!
//! Each pixel value `x` is softly assigned to every bin center `b_k` with a
//! Gaussian membership `a_k(x) = exp(-(x - b_k)^2 / (2 sigma^2))`. The
//! unnormalized co-occurrence for an offset is the sum over in-bounds pixel
//! pairs of the outer product of source and neighbor memberships; dividing by
//! its total gives a matrix whose entries sum to one.
//!
//! Coordinates: `u` is the column, `v` the row. The neighbor of `(u, v)` is
//! `(u + du, v + dv)` with `(du, dv) = (round(d cos θ), round(d sin θ))`, so
//! 90° points down the image. Pairs whose neighbor leaves the image are
//! dropped and co-occurrence is directed.

use std::fmt;

use crate::error::{Error, Result};
use crate::imaging::{Domain, GrayImage};

const MODULE: &str = "softglcm";

/// Memberships below this are stored as exact zeros. Far tails would
/// otherwise produce subnormal products in the pair loops.
const MEMBERSHIP_FLOOR: f64 = 1e-100;

/// Gaussian soft-binning settings over the normalized range.
#[derive(Debug, Clone, PartialEq)]
pub struct BinningConfig {
    centers: Vec<f64>,
    sigma: f64,
}

impl BinningConfig {
    pub const DEFAULT_BINS: usize = 32;

    /// `n` uniform centers spanning `[-1, 1]` with sigma at half the spacing.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::config(
                MODULE,
                format!("n_bins must be at least 2, got {n}"),
            ));
        }
        let step = 2.0 / (n - 1) as f64;
        let centers = (0..n).map(|k| -1.0 + k as f64 * step).collect();
        BinningConfig::new(centers, step / 2.0)
    }

    pub fn new(centers: Vec<f64>, sigma: f64) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::config(
                MODULE,
                format!("need at least 2 bin centers, got {}", centers.len()),
            ));
        }
        if centers.iter().any(|c| !c.is_finite()) || centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(
                MODULE,
                "bin centers must be finite and strictly increasing",
            ));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::config(
                MODULE,
                format!("sigma must be positive, got {sigma}"),
            ));
        }
        Ok(BinningConfig { centers, sigma })
    }

    pub fn with_sigma(self, sigma: f64) -> Result<Self> {
        BinningConfig::new(self.centers, sigma)
    }

    pub fn n_bins(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Smallest gap between adjacent centers.
    pub fn min_spacing(&self) -> f64 {
        self.centers
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the nearest center; ties go to the lower bin.
    pub fn nearest(&self, x: f64) -> usize {
        let mut best = 0;
        for (k, &c) in self.centers.iter().enumerate() {
            if (x - c).abs() < (x - self.centers[best]).abs() {
                best = k;
            }
        }
        best
    }

    #[inline]
    fn membership(&self, x: f64, k: usize) -> f64 {
        let z = x - self.centers[k];
        (-z * z / (2.0 * self.sigma * self.sigma)).exp()
    }
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig::uniform(Self::DEFAULT_BINS).expect("default binning is valid")
    }
}

/// One of the four standard co-occurrence directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Angle {
    Deg0,
    Deg45,
    Deg90,
    Deg135,
}

impl Angle {
    pub const ALL: [Angle; 4] = [Angle::Deg0, Angle::Deg45, Angle::Deg90, Angle::Deg135];

    pub fn from_degrees(deg: u32) -> Result<Angle> {
        match deg {
            0 => Ok(Angle::Deg0),
            45 => Ok(Angle::Deg45),
            90 => Ok(Angle::Deg90),
            135 => Ok(Angle::Deg135),
            other => Err(Error::config(
                MODULE,
                format!("angle {other} not in {{0, 45, 90, 135}}"),
            )),
        }
    }

    pub fn degrees(self) -> u32 {
        match self {
            Angle::Deg0 => 0,
            Angle::Deg45 => 45,
            Angle::Deg90 => 90,
            Angle::Deg135 => 135,
        }
    }

    /// `(cos θ, sin θ)` without trigonometric round-off at the axes.
    fn direction(self) -> (f64, f64) {
        use std::f64::consts::FRAC_1_SQRT_2 as S;
        match self {
            Angle::Deg0 => (1.0, 0.0),
            Angle::Deg45 => (S, S),
            Angle::Deg90 => (0.0, 1.0),
            Angle::Deg135 => (-S, S),
        }
    }
}

impl fmt::Display for Angle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

/// A `(d, θ)` offset and its integer lattice displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Offset {
    distance: usize,
    angle: Angle,
    du: isize,
    dv: isize,
}

impl Offset {
    pub fn new(distance: usize, angle: Angle) -> Result<Offset> {
        let (c, s) = angle.direction();
        let du = (distance as f64 * c).round() as isize;
        let dv = (distance as f64 * s).round() as isize;
        if du == 0 && dv == 0 {
            return Err(Error::config(
                MODULE,
                format!("offset d={distance}, θ={angle} has zero displacement"),
            ));
        }
        Ok(Offset {
            distance,
            angle,
            du,
            dv,
        })
    }

    pub fn distance(&self) -> usize {
        self.distance
    }

    pub fn angle(&self) -> Angle {
        self.angle
    }

    /// `(du, dv)`: column and row displacement.
    pub fn displacement(&self) -> (isize, isize) {
        (self.du, self.dv)
    }

    /// Source-pixel ranges `(cols, rows)` whose neighbor is in bounds.
    pub(crate) fn source_ranges(
        &self,
        width: usize,
        height: usize,
    ) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let axis = |d: isize, n: usize| -> Option<std::ops::Range<usize>> {
            let lo = (-d).max(0) as usize;
            let hi = n as isize - d.max(0);
            if hi <= lo as isize {
                None
            } else {
                Some(lo..hi as usize)
            }
        };
        Some((axis(self.du, width)?, axis(self.dv, height)?))
    }

    pub fn valid_pairs(&self, width: usize, height: usize) -> usize {
        self.source_ranges(width, height)
            .map_or(0, |(c, r)| c.len() * r.len())
    }

    /// Linear index shift from a source pixel to its neighbor.
    pub(crate) fn linear_shift(&self, width: usize) -> isize {
        self.dv * width as isize + self.du
    }
}

impl fmt::Display for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(d={}, θ={}°)", self.distance, self.angle)
    }
}

/// Per-pixel Gaussian memberships, pixel-major (`pixels x n_bins`).
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentField {
    n_bins: usize,
    values: Vec<f64>,
}

impl AssignmentField {
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn pixels(&self) -> usize {
        self.values.len() / self.n_bins
    }

    pub fn get(&self, pixel: usize, bin: usize) -> f64 {
        self.values[pixel * self.n_bins + bin]
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.values[pixel * self.n_bins..(pixel + 1) * self.n_bins]
    }

    pub(crate) fn compute(data: &[f64], bins: &BinningConfig) -> AssignmentField {
        let n = bins.n_bins();
        let mut values = Vec::with_capacity(data.len() * n);
        for &x in data {
            values.extend((0..n).map(|k| {
                let a = bins.membership(x, k);
                if a < MEMBERSHIP_FLOOR {
                    0.0
                } else {
                    a
                }
            }));
        }
        AssignmentField { n_bins: n, values }
    }
}

/// Normalized co-occurrence matrix for one offset.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftGlcm {
    n_bins: usize,
    matrix: Vec<f64>,
    offset: Offset,
    valid_pairs: usize,
}

impl SoftGlcm {
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Row-major `n x n` entries.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n_bins + j]
    }

    pub fn offset(&self) -> Offset {
        self.offset
    }

    pub fn valid_pairs(&self) -> usize {
        self.valid_pairs
    }

    /// Builds a matrix directly, e.g. for descriptor tests. Entries must be
    /// non-negative and sum to one within 1e-6.
    pub fn from_matrix(n_bins: usize, matrix: Vec<f64>, offset: Offset) -> Result<SoftGlcm> {
        if matrix.len() != n_bins * n_bins {
            return Err(Error::argument(
                MODULE,
                format!(
                    "matrix has {} entries, expected {}",
                    matrix.len(),
                    n_bins * n_bins
                ),
            ));
        }
        if matrix.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::argument(
                MODULE,
                "GLCM entries must be finite and non-negative",
            ));
        }
        let total: f64 = matrix.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::argument(
                MODULE,
                format!("GLCM entries sum to {total}, expected 1"),
            ));
        }
        Ok(SoftGlcm {
            n_bins,
            matrix,
            offset,
            valid_pairs: 0,
        })
    }
}

/// Gaussian membership of every pixel to every bin.
pub fn soft_assignment(img: &GrayImage, bins: &BinningConfig) -> Result<AssignmentField> {
    img.require_domain(MODULE, Domain::Normalized)?;
    Ok(AssignmentField::compute(img.data(), bins))
}

/// Forward pass for one offset.
pub fn soft_glcm_forward(img: &GrayImage, off: Offset, bins: &BinningConfig) -> Result<SoftGlcm> {
    let field = soft_assignment(img, bins)?;
    Ok(forward_from_field(&field, img.width(), img.height(), off)?.0)
}

/// Gradient of `L = Σ upstream(i, j) · G(i, j)` with respect to each pixel.
///
/// `upstream` is row-major `n x n`; the result is row-major `h x w`.
pub fn soft_glcm_backward(
    img: &GrayImage,
    off: Offset,
    bins: &BinningConfig,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    let n = bins.n_bins();
    if upstream.len() != n * n {
        return Err(Error::argument(
            MODULE,
            format!("upstream has {} entries, expected {n}x{n}", upstream.len()),
        ));
    }
    let field = soft_assignment(img, bins)?;
    let (glcm, total) = forward_from_field(&field, img.width(), img.height(), off)?;
    Ok(backward_from_field(
        img.data(),
        bins,
        &field,
        img.width(),
        img.height(),
        &glcm,
        total,
        upstream,
    ))
}

/// Returns the normalized matrix and the unnormalized total `Σ g`.
pub(crate) fn forward_from_field(
    field: &AssignmentField,
    width: usize,
    height: usize,
    off: Offset,
) -> Result<(SoftGlcm, f64)> {
    let (cols, rows) = off.source_ranges(width, height).ok_or_else(|| {
        Error::geometry(
            MODULE,
            format!("offset {off} has no in-bounds pixel pairs in a {width}x{height} image"),
        )
    })?;
    let n = field.n_bins();
    let shift = off.linear_shift(width);
    let mut g = vec![0.0; n * n];
    for v in rows.clone() {
        for u in cols.clone() {
            let p = v * width + u;
            let q = (p as isize + shift) as usize;
            let (ap, aq) = (field.row(p), field.row(q));
            for (i, &ai) in ap.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let gi = &mut g[i * n..(i + 1) * n];
                for (gij, &aj) in gi.iter_mut().zip(aq) {
                    *gij += ai * aj;
                }
            }
        }
    }
    let total: f64 = g.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::numeric(
            MODULE,
            format!("co-occurrence total {total} for offset {off} cannot be normalized"),
        ));
    }
    let matrix = g.into_iter().map(|v| v / total).collect();
    let glcm = SoftGlcm {
        n_bins: n,
        matrix,
        offset: off,
        valid_pairs: cols.len() * rows.len(),
    };
    Ok((glcm, total))
}

/// Pixel gradient of `Σ upstream ⊙ G` given a cached forward pass.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_from_field(
    data: &[f64],
    bins: &BinningConfig,
    field: &AssignmentField,
    width: usize,
    height: usize,
    glcm: &SoftGlcm,
    total: f64,
    upstream: &[f64],
) -> Vec<f64> {
    let n = field.n_bins();
    // Quotient rule: dL/dg_ij = (U_ij - <U, G>) / Σg.
    let inner: f64 = upstream.iter().zip(glcm.matrix()).map(|(u, g)| u * g).sum();
    let w: Vec<f64> = upstream.iter().map(|&u| (u - inner) / total).collect();
    if w.iter().all(|&x| x == 0.0) {
        return vec![0.0; data.len()];
    }

    let off = glcm.offset();
    let (cols, rows) = off
        .source_ranges(width, height)
        .expect("geometry checked in forward");
    let shift = off.linear_shift(width);
    let mut d_assign = vec![0.0; data.len() * n];
    let mut src_acc = vec![0.0; n];
    let mut nbr_acc = vec![0.0; n];
    for v in rows {
        for u in cols.clone() {
            let p = v * width + u;
            let q = (p as isize + shift) as usize;
            let (ap, aq) = (field.row(p), field.row(q));
            src_acc.iter_mut().for_each(|x| *x = 0.0);
            nbr_acc.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..n {
                let wi = &w[i * n..(i + 1) * n];
                let ai = ap[i];
                let mut s = 0.0;
                for j in 0..n {
                    s += wi[j] * aq[j];
                    nbr_acc[j] += wi[j] * ai;
                }
                src_acc[i] = s;
            }
            for k in 0..n {
                d_assign[p * n + k] += src_acc[k];
                d_assign[q * n + k] += nbr_acc[k];
            }
        }
    }

    // da_k/dx = -a_k (x - b_k) / sigma^2
    let inv_var = 1.0 / (bins.sigma() * bins.sigma());
    data.iter()
        .enumerate()
        .map(|(p, &x)| {
            let a = field.row(p);
            let da = &d_assign[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for k in 0..n {
                acc -= da[k] * a[k] * (x - bins.centers()[k]) * inv_var;
            }
            acc
        })
        .collect()
}
