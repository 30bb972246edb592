//! Haralick-style statistics of a hard, symmetrized, angle-averaged GLCM.
//!
//! Pixels are quantized to their nearest bin center. For each of the four
//! angles the directed count matrix is symmetrized (`C + Cᵀ`) and normalized;
//! the four probability matrices are then averaged. Bin indices are 1-based.

use crate::error::{Error, Result};
use crate::imaging::{Domain, GrayImage};
use crate::softglcm::{Angle, BinningConfig, Offset};

const MODULE: &str = "evalstats";

pub const FEATURE_NAMES: [&str; 6] = [
    "contrast",
    "dissimilarity",
    "homogeneity",
    "energy",
    "entropy",
    "correlation",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub contrast: f64,
    pub dissimilarity: f64,
    pub homogeneity: f64,
    pub energy: f64,
    /// Base-2 joint entropy.
    pub entropy: f64,
    /// 1 when either marginal has zero variance.
    pub correlation: f64,
}

impl FeatureVector {
    pub fn values(&self) -> [f64; 6] {
        [
            self.contrast,
            self.dissimilarity,
            self.homogeneity,
            self.energy,
            self.entropy,
            self.correlation,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values()[i])
    }
}

/// Directed hard co-occurrence counts (row-major `n x n`).
pub(crate) fn hard_counts(
    levels: &[usize],
    width: usize,
    height: usize,
    off: Offset,
    n: usize,
) -> Result<Vec<f64>> {
    let (cols, rows) = off.source_ranges(width, height).ok_or_else(|| {
        Error::geometry(
            MODULE,
            format!("offset {off} has no in-bounds pixel pairs in a {width}x{height} image"),
        )
    })?;
    let shift = off.linear_shift(width);
    let mut counts = vec![0.0; n * n];
    for v in rows {
        for u in cols.clone() {
            let p = v * width + u;
            let q = (p as isize + shift) as usize;
            counts[levels[p] * n + levels[q]] += 1.0;
        }
    }
    Ok(counts)
}

/// Symmetrized, angle-averaged probability matrix at distance `d`.
pub fn averaged_glcm(img: &GrayImage, d: usize, bins: &BinningConfig) -> Result<Vec<f64>> {
    img.require_domain(MODULE, Domain::Normalized)?;
    let n = bins.n_bins();
    let levels: Vec<usize> = img.data().iter().map(|&x| bins.nearest(x)).collect();
    let mut avg = vec![0.0; n * n];
    for angle in Angle::ALL {
        let off = Offset::new(d, angle)?;
        let counts = hard_counts(&levels, img.width(), img.height(), off, n)?;
        let total = 2.0 * counts.iter().sum::<f64>();
        for i in 0..n {
            for j in 0..n {
                avg[i * n + j] +=
                    (counts[i * n + j] + counts[j * n + i]) / total / Angle::ALL.len() as f64;
            }
        }
    }
    Ok(avg)
}

/// The six named features from a probability matrix.
pub fn features_from_matrix(p: &[f64], n: usize) -> FeatureVector {
    let idx = |k: usize| (k + 1) as f64;
    let (mut contrast, mut dissimilarity, mut homogeneity, mut energy, mut entropy) =
        (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut mu_i, mut mu_j) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let v = p[i * n + j];
            let d = idx(i) - idx(j);
            contrast += d * d * v;
            dissimilarity += d.abs() * v;
            homogeneity += v / (1.0 + d * d);
            energy += v * v;
            if v > 0.0 {
                entropy -= v * v.log2();
            }
            mu_i += idx(i) * v;
            mu_j += idx(j) * v;
        }
    }
    let (mut var_i, mut var_j, mut cov) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let v = p[i * n + j];
            var_i += (idx(i) - mu_i).powi(2) * v;
            var_j += (idx(j) - mu_j).powi(2) * v;
            cov += (idx(i) - mu_i) * (idx(j) - mu_j) * v;
        }
    }
    let correlation = if var_i * var_j > 1e-12 {
        cov / (var_i * var_j).sqrt()
    } else {
        1.0
    };
    FeatureVector {
        contrast,
        dissimilarity,
        homogeneity,
        energy,
        entropy: entropy.max(0.0),
        correlation,
    }
}

pub fn glcm_feature_vector(
    img: &GrayImage,
    d: usize,
    bins: &BinningConfig,
) -> Result<FeatureVector> {
    let p = averaged_glcm(img, d, bins)?;
    Ok(features_from_matrix(&p, bins.n_bins()))
}
