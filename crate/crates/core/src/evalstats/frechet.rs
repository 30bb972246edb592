//! Fréchet distance between two Gaussians.
//!
//! `‖μ_r − μ_g‖² + Tr(Σ_r + Σ_g − 2 (Σ_r Σ_g)^{1/2})`. The product's
//! square root has the same trace as that of the symmetric matrix
//! `Σ_r^{1/2} Σ_g Σ_r^{1/2} = Mᵀ M` with `M = Σ_g^{1/2} Σ_r^{1/2}`, so the
//! trace is the sum of the singular values of `M`. The symmetric square
//! roots come from eigendecompositions with negative eigenvalues clamped to
//! zero.
//!
//! Taking square roots of the eigenvalues of `Mᵀ M` directly would turn a
//! round-off error of `ε ‖Σ‖²` in a near-zero eigenvalue into an error of
//! `√ε ‖Σ‖`, which is visible for rank-deficient sample covariances.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MODULE: &str = "evalstats";
const SYMMETRY_TOL: f64 = 1e-9;

/// Mean and covariance of a feature distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Row-major `d x d`.
    pub cov: Vec<f64>,
}

impl Moments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample mean and unbiased covariance of row vectors.
    pub fn from_samples(rows: &[Vec<f64>]) -> Result<Moments> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::argument(
                MODULE,
                format!("need at least 2 samples for a covariance, got {n}"),
            ));
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::argument(
                MODULE,
                "samples must share a positive dimension",
            ));
        }
        let mean: Vec<f64> = (0..d)
            .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n as f64)
            .collect();
        let mut cov = vec![0.0; d * d];
        for r in rows {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
        Ok(Moments { mean, cov })
    }
}

fn matrix(m: &Moments, which: &str) -> Result<DMatrix<f64>> {
    let d = m.dim();
    if d == 0 || m.cov.len() != d * d {
        return Err(Error::argument(
            MODULE,
            format!("{which}: covariance must be {d}x{d}"),
        ));
    }
    if m.mean.iter().chain(&m.cov).any(|v| !v.is_finite()) {
        return Err(Error::numeric(
            MODULE,
            format!("{which}: moments must be finite"),
        ));
    }
    let mat = DMatrix::from_row_slice(d, d, &m.cov);
    let scale = mat.amax().max(1.0);
    if (&mat - mat.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::argument(
            MODULE,
            format!("{which}: covariance is not symmetric"),
        ));
    }
    Ok((&mat + mat.transpose()) * 0.5)
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

pub fn frechet_distance(real: &Moments, generated: &Moments) -> Result<f64> {
    if real.dim() != generated.dim() {
        return Err(Error::argument(
            MODULE,
            format!("dimension mismatch: {} vs {}", real.dim(), generated.dim()),
        ));
    }
    let sr = matrix(real, "real")?;
    let sg = matrix(generated, "generated")?;
    let diff = DVector::from_column_slice(&real.mean) - DVector::from_column_slice(&generated.mean);
    let m = sqrt_psd(&sg) * sqrt_psd(&sr);
    let tr_sqrt: f64 = m.singular_values().iter().sum();
    Ok(diff.norm_squared() + sr.trace() + sg.trace() - 2.0 * tr_sqrt)
}
