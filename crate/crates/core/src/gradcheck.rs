//! Central-difference gradient checking for the differentiable operations.
//!
//! Each operation is checked block by block (image pixels, attention
//! weights, ...). The numerical estimate uses the fourth-order central
//! stencil
//!
//! ```text
//! n = (-f(x + 2h) + 8 f(x + h) - 8 f(x - h) + f(x - 2h)) / 12h
//! ```
//!
//! With the default bin width the Gaussian memberships curve on a scale of
//! about 0.03, so the two-point stencil's `O(h²)` error alone is near 1e-2
//! relative at `h = 1e-4`.
//!
//! The relative error of a component with analytic value `a` is
//! `|a - n| / max(|a|, |n|, floor)`, where `floor` is a small fraction of the
//! largest gradient magnitude over every block of the operation. Components
//! that are zero up to round-off (for instance attention weights behind a
//! saturated softmax) therefore cannot dominate the report.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attnloss::{attention_forward, texture_loss, texture_loss_backward, AttentionParams};
use crate::error::{Error, Result};
use crate::imaging::{Domain, GrayImage};
use crate::mste::{texture_matrix, texture_matrix_backward, OffsetGrid};
use crate::par;

const MODULE: &str = "gradcheck";
use crate::softglcm::{soft_glcm_backward, soft_glcm_forward, Angle, BinningConfig, Offset};

/// Relative error floor as a fraction of a block's largest gradient entry.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Operations with a registered backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradOp {
    SoftGlcm,
    TextureMatrix,
    TextureLoss,
}

impl GradOp {
    pub const ALL: [GradOp; 3] = [GradOp::SoftGlcm, GradOp::TextureMatrix, GradOp::TextureLoss];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::SoftGlcm => "soft_glcm",
            GradOp::TextureMatrix => "texture_matrix",
            GradOp::TextureLoss => "texture_loss",
        }
    }

    pub fn from_name(s: &str) -> Option<GradOp> {
        GradOp::ALL.into_iter().find(|op| op.name() == s)
    }
}

impl fmt::Display for GradOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Inputs for one gradient check. Which fields matter depends on the op.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub image_a: GrayImage,
    pub image_b: GrayImage,
    pub offset: Offset,
    pub grid: OffsetGrid,
    pub bins: BinningConfig,
    pub params: AttentionParams,
    /// Weights of the scalar objective: `n x n` for the GLCM, `p x q` for the
    /// texture matrix.
    pub upstream_glcm: Vec<f64>,
    pub upstream_texture: Vec<f64>,
}

impl GradInstance {
    /// A seeded random instance on `size x size` images with default grid and
    /// binning; the offset is drawn from the grid and the attention weights
    /// and `γ` are uniform in `[-0.5, 0.5]`.
    pub fn random(seed: u64, size: usize) -> Result<GradInstance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = OffsetGrid::default();
        let bins = BinningConfig::default();
        let offsets = grid.offsets();
        let reach = offsets.iter().map(|o| {
            let (du, dv) = o.displacement();
            du.unsigned_abs().max(dv.unsigned_abs())
        });
        let min_size = reach.max().unwrap_or(0) + 1;
        if size < min_size {
            return Err(Error::argument(
                MODULE,
                format!("size {size} leaves some offsets of the default grid without pixel pairs; use at least {min_size}"),
            ));
        }
        let image = |rng: &mut ChaCha8Rng| {
            let data = (0..size * size)
                .map(|_| rng.random_range(-0.95..0.95))
                .collect();
            GrayImage::new(size, size, data, Domain::Normalized)
        };
        let image_a = image(&mut rng)?;
        let image_b = image(&mut rng)?;
        let offset = offsets[rng.random_range(0..offsets.len())];
        let n = bins.n_bins();
        let upstream_glcm = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let upstream_texture = (0..grid.p() * grid.q())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let c = AttentionParams::DEFAULT_CHANNELS;
        let mut w = || rng.random_range(-0.5..0.5);
        let params = AttentionParams::new(
            (0..c).map(|_| w()).collect(),
            (0..c).map(|_| w()).collect(),
            w(),
            w(),
        )?;
        Ok(GradInstance {
            image_a,
            image_b,
            offset,
            grid,
            bins,
            params,
            upstream_glcm,
            upstream_texture,
        })
    }

    /// Same instance with an explicit offset (angles other than those in the
    /// grid are allowed).
    pub fn with_offset(mut self, distance: usize, angle: Angle) -> Result<Self> {
        self.offset = Offset::new(distance, angle)?;
        Ok(self)
    }
}

/// Outcome for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Components skipped because a perturbation crossed an L1 kink.
    pub skipped: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub op: String,
    pub step: f64,
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn block(&self, name: &str) -> Option<&BlockReport> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Stable line-oriented text form.
    pub fn render(&self) -> String {
        let mut s = format!(
            "op={} step={} tolerance={} status={}\n",
            self.op,
            crate::io::fmt_sci(self.step),
            crate::io::fmt_sci(self.tolerance),
            if self.passed() { "PASS" } else { "FAIL" }
        );
        for b in &self.blocks {
            s.push_str(&format!(
                "block={} checked={} skipped={} max_rel={} max_abs={} status={}\n",
                b.name,
                b.checked,
                b.skipped,
                crate::io::fmt_sci(b.max_rel_error),
                crate::io::fmt_sci(b.max_abs_error),
                if b.passed { "PASS" } else { "FAIL" }
            ));
        }
        s
    }
}

/// Fourth-order central differences of `f` around `x0`; `None` where any
/// stencil evaluation was refused.
pub fn numeric_gradient<F>(x0: &[f64], f: F, step: f64) -> Vec<Option<f64>>
where
    F: Fn(&[f64]) -> Option<f64> + Sync + Send,
{
    par::map_range(x0.len(), |k| {
        let mut x = x0.to_vec();
        let mut at = |offset: f64| {
            x[k] = x0[k] + offset;
            f(&x)
        };
        let (p2, p1, m1, m2) = (at(2.0 * step)?, at(step)?, at(-step)?, at(-2.0 * step)?);
        Some((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * step))
    })
}

fn magnitude(analytic: &[f64], numeric: &[Option<f64>]) -> f64 {
    analytic
        .iter()
        .chain(numeric.iter().flatten())
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Scores one block given the gradient scale the floor is taken from.
pub fn score_block(
    name: &str,
    analytic: &[f64],
    numeric: &[Option<f64>],
    scale: f64,
    tolerance: f64,
) -> BlockReport {
    let floor = (RELATIVE_FLOOR * scale).max(f64::MIN_POSITIVE);
    let (mut max_rel, mut max_abs, mut checked, mut skipped) = (0.0f64, 0.0f64, 0, 0);
    for (a, n) in analytic.iter().zip(numeric) {
        match n {
            None => skipped += 1,
            Some(n) => {
                let abs = (a - n).abs();
                let rel = abs / a.abs().max(n.abs()).max(floor);
                // NaN must fail the block
                max_rel = if rel.is_nan() {
                    f64::INFINITY
                } else {
                    max_rel.max(rel)
                };
                max_abs = max_abs.max(abs);
                checked += 1;
            }
        }
    }
    BlockReport {
        name: name.to_string(),
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        checked,
        skipped,
        passed: max_rel < tolerance,
    }
}

/// Compares `analytic` against numerical derivatives of `f` around `x0`,
/// with the floor taken from this block alone.
///
/// `f` returns `None` when an evaluation must be excluded (for instance when
/// it crosses a non-differentiable point); that component is then skipped.
pub fn check_block<F>(
    name: &str,
    x0: &[f64],
    analytic: &[f64],
    f: F,
    step: f64,
    tolerance: f64,
) -> BlockReport
where
    F: Fn(&[f64]) -> Option<f64> + Sync + Send,
{
    assert_eq!(
        x0.len(),
        analytic.len(),
        "gradient length mismatch for block {name}"
    );
    let numeric = numeric_gradient(x0, f, step);
    score_block(
        name,
        analytic,
        &numeric,
        magnitude(analytic, &numeric),
        tolerance,
    )
}

fn weighted(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(a, b)| a * b).sum()
}

/// Runs the check for one registered op. Evaluation failures surface as a
/// failed block rather than an error.
pub fn grad_check(op: GradOp, inst: &GradInstance, step: f64, tolerance: f64) -> GradReport {
    let blocks = match op {
        GradOp::SoftGlcm => vec![check_soft_glcm(inst, step, tolerance)],
        GradOp::TextureMatrix => vec![check_texture_matrix(inst, step, tolerance)],
        GradOp::TextureLoss => check_texture_loss(inst, step, tolerance),
    };
    GradReport {
        op: op.name().to_string(),
        step,
        tolerance,
        blocks,
    }
}

fn failed(name: &str) -> BlockReport {
    BlockReport {
        name: name.to_string(),
        max_rel_error: f64::INFINITY,
        max_abs_error: f64::INFINITY,
        checked: 0,
        skipped: 0,
        passed: false,
    }
}

fn check_soft_glcm(inst: &GradInstance, step: f64, tol: f64) -> BlockReport {
    let img = &inst.image_a;
    let Ok(analytic) = soft_glcm_backward(img, inst.offset, &inst.bins, &inst.upstream_glcm) else {
        return failed("image");
    };
    let f = |x: &[f64]| {
        let im = img.with_data(x.to_vec()).ok()?;
        let g = soft_glcm_forward(&im, inst.offset, &inst.bins).ok()?;
        Some(weighted(g.matrix(), &inst.upstream_glcm))
    };
    check_block("image", img.data(), &analytic, f, step, tol)
}

fn check_texture_matrix(inst: &GradInstance, step: f64, tol: f64) -> BlockReport {
    let img = &inst.image_a;
    let Ok(analytic) = texture_matrix_backward(img, &inst.grid, &inst.bins, &inst.upstream_texture)
    else {
        return failed("image");
    };
    let f = |x: &[f64]| {
        let im = img.with_data(x.to_vec()).ok()?;
        let t = texture_matrix(&im, &inst.grid, &inst.bins).ok()?;
        Some(weighted(t.values(), &inst.upstream_texture))
    };
    check_block("image", img.data(), &analytic, f, step, tol)
}

/// Sign class of each texture difference; values within 1e-6 of zero are
/// treated as sitting on the kink.
fn kink_pattern(a: &[f64], b: &[f64]) -> Vec<i8> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            if d.abs() < 1e-6 {
                0
            } else if d > 0.0 {
                1
            } else {
                -1
            }
        })
        .collect()
}

fn check_texture_loss(inst: &GradInstance, step: f64, tol: f64) -> Vec<BlockReport> {
    const NAMES: [&str; 6] = ["image_a", "image_b", "w_q", "w_k", "w_v", "gamma"];
    let (grid, bins, params) = (&inst.grid, &inst.bins, &inst.params);
    let grads = texture_loss(&inst.image_a, &inst.image_b, grid, bins, params)
        .and_then(|out| texture_loss_backward(&out));
    let (Ok(grads), Ok(ta), Ok(tb)) = (
        grads,
        texture_matrix(&inst.image_a, grid, bins),
        texture_matrix(&inst.image_b, grid, bins),
    ) else {
        return NAMES.iter().map(|n| failed(n)).collect();
    };
    let base_pattern = kink_pattern(ta.values(), tb.values());

    // Loss from texture matrices, refusing evaluations that change the
    // kink pattern of |T_a - T_b|.
    let loss_from = |ta: &[f64], tb: &[f64], p: &AttentionParams| -> Option<f64> {
        if kink_pattern(ta, tb) != base_pattern || base_pattern.contains(&0) {
            return None;
        }
        let delta: Vec<f64> = ta.iter().zip(tb).map(|(a, b)| (a - b).abs()).collect();
        attention_forward(&delta, p).ok().map(|o| o.loss)
    };

    let f_a = |x: &[f64]| {
        let im = inst.image_a.with_data(x.to_vec()).ok()?;
        let t = texture_matrix(&im, grid, bins).ok()?;
        loss_from(t.values(), tb.values(), params)
    };
    let f_b = |x: &[f64]| {
        let im = inst.image_b.with_data(x.to_vec()).ok()?;
        let t = texture_matrix(&im, grid, bins).ok()?;
        loss_from(ta.values(), t.values(), params)
    };
    let with_params = |edit: &dyn Fn(&mut AttentionParams)| {
        let mut p = params.clone();
        edit(&mut p);
        loss_from(ta.values(), tb.values(), &p)
    };
    let f_wq = |x: &[f64]| with_params(&|p| p.w_q = x.to_vec());
    let f_wk = |x: &[f64]| with_params(&|p| p.w_k = x.to_vec());
    let f_wv = |x: &[f64]| with_params(&|p| p.w_v = x[0]);
    let f_g = |x: &[f64]| with_params(&|p| p.gamma = x[0]);

    let blocks = [
        (
            grads.image_a.clone(),
            numeric_gradient(inst.image_a.data(), f_a, step),
        ),
        (
            grads.image_b.clone(),
            numeric_gradient(inst.image_b.data(), f_b, step),
        ),
        (
            grads.params.w_q.clone(),
            numeric_gradient(&params.w_q, f_wq, step),
        ),
        (
            grads.params.w_k.clone(),
            numeric_gradient(&params.w_k, f_wk, step),
        ),
        (
            vec![grads.params.w_v],
            numeric_gradient(&[params.w_v], f_wv, step),
        ),
        (
            vec![grads.params.gamma],
            numeric_gradient(&[params.gamma], f_g, step),
        ),
    ];
    let scale = blocks
        .iter()
        .map(|(a, n)| magnitude(a, n))
        .fold(0.0, f64::max);
    NAMES
        .iter()
        .zip(&blocks)
        .map(|(name, (a, n))| score_block(name, a, n, scale, tol))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_too_small_for_grid() {
        assert!(GradInstance::random(0, 7).is_err());
        assert!(GradInstance::random(0, 8).is_ok());
    }

    #[test]
    fn exact_agreement_for_linear_function() {
        let x0 = [0.3, -1.2, 2.0];
        let w = [1.5, -0.25, 4.0];
        let r = check_block("lin", &x0, &w, |x| Some(weighted(x, &w)), 1e-4, 1e-8);
        assert!(r.passed, "{r:?}");
        assert!(r.max_rel_error < 1e-10);
    }

    #[test]
    fn zero_parameter_block_agrees() {
        let r = check_block("empty", &[], &[], |_| Some(1.0), 1e-4, 1e-4);
        assert!(r.passed);
        assert_eq!(r.checked, 0);
    }

    #[test]
    fn corrupted_backward_is_flagged() {
        let inst = GradInstance::random(3, 8)
            .unwrap()
            .with_offset(1, Angle::Deg0)
            .unwrap();
        let mut analytic =
            soft_glcm_backward(&inst.image_a, inst.offset, &inst.bins, &inst.upstream_glcm)
                .unwrap();
        analytic[7] *= 1.01;
        let f = |x: &[f64]| {
            let im = inst.image_a.with_data(x.to_vec()).ok()?;
            let g = soft_glcm_forward(&im, inst.offset, &inst.bins).ok()?;
            Some(weighted(g.matrix(), &inst.upstream_glcm))
        };
        let r = check_block("image", inst.image_a.data(), &analytic, f, 1e-4, 1e-4);
        assert!(!r.passed, "{r:?}");
    }

    #[test]
    fn skipped_components_are_counted() {
        let r = check_block(
            "k",
            &[0.0, 1.0],
            &[1.0, 1.0],
            |x| {
                if x[0] > 0.0 && x[0] < 0.5 {
                    None
                } else {
                    Some(x[0] + x[1])
                }
            },
            1e-3,
            1e-6,
        );
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn op_names_roundtrip() {
        for op in GradOp::ALL {
            assert_eq!(GradOp::from_name(op.name()), Some(op));
        }
        assert_eq!(GradOp::from_name("nope"), None);
    }
}
