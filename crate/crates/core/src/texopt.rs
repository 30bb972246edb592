//! Gradient descent on source pixels toward a target texture.
//!
//! Heavy-ball momentum with projection onto `[-1, 1]` after every step. With
//! backtracking enabled a step that raises the loss is retried at half the
//! step size; when no halving helps the step is rejected and momentum is
//! reset, so the recorded loss never increases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attnloss::{attention_backward, attention_forward, AttentionParams};
use crate::error::{Error, Result};
use crate::imaging::{Domain, GrayImage};
use crate::mste::{texture_matrix, texture_matrix_backward, OffsetGrid, TextureMatrix};
use crate::softglcm::BinningConfig;

const MODULE: &str = "texopt";

/// Relative amplitude of the seeded perturbation applied to each pixel
/// gradient. Symmetric sources (a constant image, say) otherwise never leave
/// their symmetry class, since the contrast descriptor is reflection
/// invariant.
const GRADIENT_JITTER: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub momentum: f64,
    /// Also descend on the attention parameters.
    pub learn_attention: bool,
    pub backtracking: bool,
    /// Maximum step halvings per iteration under backtracking.
    pub max_halvings: usize,
    /// Seeds the gradient perturbation; runs are deterministic given it.
    pub seed: u64,
    /// Report every n-th iteration to the observer (0 = never).
    pub log_every: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            iterations: 500,
            step_size: 0.05,
            momentum: 0.9,
            learn_attention: false,
            backtracking: true,
            max_halvings: 20,
            seed: 0,
            log_every: 0,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config(MODULE, "iterations must be at least 1"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::config(
                MODULE,
                format!("step_size must be positive, got {}", self.step_size),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(
                MODULE,
                format!("momentum must be in [0, 1), got {}", self.momentum),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `losses[k]` is the loss after `k` iterations; `losses[0]` is the
    /// starting loss.
    pub losses: Vec<f64>,
    pub initial_image: GrayImage,
    pub final_image: GrayImage,
    pub final_texture: TextureMatrix,
    pub target_texture: TextureMatrix,
    pub final_params: AttentionParams,
    /// Iterations whose step was accepted.
    pub accepted_steps: usize,
}

impl Trajectory {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trajectory is never empty")
    }

    /// `iteration,loss` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (k, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{k},{}\n", crate::io::fmt_sci(*l)));
        }
        s
    }
}

struct Evaluation {
    loss: f64,
    grad_image: Vec<f64>,
    grad_params: Vec<f64>,
}

struct Problem<'a> {
    width: usize,
    height: usize,
    grid: &'a OffsetGrid,
    bins: &'a BinningConfig,
    target: TextureMatrix,
}

impl Problem<'_> {
    fn image(&self, data: Vec<f64>) -> Result<GrayImage> {
        GrayImage::new(self.width, self.height, data, Domain::Normalized)
    }

    fn loss(
        &self,
        img: &GrayImage,
        params: &AttentionParams,
    ) -> Result<(
        f64,
        TextureMatrix,
        Vec<f64>,
        crate::attnloss::AttentionOutput,
    )> {
        let t = texture_matrix(img, self.grid, self.bins)?;
        let delta: Vec<f64> = t
            .values()
            .iter()
            .zip(self.target.values())
            .map(|(a, b)| (a - b).abs())
            .collect();
        let out = attention_forward(&delta, params)?;
        Ok((out.loss, t, delta, out))
    }

    fn evaluate(
        &self,
        img: &GrayImage,
        params: &AttentionParams,
        need_params: bool,
    ) -> Result<Evaluation> {
        let (loss, t, delta, out) = self.loss(img, params)?;
        let (d_delta, pg) = attention_backward(&delta, params, &out);
        let upstream: Vec<f64> = t
            .values()
            .iter()
            .zip(self.target.values())
            .zip(&d_delta)
            .map(|((a, b), g)| match a.partial_cmp(b) {
                Some(std::cmp::Ordering::Greater) => *g,
                Some(std::cmp::Ordering::Less) => -*g,
                _ => 0.0,
            })
            .collect();
        let grad_image = texture_matrix_backward(img, self.grid, self.bins, &upstream)?;
        let grad_params = if need_params {
            pg.to_flat()
        } else {
            Vec::new()
        };
        Ok(Evaluation {
            loss,
            grad_image,
            grad_params,
        })
    }
}

/// Runs the optimizer without progress reporting.
pub fn texture_match_optimize(
    source: &GrayImage,
    target: &GrayImage,
    grid: &OffsetGrid,
    bins: &BinningConfig,
    params: &AttentionParams,
    cfg: &OptimizeConfig,
) -> Result<Trajectory> {
    texture_match_optimize_with(source, target, grid, bins, params, cfg, |_, _| {})
}

/// Runs the optimizer, calling `observer(iteration, loss)` every
/// `cfg.log_every` iterations.
pub fn texture_match_optimize_with<F: FnMut(usize, f64)>(
    source: &GrayImage,
    target: &GrayImage,
    grid: &OffsetGrid,
    bins: &BinningConfig,
    params: &AttentionParams,
    cfg: &OptimizeConfig,
    mut observer: F,
) -> Result<Trajectory> {
    cfg.validate()?;
    params.validate()?;
    source.require_domain(MODULE, Domain::Normalized)?;
    target.require_domain(MODULE, Domain::Normalized)?;
    if (source.width(), source.height()) != (target.width(), target.height()) {
        return Err(Error::argument(
            MODULE,
            "source and target must have the same size",
        ));
    }
    let problem = Problem {
        width: source.width(),
        height: source.height(),
        grid,
        bins,
        target: texture_matrix(target, grid, bins)?,
    };

    let mut image = source.clone();
    let mut params = params.clone();
    let mut eval = problem.evaluate(&image, &params, cfg.learn_attention)?;
    if !eval.loss.is_finite() {
        return Err(Error::numeric(MODULE, "initial loss is not finite"));
    }
    let mut losses = Vec::with_capacity(cfg.iterations + 1);
    losses.push(eval.loss);
    let mut vel_image = vec![0.0; image.len()];
    let mut vel_params = vec![
        0.0;
        if cfg.learn_attention {
            params.to_flat().len()
        } else {
            0
        }
    ];
    let mut accepted_steps = 0;
    let mut last_step = cfg.step_size;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for iter in 1..=cfg.iterations {
        for (v, g) in vel_image.iter_mut().zip(&eval.grad_image) {
            let scale = 1.0 + GRADIENT_JITTER * rng.random_range(-1.0..=1.0);
            *v = cfg.momentum * *v + scale * g;
        }
        for (v, g) in vel_params.iter_mut().zip(&eval.grad_params) {
            *v = cfg.momentum * *v + g;
        }

        // Warm start from the last accepted step so a long run does not pay
        // for the same halvings every iteration.
        let mut step = if cfg.backtracking {
            (2.0 * last_step).min(cfg.step_size)
        } else {
            cfg.step_size
        };
        let mut accepted = None;
        let attempts = if cfg.backtracking {
            cfg.max_halvings + 1
        } else {
            1
        };
        for _ in 0..attempts {
            let data: Vec<f64> = image
                .data()
                .iter()
                .zip(&vel_image)
                .map(|(x, v)| (x - step * v).clamp(-1.0, 1.0))
                .collect();
            let cand_image = problem.image(data)?;
            let cand_params = if cfg.learn_attention {
                let flat: Vec<f64> = params
                    .to_flat()
                    .iter()
                    .zip(&vel_params)
                    .map(|(p, v)| p - step * v)
                    .collect();
                match params.from_flat(&flat) {
                    Ok(p) => p,
                    Err(_) if cfg.backtracking => {
                        step *= 0.5;
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            } else {
                params.clone()
            };
            let cand = problem.evaluate(&cand_image, &cand_params, cfg.learn_attention);
            let cand = match cand {
                Ok(c) if c.loss.is_finite() => c,
                Ok(_) | Err(_) if cfg.backtracking => {
                    step *= 0.5;
                    continue;
                }
                Ok(c) => {
                    return Err(Error::numeric(
                        MODULE,
                        format!("loss diverged to {} at iteration {iter}", c.loss),
                    ))
                }
                Err(e) => {
                    return Err(Error::numeric(
                        MODULE,
                        format!("diverged at iteration {iter}: {e}"),
                    ))
                }
            };
            if !cfg.backtracking || cand.loss <= eval.loss {
                last_step = step;
                accepted = Some((cand_image, cand_params, cand));
                break;
            }
            step *= 0.5;
        }

        match accepted {
            Some((img, p, e)) => {
                image = img;
                params = p;
                eval = e;
                accepted_steps += 1;
            }
            None => {
                vel_image.iter_mut().for_each(|v| *v = 0.0);
                vel_params.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        losses.push(eval.loss);
        if cfg.log_every > 0 && iter % cfg.log_every == 0 {
            observer(iter, eval.loss);
        }
    }

    let final_texture = texture_matrix(&image, grid, bins)?;
    Ok(Trajectory {
        losses,
        initial_image: source.clone(),
        final_image: image,
        final_texture,
        target_texture: problem.target,
        final_params: params,
        accepted_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(OptimizeConfig::default().validate().is_ok());
        assert!(OptimizeConfig {
            iterations: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OptimizeConfig {
            step_size: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OptimizeConfig {
            momentum: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn identical_images_are_a_fixed_point() {
        let data: Vec<f64> = (0..64)
            .map(|k| ((k * 37 % 17) as f64 / 8.5) - 1.0)
            .collect();
        let img = GrayImage::new(8, 8, data, Domain::Normalized).unwrap();
        let cfg = OptimizeConfig {
            iterations: 5,
            ..Default::default()
        };
        let traj = texture_match_optimize(
            &img,
            &img,
            &OffsetGrid::default(),
            &BinningConfig::default(),
            &AttentionParams::default(),
            &cfg,
        )
        .unwrap();
        assert!(traj.losses.iter().all(|&l| l == 0.0));
        assert_eq!(traj.final_image, img);
        assert_eq!(traj.losses.len(), 6);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let a = GrayImage::filled(8, 8, 0.0, Domain::Normalized).unwrap();
        let b = GrayImage::filled(9, 8, 0.0, Domain::Normalized).unwrap();
        let r = texture_match_optimize(
            &a,
            &b,
            &OffsetGrid::default(),
            &BinningConfig::default(),
            &AttentionParams::default(),
            &OptimizeConfig::default(),
        );
        assert!(r.is_err());
    }
}
