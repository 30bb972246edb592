//! Texture loss with self-attention aggregation.
//!
//! The deviation `Δ = |T_a - T_b|` between two texture matrices is flattened
//! row-major into `x ∈ R^N`. Bias-free 1x1 projections give queries
//! `Q = w_q xᵀ` and keys `K = w_k xᵀ` (both `c x N`) and values `V = w_v x`.
//! The attention map is the row-wise softmax of `QᵀK`, the aggregated
//! deviation is `Δ' = γ A V + x`, and the loss is the sum of `Δ'`.
//!
//! For a single input channel `QᵀK(i, j) = α x_i x_j` with `α = w_q · w_k`,
//! which is how the scores are evaluated here; parameter sets with the same
//! `α` therefore give bitwise identical attention maps.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::mste::{texture_matrix, texture_matrix_backward, OffsetGrid, TextureMatrix};
use crate::softglcm::BinningConfig;

const MODULE: &str = "attnloss";

/// Key/query/value projection weights and the residual scale `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_v: f64,
    pub gamma: f64,
    /// Seed the weights were drawn from, if any.
    pub seed: Option<u64>,
}

impl AttentionParams {
    pub const DEFAULT_CHANNELS: usize = 4;
    const INIT_RANGE: f64 = 0.1;

    pub fn new(w_q: Vec<f64>, w_k: Vec<f64>, w_v: f64, gamma: f64) -> Result<Self> {
        let p = AttentionParams {
            w_q,
            w_k,
            w_v,
            gamma,
            seed: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Weights uniform in `[-0.1, 0.1]` from a seeded ChaCha stream, `γ = 0`.
    pub fn init(c: usize, seed: u64) -> Result<Self> {
        if c == 0 {
            return Err(Error::config(MODULE, "channel count must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || rng.random_range(-Self::INIT_RANGE..=Self::INIT_RANGE);
        let w_q = (0..c).map(|_| draw()).collect();
        let w_k = (0..c).map(|_| draw()).collect();
        let w_v = draw();
        Ok(AttentionParams {
            w_q,
            w_k,
            w_v,
            gamma: 0.0,
            seed: Some(seed),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_q.is_empty() {
            return Err(Error::config(MODULE, "channel count must be at least 1"));
        }
        if self.w_q.len() != self.w_k.len() {
            return Err(Error::config(
                MODULE,
                format!(
                    "w_q has {} channels but w_k has {}",
                    self.w_q.len(),
                    self.w_k.len()
                ),
            ));
        }
        let all = self
            .w_q
            .iter()
            .chain(&self.w_k)
            .chain([&self.w_v, &self.gamma]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::config(MODULE, "attention parameters must be finite"));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.w_q.len()
    }

    /// `w_q · w_k`, the only way the query/key weights enter the scores.
    pub fn alpha(&self) -> f64 {
        self.w_q.iter().zip(&self.w_k).map(|(q, k)| q * k).sum()
    }

    /// Flat parameter vector `[w_q.., w_k.., w_v, γ]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.channels() + 2);
        v.extend_from_slice(&self.w_q);
        v.extend_from_slice(&self.w_k);
        v.push(self.w_v);
        v.push(self.gamma);
        v
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        let c = self.channels();
        if flat.len() != 2 * c + 2 {
            return Err(Error::argument(
                MODULE,
                format!(
                    "flat parameter vector has {} entries, expected {}",
                    flat.len(),
                    2 * c + 2
                ),
            ));
        }
        let p = AttentionParams {
            w_q: flat[..c].to_vec(),
            w_k: flat[c..2 * c].to_vec(),
            w_v: flat[2 * c],
            gamma: flat[2 * c + 1],
            seed: self.seed,
        };
        p.validate()?;
        Ok(p)
    }

    /// Key-value text: `c`, `gamma`, `w_q`, `w_k`, `w_v` and optionally `seed`.
    /// Floats use the shortest representation that parses back exactly.
    pub fn to_kv_string(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut s = String::new();
        writeln!(s, "c = {}", self.channels()).unwrap();
        writeln!(s, "gamma = {:?}", self.gamma).unwrap();
        writeln!(s, "w_q = {}", join(&self.w_q)).unwrap();
        writeln!(s, "w_k = {}", join(&self.w_k)).unwrap();
        writeln!(s, "w_v = {:?}", self.w_v).unwrap();
        if let Some(seed) = self.seed {
            writeln!(s, "seed = {seed}").unwrap();
        }
        s
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let kv = crate::config::parse_kv(text)?;
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::config(MODULE, format!("parameter file missing key `{k}`")))
        };
        let float = |k: &str, s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(MODULE, format!("`{k}`: bad number {s:?}")))
        };
        let list =
            |k: &str| -> Result<Vec<f64>> { get(k)?.split(',').map(|s| float(k, s)).collect() };
        let c: usize = get("c")?
            .parse()
            .map_err(|_| Error::config(MODULE, "`c` must be a positive integer"))?;
        let params = AttentionParams {
            w_q: list("w_q")?,
            w_k: list("w_k")?,
            w_v: float("w_v", get("w_v")?)?,
            gamma: float("gamma", get("gamma")?)?,
            seed: match kv.get("seed") {
                Some(s) => Some(
                    s.parse()
                        .map_err(|_| Error::config(MODULE, "`seed` must be an unsigned integer"))?,
                ),
                None => None,
            },
        };
        params.validate()?;
        if params.channels() != c {
            return Err(Error::config(
                MODULE,
                format!("`c = {c}` but weights have {} channels", params.channels()),
            ));
        }
        if let Some(k) = kv
            .keys()
            .find(|k| !["c", "gamma", "w_q", "w_k", "w_v", "seed"].contains(&k.as_str()))
        {
            return Err(Error::config(
                MODULE,
                format!("unknown parameter key `{k}`"),
            ));
        }
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(MODULE, path.display().to_string(), e))?;
        Self::from_kv_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv_string())
            .map_err(|e| Error::io(MODULE, path.display().to_string(), e))
    }
}

impl Default for AttentionParams {
    fn default() -> Self {
        AttentionParams::init(Self::DEFAULT_CHANNELS, 0).expect("default params are valid")
    }
}

/// Gradients of the loss with respect to the attention parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_v: f64,
    pub gamma: f64,
}

impl ParamGrads {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.w_q.len() * 2 + 2);
        v.extend_from_slice(&self.w_q);
        v.extend_from_slice(&self.w_k);
        v.push(self.w_v);
        v.push(self.gamma);
        v
    }
}

/// Result of aggregating one deviation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub loss: f64,
    /// `Δ'`, same layout as the input deviation.
    pub delta_prime: Vec<f64>,
    /// Row-major `N x N` softmax map.
    pub attention_map: Vec<f64>,
    pub values: Vec<f64>,
    /// `A V`, one entry per deviation element.
    pub attended: Vec<f64>,
}

/// Elementwise `|T - T̃|`.
pub fn deviation(t: &TextureMatrix, t_tilde: &TextureMatrix) -> Result<Vec<f64>> {
    if t.grid() != t_tilde.grid() {
        return Err(Error::argument(
            MODULE,
            "texture matrices were computed on different offset grids",
        ));
    }
    Ok(t.values()
        .iter()
        .zip(t_tilde.values())
        .map(|(a, b)| (a - b).abs())
        .collect())
}

pub fn attention_forward(delta: &[f64], params: &AttentionParams) -> Result<AttentionOutput> {
    params.validate()?;
    if delta.is_empty() {
        return Err(Error::argument(MODULE, "empty deviation"));
    }
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(
            MODULE,
            "deviation contains non-finite values",
        ));
    }
    let n = delta.len();
    let alpha = params.alpha();
    let mut attention_map = vec![0.0; n * n];
    for (i, row) in attention_map.chunks_exact_mut(n).enumerate() {
        let si = alpha * delta[i];
        for (r, &xj) in row.iter_mut().zip(delta) {
            *r = si * xj;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            sum += *r;
        }
        for r in row.iter_mut() {
            *r /= sum;
        }
    }
    let values: Vec<f64> = delta.iter().map(|&x| params.w_v * x).collect();
    let attended: Vec<f64> = attention_map
        .chunks_exact(n)
        .map(|row| row.iter().zip(&values).map(|(a, v)| a * v).sum())
        .collect();
    let delta_prime: Vec<f64> = attended
        .iter()
        .zip(delta)
        .map(|(av, x)| params.gamma * av + x)
        .collect();
    let loss: f64 = delta_prime.iter().sum();
    if !loss.is_finite() || attention_map.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(
            MODULE,
            "attention produced non-finite values",
        ));
    }
    Ok(AttentionOutput {
        loss,
        delta_prime,
        attention_map,
        values,
        attended,
    })
}

/// Backward pass of [`attention_forward`] for `dLoss/dΔ' = 1`.
///
/// Returns the gradient with respect to the deviation and the parameters.
pub fn attention_backward(
    delta: &[f64],
    params: &AttentionParams,
    out: &AttentionOutput,
) -> (Vec<f64>, ParamGrads) {
    let n = delta.len();
    let alpha = params.alpha();
    let gamma = params.gamma;

    let mut d_delta = vec![1.0; n];
    let mut d_values = vec![0.0; n];
    let mut d_alpha = 0.0;
    for (i, row) in out.attention_map.chunks_exact(n).enumerate() {
        let av = out.attended[i];
        for j in 0..n {
            d_values[j] += gamma * row[j];
            // softmax: dS_ij = A_ij (dA_ij - Σ_k A_ik dA_ik) with dA_ij = γ V_j
            let ds = gamma * row[j] * (out.values[j] - av);
            if ds != 0.0 {
                d_alpha += ds * delta[i] * delta[j];
                d_delta[i] += ds * alpha * delta[j];
                d_delta[j] += ds * alpha * delta[i];
            }
        }
    }
    let mut d_wv = 0.0;
    for j in 0..n {
        d_delta[j] += d_values[j] * params.w_v;
        d_wv += d_values[j] * delta[j];
    }
    let grads = ParamGrads {
        w_q: params.w_k.iter().map(|k| d_alpha * k).collect(),
        w_k: params.w_q.iter().map(|q| d_alpha * q).collect(),
        w_v: d_wv,
        gamma: out.attended.iter().sum(),
    };
    (d_delta, grads)
}

static NEXT_LOSS_ID: AtomicU64 = AtomicU64::new(1);

/// Everything a loss backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub struct LossCache {
    pub image_a: GrayImage,
    pub image_b: GrayImage,
    pub texture_a: TextureMatrix,
    pub texture_b: TextureMatrix,
    pub delta: Vec<f64>,
    pub grid: OffsetGrid,
    pub bins: BinningConfig,
    pub params: AttentionParams,
    origin: Option<(u64, u64)>,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub delta_prime: Vec<f64>,
    pub attention_map: Vec<f64>,
    pub attention: AttentionOutput,
    pub cache: LossCache,
}

impl LossOutput {
    /// `Δ'` as CSV laid out like the texture matrix.
    pub fn delta_prime_csv(&self) -> String {
        let g = &self.cache.grid;
        let header: Vec<String> = g.angles().iter().map(|a| a.degrees().to_string()).collect();
        crate::io::matrix_csv(Some(&header), g.p(), g.q(), &self.delta_prime)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub image_a: Vec<f64>,
    pub image_b: Vec<f64>,
    pub params: ParamGrads,
}

/// Texture loss between two normalized images.
pub fn texture_loss(
    img_a: &GrayImage,
    img_b: &GrayImage,
    grid: &OffsetGrid,
    bins: &BinningConfig,
    params: &AttentionParams,
) -> Result<LossOutput> {
    params.validate()?;
    let texture_a = texture_matrix(img_a, grid, bins)?;
    let texture_b = texture_matrix(img_b, grid, bins)?;
    let delta = deviation(&texture_a, &texture_b)?;
    let attention = attention_forward(&delta, params)?;
    Ok(LossOutput {
        loss: attention.loss,
        delta_prime: attention.delta_prime.clone(),
        attention_map: attention.attention_map.clone(),
        attention,
        cache: LossCache {
            image_a: img_a.clone(),
            image_b: img_b.clone(),
            texture_a,
            texture_b,
            delta,
            grid: grid.clone(),
            bins: bins.clone(),
            params: params.clone(),
            origin: None,
        },
    })
}

/// Full chain rule from the loss back to both images and the parameters.
///
/// The L1 subgradient is taken as 0 where the two texture values tie.
pub fn texture_loss_backward(out: &LossOutput) -> Result<LossGradients> {
    let c = &out.cache;
    let n = c.grid.p() * c.grid.q();
    if c.delta.len() != n || out.attention.attention_map.len() != n * n {
        return Err(Error::usage(
            MODULE,
            "loss cache is inconsistent with its offset grid",
        ));
    }
    let (d_delta, params) = attention_backward(&c.delta, &c.params, &out.attention);
    let up_a: Vec<f64> = c
        .texture_a
        .values()
        .iter()
        .zip(c.texture_b.values())
        .zip(&d_delta)
        .map(|((a, b), g)| match a.partial_cmp(b) {
            Some(std::cmp::Ordering::Greater) => *g,
            Some(std::cmp::Ordering::Less) => -*g,
            _ => 0.0,
        })
        .collect();
    let up_b: Vec<f64> = up_a.iter().map(|g| -g).collect();
    let image_a = texture_matrix_backward(&c.image_a, &c.grid, &c.bins, &up_a)?;
    let image_b = texture_matrix_backward(&c.image_b, &c.grid, &c.bins, &up_b)?;
    Ok(LossGradients {
        image_a,
        image_b,
        params,
    })
}

/// A configured loss: offset grid, binning and attention parameters.
///
/// Changing the parameters invalidates outputs from earlier forward calls;
/// passing one to [`TextureLoss::backward`] is a usage error.
#[derive(Debug)]
pub struct TextureLoss {
    grid: OffsetGrid,
    bins: BinningConfig,
    params: AttentionParams,
    id: u64,
    generation: u64,
}

impl TextureLoss {
    pub fn new(grid: OffsetGrid, bins: BinningConfig, params: AttentionParams) -> Result<Self> {
        params.validate()?;
        Ok(TextureLoss {
            grid,
            bins,
            params,
            id: NEXT_LOSS_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        })
    }

    /// Builds the loss from a run-config file (see [`crate::config`]).
    pub fn from_config_path(path: &Path) -> Result<Self> {
        let cfg = crate::config::RunConfig::load(path)?;
        TextureLoss::new(cfg.grid()?, cfg.binning()?, cfg.attention_params()?)
    }

    pub fn grid(&self) -> &OffsetGrid {
        &self.grid
    }

    pub fn bins(&self) -> &BinningConfig {
        &self.bins
    }

    pub fn params(&self) -> &AttentionParams {
        &self.params
    }

    pub fn set_params(&mut self, params: AttentionParams) -> Result<()> {
        params.validate()?;
        if params.channels() != self.params.channels() {
            return Err(Error::argument(
                MODULE,
                format!(
                    "expected {} channels, got {}",
                    self.params.channels(),
                    params.channels()
                ),
            ));
        }
        self.params = params;
        self.generation += 1;
        Ok(())
    }

    pub fn forward(&self, img_a: &GrayImage, img_b: &GrayImage) -> Result<LossOutput> {
        if (img_a.width(), img_a.height()) != (img_b.width(), img_b.height()) {
            return Err(Error::argument(
                MODULE,
                format!(
                    "image shapes differ: {}x{} vs {}x{}",
                    img_a.width(),
                    img_a.height(),
                    img_b.width(),
                    img_b.height()
                ),
            ));
        }
        let mut out = texture_loss(img_a, img_b, &self.grid, &self.bins, &self.params)?;
        out.cache.origin = Some((self.id, self.generation));
        Ok(out)
    }

    pub fn backward(&self, out: &LossOutput) -> Result<LossGradients> {
        match out.cache.origin {
            Some((id, gen)) if id == self.id && gen == self.generation => {
                texture_loss_backward(out)
            }
            Some((id, _)) if id == self.id => Err(Error::usage(
                MODULE,
                "stale cache: parameters changed since the forward pass",
            )),
            _ => Err(Error::usage(
                MODULE,
                "cache was not produced by this loss instance",
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Domain;
    use crate::softglcm::Angle;

    fn tm(values: Vec<f64>) -> TextureMatrix {
        let grid = OffsetGrid::new(vec![1], vec![Angle::Deg0; 1]).unwrap();
        TextureMatrix::new(values, grid).unwrap()
    }

    #[test]
    fn deviation_examples() {
        assert_eq!(
            deviation(&tm(vec![2.0]), &tm(vec![5.0])).unwrap(),
            vec![3.0]
        );
        assert_eq!(
            deviation(&tm(vec![5.0]), &tm(vec![5.0])).unwrap(),
            vec![0.0]
        );
        assert_eq!(
            deviation(&tm(vec![5.0]), &tm(vec![2.0])).unwrap(),
            vec![3.0]
        );
        let other = TextureMatrix::new(
            vec![1.0],
            OffsetGrid::new(vec![2], vec![Angle::Deg0]).unwrap(),
        )
        .unwrap();
        assert!(deviation(&tm(vec![1.0]), &other).is_err());
    }

    #[test]
    fn gamma_zero_is_plain_sum() {
        let p = AttentionParams::new(vec![0.3, -0.2], vec![0.1, 0.5], 0.7, 0.0).unwrap();
        let d = [0.5, 1.5, 0.25, 3.0];
        let out = attention_forward(&d, &p).unwrap();
        assert_eq!(out.delta_prime, d.to_vec());
        assert_eq!(out.loss, 5.25);
    }

    #[test]
    fn zero_delta_zero_loss() {
        let p = AttentionParams::new(vec![0.3], vec![0.1], 0.7, 2.0).unwrap();
        let out = attention_forward(&[0.0; 9], &p).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out
            .attention_map
            .iter()
            .all(|&a| (a - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn uniform_attention_on_constant_delta() {
        let (w_v, gamma) = (0.35, 1.7);
        let p = AttentionParams::new(vec![0.3, 0.9], vec![-0.4, 0.2], w_v, gamma).unwrap();
        let out = attention_forward(&[1.0; 4], &p).unwrap();
        assert!(out.attention_map.iter().all(|&a| a == 0.25));
        assert!((out.loss - (4.0 + gamma * 4.0 * w_v)).abs() < 1e-12);
    }

    #[test]
    fn rows_sum_to_one_with_large_scores() {
        let p = AttentionParams::new(vec![30.0], vec![40.0], 1.0, 1.0).unwrap();
        let d = [0.0, 1.0, 5.0, 20.0];
        let out = attention_forward(&d, &p).unwrap();
        for row in out.attention_map.chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_delta_rejected() {
        let p = AttentionParams::default();
        let e = attention_forward(&[f64::NAN], &p).unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::Numeric);
    }

    #[test]
    fn gamma_gradient_at_zero() {
        let p = AttentionParams::new(vec![0.5], vec![0.8], 0.3, 0.0).unwrap();
        let d = [0.2, 0.9, 1.4];
        let out = attention_forward(&d, &p).unwrap();
        let (dd, g) = attention_backward(&d, &p, &out);
        assert_eq!(g.gamma, out.attended.iter().sum::<f64>());
        assert_eq!(g.w_q, vec![0.0]);
        assert_eq!(dd, vec![1.0; 3]);
    }

    #[test]
    fn params_init_and_kv_roundtrip() {
        let p = AttentionParams::init(4, 42).unwrap();
        assert_eq!(p.channels(), 4);
        assert_eq!(p.gamma, 0.0);
        assert!(p.to_flat().iter().all(|v| v.abs() <= 0.1));
        assert_eq!(p, AttentionParams::init(4, 42).unwrap());
        assert_ne!(p, AttentionParams::init(4, 43).unwrap());
        let back = AttentionParams::from_kv_str(&p.to_kv_string()).unwrap();
        assert_eq!(back, p);
        assert!(
            AttentionParams::from_kv_str("c = 2\ngamma = 0\nw_q = 1\nw_k = 1\nw_v = 1\n").is_err()
        );
        assert!(AttentionParams::from_kv_str(
            "c = 1\ngamma = 0\nw_q = 1\nw_k = 1\nw_v = 1\nbogus = 3\n"
        )
        .is_err());
        assert!(AttentionParams::init(0, 1).is_err());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let img = GrayImage::filled(8, 8, 0.0, Domain::Normalized).unwrap();
        let mut loss = TextureLoss::new(
            OffsetGrid::default(),
            BinningConfig::default(),
            AttentionParams::default(),
        )
        .unwrap();
        let out = loss.forward(&img, &img).unwrap();
        assert!(loss.backward(&out).is_ok());
        let mut p = loss.params().clone();
        p.gamma = 0.5;
        loss.set_params(p).unwrap();
        let e = loss.backward(&out).unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::Usage);
        let other = TextureLoss::new(
            OffsetGrid::default(),
            BinningConfig::default(),
            AttentionParams::default(),
        )
        .unwrap();
        assert!(other.backward(&loss.forward(&img, &img).unwrap()).is_err());
        let small = GrayImage::filled(9, 8, 0.0, Domain::Normalized).unwrap();
        assert!(loss.forward(&img, &small).is_err());
    }
}
