#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texloss::{BinningConfig, Domain, GrayImage};

/// Vertical stripes of period 2: `lo` on even columns, `hi` on odd ones.
pub fn stripes(n: usize, lo: f64, hi: f64) -> GrayImage {
    let data = (0..n * n)
        .map(|k| if (k % n) % 2 == 0 { lo } else { hi })
        .collect();
    GrayImage::new(n, n, data, Domain::Normalized).unwrap()
}

pub fn constant(n: usize, value: f64) -> GrayImage {
    GrayImage::filled(n, n, value, Domain::Normalized).unwrap()
}

pub fn random_image(seed: u64, w: usize, h: usize) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h).map(|_| rng.random_range(-1.0..=1.0)).collect();
    GrayImage::new(w, h, data, Domain::Normalized).unwrap()
}

/// Random bin-index image together with the image holding those bins'
/// center values.
pub fn bin_center_image(seed: u64, n: usize, bins: &BinningConfig) -> (Vec<usize>, GrayImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..n * n)
        .map(|_| rng.random_range(0..bins.n_bins()))
        .collect();
    let data = idx.iter().map(|&k| bins.centers()[k]).collect();
    (idx, GrayImage::new(n, n, data, Domain::Normalized).unwrap())
}

/// Nearly hard binning: sigma a hundredth of the bin spacing.
pub fn hard_bins(n: usize) -> BinningConfig {
    let b = BinningConfig::uniform(n).unwrap();
    let s = b.min_spacing() / 100.0;
    b.with_sigma(s).unwrap()
}
