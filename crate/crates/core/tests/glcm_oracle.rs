mod common;

use std::time::Instant;

use common::{bin_center_image, hard_bins};
use texloss::{soft_glcm_forward, Angle, Offset, OffsetGrid};

/// Displacements (column step, row step) written out by hand for the
/// default grid; rows grow downwards.
fn displacement(d: usize, angle: Angle) -> (isize, isize) {
    let diag = match d {
        1 => 1,
        3 => 2,
        5 => 4,
        7 => 5,
        _ => unreachable!(),
    };
    let d = d as isize;
    match angle {
        Angle::Deg0 => (d, 0),
        Angle::Deg45 => (diag, diag),
        Angle::Deg90 => (0, d),
        Angle::Deg135 => (-diag, diag),
    }
}

/// Integer co-occurrence counts over every in-bounds directed pair,
/// normalized by the number of pairs.
fn brute_force(idx: &[usize], n: usize, bins: usize, du: isize, dv: isize) -> Vec<f64> {
    let mut counts = vec![0u64; bins * bins];
    let mut pairs = 0u64;
    for v in 0..n as isize {
        for u in 0..n as isize {
            let (u2, v2) = (u + du, v + dv);
            if u2 < 0 || v2 < 0 || u2 >= n as isize || v2 >= n as isize {
                continue;
            }
            let i = idx[(v * n as isize + u) as usize];
            let j = idx[(v2 * n as isize + u2) as usize];
            counts[i * bins + j] += 1;
            pairs += 1;
        }
    }
    counts
        .into_iter()
        .map(|c| c as f64 / pairs as f64)
        .collect()
}

#[test]
fn soft_glcm_matches_integer_oracle_on_all_default_offsets() {
    let start = Instant::now();
    for (seed, n_bins) in [(1u64, 32usize), (2, 8), (3, 2), (4, 5)] {
        let bins = hard_bins(n_bins);
        let (idx, img) = bin_center_image(seed, 16, &bins);
        for off in OffsetGrid::default().offsets() {
            let (du, dv) = displacement(off.distance(), off.angle());
            assert_eq!(off.displacement(), (du, dv), "{off}");
            let expected = brute_force(&idx, 16, n_bins, du, dv);
            let g = soft_glcm_forward(&img, off, &bins).unwrap();
            for (k, (a, e)) in g.matrix().iter().zip(&expected).enumerate() {
                assert!(
                    (a - e).abs() <= 1e-6,
                    "bins={n_bins} {off} entry {k}: {a} vs {e}"
                );
            }
        }
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn valid_pair_count_matches_oracle() {
    let bins = hard_bins(4);
    let (_, img) = bin_center_image(9, 16, &bins);
    for off in OffsetGrid::default().offsets() {
        let (du, dv) = displacement(off.distance(), off.angle());
        let expected = (16 - du.unsigned_abs()) * (16 - dv.unsigned_abs());
        assert_eq!(
            soft_glcm_forward(&img, off, &bins).unwrap().valid_pairs(),
            expected
        );
    }
}

#[test]
fn hand_enumerated_two_by_two() {
    let bins = texloss::BinningConfig::new(vec![-0.5, 0.5], 0.01).unwrap();
    let img = texloss::GrayImage::from_rows(
        &[vec![-0.5, 0.5], vec![-0.5, 0.5]],
        texloss::Domain::Normalized,
    )
    .unwrap();
    let g = soft_glcm_forward(&img, Offset::new(1, Angle::Deg0).unwrap(), &bins).unwrap();
    assert_eq!(g.matrix(), &[0.0, 1.0, 0.0, 0.0]);
}
