mod common;

use common::{hard_bins, random_image, stripes};
use proptest::prelude::*;
use texloss::{
    contrast_descriptor, soft_glcm_forward, texture_loss, texture_matrix, Angle, AttentionParams,
    BinningConfig, Domain, GrayImage, Offset, OffsetGrid, SoftGlcm,
};

fn image_strategy() -> impl Strategy<Value = GrayImage> {
    (2usize..=16, 2usize..=16).prop_flat_map(|(w, h)| {
        prop::collection::vec(-1.0f64..=1.0, w * h)
            .prop_map(move |data| GrayImage::new(w, h, data, Domain::Normalized).unwrap())
    })
}

fn offset_strategy() -> impl Strategy<Value = Offset> {
    (
        prop::sample::select(vec![1usize, 3, 5, 7]),
        prop::sample::select(vec![0u32, 45, 90, 135]),
    )
        .prop_map(|(d, a)| Offset::new(d, Angle::from_degrees(a).unwrap()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn soft_glcm_sums_to_one(img in image_strategy(), off in offset_strategy(), n in 2usize..=32) {
        let bins = BinningConfig::uniform(n).unwrap();
        let Ok(g) = soft_glcm_forward(&img, off, &bins) else {
            // offsets larger than the image have no pairs
            prop_assume!(false);
            unreachable!()
        };
        let sum: f64 = g.matrix().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-6, "sum {}", sum);
        prop_assert!(g.matrix().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn transposed_image_swaps_axes(seed in 0u64..1000, d in prop::sample::select(vec![1usize, 3, 5, 7])) {
        let img = random_image(seed, 12, 12);
        let t = img.transpose();
        let bins = BinningConfig::uniform(8).unwrap();
        let g = |im: &GrayImage, a| soft_glcm_forward(im, Offset::new(d, a).unwrap(), &bins).unwrap();
        let close = |x: &SoftGlcm, y: &[f64]| x.matrix().iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-12);
        prop_assert!(close(&g(&t, Angle::Deg90), g(&img, Angle::Deg0).matrix()));
        prop_assert!(close(&g(&t, Angle::Deg45), g(&img, Angle::Deg45).matrix()));
        // (-r, r) becomes (r, -r): the reversed direction, hence the transpose
        let g135 = g(&img, Angle::Deg135);
        let n = bins.n_bins();
        let transposed: Vec<f64> = (0..n * n).map(|k| g135.get(k % n, k / n)).collect();
        prop_assert!(close(&g(&t, Angle::Deg135), &transposed));
    }

    #[test]
    fn rotation_permutes_angle_columns(seed in 0u64..1000) {
        let img = random_image(seed, 16, 16);
        let bins = BinningConfig::uniform(16).unwrap();
        let grid = OffsetGrid::default();
        let t = texture_matrix(&img, &grid, &bins).unwrap();
        let r = texture_matrix(&img.rotate90(), &grid, &bins).unwrap();
        // 0 <-> 90 and 45 <-> 135
        let perm = [2usize, 3, 0, 1];
        for i in 0..grid.p() {
            for j in 0..grid.q() {
                prop_assert!((r.get(i, perm[j]) - t.get(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn loss_is_symmetric_in_its_arguments(sa in 0u64..1000, sb in 0u64..1000) {
        let (a, b) = (random_image(sa, 8, 8), random_image(sb + 1000, 8, 8));
        let grid = OffsetGrid::default();
        let bins = BinningConfig::default();
        let params = AttentionParams::new(vec![0.3, -0.2], vec![0.1, 0.4], 0.7, 0.25).unwrap();
        let ab = texture_loss(&a, &b, &grid, &bins, &params).unwrap().loss;
        let ba = texture_loss(&b, &a, &grid, &bins, &params).unwrap().loss;
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn contrast_is_linear_in_the_matrix(alpha in 0.0f64..=1.0, s1 in 0u64..500, s2 in 0u64..500) {
        let bins = BinningConfig::uniform(8).unwrap();
        let off = Offset::new(1, Angle::Deg0).unwrap();
        let g1 = soft_glcm_forward(&random_image(s1, 6, 6), off, &bins).unwrap();
        let g2 = soft_glcm_forward(&random_image(s2 + 500, 6, 6), off, &bins).unwrap();
        let mix: Vec<f64> = g1.matrix().iter().zip(g2.matrix()).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let gm = SoftGlcm::from_matrix(8, mix, off).unwrap();
        let lhs = contrast_descriptor(&gm);
        let rhs = alpha * contrast_descriptor(&g1) + (1.0 - alpha) * contrast_descriptor(&g2);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
    }
}

#[test]
fn wider_stripes_have_larger_crossing_contrast() {
    let bins = hard_bins(16);
    let grid = OffsetGrid::default();
    let c = bins.centers().to_vec();
    // symmetric pairs of bin centers moving outwards
    let mut previous: Option<Vec<f64>> = None;
    for k in 0..8 {
        let img = stripes(16, c[7 - k], c[8 + k]);
        let t = texture_matrix(&img, &grid, &bins).unwrap();
        let crossing: Vec<f64> = (0..grid.p()).map(|i| t.get(i, 0)).collect();
        if let Some(prev) = &previous {
            for (a, b) in crossing.iter().zip(prev) {
                assert!(a >= b, "amplitude step {k}: {a} < {b}");
            }
        }
        previous = Some(crossing);
    }
}

#[test]
fn stripe_texture_by_hand() {
    let bins = BinningConfig::new(vec![-0.5, 0.5], 0.01).unwrap();
    let t = texture_matrix(&stripes(16, -0.5, 0.5), &OffsetGrid::default(), &bins).unwrap();
    // rows d = 1, 3, 5, 7; columns 0, 45, 90, 135 degrees. Odd column steps
    // cross a stripe; the 45 degree steps for d = 3, 5 are (2, 2), (4, 4).
    let expected = [
        1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0,
    ];
    for (k, (a, e)) in t.values().iter().zip(expected).enumerate() {
        assert!((a - e).abs() < 1e-12, "entry {k}: {a} vs {e}");
    }
}
