mod common;

use std::time::Instant;

use texloss::gradcheck::{check_block, grad_check, GradInstance, GradOp};
use texloss::{
    soft_glcm_backward, soft_glcm_forward, texture_loss, texture_loss_backward, Angle,
    AttentionParams,
};

const STEP: f64 = 1e-4;
const TOLERANCE: f64 = 1e-4;
const INSTANCES: u64 = 20;

fn suite(op: GradOp) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let inst = GradInstance::random(seed, 8).unwrap();
        let report = grad_check(op, &inst, STEP, TOLERANCE);
        assert!(report.passed(), "seed {seed}\n{}", report.render());
        worst = worst.max(report.max_rel_error());
    }
    worst
}

#[test]
fn soft_glcm_backward_matches_finite_differences() {
    let worst = suite(GradOp::SoftGlcm);
    println!("soft_glcm worst relative error {worst:e}");
}

#[test]
fn texture_matrix_backward_matches_finite_differences() {
    let worst = suite(GradOp::TextureMatrix);
    println!("texture_matrix worst relative error {worst:e}");
}

#[test]
fn texture_loss_backward_matches_finite_differences() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let inst = GradInstance::random(seed, 8).unwrap();
        let report = grad_check(GradOp::TextureLoss, &inst, STEP, TOLERANCE);
        assert!(report.passed(), "seed {seed}\n{}", report.render());
        for block in ["image_a", "image_b", "w_q", "w_k", "w_v", "gamma"] {
            let b = report
                .block(block)
                .unwrap_or_else(|| panic!("missing block {block}"));
            assert!(b.checked > 0, "block {block} checked nothing");
        }
        worst = worst.max(report.max_rel_error());
    }
    println!(
        "texture_loss worst relative error {worst:e} in {:?}",
        start.elapsed()
    );
}

#[test]
fn every_angle_passes_for_the_glcm() {
    for angle in [Angle::Deg0, Angle::Deg45, Angle::Deg90, Angle::Deg135] {
        let inst = GradInstance::random(77, 8)
            .unwrap()
            .with_offset(3, angle)
            .unwrap();
        assert!(grad_check(GradOp::SoftGlcm, &inst, STEP, TOLERANCE).passed());
    }
}

/// A plain two-point central difference written independently of the
/// checker, with a step small enough for its O(h²) error.
#[test]
fn single_pixel_spot_check() {
    const H: f64 = 1e-6;
    let inst = GradInstance::random(5, 8).unwrap();
    let analytic =
        soft_glcm_backward(&inst.image_a, inst.offset, &inst.bins, &inst.upstream_glcm).unwrap();
    let objective = |data: Vec<f64>| {
        let img = inst.image_a.with_data(data).unwrap();
        let g = soft_glcm_forward(&img, inst.offset, &inst.bins).unwrap();
        g.matrix()
            .iter()
            .zip(&inst.upstream_glcm)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    for pixel in [0, 9, 27, 63] {
        let mut plus = inst.image_a.data().to_vec();
        let mut minus = plus.clone();
        plus[pixel] += H;
        minus[pixel] -= H;
        let numeric = (objective(plus) - objective(minus)) / (2.0 * H);
        let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(
            (numeric - analytic[pixel]).abs() <= 1e-4 * analytic[pixel].abs().max(1e-6 * scale)
        );
    }
}

#[test]
fn gamma_gradient_is_sum_of_attended_values() {
    let a = common::random_image(1, 8, 8);
    let b = common::random_image(2, 8, 8);
    let params = AttentionParams::new(
        vec![0.2, 0.1, -0.3, 0.4],
        vec![0.5, -0.1, 0.2, 0.3],
        0.8,
        0.0,
    )
    .unwrap();
    let out = texture_loss(&a, &b, &Default::default(), &Default::default(), &params).unwrap();
    let grads = texture_loss_backward(&out).unwrap();
    let expected: f64 = out.attention.attended.iter().sum();
    assert!((grads.params.gamma - expected).abs() <= 1e-12 * expected.abs().max(1.0));
}

#[test]
fn identical_images_have_zero_gradient() {
    let a = common::random_image(3, 8, 8);
    let params = AttentionParams::new(vec![0.2, 0.1], vec![0.5, -0.1], 0.8, 0.6).unwrap();
    let out = texture_loss(&a, &a, &Default::default(), &Default::default(), &params).unwrap();
    let grads = texture_loss_backward(&out).unwrap();
    assert!(grads
        .image_a
        .iter()
        .chain(&grads.image_b)
        .all(|&g| g == 0.0));
}

/// With |T_a - T_b| in the hundreds the default-scale weights saturate the
/// softmax and the weight gradients vanish. Small weights keep the scores
/// of order one so every parameter block is checked on its own scale.
#[test]
fn attention_weight_gradients_in_the_unsaturated_regime() {
    for seed in 0..5 {
        let inst = GradInstance::random(seed, 8).unwrap();
        let (a, b) = (&inst.image_a, &inst.image_b);
        let base = AttentionParams::new(
            vec![0.6, -0.4, 0.2, 0.5],
            vec![0.4, 0.2, -0.6, 0.3],
            0.7,
            0.4,
        )
        .unwrap();
        let probe = texture_loss(a, b, &inst.grid, &inst.bins, &base).unwrap();
        let x_max = probe.cache.delta.iter().fold(0.0f64, |m, x| m.max(*x));
        // scale both projections so the largest score is about one
        let s = (1.0 / (base.alpha().abs() * x_max * x_max)).sqrt();
        let scaled = |w: &[f64]| w.iter().map(|v| v * s).collect::<Vec<_>>();
        let params =
            AttentionParams::new(scaled(&base.w_q), scaled(&base.w_k), base.w_v, base.gamma)
                .unwrap();
        let out = texture_loss(a, b, &inst.grid, &inst.bins, &params).unwrap();
        let top = out
            .cache
            .delta
            .iter()
            .map(|x| (params.alpha() * x * x).abs())
            .fold(0.0f64, f64::max);
        assert!((top - 1.0).abs() < 1e-9);
        let grads = texture_loss_backward(&out).unwrap();
        let loss_with = |p: AttentionParams| {
            texture_loss(a, b, &inst.grid, &inst.bins, &p)
                .ok()
                .map(|o| o.loss)
        };
        let rq = check_block(
            "w_q",
            &params.w_q,
            &grads.params.w_q,
            |x| {
                loss_with(AttentionParams {
                    w_q: x.to_vec(),
                    ..params.clone()
                })
            },
            1e-6,
            TOLERANCE,
        );
        let rk = check_block(
            "w_k",
            &params.w_k,
            &grads.params.w_k,
            |x| {
                loss_with(AttentionParams {
                    w_k: x.to_vec(),
                    ..params.clone()
                })
            },
            1e-6,
            TOLERANCE,
        );
        assert!(rq.passed && rk.passed, "seed {seed}: {rq:?} {rk:?}");
    }
}
