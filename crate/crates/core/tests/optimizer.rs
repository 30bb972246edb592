mod common;

use std::time::Instant;

use common::{constant, stripes};
use texloss::texopt::{texture_match_optimize, OptimizeConfig, Trajectory};
use texloss::{AttentionParams, BinningConfig, OffsetGrid};

fn run(cfg: &OptimizeConfig) -> Trajectory {
    texture_match_optimize(
        &constant(16, 0.0),
        &stripes(16, -0.5, 0.5),
        &OffsetGrid::default(),
        &BinningConfig::default(),
        &AttentionParams::default(),
        cfg,
    )
    .unwrap()
}

fn monotone(losses: &[f64]) -> bool {
    losses.windows(2).all(|w| w[1] <= w[0])
}

#[test]
fn constant_source_learns_stripe_texture() {
    let start = Instant::now();
    let traj = run(&OptimizeConfig::default());
    let elapsed = start.elapsed();
    assert_eq!(traj.losses.len(), 501);
    assert!(traj.losses.iter().all(|l| l.is_finite()));
    assert!(monotone(&traj.losses));
    let ratio = traj.final_loss() / traj.initial_loss();
    assert!(ratio <= 0.1, "final/initial = {ratio}");
    assert!(traj
        .final_image
        .data()
        .iter()
        .all(|x| (-1.0..=1.0).contains(x)));
    assert!(elapsed.as_secs_f64() < 30.0, "{elapsed:?}");
}

#[test]
fn learned_attention_is_also_monotone() {
    let cfg = OptimizeConfig {
        iterations: 60,
        learn_attention: true,
        ..Default::default()
    };
    let traj = run(&cfg);
    assert!(monotone(&traj.losses));
    assert!(traj.final_loss() < traj.initial_loss());
    assert_ne!(traj.final_params, AttentionParams::default());
}

#[test]
fn same_seed_same_trajectory() {
    let cfg = OptimizeConfig {
        iterations: 25,
        seed: 9,
        ..Default::default()
    };
    let (a, b) = (run(&cfg), run(&cfg));
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.final_image, b.final_image);
}

#[test]
fn csv_has_one_row_per_recorded_loss() {
    let traj = run(&OptimizeConfig {
        iterations: 3,
        ..Default::default()
    });
    let csv = traj.to_csv();
    assert_eq!(csv.lines().next(), Some("iteration,loss"));
    assert_eq!(csv.lines().count(), 5);
}
