use statrs::distribution::{ContinuousCDF, StudentsT};
use texloss::evalstats::{student_t_two_sided, welch_test};

/// `(a, b, t, dof, p)` frozen from `scipy.stats.ttest_ind(a, b,
/// equal_var=False)` (scipy 1.15.3); dof from the Welch–Satterthwaite formula
/// evaluated in numpy.
#[rustfmt::skip]
const REFERENCE: [(&[f64], &[f64], f64, f64, f64); 10] = [
    (&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0], -1.0, 8.0, 0.34659350708733416),
    (&[1.0, 1.5, 2.0, 2.5, 3.0, 3.5], &[4.0, 4.1, 4.3, 3.9], -4.6637989244995595, 5.489626556016598, 0.00434580738348688),
    (&[10.2, 9.8, 10.1, 10.4, 9.9], &[10.0, 10.3, 9.7, 10.2, 10.1, 9.9, 10.05], 0.3400439502477654, 7.642095359274153, 0.7429802113349446),
    (&[0.1, 0.2], &[0.3, 0.5, 0.45], -3.411211461689766, 2.924471299093655, 0.04377411729552231),
    (&[5.0, 7.0, 9.0, 11.0, 13.0, 15.0, 17.0], &[6.0, 6.5, 7.0, 7.5], 2.55319348904097, 6.458196422051843, 0.040613540716185594),
    (&[-3.2, -1.1, 0.4, 2.2, 1.7, -0.6], &[-0.2, 0.1, 0.05, -0.1, 0.3], -0.1597689904176138, 5.112856888481944, 0.8791836603497455),
    (&[100.0, 102.0, 98.0, 105.0, 99.0], &[80.0, 120.0, 95.0, 110.0, 85.0, 105.0], 0.2564390834743822, 5.391881765121242, 0.8071118200132539),
    (&[0.001, 0.002, 0.0015, 0.003], &[0.0025, 0.0035, 0.004, 0.002, 0.003], -2.029444275607638, 6.302353651176826, 0.08646401344732682),
    (&[2.0, 2.0, 2.1, 1.9], &[2.0, 2.05, 1.95, 2.0, 2.02], -0.09098745407415341, 3.958394830157291, 0.931920564831556),
    (&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0], &[3.0, 4.0, 3.0, 5.0, 4.0, 4.0], -8.970137005121789, 8.417880697548117, 1.3661503621543408e-05),
];

#[test]
fn matches_frozen_reference_values() {
    for (k, (a, b, t, dof, p)) in REFERENCE.iter().enumerate() {
        let r = welch_test(a, b).unwrap();
        assert!(
            (r.t_stat - t).abs() <= 1e-6,
            "pair {k}: t {} vs {t}",
            r.t_stat
        );
        assert!(
            (r.dof - dof).abs() <= 1e-6,
            "pair {k}: dof {} vs {dof}",
            r.dof
        );
        assert!(
            (r.p_value - p).abs() <= 1e-6,
            "pair {k}: p {} vs {p}",
            r.p_value
        );
    }
}

#[test]
fn p_values_agree_with_an_independent_t_distribution() {
    for (t, nu) in [
        (0.0, 3.0),
        (0.5, 1.0),
        (1.3, 2.5),
        (-2.2, 7.1),
        (4.0, 30.0),
        (10.0, 4.2),
        (0.01, 200.0),
    ] {
        let dist = StudentsT::new(0.0, 1.0, nu).unwrap();
        let expected = 2.0 * (1.0 - dist.cdf(f64::abs(t)));
        let got = student_t_two_sided(t, nu);
        assert!(
            (got - expected).abs() <= 1e-10,
            "t={t} nu={nu}: {got} vs {expected}"
        );
    }
}

#[test]
fn identical_samples_give_p_one() {
    let a = [3.1, 2.7, 4.4, 3.9, 3.0];
    let r = welch_test(&a, &a).unwrap();
    assert_eq!(r.t_stat, 0.0);
    assert_eq!(r.p_value, 1.0);
}

#[test]
fn argument_order_does_not_change_p() {
    for (a, b, ..) in REFERENCE {
        let ab = welch_test(a, b).unwrap();
        let ba = welch_test(b, a).unwrap();
        assert_eq!(ab.p_value, ba.p_value);
        assert_eq!(ab.t_stat, -ba.t_stat);
    }
}

#[test]
fn p_is_invariant_under_common_affine_maps() {
    for (a, b, ..) in REFERENCE {
        let base = welch_test(a, b).unwrap().p_value;
        for (c, k) in [(2.5, -1.0), (-0.3, 4.0), (1e3, 7.0)] {
            let map = |v: &[f64]| v.iter().map(|x| c * x + k).collect::<Vec<_>>();
            let p = welch_test(&map(a), &map(b)).unwrap().p_value;
            assert!((p - base).abs() <= 1e-10, "c={c} k={k}: {p} vs {base}");
        }
    }
}

#[test]
fn degenerate_variances_follow_convention() {
    let same = welch_test(&[2.0, 2.0, 2.0], &[2.0, 2.0]).unwrap();
    assert_eq!(same.p_value, 1.0);
    let apart = welch_test(&[2.0, 2.0, 2.0], &[3.0, 3.0]).unwrap();
    assert_eq!(apart.p_value, 0.0);
    assert!(welch_test(&[1.0], &[1.0, 2.0]).is_err());
}
