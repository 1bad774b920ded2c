use lure::controller::{certify_ues, closed_loop, dare_residual, synthesize_feedback, FeedbackGain, UesCertificate};
use lure::detector::{classify_mode, in_normal_set, statistic, suspect_threshold_bound, DetectorConfig, Mode};
use lure::estimator::EskfState;
use lure::exposure::{
    compensability_upper_bound, epsilon_min, exposure_lower_bound, generate_shakes, ExposureConfig, FEAS_TOL, KKT_TOL,
};
use lure::lin_model::{build_uav_model, sample_process_noise, spectral_norm, step_dynamics, SystemModel};
use lure::{Matrix, Vector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec_of(n: usize, lim: f64) -> impl Strategy<Value = Vector> {
    proptest::collection::vec(-lim..lim, n).prop_map(Vector::from_vec)
}

fn uav_filter(rn: f64) -> EskfState {
    let h = Matrix::identity(3, 6);
    EskfState::new(
        Vector::zeros(6),
        Matrix::identity(6, 6) * 1e-3,
        Matrix::identity(6, 6) * 1e-4,
        Matrix::identity(3, 3) * rn,
        h,
    )
    .unwrap()
}

/// Stable 2×2 closed loops with spectral radius below 0.95.
fn stable_2x2() -> impl Strategy<Value = Matrix> {
    (0.0..0.95f64, 0.0..0.95f64, -2.0..2.0f64, -1.0..1.0f64).prop_map(|(l1, l2, off, rot)| {
        let t = Matrix::from_row_slice(2, 2, &[l1, off, 0.0, l2]);
        let (c, s) = (rot.cos(), rot.sin());
        let r = Matrix::from_row_slice(2, 2, &[c, -s, s, c]);
        &r * t * r.transpose()
    })
}

#[derive(Debug)]
struct BoundTuple {
    c: f64,
    rho: f64,
    k_exp: usize,
    t_bar: f64,
    w_bar: f64,
    b_norm: f64,
}

fn bound_tuple() -> impl Strategy<Value = BoundTuple> {
    (1.0..10.0f64, 0.05..0.98f64, 1usize..50, 1e-3..1.0f64, 0.0..0.5f64, 0.05..5.0f64)
        .prop_map(|(c, rho, k_exp, t_bar, w_bar, b_norm)| BoundTuple { c, rho, k_exp, t_bar, w_bar, b_norm })
}

proptest! {
    #[test]
    fn dynamics_are_linear(
        x1 in vec_of(6, 10.0), x2 in vec_of(6, 10.0),
        u1 in vec_of(3, 1.0), u2 in vec_of(3, 1.0),
        a in -3.0..3.0f64, b in -3.0..3.0f64,
    ) {
        let m = build_uav_model(0.5).unwrap();
        let z = Vector::zeros(6);
        let lhs = step_dynamics(&m, &(&x1 * a + &x2 * b), &(&u1 * a + &u2 * b), &z).unwrap();
        let rhs = step_dynamics(&m, &x1, &u1, &z).unwrap() * a + step_dynamics(&m, &x2, &u2, &z).unwrap() * b;
        prop_assert!((&lhs - &rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
    }

    #[test]
    fn certificate_is_sound(a_cl in stable_2x2(), margin in 0.01..0.5f64) {
        let cert = certify_ues(&a_cl, 200, margin).unwrap();
        prop_assert!(cert.holds_for(&a_cl, 200));
        let mut p = Matrix::identity(2, 2);
        for k in 0..=200 {
            prop_assert!(spectral_norm(&p) <= cert.c * cert.rho.powi(k) * (1.0 + 1e-9) + 1e-15);
            p = &a_cl * p;
        }
    }

    #[test]
    fn closed_loop_contracts(e0 in vec_of(6, 5.0)) {
        let m = build_uav_model(0.5).unwrap();
        let gain = synthesize_feedback(&m, &Matrix::identity(6, 6), &(Matrix::identity(3, 3) * 0.1)).unwrap();
        let a_cl = closed_loop(&m, &gain).unwrap();
        let cert = certify_ues(&a_cl, 50, 0.05).unwrap();
        let mut e = e0.clone();
        for _ in 0..50 {
            e = &a_cl * e;
        }
        prop_assert!(e.norm() <= cert.c * cert.rho.powi(50) * e0.norm() + 1e-14);
    }

    #[test]
    fn normal_set_matches_statistic(r in vec_of(6, 0.1), t in proptest::collection::vec(1e-3..0.1f64, 6), pick in 0usize..6) {
        let det = DetectorConfig::new(Vector::from_vec(t), 0.2).unwrap();
        prop_assert_eq!(in_normal_set(&r, &det).unwrap(), statistic(&r, &det).unwrap() <= 1.0);
        // Boundary-exact residual: one component sits on its threshold.
        let mut edge = r.component_div(&det.t).map(|v| v.clamp(-1.0, 1.0)).component_mul(&det.t);
        edge[pick] = det.t[pick];
        prop_assert!(in_normal_set(&edge, &det).unwrap());
        prop_assert_eq!(statistic(&edge, &det).unwrap(), 1.0);
    }

    #[test]
    fn statistic_scales(r in vec_of(6, 0.1), alpha in 0.0..100.0f64) {
        let det = DetectorConfig::new(Vector::from_element(6, 0.05), 0.2).unwrap();
        let q = statistic(&r, &det).unwrap();
        let qa = statistic(&(&r * alpha), &det).unwrap();
        prop_assert!((qa - alpha * q).abs() <= 1e-12 * (alpha * q).max(1.0));
    }

    #[test]
    fn modes_partition_and_are_monotone(q1 in 0.0..5.0f64, q2 in 0.0..5.0f64, eta in 0.01..0.99f64) {
        let det = DetectorConfig::new(Vector::from_element(2, 0.05), eta).unwrap();
        let rank = |m: Mode| match m { Mode::Normal => 0, Mode::Suspect => 1, Mode::Attacked => 2 };
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        prop_assert!(rank(classify_mode(lo, &det)) <= rank(classify_mode(hi, &det)));
        let m = classify_mode(q1, &det);
        let expected = if q1 >= 1.0 { Mode::Attacked } else if q1 >= eta { Mode::Suspect } else { Mode::Normal };
        prop_assert_eq!(m, expected);
    }

    #[test]
    fn threshold_bound_monotone(beta in 1e-3..1.0f64, k in 0.1..3.0f64, t in 1e-3..1.0f64, d in 1e-3..1.0f64) {
        let base = suspect_threshold_bound(beta, k, t);
        prop_assert!(suspect_threshold_bound(beta + d, k, t) > base);
        prop_assert!(suspect_threshold_bound(beta, k + d, t) > base);
        prop_assert!(suspect_threshold_bound(beta, k, t + d) < base);
    }

    #[test]
    fn bounds_meet_at_epsilon_min(p in bound_tuple()) {
        let eps = epsilon_min(p.c, p.rho, p.k_exp, p.t_bar, p.w_bar).unwrap();
        let lo = exposure_lower_bound(p.c, p.rho, p.k_exp, p.t_bar, p.w_bar, p.b_norm).unwrap();
        let hi = compensability_upper_bound(p.c, p.rho, eps, p.w_bar, p.b_norm).unwrap();
        prop_assert!((lo - hi).abs() / lo <= 1e-10, "{lo} vs {hi}");
    }

    #[test]
    fn bound_monotonicity(p in bound_tuple(), dk in 1usize..10, dc in 0.01..2.0f64, de in 0.01..2.0f64, d in 1e-3..0.2f64) {
        let lo = |c: f64, k: usize| exposure_lower_bound(c, p.rho, k, p.t_bar, p.w_bar, p.b_norm).unwrap();
        // Strictness in k_exp is only resolvable while ρ^k is above rounding.
        prop_assume!(p.rho.powi(p.k_exp as i32) > 1e-12);
        prop_assert!(lo(p.c, p.k_exp + dk) < lo(p.c, p.k_exp));
        prop_assert!(lo(p.c + dc, p.k_exp) < lo(p.c, p.k_exp));
        let eps = epsilon_min(p.c, p.rho, p.k_exp, p.t_bar, p.w_bar).unwrap();
        let hi = |e: f64| compensability_upper_bound(p.c, p.rho, e, p.w_bar, p.b_norm).unwrap();
        prop_assert!(hi(eps + de) > hi(eps));
        let em = |t: f64, w: f64| epsilon_min(p.c, p.rho, p.k_exp, t, w).unwrap();
        prop_assert!(em(p.t_bar + d, p.w_bar) > em(p.t_bar, p.w_bar));
        prop_assert!(em(p.t_bar, p.w_bar + d) > em(p.t_bar, p.w_bar));
    }

    #[test]
    fn residual_is_gain_times_innovation(y in vec_of(3, 1.0), dy in vec_of(3, 0.1), rn in 1e-6..1e-1f64) {
        let m = build_uav_model(0.5).unwrap();
        let st = uav_filter(rn).predict(&m, &Vector::zeros(3), &Vector::zeros(6)).unwrap();
        let rep = st.residual(&y).unwrap();
        let direct = &rep.k_gain * &rep.innovation;
        prop_assert!((&rep.r - direct).amax() <= 1e-12);
        let shifted = st.residual(&(&y + &dy)).unwrap();
        let diff = &shifted.r - &rep.r - &rep.k_gain * &dy;
        prop_assert!(diff.amax() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn process_noise_respects_bound(seed in any::<u64>(), w_bar in 1e-4..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..2000 {
            let w = sample_process_noise(6, w_bar, &mut rng).unwrap();
            prop_assert!(w.norm() <= w_bar);
        }
    }

    #[test]
    fn dare_gain_solves_riccati(q in 0.1..10.0f64, r in 0.01..10.0f64) {
        let m = build_uav_model(0.5).unwrap();
        let (qm, rm) = (Matrix::identity(6, 6) * q, Matrix::identity(3, 3) * r);
        let gain = synthesize_feedback(&m, &qm, &rm).unwrap();
        prop_assert!(dare_residual(&m, &qm, &rm, &gain.p).unwrap() < 1e-8);
    }

    #[test]
    fn shakes_are_optimal_feasible_and_masked(seed in any::<u64>(), x0 in vec_of(2, 1.0), u_bar in 1.5..4.0f64) {
        let dt = 0.5;
        let model = SystemModel::new(
            Matrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
            Matrix::from_column_slice(2, 1, &[0.5 * dt * dt, dt]),
            0.01,
        ).unwrap();
        let gain: FeedbackGain = synthesize_feedback(&model, &Matrix::identity(2, 2), &(Matrix::identity(1, 1) * 0.1)).unwrap();
        let a_cl = closed_loop(&model, &gain).unwrap();
        let cert: UesCertificate = certify_ues(&a_cl, 200, 0.05).unwrap();
        let det = DetectorConfig::new(Vector::from_element(2, 0.05), 0.2).unwrap();
        let cfg = ExposureConfig {
            k_exp: 6,
            horizon: 10,
            u_bar,
            q_w: Matrix::identity(2, 2),
            r_w: Matrix::identity(1, 1) * 0.1,
            eps_mask_max: 1e-2,
            epsilon_tol: 100.0,
            components: vec![0, 1],
        };
        let goals = vec![Vector::zeros(2); 11];
        let run = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            generate_shakes(&cfg, &model, &gain, &cert, &det, 0.01, &x0, &goals, &mut rng).unwrap()
        };
        let a = run(seed);
        let b = run(seed.wrapping_add(1));
        for s in [&a, &b] {
            prop_assert!(s.kkt_residual <= KKT_TOL, "kkt {}", s.kkt_residual);
            prop_assert!(s.exposure_margin() >= -FEAS_TOL);
            prop_assert!(s.within_budget());
        }
        let applied = |s: &lure::exposure::ShakeSequence| (0..6).map(|i| s.applied_at(i)).collect::<Vec<_>>();
        prop_assert_ne!(applied(&a), applied(&b));
    }
}
