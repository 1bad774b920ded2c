//! Toy systems and the exhaustive vertex oracle for exposure soundness.
//!
//! At the horizon the defender/attacker discrepancy is
//! `e = Σ_t A_cl^(k−1−t) (B a_t + d_t)`, where `a_t` is the applied shake and
//! `d_t` lies in the box `|d_t,i| ≤ 2w̄ + T_i`. The constrained component is
//! affine in `d`, so its worst case over the box is attained at a vertex.

use lure::controller::{certify_ues, closed_loop, synthesize_feedback, FeedbackGain, UesCertificate};
use lure::detector::DetectorConfig;
use lure::exposure::{generate_shakes, ExposureConfig, ShakeSequence};
use lure::lin_model::SystemModel;
use lure::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Toy {
    pub model: SystemModel,
    pub gain: FeedbackGain,
    pub cert: UesCertificate,
    pub a_cl: Matrix,
    pub det: DetectorConfig,
    pub cfg: ExposureConfig,
}

pub fn toy(a: Matrix, b: Matrix, k_exp: usize, u_bar: f64) -> Toy {
    let (n_x, n_u) = (a.nrows(), b.ncols());
    let model = SystemModel::new(a, b, 0.01).unwrap();
    let gain = synthesize_feedback(&model, &Matrix::identity(n_x, n_x), &(Matrix::identity(n_u, n_u) * 0.1)).unwrap();
    let a_cl = closed_loop(&model, &gain).unwrap();
    let cert = certify_ues(&a_cl, 200, 0.05).unwrap();
    let det = DetectorConfig::new(Vector::from_element(n_x, 0.05), 0.2).unwrap();
    let cfg = ExposureConfig {
        k_exp,
        horizon: k_exp + 4,
        u_bar,
        q_w: Matrix::identity(n_x, n_x),
        r_w: Matrix::identity(n_u, n_u) * 0.1,
        eps_mask_max: 1e-3,
        epsilon_tol: 100.0,
        components: (0..n_x).collect(),
    };
    Toy { model, gain, cert, a_cl, det, cfg }
}

/// Smallest signed value of the target component and smallest ‖e‖∞ over all
/// `2^(n_x·k)` vertex sequences.
pub fn worst_over_vertices(t: &Toy, seq: &ShakeSequence) -> (f64, f64) {
    let (n_x, k) = (t.model.n_x, t.cfg.k_exp);
    let bits = n_x * k;
    assert!(bits <= 12);
    let mut powers = vec![Matrix::identity(n_x, n_x)];
    for j in 1..k {
        powers.push(&t.a_cl * &powers[j - 1]);
    }
    let drive: Vector = (0..k)
        .map(|s| &powers[k - 1 - s] * (&t.model.b * seq.applied_at(s)))
        .fold(Vector::zeros(n_x), |acc, v| acc + v);
    let radius = |i: usize| 2.0 * t.model.w_bar + t.det.t[i];
    let sign = f64::from(seq.target.sign);
    let mut worst_comp = f64::INFINITY;
    let mut worst_norm = f64::INFINITY;
    for mask in 0u32..(1 << bits) {
        let mut e = drive.clone();
        for s in 0..k {
            let d = Vector::from_fn(n_x, |i, _| {
                let bit = (mask >> (s * n_x + i)) & 1;
                if bit == 1 {
                    radius(i)
                } else {
                    -radius(i)
                }
            });
            e += &powers[k - 1 - s] * d;
        }
        worst_comp = worst_comp.min(sign * e[seq.target.component]);
        worst_norm = worst_norm.min(e.amax());
    }
    (worst_comp, worst_norm)
}

/// Scalar toy with `n_x·k_exp = 12`.
pub fn scalar_toy() -> Toy {
    toy(Matrix::from_element(1, 1, 1.1), Matrix::from_element(1, 1, 1.0), 12, 1.0)
}

/// One double-integrator axis with `n_x·k_exp = 12`.
pub fn double_integrator_toy() -> Toy {
    let dt = 0.5;
    let a = Matrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let b = Matrix::from_column_slice(2, 1, &[0.5 * dt * dt, dt]);
    toy(a, b, 6, 2.0)
}

/// For each seed: a random current state, a generated sequence, and the worst
/// `(target component, ‖e‖∞)` minus `2T̄` over all vertices.
pub fn vertex_margins(t: &Toy, seeds: u64) -> Vec<(f64, f64)> {
    let two_t_bar = 2.0 * t.det.t_bar();
    (0..seeds)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x_now = Vector::from_fn(t.model.n_x, |_, _| rng.random_range(-1.0..1.0));
            let goals = vec![Vector::zeros(t.model.n_x); t.cfg.horizon + 1];
            let seq =
                generate_shakes(&t.cfg, &t.model, &t.gain, &t.cert, &t.det, t.model.w_bar, &x_now, &goals, &mut rng)
                    .unwrap();
            assert!(seq.satisfies_invariants());
            let (comp, norm) = worst_over_vertices(t, &seq);
            (comp - two_t_bar, norm - two_t_bar)
        })
        .collect()
}
