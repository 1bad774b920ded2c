//! Discrete-time LTI plant `x⁺ = A·x + B·u + w` with a bounded disturbance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, check_shape, Error, Result};
use crate::{Matrix, Vector};

/// How the scalar disturbance bound `w_bar` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseConvention {
    /// `‖w‖ ≤ w_bar` (Euclidean).
    #[default]
    Norm,
    /// `wᵀw ≤ w_bar`, i.e. `‖w‖ ≤ √w_bar`.
    Quadratic,
}

impl NoiseConvention {
    /// Euclidean radius of the admissible disturbance ball.
    pub fn radius(self, w_bar: f64) -> f64 {
        match self {
            NoiseConvention::Norm => w_bar,
            NoiseConvention::Quadratic => w_bar.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: Matrix,
    pub b: Matrix,
    pub w_bar: f64,
    pub n_x: usize,
    pub n_u: usize,
}

impl SystemModel {
    pub fn new(a: Matrix, b: Matrix, w_bar: f64) -> Result<Self> {
        let n_x = a.nrows();
        let n_u = b.ncols();
        if n_x == 0 || n_u == 0 {
            return Err(Error::Parameter("model needs n_x ≥ 1 and n_u ≥ 1".into()));
        }
        check_shape("SystemModel::new", "A", &a, n_x, n_x)?;
        check_shape("SystemModel::new", "B", &b, n_x, n_u)?;
        if !(w_bar >= 0.0) || !w_bar.is_finite() {
            return Err(Error::Parameter(format!("w_bar must be finite and ≥ 0, got {w_bar}")));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("model matrices contain non-finite entries".into()));
        }
        Ok(Self { a, b, w_bar, n_x, n_u })
    }
}

/// One plant step: `A·x + B·u + w`.
pub fn step_dynamics(model: &SystemModel, x: &Vector, u: &Vector, w: &Vector) -> Result<Vector> {
    check_len("step_dynamics", "x", x, model.n_x)?;
    check_len("step_dynamics", "u", u, model.n_u)?;
    check_len("step_dynamics", "w", w, model.n_x)?;
    Ok(&model.a * x + &model.b * u + w)
}

/// Uniform direction, magnitude uniform in `[0, radius]`.
pub fn sample_in_ball<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> Result<Vector> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::Parameter(format!("ball radius must be finite and ≥ 0, got {radius}")));
    }
    if radius == 0.0 || n == 0 {
        return Ok(Vector::zeros(n));
    }
    loop {
        let d = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = d.norm();
        if norm > 1e-12 {
            let mag = rng.random_range(0.0..=radius);
            return Ok(d * (mag / norm));
        }
    }
}

/// Process disturbance of length `n` bounded by `w_bar` under the Euclidean reading.
pub fn sample_process_noise<R: Rng + ?Sized>(n: usize, w_bar: f64, rng: &mut R) -> Result<Vector> {
    if w_bar < 0.0 {
        return Err(Error::Parameter(format!("w_bar must be ≥ 0, got {w_bar}")));
    }
    sample_in_ball(n, w_bar, rng)
}

/// Three-axis double integrator sampled at `dt`, position then velocity.
pub fn build_uav_model(dt: f64) -> Result<SystemModel> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Parameter(format!("dt must be > 0, got {dt}")));
    }
    let mut a = Matrix::identity(6, 6);
    let mut b = Matrix::zeros(6, 3);
    for i in 0..3 {
        a[(i, i + 3)] = dt;
        b[(i, i)] = 0.5 * dt * dt;
        b[(i + 3, i)] = dt;
    }
    SystemModel::new(a, b, 0.01)
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Maximum absolute row sum.
pub fn inf_norm(m: &Matrix) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_plant_is_a_no_op() {
        let m = SystemModel::new(Matrix::identity(3, 3), Matrix::zeros(3, 1), 0.0).unwrap();
        let x = Vector::from_vec(vec![1.0, -2.0, 3.5]);
        let y = step_dynamics(&m, &x, &Vector::zeros(1), &Vector::zeros(3)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn uav_velocity_moves_position() {
        let m = build_uav_model(0.5).unwrap();
        let x = Vector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let y = step_dynamics(&m, &x, &Vector::zeros(3), &Vector::zeros(6)).unwrap();
        assert_eq!(y.as_slice(), &[0.5, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn uav_input_response() {
        let m = build_uav_model(0.5).unwrap();
        let u = Vector::from_vec(vec![1.0, 0.0, 0.0]);
        let y = step_dynamics(&m, &Vector::zeros(6), &u, &Vector::zeros(6)).unwrap();
        assert_eq!(y.as_slice(), &[0.125, 0.0, 0.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn uav_blocks() {
        let m = build_uav_model(0.5).unwrap();
        assert_eq!(m.a[(0, 3)], 0.5);
        assert_eq!(m.b[(0, 0)], 0.125);
        assert_eq!(m.b[(3, 0)], 0.5);
        assert_eq!(m.w_bar, 0.01);
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j {
                    1.0
                } else if j == i + 3 {
                    0.5
                } else {
                    0.0
                };
                assert_eq!(m.a[(i, j)], want, "A[{i}][{j}]");
            }
        }
        let one = build_uav_model(1.0).unwrap();
        assert_eq!(one.b[(0, 0)], 0.5);
    }

    #[test]
    fn uav_b_spectral_norm() {
        let m = build_uav_model(0.5).unwrap();
        let want = (0.125f64.powi(2) + 0.25).sqrt();
        assert!((spectral_norm(&m.b) - want).abs() < 1e-12);
        assert!((spectral_norm(&m.b) - 0.51539).abs() < 1e-5);
    }

    #[test]
    fn bad_dt_rejected() {
        assert!(matches!(build_uav_model(0.0), Err(Error::Parameter(_))));
        assert!(matches!(build_uav_model(-1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn dimension_error_names_operand() {
        let m = build_uav_model(0.5).unwrap();
        let err = step_dynamics(&m, &Vector::zeros(6), &Vector::zeros(2), &Vector::zeros(6)).unwrap_err();
        match err {
            Error::Dimension { operand, .. } => assert_eq!(operand, "u"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn noise_zero_bound_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_process_noise(6, 0.0, &mut rng).unwrap(), Vector::zeros(6));
        let a = sample_process_noise(6, 0.01, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_process_noise(6, 0.01, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.norm() <= 0.01);
        assert!(sample_process_noise(6, -1.0, &mut rng).is_err());
    }

    #[test]
    fn quadratic_reading_radius() {
        assert_eq!(NoiseConvention::Norm.radius(0.01), 0.01);
        assert!((NoiseConvention::Quadratic.radius(0.01) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn noise_bound_holds_over_many_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let w = sample_process_noise(6, 0.01, &mut rng).unwrap();
            assert!(w.norm() <= 0.01 * (1.0 + 1e-12));
            assert!(w.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn norms_of_small_matrices() {
        let m = Matrix::from_row_slice(2, 2, &[0.5, 10.0, 0.0, 0.5]);
        assert!((spectral_radius(&m) - 0.5).abs() < 1e-9);
        assert_eq!(inf_norm(&m), 10.5);
    }
}
