//! Nominal LQR tracking controller and the exponential-stability certificate
//! `‖A_clᵏ‖ ≤ c·ρᵏ` of its closed loop.

use crate::error::{check_len, check_shape, Error, Result};
use crate::lin_model::{spectral_norm, spectral_radius, SystemModel};
use crate::{Matrix, Vector};

const DARE_TOL: f64 = 1e-10;
const DARE_MAX_ITERS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain {
    /// `n_u × n_x`, applied as `u = −K·(x̂ − x_goal)`.
    pub k: Matrix,
    /// Riccati solution the gain was built from.
    pub p: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UesCertificate {
    pub c: f64,
    pub rho: f64,
    pub horizon_checked: usize,
}

impl UesCertificate {
    /// Constants supplied from outside (e.g. published values for a gain we do not have).
    /// Not checked against any matrix; `horizon_checked` is zero.
    pub fn injected(c: f64, rho: f64) -> Result<Self> {
        if !(c > 0.0) || !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Parameter(format!("need c > 0 and 0 < rho < 1, got c={c}, rho={rho}")));
        }
        Ok(Self { c, rho, horizon_checked: 0 })
    }

    /// `c·(1−ρᵏ)/(1−ρ)`, the geometric gain over a `k`-step window.
    pub fn window_gain(&self, k: usize) -> f64 {
        self.c * (1.0 - self.rho.powi(k as i32)) / (1.0 - self.rho)
    }

    /// Checks `‖A_clᵏ‖ ≤ c·ρᵏ` for every `k ≤ horizon` by direct powers.
    pub fn holds_for(&self, a_cl: &Matrix, horizon: usize) -> bool {
        let scaled = a_cl / self.rho;
        let mut m = Matrix::identity(a_cl.nrows(), a_cl.ncols());
        for k in 0..=horizon {
            if k > 0 {
                m = &scaled * &m;
            }
            if spectral_norm(&m) > self.c * (1.0 + 1e-12) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDynamics {
    pub a_cl: Matrix,
    pub cert: UesCertificate,
}

impl ErrorDynamics {
    pub fn new(model: &SystemModel, gain: &FeedbackGain, horizon: usize, rho_margin: f64) -> Result<Self> {
        let a_cl = closed_loop(model, gain)?;
        let cert = certify_ues(&a_cl, horizon, rho_margin)?;
        Ok(Self { a_cl, cert })
    }
}

/// `A − B·K`.
pub fn closed_loop(model: &SystemModel, gain: &FeedbackGain) -> Result<Matrix> {
    check_shape("closed_loop", "K", &gain.k, model.n_u, model.n_x)?;
    Ok(&model.a - &model.b * &gain.k)
}

/// Discrete LQR gain by fixed-point iteration of the Riccati recursion.
pub fn synthesize_feedback(model: &SystemModel, q: &Matrix, r: &Matrix) -> Result<FeedbackGain> {
    let (n, m) = (model.n_x, model.n_u);
    check_shape("synthesize_feedback", "Q", q, n, n)?;
    check_shape("synthesize_feedback", "R", r, m, m)?;
    if (q - q.transpose()).amax() > 1e-12 || (r - r.transpose()).amax() > 1e-12 {
        return Err(Error::Parameter("Q and R must be symmetric".into()));
    }
    if q.clone().symmetric_eigenvalues().min() < -1e-12 {
        return Err(Error::Parameter("Q must be positive semidefinite".into()));
    }
    if r.clone().cholesky().is_none() {
        return Err(Error::Parameter("R must be positive definite".into()));
    }
    let (a, b) = (&model.a, &model.b);
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..DARE_MAX_ITERS {
        let next = riccati_map(a, &at, b, &bt, q, r, &p)?;
        let delta = (&next - &p).norm();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Synthesis("Riccati iteration diverged (pair not stabilizable?)".into()));
        }
        if delta <= DARE_TOL * p.norm().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Synthesis(format!("Riccati iteration did not converge in {DARE_MAX_ITERS} steps")));
    }
    let k = gain_from(&p, b, &bt, a, r)?;
    let gain = FeedbackGain { k, p };
    let sr = spectral_radius(&closed_loop(model, &gain)?);
    if sr >= 1.0 {
        return Err(Error::Synthesis(format!("closed loop not stable (spectral radius {sr})")));
    }
    Ok(gain)
}

fn gain_from(p: &Matrix, b: &Matrix, bt: &Matrix, a: &Matrix, r: &Matrix) -> Result<Matrix> {
    let s = r + bt * p * b;
    let chol = s.cholesky().ok_or_else(|| Error::Numerical("R + BᵀPB not positive definite".into()))?;
    Ok(chol.solve(&(bt * p * a)))
}

fn riccati_map(a: &Matrix, at: &Matrix, b: &Matrix, bt: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let k = gain_from(p, b, bt, a, r)?;
    let next = q + at * p * a - at * p * b * k;
    Ok((&next + next.transpose()) * 0.5)
}

/// Frobenius norm of `Q + AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA − P`.
pub fn dare_residual(model: &SystemModel, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<f64> {
    let at = model.a.transpose();
    let bt = model.b.transpose();
    let next = riccati_map(&model.a, &at, &model.b, &bt, q, r, p)?;
    Ok((next - p).norm())
}

/// Fits `(c, ρ)` with `ρ` just above the spectral radius.
///
/// The spectral radius is inflated by `1 + rho_margin` (floored at 1e-6 for
/// nilpotent loops, capped at `1 − 1e-9`), and `c` is the largest
/// `‖A_clᵏ‖/ρᵏ` seen up to `horizon`.
pub fn certify_ues(a_cl: &Matrix, horizon: usize, rho_margin: f64) -> Result<UesCertificate> {
    if a_cl.nrows() != a_cl.ncols() || a_cl.is_empty() {
        return Err(Error::Certification("A_cl must be square and nonempty".into()));
    }
    if horizon < 1 || !(rho_margin > 0.0) {
        return Err(Error::Parameter("need horizon ≥ 1 and rho_margin > 0".into()));
    }
    let sr = spectral_radius(a_cl);
    if !(sr < 1.0) {
        return Err(Error::Certification(format!("closed loop unstable (spectral radius {sr})")));
    }
    let rho = (sr * (1.0 + rho_margin)).clamp(1e-6, 1.0 - 1e-9);
    let scaled = a_cl / rho;
    let mut m = Matrix::identity(a_cl.nrows(), a_cl.ncols());
    let mut c: f64 = 1.0;
    for _ in 1..=horizon {
        m = &scaled * &m;
        c = c.max(spectral_norm(&m));
    }
    Ok(UesCertificate { c, rho, horizon_checked: horizon })
}

pub fn saturate(u: &Vector, limit: f64) -> Vector {
    u.map(|v| v.clamp(-limit, limit))
}

/// `−K·(x̂ − x_goal)` before saturation.
pub fn unsaturated_input(gain: &FeedbackGain, x_hat: &Vector, x_goal: &Vector) -> Result<Vector> {
    let n_x = gain.k.ncols();
    check_len("nominal_input", "x_hat", x_hat, n_x)?;
    check_len("nominal_input", "x_goal", x_goal, n_x)?;
    Ok(-(&gain.k * (x_hat - x_goal)))
}

/// Nominal tracking input, clipped per component to `±limit`.
pub fn nominal_input(gain: &FeedbackGain, x_hat: &Vector, x_goal: &Vector, limit: f64) -> Result<Vector> {
    Ok(saturate(&unsaturated_input(gain, x_hat, x_goal)?, limit))
}
