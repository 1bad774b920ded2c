//! Error-state Kalman filter. The reliable sensor propagates `x^n`; the
//! suspicious sensor corrects `δx̂`; the fused estimate is `x^n + δx̂`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, check_shape, Error, Result};
use crate::lin_model::SystemModel;
use crate::{Matrix, Vector};

/// Estimate reported while the suspicious sensor is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrozenEstimate {
    /// `x^n + δx̂` with `δx̂` held at its value from the freeze instant.
    #[default]
    HoldCorrection,
    /// `x^n` alone.
    NominalOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EskfState {
    pub x_nominal: Vector,
    pub delta_x_hat: Vector,
    pub p: Matrix,
    pub qn: Matrix,
    pub rn: Matrix,
    pub h: Matrix,
    pub frozen: bool,
    pub frozen_estimate: FrozenEstimate,
    /// Fold `δx̂` into `x^n` after every update.
    pub reset: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub r: Vector,
    pub k_gain: Matrix,
    pub innovation: Vector,
}

impl EskfState {
    pub fn new(x0: Vector, p0: Matrix, qn: Matrix, rn: Matrix, h: Matrix) -> Result<Self> {
        let n = x0.len();
        let ny = h.nrows();
        check_shape("EskfState::new", "P0", &p0, n, n)?;
        check_shape("EskfState::new", "Qn", &qn, n, n)?;
        check_shape("EskfState::new", "Rn", &rn, ny, ny)?;
        check_shape("EskfState::new", "H", &h, ny, n)?;
        Ok(Self {
            delta_x_hat: Vector::zeros(n),
            x_nominal: x0,
            p: p0,
            qn,
            rn,
            h,
            frozen: false,
            frozen_estimate: FrozenEstimate::HoldCorrection,
            reset: false,
        })
    }

    pub fn n_y(&self) -> usize {
        self.h.nrows()
    }

    /// Propagates the reliable-sensor state and the covariance one step.
    ///
    /// `imu_noise` is everything by which the reliable sensor's increment
    /// differs from the model's `A·x^n + B·u`. The correction `δx̂` is
    /// propagated by `A` while the filter is active and held while frozen.
    pub fn predict(&self, model: &SystemModel, u: &Vector, imu_noise: &Vector) -> Result<EskfState> {
        check_len("eskf_predict", "x_nominal", &self.x_nominal, model.n_x)?;
        check_len("eskf_predict", "u", u, model.n_u)?;
        check_len("eskf_predict", "imu_noise", imu_noise, model.n_x)?;
        let mut next = self.clone();
        next.x_nominal = &model.a * &self.x_nominal + &model.b * u + imu_noise;
        if !self.frozen {
            next.delta_x_hat = &model.a * &self.delta_x_hat;
        }
        let p = &model.a * &self.p * model.a.transpose() + &self.qn;
        next.p = (&p + p.transpose()) * 0.5;
        Ok(next)
    }

    /// Gain `P·Hᵀ·(H·P·Hᵀ + Rn)⁻¹` for the current prior.
    pub fn gain(&self) -> Result<Matrix> {
        let ny = self.n_y();
        let s = &self.h * &self.p * self.h.transpose() + &self.rn + Matrix::identity(ny, ny) * 1e-12;
        let inv = s.try_inverse().ok_or_else(|| Error::Numerical("innovation covariance is singular".into()))?;
        Ok(&self.p * self.h.transpose() * inv)
    }

    /// Residual of `y` against the current fused estimate, without applying it.
    pub fn residual(&self, y: &Vector) -> Result<ResidualReport> {
        check_len("eskf_update", "y", y, self.n_y())?;
        let innovation = y - &self.h * self.fused_estimate();
        let k_gain = self.gain()?;
        let r = &k_gain * &innovation;
        Ok(ResidualReport { r, k_gain, innovation })
    }

    pub fn update(&self, y: &Vector) -> Result<(EskfState, ResidualReport)> {
        if self.frozen {
            return Err(Error::Contract("eskf_update called on a frozen filter".into()));
        }
        let report = self.residual(y)?;
        let mut next = self.clone();
        next.delta_x_hat = &self.delta_x_hat + &report.r;
        let n = self.p.nrows();
        let p = (Matrix::identity(n, n) - &report.k_gain * &self.h) * &self.p;
        next.p = (&p + p.transpose()) * 0.5;
        if self.reset {
            next.x_nominal = &next.x_nominal + &next.delta_x_hat;
            next.delta_x_hat.fill(0.0);
        }
        Ok((next, report))
    }

    pub fn freeze(&self) -> EskfState {
        EskfState { frozen: true, ..self.clone() }
    }

    pub fn unfreeze(&self) -> EskfState {
        EskfState { frozen: false, ..self.clone() }
    }

    pub fn fused_estimate(&self) -> Vector {
        if self.frozen && self.frozen_estimate == FrozenEstimate::NominalOnly {
            self.x_nominal.clone()
        } else {
            &self.x_nominal + &self.delta_x_hat
        }
    }
}

/// Iterates predict/update covariance recursions until `P` settles, returning
/// the prior-based gain and the number of steps taken.
pub fn steady_state_gain(
    model: &SystemModel,
    h: &Matrix,
    qn: &Matrix,
    rn: &Matrix,
    p0: &Matrix,
    max_steps: usize,
) -> Result<(Matrix, usize)> {
    let n = model.n_x;
    let mut st = EskfState::new(Vector::zeros(n), p0.clone(), qn.clone(), rn.clone(), h.clone())?;
    let u = Vector::zeros(model.n_u);
    let z = Vector::zeros(n);
    let y = Vector::zeros(h.nrows());
    let mut prev = st.p.clone();
    for step in 1..=max_steps {
        st = st.predict(model, &u, &z)?;
        let k = st.gain()?;
        st = st.update(&y)?.0;
        if (&st.p - &prev).norm() < 1e-12 {
            return Ok((k, step));
        }
        prev = st.p.clone();
    }
    Err(Error::Numerical(format!("covariance did not settle in {max_steps} steps")))
}
