//! White-box attacker. It runs a twin of the defender's filter and controller,
//! replaces the suspicious sensor's output with the twin's predicted
//! measurement, and adds a small injection each step so that the defender's
//! estimate drifts along a planned bias while its residual stays inside the
//! normal-operation set.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{nominal_input, FeedbackGain};
use crate::error::{check_len, Error, Result};
use crate::lin_model::{sample_in_ball, SystemModel};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackPlan {
    pub start_step: usize,
    /// Exclusive.
    pub end_step: usize,
    /// Fraction of the per-step threshold consumed by the planned increment.
    pub intensity: f64,
    /// Measurement channels that carry the deception.
    pub channels: Vec<usize>,
    /// Sign of the planned drift per channel; empty means all positive.
    #[serde(default)]
    pub direction: Vec<f64>,
    /// Minimum infinity-norm of the first injection.
    pub beta_target: f64,
    /// Bound on the twin's own disturbance sample.
    #[serde(default)]
    pub w_a_bound: f64,
}

impl AttackPlan {
    pub fn validate(&self, n_y: usize) -> Result<()> {
        if self.start_step >= self.end_step {
            return Err(Error::Parameter("attack start_step must precede end_step".into()));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::Parameter(format!("intensity must be in [0, 1], got {}", self.intensity)));
        }
        if self.channels.is_empty() || self.channels.iter().any(|&c| c >= n_y) {
            return Err(Error::Parameter("attack channels must be a nonempty subset of the measurement".into()));
        }
        if !self.direction.is_empty() && self.direction.len() != self.channels.len() {
            return Err(Error::Parameter("attack direction needs one sign per channel".into()));
        }
        if !(self.beta_target >= 0.0) || !(self.w_a_bound >= 0.0) {
            return Err(Error::Parameter("beta_target and w_a_bound must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn active(&self, k: usize) -> bool {
        (self.start_step..self.end_step).contains(&k)
    }

    fn sign(&self, idx: usize) -> f64 {
        match self.direction.get(idx) {
            Some(d) if *d < 0.0 => -1.0,
            _ => 1.0,
        }
    }
}

/// State component a measurement channel observes most strongly.
pub fn state_channel(h: &Matrix, channel: usize) -> usize {
    h.row(channel).transpose().iamax()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackerState {
    /// Twin prior: the attacker's model of the defender's estimate.
    pub x_hat_a: Vector,
    /// Twin posterior after the injection.
    pub x_hat_a_plus: Vector,
    /// Deception the defender has actually absorbed, propagated by `A`.
    pub cumulative_bias: Vector,
    /// Sum of planned per-step increments.
    pub planned_bias: Vector,
    /// Realized `Δx^a` of the last injection.
    pub last_increment: Vector,
    pub injections: usize,
}

impl AttackerState {
    /// Twin aligned with the defender's current prior (white-box knowledge).
    pub fn synced(defender_prior: &Vector) -> Self {
        let n = defender_prior.len();
        Self {
            x_hat_a: defender_prior.clone(),
            x_hat_a_plus: defender_prior.clone(),
            cumulative_bias: Vector::zeros(n),
            planned_bias: Vector::zeros(n),
            last_increment: Vector::zeros(n),
            injections: 0,
        }
    }
}

/// Advances the twin one step and adds this step's planned increment.
///
/// On a freshly synced state the twin prior is already current and is not
/// propagated. Otherwise `x̂^a = A·x̂^{a+} + B·u^a + w^a` with `u^a` from the
/// nominal law on the twin posterior and the previous goal.
#[allow(clippy::too_many_arguments)]
pub fn attacker_step<R: Rng + ?Sized>(
    state: &AttackerState,
    model: &SystemModel,
    gain: &FeedbackGain,
    saturation: f64,
    t: &Vector,
    h: &Matrix,
    plan: &AttackPlan,
    goal_prev: &Vector,
    rng: &mut R,
) -> Result<AttackerState> {
    check_len("attacker_step", "T", t, model.n_x)?;
    let mut next = state.clone();
    if state.injections > 0 {
        let u_a = nominal_input(gain, &state.x_hat_a_plus, goal_prev, saturation)?;
        let w_a = sample_in_ball(model.n_x, plan.w_a_bound, rng)?;
        next.x_hat_a = &model.a * &state.x_hat_a_plus + &model.b * u_a + w_a;
        next.cumulative_bias = &model.a * &state.cumulative_bias;
    }
    for (idx, &ch) in plan.channels.iter().enumerate() {
        let s = state_channel(h, ch);
        next.planned_bias[s] += plan.sign(idx) * plan.intensity * t[s];
    }
    Ok(next)
}

/// Builds this step's measurement tampering `δy = y − y*`.
///
/// The forged measurement is the twin's prediction `H·x̂^a` plus `ρ` on the
/// plan channels, where `ρ` solves, in least squares through the gain rows of
/// the targeted states, for the residual shift that puts the absorbed bias on
/// the planned bias. The shift is scaled back so that no residual component
/// exceeds `intensity·T`, except that the very first injection is raised to
/// `‖δy‖∞ ≥ beta_target`.
pub fn craft_injection(
    state: &AttackerState,
    k_gain: &Matrix,
    y_star: &Vector,
    h: &Matrix,
    t: &Vector,
    plan: &AttackPlan,
) -> Result<(Vector, AttackerState)> {
    let n_x = state.x_hat_a.len();
    check_len("craft_injection", "y*", y_star, h.nrows())?;
    let m = plan.channels.len();
    let targets: Vec<usize> = plan.channels.iter().map(|&c| state_channel(h, c)).collect();
    let cols = Matrix::from_fn(n_x, m, |i, j| k_gain[(i, plan.channels[j])]);
    let block = Matrix::from_fn(m, m, |i, j| cols[(targets[i], j)]);
    let tau = Vector::from_fn(m, |i, _| state.planned_bias[targets[i]] - state.cumulative_bias[targets[i]]);

    let svd = block.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        return Err(Error::AttackInfeasible("filter gain restricted to the plan channels is rank deficient".into()));
    }
    let mut rho =
        svd.solve(&tau, 1e-14 * smax).map_err(|e| Error::Numerical(format!("least-squares injection: {e}")))?;

    let realized = &cols * &rho;
    let mut scale: f64 = 1.0;
    for i in 0..n_x {
        let ri = realized[i].abs();
        if ri > 0.0 {
            scale = scale.min(plan.intensity * t[i] / ri);
        }
    }
    rho *= scale;

    let predicted = h * &state.x_hat_a;
    let forge = |rho: &Vector| {
        let mut y = predicted.clone();
        for (j, &ch) in plan.channels.iter().enumerate() {
            y[ch] += rho[j];
        }
        y
    };
    let mut delta_y = forge(&rho) - y_star;
    if state.injections == 0 && delta_y.amax() < plan.beta_target {
        let ch = plan.channels[0];
        rho[0] += plan.sign(0) * plan.beta_target - delta_y[ch];
        delta_y = forge(&rho) - y_star;
    }

    let increment = &cols * &rho;
    for i in 0..n_x {
        if increment[i].abs() > t[i] * (1.0 + 1e-12) {
            return Err(Error::AttackInfeasible(format!(
                "injection would move state {i} by {:.6} > threshold {:.6}",
                increment[i], t[i]
            )));
        }
    }
    let mut next = state.clone();
    next.cumulative_bias += &increment;
    next.x_hat_a_plus = &state.x_hat_a + &increment;
    next.last_increment = increment;
    next.injections += 1;
    Ok((delta_y, next))
}
