//! Suspect-mode machinery: the shake-budget bounds, the exposure test, the
//! shake optimizer with its worst-case tightening, and the per-step shift.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{closed_loop, FeedbackGain, UesCertificate};
use crate::detector::{suspect_threshold_bound, DetectorConfig};
use crate::error::{check_len, check_shape, Error, Result};
use crate::lin_model::{spectral_norm, SystemModel};
use crate::{Matrix, Vector};

/// QP stopping tolerance on the KKT residual.
pub const KKT_TOL: f64 = 1e-8;
/// Largest constraint violation accepted at a returned point.
pub const FEAS_TOL: f64 = 1e-9;
/// Iteration cap of one projected-gradient solve.
pub const MAX_ITERS: usize = 10_000;

/// Which `‖B‖` the bound formulas use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NormConvention {
    #[serde(rename = "unit", alias = "unit_B")]
    UnitB,
    #[default]
    #[serde(rename = "spectral", alias = "spectral_B")]
    SpectralB,
}

impl NormConvention {
    pub fn b_norm(self, b: &Matrix) -> f64 {
        match self {
            NormConvention::UnitB => 1.0,
            NormConvention::SpectralB => spectral_norm(b),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormConvention::UnitB => "unit",
            NormConvention::SpectralB => "spectral",
        }
    }
}

fn check_cert(c: f64, rho: f64) -> Result<()> {
    if !(c > 0.0) || !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Parameter(format!("need c > 0 and 0 < rho < 1, got c={c}, rho={rho}")));
    }
    Ok(())
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::Parameter(format!("{name} must be finite and ≥ 0, got {v}")));
    }
    Ok(())
}

/// Smallest shake budget for which the tightened exposure constraint is
/// satisfiable over `k_exp` steps.
pub fn exposure_lower_bound(c: f64, rho: f64, k_exp: usize, t_bar: f64, w_bar: f64, b_norm: f64) -> Result<f64> {
    check_cert(c, rho)?;
    check_nonneg("T_bar", t_bar)?;
    check_nonneg("w_bar", w_bar)?;
    if k_exp < 1 || !(b_norm > 0.0) {
        return Err(Error::Parameter("need k_exp ≥ 1 and B_norm > 0".into()));
    }
    let geo = 1.0 - rho.powi(k_exp as i32);
    Ok((2.0 * t_bar * (1.0 - rho) / (c * geo) + 2.0 * w_bar + t_bar) / b_norm)
}

/// Largest shake budget keeping the tracking deviation within `epsilon_tol`.
/// Negative when the tolerance cannot even absorb the disturbance.
pub fn compensability_upper_bound(c: f64, rho: f64, epsilon_tol: f64, w_bar: f64, b_norm: f64) -> Result<f64> {
    check_cert(c, rho)?;
    check_nonneg("w_bar", w_bar)?;
    if !(epsilon_tol > 0.0) || !(b_norm > 0.0) {
        return Err(Error::Parameter("need epsilon_tol > 0 and B_norm > 0".into()));
    }
    Ok(((1.0 - rho) * epsilon_tol - c * w_bar) / (c * b_norm))
}

/// Smallest tolerance for which the budget interval is nonempty.
pub fn epsilon_min(c: f64, rho: f64, k_exp: usize, t_bar: f64, w_bar: f64) -> Result<f64> {
    check_cert(c, rho)?;
    check_nonneg("T_bar", t_bar)?;
    check_nonneg("w_bar", w_bar)?;
    if k_exp < 1 {
        return Err(Error::Parameter("need k_exp ≥ 1".into()));
    }
    Ok(c * (t_bar + 3.0 * w_bar) / (1.0 - rho) + 2.0 * t_bar / (1.0 - rho.powi(k_exp as i32)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub c: f64,
    pub rho: f64,
    pub k_exp: usize,
    pub t_bar: f64,
    pub w_bar: f64,
    pub epsilon_tol: f64,
    pub b_norm: f64,
    pub norm_convention: NormConvention,
    /// Intolerance degree used for the suspect-threshold bound.
    pub beta: f64,
    /// `‖K‖∞` of the filter gain.
    pub k_inf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsReport {
    pub u_min: f64,
    pub u_max: f64,
    pub eps_min: f64,
    pub eta_bar: f64,
    pub feasible: bool,
    pub norm_convention: NormConvention,
}

pub fn feasible_interval(p: &BoundParams) -> Result<BoundsReport> {
    let u_min = exposure_lower_bound(p.c, p.rho, p.k_exp, p.t_bar, p.w_bar, p.b_norm)?;
    let u_max = compensability_upper_bound(p.c, p.rho, p.epsilon_tol, p.w_bar, p.b_norm)?;
    let eps_min = epsilon_min(p.c, p.rho, p.k_exp, p.t_bar, p.w_bar)?;
    let eta_bar = suspect_threshold_bound(p.beta, p.k_inf, p.t_bar);
    Ok(BoundsReport { u_min, u_max, eps_min, eta_bar, feasible: u_min <= u_max, norm_convention: p.norm_convention })
}

/// `‖x̂ − x̂^a‖∞ ≥ ‖2T‖∞`.
pub fn exposure_constraint_met(x_hat: &Vector, x_hat_a: &Vector, t: &Vector) -> bool {
    (x_hat - x_hat_a).amax() - 2.0 * t.amax() >= 0.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureConfig {
    pub k_exp: usize,
    /// Prediction horizon of the cost.
    pub horizon: usize,
    pub u_bar: f64,
    pub q_w: Matrix,
    pub r_w: Matrix,
    pub eps_mask_max: f64,
    pub epsilon_tol: f64,
    /// State components on which the signed exposure constraint may be placed.
    pub components: Vec<usize>,
}

impl ExposureConfig {
    pub fn validate(&self, n_x: usize, n_u: usize) -> Result<()> {
        if self.k_exp < 1 || self.horizon <= self.k_exp {
            return Err(Error::Parameter("need horizon > k_exp ≥ 1".into()));
        }
        if !(self.u_bar > 0.0) || !(self.eps_mask_max >= 0.0) || !(self.epsilon_tol > 0.0) {
            return Err(Error::Parameter("need u_bar > 0, eps_mask_max ≥ 0, epsilon_tol > 0".into()));
        }
        check_shape("ExposureConfig", "Q_w", &self.q_w, n_x, n_x)?;
        check_shape("ExposureConfig", "R_w", &self.r_w, n_u, n_u)?;
        for (name, m) in [("Q_w", &self.q_w), ("R_w", &self.r_w)] {
            if (m - m.transpose()).amax() > 1e-12 || m.clone().cholesky().is_none() {
                return Err(Error::Parameter(format!("{name} must be symmetric positive definite")));
            }
        }
        if self.eps_mask_max * (n_u as f64).sqrt() >= self.u_bar {
            return Err(Error::Parameter("mask range leaves no shake budget".into()));
        }
        if self.components.is_empty() || self.components.iter().any(|&i| i >= n_x) {
            return Err(Error::Parameter("exposure components must index states".into()));
        }
        Ok(())
    }
}

/// The signed linear constraint `s·Σ_t a_tᵀ v_t ≥ rhs` on one state component.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureTarget {
    pub component: usize,
    pub sign: i8,
    /// `2·T̄` plus the worst-case adversary term.
    pub rhs: f64,
    /// `a_t = (Φ_{k−t−1}·B)_{component,·}`, one per shake step.
    pub coeffs: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShakeSequence {
    /// Optimized part `u^d`, head first.
    pub shakes: Vec<Vector>,
    /// Mask `ε` per element; the applied input is `u^d + ε`.
    pub masks: Vec<Vector>,
    /// Applied inputs already consumed by shifting.
    pub applied: Vec<Vector>,
    pub masked: bool,
    pub u_bar: f64,
    pub target: ExposureTarget,
    /// Cost of the nominal rollout at the returned point.
    pub cost: f64,
    pub kkt_residual: f64,
}

impl ShakeSequence {
    pub fn k_exp(&self) -> usize {
        self.target.coeffs.len()
    }

    /// Input to apply now.
    pub fn head(&self) -> Vector {
        &self.shakes[0] + &self.masks[0]
    }

    pub fn applied_at(&self, i: usize) -> Vector {
        &self.shakes[i] + &self.masks[i]
    }

    /// `s·S_ctrl − rhs` over the fixed exposure window, using consumed inputs
    /// first and then the pending ones.
    pub fn exposure_margin(&self) -> f64 {
        let k = self.k_exp();
        let done = self.applied.len().min(k);
        let mut s = 0.0;
        for t in 0..k {
            let v = if t < done { self.applied[t].clone() } else { self.applied_at(t - done) };
            s += self.target.coeffs[t].dot(&v);
        }
        f64::from(self.target.sign) * s - self.target.rhs
    }

    /// Every pending element satisfies `‖u^d + ε‖ ≤ ū`.
    pub fn within_budget(&self) -> bool {
        (0..self.shakes.len()).all(|i| self.applied_at(i).norm() <= self.u_bar * (1.0 + 1e-12))
    }

    pub fn is_exhausted(&self) -> bool {
        self.applied.len() >= self.k_exp()
    }

    pub fn satisfies_invariants(&self) -> bool {
        self.shakes.len() == self.k_exp()
            && self.masks.len() == self.k_exp()
            && self.within_budget()
            && self.exposure_margin() >= -FEAS_TOL
    }
}

fn draw_mask<R: Rng + ?Sized>(n_u: usize, eps_max: f64, rng: &mut R) -> Vector {
    if eps_max > 0.0 {
        Vector::from_fn(n_u, |_, _| rng.random_range(0.0..=eps_max))
    } else {
        Vector::zeros(n_u)
    }
}

/// Worst-case contribution of the adversary and the disturbance mismatch to
/// `component` after `k` steps: the larger of the geometric certificate bound
/// and the exact row-wise bound for this closed loop.
pub fn attack_term(
    powers: &[Matrix],
    cert: &UesCertificate,
    component: usize,
    k: usize,
    w_bar: f64,
    t: &Vector,
) -> f64 {
    let geometric = cert.window_gain(k) * (2.0 * w_bar + t.max());
    let exact: f64 = (0..k)
        .map(|j| {
            powers[j].row(component).iter().zip(t.iter()).map(|(phi, ti)| phi.abs() * (2.0 * w_bar + ti)).sum::<f64>()
        })
        .sum();
    geometric.max(exact)
}

struct CostModel {
    h: Matrix,
    f: Vector,
    c0: f64,
}

impl CostModel {
    fn value(&self, v: &Vector) -> f64 {
        v.dot(&(&self.h * v)) + 2.0 * self.f.dot(v) + self.c0
    }
}

#[allow(clippy::too_many_arguments)]
fn build_cost(
    model: &SystemModel,
    gain: &FeedbackGain,
    a_cl: &Matrix,
    cfg: &ExposureConfig,
    x_hat: &Vector,
    goals: &[Vector],
) -> CostModel {
    let (n_x, n_u, k, n) = (model.n_x, model.n_u, cfg.k_exp, cfg.horizon);
    let dim = k * n_u;
    let mut h = Matrix::zeros(dim, dim);
    let mut f = Vector::zeros(dim);
    let mut c0 = 0.0;
    // Free response e⁰ and sensitivity G of the tracking error to the stacked shakes.
    let mut e0 = x_hat - &goals[0];
    let mut g = Matrix::zeros(n_x, dim);
    let neg_k = -&gain.k;
    for i in 0..=n {
        let mut l = &neg_k * &g;
        if i < k {
            for j in 0..n_u {
                l[(j, i * n_u + j)] += 1.0;
            }
        }
        let u0 = &neg_k * &e0;
        let qg = &cfg.q_w * &g;
        let rl = &cfg.r_w * &l;
        h += g.transpose() * &qg + l.transpose() * &rl;
        f += qg.transpose() * &e0 + rl.transpose() * &u0;
        c0 += e0.dot(&(&cfg.q_w * &e0)) + u0.dot(&(&cfg.r_w * &u0));
        if i == n {
            break;
        }
        let drift = &model.a * &goals[i] - &goals[i + 1];
        e0 = a_cl * &e0 + drift;
        g = a_cl * &g;
        if i < k {
            let mut cols = g.columns_mut(i * n_u, n_u);
            cols += &model.b;
        }
    }
    let h = (&h + h.transpose()) * 0.5;
    CostModel { h, f, c0 }
}

struct BallQp<'a> {
    /// Objective `½zᵀPz + qᵀz` with `P = 2H`.
    p: &'a Matrix,
    lip: f64,
    radii: &'a [f64],
    n_u: usize,
}

impl BallQp<'_> {
    fn project(&self, z: &mut Vector) {
        for (t, r) in self.radii.iter().enumerate() {
            let mut blk = z.rows_mut(t * self.n_u, self.n_u);
            let nrm = blk.norm();
            if nrm > *r {
                blk *= *r / nrm;
            }
        }
    }

    fn grad_map(&self, z: &Vector, q: &Vector) -> f64 {
        let grad = self.p * z + q;
        let mut y = z - &grad / self.lip;
        self.project(&mut y);
        (z - y).norm() * self.lip
    }

    /// Accelerated projected gradient with fixed step `1/L` and adaptive restart.
    fn solve(&self, q: &Vector, z0: &Vector, tol: f64) -> Result<(Vector, f64)> {
        let mut z = z0.clone();
        self.project(&mut z);
        let mut y = z.clone();
        let mut theta = 1.0f64;
        for it in 0..MAX_ITERS {
            let grad = self.p * &y + q;
            let mut z_new = &y - &grad / self.lip;
            self.project(&mut z_new);
            let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let step = &z_new - &z;
            if (&y - &z_new).dot(&step) > 0.0 {
                theta = 1.0;
                y = z_new.clone();
            } else {
                y = &z_new + &step * ((theta - 1.0) / theta_new);
                theta = theta_new;
            }
            z = z_new;
            if it % 10 == 9 {
                let res = self.grad_map(&z, q);
                if res <= tol {
                    return Ok((z, res));
                }
            }
        }
        let res = self.grad_map(&z, q);
        if res <= tol {
            return Ok((z, res));
        }
        Err(Error::Numerical(format!(
            "projected gradient did not reach {tol:e} in {MAX_ITERS} iterations (residual {res:e})"
        )))
    }
}

struct PairSolution {
    z: Vector,
    kkt: f64,
}

/// `min zᵀHz + 2f̃ᵀz` over the balls subject to `aᵀz ≥ b`, via bisection on
/// the scalar multiplier of the halfspace.
fn solve_pair(qp: &BallQp, f_tilde: &Vector, a: &Vector, b: f64) -> Result<PairSolution> {
    let inner_tol = 0.1 * KKT_TOL;
    let q_of = |lambda: f64| 2.0 * f_tilde - a * lambda;
    let (z0, res0) = qp.solve(&q_of(0.0), &Vector::zeros(a.len()), inner_tol)?;
    if a.dot(&z0) - b >= 0.0 {
        return Ok(PairSolution { z: z0, kkt: res0 });
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut z_hi;
    let mut res_hi;
    let mut warm = z0;
    loop {
        let (z, r) = qp.solve(&q_of(hi), &warm, inner_tol)?;
        if a.dot(&z) - b >= 0.0 {
            z_hi = z;
            res_hi = r;
            break;
        }
        warm = z;
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            return Err(Error::Numerical("exposure multiplier diverged".into()));
        }
    }
    for _ in 0..200 {
        let g_hi = a.dot(&z_hi) - b;
        if hi * g_hi <= 0.1 * KKT_TOL || hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (z, r) = qp.solve(&q_of(mid), &z_hi, inner_tol)?;
        if a.dot(&z) - b >= 0.0 {
            hi = mid;
            z_hi = z;
            res_hi = r;
        } else {
            lo = mid;
        }
    }
    let comp = hi * (a.dot(&z_hi) - b);
    Ok(PairSolution { kkt: res_hi.max(comp.abs()), z: z_hi })
}

/// Optimized shake sequence for the current suspect-mode entry.
///
/// `goals` must hold the goal for this step and the next `horizon` steps.
/// `w_bar` is the Euclidean disturbance radius. One QP is solved per
/// (component, sign); the lowest cost wins, ties going to the lower component
/// and then the positive sign.
#[allow(clippy::too_many_arguments)]
pub fn generate_shakes<R: Rng + ?Sized>(
    cfg: &ExposureConfig,
    model: &SystemModel,
    gain: &FeedbackGain,
    cert: &UesCertificate,
    det: &DetectorConfig,
    w_bar: f64,
    x_hat_now: &Vector,
    goals: &[Vector],
    rng: &mut R,
) -> Result<ShakeSequence> {
    cfg.validate(model.n_x, model.n_u)?;
    check_len("generate_shakes", "x_hat", x_hat_now, model.n_x)?;
    check_len("generate_shakes", "T", &det.t, model.n_x)?;
    if goals.len() < cfg.horizon + 1 {
        return Err(Error::Parameter(format!(
            "goal trajectory needs {} entries, got {}",
            cfg.horizon + 1,
            goals.len()
        )));
    }
    let (n_u, k) = (model.n_u, cfg.k_exp);
    let a_cl = closed_loop(model, gain)?;
    let mut powers = vec![Matrix::identity(model.n_x, model.n_x)];
    for j in 1..k {
        powers.push(&a_cl * &powers[j - 1]);
    }

    let masks: Vec<Vector> = (0..k).map(|_| draw_mask(n_u, cfg.eps_mask_max, rng)).collect();
    let radii: Vec<f64> = masks.iter().map(|e| cfg.u_bar - e.norm()).collect();
    let eps = Vector::from_iterator(k * n_u, masks.iter().flat_map(|e| e.iter().copied()));

    let cost = build_cost(model, gain, &a_cl, cfg, x_hat_now, goals);
    let p = &cost.h * 2.0;
    let lip = p.clone().symmetric_eigenvalues().max();
    let qp = BallQp { p: &p, lip, radii: &radii, n_u };
    // Cost is taken on the optimized part only, so the mask stays a dither
    // the optimizer does not undo. Constraints still see `u^d + ε`.
    let f_tilde = cost.f.clone();

    let t_bar = det.t.max();
    let mut best: Option<ShakeSequence> = None;
    let mut closest: Option<(usize, i8, f64, f64)> = None;
    for &comp in &cfg.components {
        let rows: Vec<Vector> = (0..k).map(|t| (&powers[k - 1 - t] * &model.b).row(comp).transpose()).collect();
        let rhs = 2.0 * t_bar + attack_term(&powers, cert, comp, k, w_bar, &det.t);
        for sign in [1i8, -1] {
            let s = f64::from(sign);
            let a = Vector::from_iterator(k * n_u, rows.iter().flat_map(|r| r.iter().map(|v| s * v)));
            let b = rhs - a.dot(&eps);
            let achievable: f64 = rows.iter().zip(&radii).map(|(r, rad)| r.norm() * rad).sum();
            if achievable < b {
                let gap = achievable - b;
                if closest.is_none_or(|c| gap > c.3 - c.2) {
                    closest = Some((comp, sign, b, achievable));
                }
                continue;
            }
            let sol = solve_pair(&qp, &f_tilde, &a, b)?;
            let value = cost.value(&sol.z);
            if best.as_ref().is_some_and(|bst| value >= bst.cost - 1e-12 * bst.cost.abs().max(1.0)) {
                continue;
            }
            let shakes = (0..k).map(|t| sol.z.rows(t * n_u, n_u).into_owned()).collect();
            best = Some(ShakeSequence {
                shakes,
                masks: masks.clone(),
                applied: Vec::new(),
                masked: cfg.eps_mask_max > 0.0,
                u_bar: cfg.u_bar,
                target: ExposureTarget { component: comp, sign, rhs, coeffs: rows.clone() },
                cost: value,
                kkt_residual: sol.kkt,
            });
        }
    }
    match best {
        Some(seq) => {
            debug_assert!(seq.satisfies_invariants());
            Ok(seq)
        }
        None => {
            let (component, sign, required, achievable) = closest.unwrap_or((0, 1, f64::INFINITY, 0.0));
            Err(Error::ExposureInfeasible { component, sign, required, achievable })
        }
    }
}

/// Consumes the head and appends a zero shake (with a fresh mask) at the tail.
pub fn shift_sequence<R: Rng + ?Sized>(seq: &ShakeSequence, cfg: &ExposureConfig, rng: &mut R) -> ShakeSequence {
    let mut next = seq.clone();
    let n_u = seq.shakes[0].len();
    next.applied.push(seq.head());
    next.shakes.remove(0);
    next.masks.remove(0);
    next.shakes.push(Vector::zeros(n_u));
    next.masks.push(if seq.masked { draw_mask(n_u, cfg.eps_mask_max, rng) } else { Vector::zeros(n_u) });
    assert!(next.satisfies_invariants(), "shifted shake sequence lost feasibility");
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn published_bounds() {
        let u_min = exposure_lower_bound(3.4157, 0.5164, 10, 0.05, 0.01, 1.0).unwrap();
        assert!((u_min - 0.08418).abs() < 1e-4, "{u_min}");
        let u_max = compensability_upper_bound(3.4157, 0.5164, 0.4, 0.01, 0.51539).unwrap();
        assert!((u_max - 0.0905).abs() < 5e-4, "{u_max}");
        let e = epsilon_min(3.4157, 0.5164, 10, 0.05, 0.01).unwrap();
        assert!((e - 0.6652).abs() < 1e-3, "{e}");
    }

    #[test]
    fn hand_evaluated_bounds() {
        assert!((exposure_lower_bound(1.0, 0.5, 1, 1.0, 0.0, 1.0).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(exposure_lower_bound(1.0, 0.5, 3, 0.0, 0.0, 1.0).unwrap(), 0.0);
        assert!((compensability_upper_bound(1.0, 0.5, 2.0, 0.5, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let eps = 2.0 * 0.01 / (1.0 - 0.6);
        assert!(compensability_upper_bound(2.0, 0.6, eps, 0.01, 1.0).unwrap().abs() < 1e-15);
        assert!((epsilon_min(1.0, 0.5, 1, 1.0, 0.0).unwrap() - 6.0).abs() < 1e-15);
        assert_eq!(epsilon_min(1.0, 0.5, 4, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn bound_parameter_errors() {
        assert!(exposure_lower_bound(0.0, 0.5, 1, 1.0, 0.0, 1.0).is_err());
        assert!(exposure_lower_bound(1.0, 1.0, 1, 1.0, 0.0, 1.0).is_err());
        assert!(exposure_lower_bound(1.0, 0.5, 0, 1.0, 0.0, 1.0).is_err());
        assert!(compensability_upper_bound(1.0, 0.5, 0.0, 0.0, 1.0).is_err());
        assert!(epsilon_min(1.0, 0.5, 1, -1.0, 0.0).is_err());
    }

    fn params(eps: f64) -> BoundParams {
        BoundParams {
            c: 1.0,
            rho: 0.5,
            k_exp: 1,
            t_bar: 1.0,
            w_bar: 0.0,
            epsilon_tol: eps,
            b_norm: 1.0,
            norm_convention: NormConvention::UnitB,
            beta: 0.05,
            k_inf: 1.48,
        }
    }

    #[test]
    fn interval_cases() {
        let at_min = feasible_interval(&params(6.0)).unwrap();
        assert!((at_min.u_min - at_min.u_max).abs() < 1e-10);
        assert!(at_min.feasible);
        let wide = feasible_interval(&params(12.0)).unwrap();
        assert!(wide.feasible && (wide.u_max - 6.0).abs() < 1e-12 && (wide.u_min - 3.0).abs() < 1e-12);
        assert!(!feasible_interval(&params(5.0)).unwrap().feasible);
    }

    #[test]
    fn exposure_test_cases() {
        let t = Vector::from_element(6, 0.05);
        let mut d = Vector::zeros(6);
        d[0] = 0.2;
        assert!(exposure_constraint_met(&d, &Vector::zeros(6), &t));
        assert!(exposure_constraint_met(&(t.clone() * 2.0), &Vector::zeros(6), &t));
        assert!(!exposure_constraint_met(&Vector::zeros(6), &Vector::zeros(6), &t));
    }

    fn scalar_setup(u_bar: f64) -> (ExposureConfig, SystemModel, FeedbackGain, UesCertificate, DetectorConfig) {
        // A = 1, K = 0.5 gives A_cl = 0.5.
        let model = SystemModel::new(Matrix::identity(1, 1), Matrix::identity(1, 1), 0.0).unwrap();
        let gain = FeedbackGain { k: Matrix::from_element(1, 1, 0.5), p: Matrix::zeros(1, 1) };
        let cert = UesCertificate { c: 1.0, rho: 0.5, horizon_checked: 0 };
        let det = DetectorConfig::new(Vector::from_element(1, 1.0), 0.2).unwrap();
        let cfg = ExposureConfig {
            k_exp: 1,
            horizon: 3,
            u_bar,
            q_w: Matrix::identity(1, 1),
            r_w: Matrix::identity(1, 1),
            eps_mask_max: 0.0,
            epsilon_tol: 10.0,
            components: vec![0],
        };
        (cfg, model, gain, cert, det)
    }

    #[test]
    fn scalar_minimal_shake_sits_on_the_bound() {
        let (cfg, model, gain, cert, det) = scalar_setup(3.5);
        let goals = vec![Vector::zeros(1); 4];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = generate_shakes(&cfg, &model, &gain, &cert, &det, 0.0, &Vector::zeros(1), &goals, &mut rng).unwrap();
        assert!((seq.target.rhs - 3.0).abs() < 1e-12);
        assert!((seq.shakes[0][0].abs() - 3.0).abs() < 1e-8, "{:?}", seq.shakes);
        assert_eq!(seq.target.sign, 1);
        assert!(seq.kkt_residual <= KKT_TOL);
        assert!(seq.satisfies_invariants());
    }

    #[test]
    fn budget_below_requirement_is_infeasible() {
        let (cfg, model, gain, cert, det) = scalar_setup(2.9);
        let goals = vec![Vector::zeros(1); 4];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err =
            generate_shakes(&cfg, &model, &gain, &cert, &det, 0.0, &Vector::zeros(1), &goals, &mut rng).unwrap_err();
        match err {
            Error::ExposureInfeasible { required, achievable, .. } => {
                assert!((required - 3.0).abs() < 1e-12 && (achievable - 2.9).abs() < 1e-12)
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn offset_state_prefers_the_cheaper_sign() {
        // Starting above the goal, a negative shake also helps tracking.
        let (cfg, model, gain, cert, det) = scalar_setup(3.5);
        let goals = vec![Vector::zeros(1); 4];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq =
            generate_shakes(&cfg, &model, &gain, &cert, &det, 0.0, &Vector::from_element(1, 2.0), &goals, &mut rng)
                .unwrap();
        assert_eq!(seq.target.sign, -1);
    }

    #[test]
    fn shifting_consumes_the_sequence() {
        let (mut cfg, model, gain, cert, det) = scalar_setup(2.5);
        cfg.k_exp = 3;
        cfg.horizon = 6;
        let goals = vec![Vector::zeros(1); 7];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seq = generate_shakes(&cfg, &model, &gain, &cert, &det, 0.0, &Vector::zeros(1), &goals, &mut rng).unwrap();
        let first: Vec<f64> = seq.shakes.iter().map(|s| s[0]).collect();
        let mut cur = seq;
        for next in first.iter().skip(1).map(Some).chain([None]) {
            cur = shift_sequence(&cur, &cfg, &mut rng);
            assert_eq!(cur.shakes.len(), 3);
            assert!(cur.exposure_margin() >= -FEAS_TOL);
            if let Some(v) = next {
                assert_eq!(cur.shakes[0][0], *v);
                assert!(!cur.is_exhausted());
            }
        }
        assert!(cur.is_exhausted());
        assert!(cur.shakes.iter().all(|s| s[0] == 0.0));
    }
}
