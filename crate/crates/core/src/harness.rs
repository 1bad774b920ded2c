//! Closed-loop episodes: plant, reliable and suspicious sensors, filter,
//! detector, attacker and the suspect-mode response, plus batch aggregation
//! and the packaged UAV scenario.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{attacker_step, craft_injection, AttackPlan, AttackerState};
use crate::controller::{
    certify_ues, closed_loop, saturate, synthesize_feedback, unsaturated_input, FeedbackGain, UesCertificate,
};
use crate::detector::{classify_mode, statistic, DetectorConfig, Mode};
use crate::error::{Error, Result};
use crate::estimator::{steady_state_gain, EskfState, FrozenEstimate};
use crate::exposure::{
    feasible_interval, generate_shakes, shift_sequence, BoundParams, BoundsReport, ExposureConfig, NormConvention,
    ShakeSequence,
};
use crate::lin_model::{build_uav_model, inf_norm, sample_in_ball, step_dynamics, NoiseConvention, SystemModel};
use crate::{Matrix, Vector};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dt: f64,
    pub w_bar: f64,
    #[serde(default)]
    pub noise_convention: NoiseConvention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    /// `Q = q·I`.
    pub q: f64,
    /// `R = r·I`.
    pub r: f64,
    pub saturation: f64,
    pub rho_margin: f64,
    pub cert_horizon: usize,
    /// Replace the certified `(c, ρ)` by these constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    /// `Qn = qn·I`.
    pub qn: f64,
    /// `Rn = rn·I`.
    pub rn: f64,
    /// `P₀ = p0·I`.
    pub p0: f64,
    /// Reliable-sensor velocity bias per axis (m/s).
    pub drift: Vec<f64>,
    /// Radius of the reliable sensor's per-step state-increment noise.
    pub imu_noise: f64,
    /// Infinity-norm bound of the suspicious sensor's noise (m).
    pub v_bar: f64,
    #[serde(default)]
    pub frozen_estimate: FrozenEstimate,
    #[serde(default)]
    pub reset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub t: Vec<f64>,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureSpec {
    /// Freeze-and-shake response on suspect entry.
    pub enabled: bool,
    pub k_exp: usize,
    pub horizon: usize,
    pub u_bar: f64,
    /// Cost weights `q·I`, `r·I`.
    pub q_weight: f64,
    pub r_weight: f64,
    pub eps_mask_max: f64,
    pub epsilon_tol: f64,
    pub components: Vec<usize>,
    #[serde(default)]
    pub norm_convention: NormConvention,
    /// Enter suspect mode at this step regardless of the statistic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_suspect_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub step: usize,
    pub position: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GoalSpec {
    Constant { state: Vec<f64> },
    ConstantVelocity { start: Vec<f64>, velocity: Vec<f64> },
    Waypoints { points: Vec<Waypoint> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub beta: f64,
    /// `‖K‖∞` for the suspect-threshold bound; the steady-state filter gain when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_inf: Option<f64>,
}

impl Default for BoundsSpec {
    fn default() -> Self {
        Self { beta: 0.05, k_inf: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub steps: usize,
    pub seed: u64,
    pub model: ModelSpec,
    pub controller: ControllerSpec,
    pub estimator: EstimatorSpec,
    pub detector: DetectorSpec,
    pub exposure: ExposureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackPlan>,
    pub goal: GoalSpec,
    #[serde(default)]
    pub bounds: BoundsSpec,
}

impl ScenarioConfig {
    /// UAV case study: 300 steps at 0.5 s, goal moving at 1 m/s along x.
    pub fn uav_default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "uav".into(),
            steps: 300,
            seed: 0,
            model: ModelSpec { dt: 0.5, w_bar: 0.01, noise_convention: NoiseConvention::Norm },
            controller: ControllerSpec {
                q: 1.0,
                r: 0.1,
                saturation: 0.5,
                rho_margin: 0.05,
                cert_horizon: 200,
                injected_c: None,
                injected_rho: None,
            },
            estimator: EstimatorSpec {
                qn: 1e-4,
                rn: 1e-3,
                p0: 1e-3,
                drift: vec![1e-3; 3],
                imu_noise: 1e-4,
                v_bar: 0.005,
                frozen_estimate: FrozenEstimate::HoldCorrection,
                reset: false,
            },
            detector: DetectorSpec { t: vec![0.05; 6], eta: 0.2 },
            exposure: ExposureSpec {
                enabled: true,
                k_exp: 10,
                horizon: 20,
                u_bar: 0.65,
                q_weight: 1.0,
                r_weight: 0.1,
                eps_mask_max: 1e-3,
                epsilon_tol: 2.5,
                components: vec![0, 1, 2],
                norm_convention: NormConvention::SpectralB,
                forced_suspect_step: None,
            },
            attack: None,
            goal: GoalSpec::ConstantVelocity { start: vec![0.0; 3], velocity: vec![1.0, 0.0, 0.0] },
            bounds: BoundsSpec::default(),
        }
    }

    /// Stealthy x-channel attack over 30–100 s.
    pub fn uav_attack(intensity: f64) -> Self {
        let mut cfg = Self::uav_default();
        cfg.name = format!("uav-attack-{intensity}");
        cfg.attack = Some(AttackPlan {
            start_step: 60,
            end_step: 200,
            intensity,
            channels: vec![0],
            direction: vec![1.0],
            beta_target: 0.05,
            w_a_bound: 0.0,
        });
        cfg
    }

    /// Bound arithmetic with the published constants (`c`, `ρ`, `ε`, `‖K‖∞`).
    pub fn published_bounds() -> Self {
        let mut cfg = Self::uav_default();
        cfg.name = "published-bounds".into();
        cfg.controller.injected_c = Some(3.4157);
        cfg.controller.injected_rho = Some(0.5164);
        cfg.exposure.epsilon_tol = 0.4;
        cfg.exposure.u_bar = 0.0905;
        cfg.bounds.k_inf = Some(1.48);
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Goal state `[p; v]` at step `k`.
pub fn goal_at(spec: &GoalSpec, dt: f64, k: usize) -> Result<Vector> {
    let state = match spec {
        GoalSpec::Constant { state } => state.clone(),
        GoalSpec::ConstantVelocity { start, velocity } => {
            let t = k as f64 * dt;
            start.iter().zip(velocity).map(|(p, v)| p + v * t).chain(velocity.iter().copied()).collect()
        }
        GoalSpec::Waypoints { points } => {
            let first = points.first().ok_or_else(|| Error::Config("waypoint list is empty".into()))?;
            let dim = first.position.len();
            let hold = |p: &Waypoint| p.position.iter().copied().chain(std::iter::repeat_n(0.0, dim)).collect();
            if k <= first.step {
                hold(first)
            } else if let Some(w) = points.windows(2).find(|w| k >= w[0].step && k < w[1].step) {
                let span = (w[1].step - w[0].step) as f64;
                let s = (k - w[0].step) as f64 / span;
                let pos = w[0].position.iter().zip(&w[1].position).map(|(a, b)| a + s * (b - a));
                let vel = w[0].position.iter().zip(&w[1].position).map(|(a, b)| (b - a) / (span * dt));
                pos.chain(vel).collect()
            } else {
                hold(points.last().unwrap_or(first))
            }
        }
    };
    Ok(Vector::from_vec(state))
}

/// Everything derived from a config once per episode.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub model: SystemModel,
    pub gain: FeedbackGain,
    pub a_cl: Matrix,
    pub cert: UesCertificate,
    pub h: Matrix,
    pub det: DetectorConfig,
    pub exposure: ExposureConfig,
    /// Euclidean radius of the process disturbance.
    pub w_radius: f64,
}

impl Scenario {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        let m = build_uav_model(cfg.model.dt)?;
        let model = SystemModel::new(m.a, m.b, cfg.model.w_bar)?;
        let (n_x, n_u) = (model.n_x, model.n_u);
        let c = &cfg.controller;
        if !(c.saturation > 0.0) {
            return Err(Error::Config("controller.saturation must be > 0".into()));
        }
        let gain =
            synthesize_feedback(&model, &(Matrix::identity(n_x, n_x) * c.q), &(Matrix::identity(n_u, n_u) * c.r))?;
        let a_cl = closed_loop(&model, &gain)?;
        let cert = match (c.injected_c, c.injected_rho) {
            (Some(cc), Some(rho)) => UesCertificate::injected(cc, rho)?,
            (None, None) => certify_ues(&a_cl, c.cert_horizon, c.rho_margin)?,
            _ => return Err(Error::Config("injected_c and injected_rho go together".into())),
        };
        let mut h = Matrix::zeros(n_u, n_x);
        for i in 0..n_u {
            h[(i, i)] = 1.0;
        }
        if cfg.detector.t.len() != n_x {
            return Err(Error::Config(format!("detector.t needs {n_x} entries")));
        }
        let det = DetectorConfig::new(Vector::from_vec(cfg.detector.t.clone()), cfg.detector.eta)?;
        let e = &cfg.exposure;
        let exposure = ExposureConfig {
            k_exp: e.k_exp,
            horizon: e.horizon,
            u_bar: e.u_bar,
            q_w: Matrix::identity(n_x, n_x) * e.q_weight,
            r_w: Matrix::identity(n_u, n_u) * e.r_weight,
            eps_mask_max: e.eps_mask_max,
            epsilon_tol: e.epsilon_tol,
            components: e.components.clone(),
        };
        exposure.validate(n_x, n_u)?;
        let est = &cfg.estimator;
        if est.drift.len() != n_u {
            return Err(Error::Config(format!("estimator.drift needs {n_u} entries")));
        }
        if !(est.qn >= 0.0 && est.rn > 0.0 && est.p0 >= 0.0 && est.imu_noise >= 0.0 && est.v_bar >= 0.0) {
            return Err(Error::Config("estimator covariances and noise bounds must be nonnegative (rn > 0)".into()));
        }
        if let Some(plan) = &cfg.attack {
            plan.validate(n_u)?;
            if cfg.steps <= plan.end_step {
                return Err(Error::Config("episode must outlast the attack window".into()));
            }
        }
        if cfg.steps == 0 {
            return Err(Error::Config("steps must be ≥ 1".into()));
        }
        for k in [0, cfg.steps] {
            if goal_at(&cfg.goal, cfg.model.dt, k)?.len() != n_x {
                return Err(Error::Config(format!("goal must describe {n_x} states")));
            }
        }
        let w_radius = cfg.model.noise_convention.radius(cfg.model.w_bar);
        Ok(Self { cfg: cfg.clone(), model, gain, a_cl, cert, h, det, exposure, w_radius })
    }

    pub fn filter(&self, x0: Vector) -> Result<EskfState> {
        let (n_x, n_y) = (self.model.n_x, self.h.nrows());
        let e = &self.cfg.estimator;
        let mut st = EskfState::new(
            x0,
            Matrix::identity(n_x, n_x) * e.p0,
            Matrix::identity(n_x, n_x) * e.qn,
            Matrix::identity(n_y, n_y) * e.rn,
            self.h.clone(),
        )?;
        st.frozen_estimate = e.frozen_estimate;
        st.reset = e.reset;
        Ok(st)
    }

    /// `‖K‖∞` of the settled filter gain.
    pub fn steady_gain_inf_norm(&self) -> Result<f64> {
        let e = &self.cfg.estimator;
        let (n_x, n_y) = (self.model.n_x, self.h.nrows());
        let (k, _) = steady_state_gain(
            &self.model,
            &self.h,
            &(Matrix::identity(n_x, n_x) * e.qn),
            &(Matrix::identity(n_y, n_y) * e.rn),
            &(Matrix::identity(n_x, n_x) * e.p0),
            100_000,
        )?;
        Ok(inf_norm(&k))
    }

    pub fn bound_params(&self, convention: NormConvention) -> Result<BoundParams> {
        let k_inf = match self.cfg.bounds.k_inf {
            Some(v) => v,
            None => self.steady_gain_inf_norm()?,
        };
        Ok(BoundParams {
            c: self.cert.c,
            rho: self.cert.rho,
            k_exp: self.exposure.k_exp,
            t_bar: self.det.t_bar(),
            w_bar: self.w_radius,
            epsilon_tol: self.exposure.epsilon_tol,
            b_norm: convention.b_norm(&self.model.b),
            norm_convention: convention,
            beta: self.cfg.bounds.beta,
            k_inf,
        })
    }

    pub fn bounds(&self, convention: NormConvention) -> Result<BoundsReport> {
        feasible_interval(&self.bound_params(convention)?)
    }

    pub fn goal(&self, k: usize) -> Vector {
        goal_at(&self.cfg.goal, self.cfg.model.dt, k).expect("goal validated at build")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x_true: Vector,
    pub x_hat: Vector,
    /// Twin prior while the attack is running, NaN otherwise.
    pub x_hat_a: Vector,
    pub x_goal: Vector,
    pub u_nominal: Vector,
    pub u_shake: Vector,
    /// Applied (saturated) input.
    pub u: Vector,
    pub y: Vector,
    pub delta_y: Vector,
    pub r: Vector,
    pub q: f64,
    pub mode: Mode,
    pub frozen: bool,
    pub attack_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub dt: f64,
    pub n_x: usize,
    pub n_u: usize,
    /// `[start, end)` of the attack, if any.
    pub attack_window: Option<(usize, usize)>,
    pub records: Vec<StepRecord>,
    /// Suspect entries whose shake problem had no solution.
    pub infeasible_entries: usize,
    /// Shake horizons that elapsed without an alarm.
    pub unexposed_horizons: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    /// Alarm inside the attack window.
    pub exposed: bool,
    /// Steps from the first suspect record to the first alarm inside the window.
    pub exposure_latency: Option<usize>,
    /// Alarm in an episode without attack, or before the attack starts.
    pub false_alarm: bool,
    /// Alarm after the attack window closed.
    pub post_attack_alarm: bool,
    pub first_suspect_step: Option<usize>,
    pub first_alarm_step: Option<usize>,
    pub q_at_alarm: Option<f64>,
    pub max_q_in_window: Option<f64>,
    /// Largest position deviation of the true state from the goal (∞-norm).
    pub max_true_deviation: f64,
    /// Largest deviation of the true x-position from the goal.
    pub max_true_x_deviation: f64,
    /// Largest position deviation of the estimate from the goal (∞-norm).
    pub max_estimate_deviation: f64,
    /// Largest `‖x − x_goal‖` over the final 20% of steps.
    pub tail_tracking_error: f64,
    pub infeasible_entries: usize,
    pub unexposed_horizons: usize,
}

enum Response {
    Idle,
    Shaking { entry: usize, seq: ShakeSequence },
    Exposed,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn gnss_noise<R: Rng + ?Sized>(n: usize, v_bar: f64, rng: &mut R) -> Vector {
    if v_bar > 0.0 {
        Vector::from_fn(n, |_, _| rng.random_range(-v_bar..=v_bar))
    } else {
        Vector::zeros(n)
    }
}

/// Exposure config restricted to the configured components whose residual
/// ratio crossed the suspect threshold. All configured components when none did.
fn suspect_components(cfg: &ExposureConfig, r: &Vector, det: &DetectorConfig) -> ExposureConfig {
    let hot: Vec<usize> =
        cfg.components.iter().copied().filter(|&i| i < r.len() && r[i].abs() / det.t[i] >= det.eta).collect();
    let mut c = cfg.clone();
    if !hot.is_empty() {
        c.components = hot;
    }
    c
}

pub fn run_episode(cfg: &ScenarioConfig) -> Result<(EpisodeTrace, EpisodeSummary)> {
    let sc = Scenario::build(cfg)?;
    let trace = simulate(&sc)?;
    let mut summary = summarize(&trace);
    summary.seed = cfg.seed;
    Ok((trace, summary))
}

fn simulate(sc: &Scenario) -> Result<EpisodeTrace> {
    let cfg = &sc.cfg;
    let (n_x, n_u) = (sc.model.n_x, sc.model.n_u);
    let dt = cfg.model.dt;
    let est = &cfg.estimator;
    let sat = cfg.controller.saturation;
    let mut plant_rng = rng_stream(cfg.seed, 1);
    let mut imu_rng = rng_stream(cfg.seed, 2);
    let mut gnss_rng = rng_stream(cfg.seed, 3);
    let mut atk_rng = rng_stream(cfg.seed, 4);
    let mut mask_rng = rng_stream(cfg.seed, 5);

    let drift = Vector::from_iterator(n_x, est.drift.iter().map(|b| b * dt).chain(std::iter::repeat_n(0.0, n_u)));
    let goals: Vec<Vector> = (0..=cfg.steps + cfg.exposure.horizon).map(|k| sc.goal(k)).collect();

    let mut x = goals[0].clone();
    let mut filter = sc.filter(x.clone())?;
    let mut u_prev = Vector::zeros(n_u);
    let mut attacker: Option<AttackerState> = None;
    let mut prev_mode = Mode::Normal;
    let mut response = Response::Idle;
    let mut records = Vec::with_capacity(cfg.steps);
    let mut infeasible_entries = 0;
    let mut unexposed_horizons = 0;
    let nan = Vector::from_element(n_x, f64::NAN);

    for k in 0..cfg.steps {
        let step_err = |e: Error| e.at_step(k);
        if k > 0 {
            let w = sample_in_ball(n_x, sc.w_radius, &mut plant_rng).map_err(step_err)?;
            x = step_dynamics(&sc.model, &x, &u_prev, &w).map_err(step_err)?;
            let imu = &w + &drift + sample_in_ball(n_x, est.imu_noise, &mut imu_rng).map_err(step_err)?;
            filter = filter.predict(&sc.model, &u_prev, &imu).map_err(step_err)?;
        }
        let y_star = &sc.h * &x + gnss_noise(sc.h.nrows(), est.v_bar, &mut gnss_rng);
        let prior = filter.fused_estimate();

        let mut delta_y = Vector::zeros(sc.h.nrows());
        let mut x_hat_a = nan.clone();
        let plan = cfg.attack.as_ref();
        let attack_active = plan.is_some_and(|p| p.active(k));
        if let (true, Some(plan)) = (attack_active, plan) {
            let st = attacker.take().unwrap_or_else(|| AttackerState::synced(&prior));
            let goal_prev = &goals[k.saturating_sub(1)];
            let st = attacker_step(&st, &sc.model, &sc.gain, sat, &sc.det.t, &sc.h, plan, goal_prev, &mut atk_rng)
                .map_err(step_err)?;
            let k_gain = filter.gain().map_err(step_err)?;
            let (dy, st) = craft_injection(&st, &k_gain, &y_star, &sc.h, &sc.det.t, plan).map_err(step_err)?;
            x_hat_a = st.x_hat_a.clone();
            delta_y = dy;
            attacker = Some(st);
        }
        let y = &y_star + &delta_y;
        let report = filter.residual(&y).map_err(step_err)?;
        let q = statistic(&report.r, &sc.det).map_err(step_err)?;
        let mode = classify_mode(q, &sc.det);

        response = match response {
            Response::Shaking { entry, seq } => {
                if mode == Mode::Attacked {
                    Response::Exposed
                } else if k - entry >= sc.exposure.k_exp {
                    filter = filter.unfreeze();
                    unexposed_horizons += 1;
                    Response::Idle
                } else {
                    Response::Shaking { entry, seq }
                }
            }
            Response::Idle => {
                let entering =
                    (prev_mode == Mode::Normal && mode == Mode::Suspect) || cfg.exposure.forced_suspect_step == Some(k);
                if cfg.exposure.enabled && entering && mode != Mode::Attacked {
                    let window = &goals[k..=k + sc.exposure.horizon];
                    let targeted = suspect_components(&sc.exposure, &report.r, &sc.det);
                    match generate_shakes(
                        &targeted,
                        &sc.model,
                        &sc.gain,
                        &sc.cert,
                        &sc.det,
                        sc.w_radius,
                        &prior,
                        window,
                        &mut mask_rng,
                    ) {
                        Ok(seq) => {
                            filter = filter.freeze();
                            Response::Shaking { entry: k, seq }
                        }
                        Err(Error::ExposureInfeasible { .. }) => {
                            infeasible_entries += 1;
                            Response::Idle
                        }
                        Err(e) => return Err(e.at_step(k)),
                    }
                } else {
                    Response::Idle
                }
            }
            Response::Exposed => Response::Exposed,
        };

        if !filter.frozen {
            filter = filter.update(&y).map_err(step_err)?.0;
        }
        let x_hat = filter.fused_estimate();
        let u_nominal = unsaturated_input(&sc.gain, &x_hat, &goals[k]).map_err(step_err)?;
        let u_shake = match &mut response {
            Response::Shaking { seq, .. } => {
                let head = seq.head();
                *seq = shift_sequence(seq, &sc.exposure, &mut mask_rng);
                head
            }
            _ => Vector::zeros(n_u),
        };
        let u = saturate(&(&u_nominal + &u_shake), sat);
        records.push(StepRecord {
            k,
            x_true: x.clone(),
            x_hat,
            x_hat_a,
            x_goal: goals[k].clone(),
            u_nominal,
            u_shake,
            u: u.clone(),
            y,
            delta_y,
            r: report.r,
            q,
            mode,
            frozen: filter.frozen,
            attack_active,
        });
        u_prev = u;
        prev_mode = mode;
    }
    Ok(EpisodeTrace {
        dt,
        n_x,
        n_u,
        attack_window: cfg.attack.as_ref().map(|p| (p.start_step, p.end_step)),
        records,
        infeasible_entries,
        unexposed_horizons,
    })
}

/// Pure fold over a trace.
pub fn summarize(trace: &EpisodeTrace) -> EpisodeSummary {
    let recs = &trace.records;
    let in_window = |k: usize| trace.attack_window.is_some_and(|(s, e)| k >= s && k < e);
    let first_suspect_step = recs.iter().find(|r| r.mode == Mode::Suspect).map(|r| r.k);
    let first_alarm_step = recs.iter().find(|r| r.mode == Mode::Attacked).map(|r| r.k);
    let window_alarm = recs.iter().find(|r| r.mode == Mode::Attacked && in_window(r.k));
    let exposed = window_alarm.is_some();
    let exposure_latency = window_alarm.map(|a| {
        let entry = recs.iter().find(|r| r.mode == Mode::Suspect && r.k <= a.k).map_or(a.k, |r| r.k);
        a.k - entry
    });
    let false_alarm = recs.iter().any(|r| r.mode == Mode::Attacked && trace.attack_window.is_none_or(|(s, _)| r.k < s));
    let post_attack_alarm =
        recs.iter().any(|r| r.mode == Mode::Attacked && trace.attack_window.is_some_and(|(_, e)| r.k >= e));
    let max_q_in_window = recs.iter().filter(|r| in_window(r.k)).map(|r| r.q).reduce(f64::max);
    let n_pos = trace.n_u;
    let pos_dev = |v: &Vector, g: &Vector| (v.rows(0, n_pos) - g.rows(0, n_pos)).amax();
    let max_true_deviation = recs.iter().map(|r| pos_dev(&r.x_true, &r.x_goal)).fold(0.0, f64::max);
    let max_true_x_deviation = recs.iter().map(|r| (r.x_true[0] - r.x_goal[0]).abs()).fold(0.0, f64::max);
    let max_estimate_deviation = recs.iter().map(|r| pos_dev(&r.x_hat, &r.x_goal)).fold(0.0, f64::max);
    let tail_start = recs.len() - recs.len().div_ceil(5);
    let tail_tracking_error = recs[tail_start..].iter().map(|r| (&r.x_true - &r.x_goal).norm()).fold(0.0, f64::max);
    EpisodeSummary {
        seed: 0,
        exposed,
        exposure_latency,
        false_alarm,
        post_attack_alarm,
        first_suspect_step,
        first_alarm_step,
        q_at_alarm: window_alarm.map(|r| r.q),
        max_q_in_window,
        max_true_deviation,
        max_true_x_deviation,
        max_estimate_deviation,
        tail_tracking_error,
        infeasible_entries: trace.infeasible_entries,
        unexposed_horizons: trace.unexposed_horizons,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchStats {
    pub n: usize,
    pub exposure_rate: f64,
    pub false_alarm_rate: f64,
    pub post_attack_alarm_rate: f64,
    pub latency_median: Option<f64>,
    pub latency_max: Option<usize>,
    pub q_at_alarm_min: Option<f64>,
    pub q_at_alarm_max: Option<f64>,
    pub max_q_in_window: Option<f64>,
    pub true_deviation_median: f64,
    pub true_deviation_min: f64,
    pub true_deviation_max: f64,
    pub tail_error_max: f64,
    pub infeasible_entries: usize,
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn aggregate(summaries: &[EpisodeSummary]) -> BatchStats {
    let n = summaries.len();
    let rate = |f: &dyn Fn(&EpisodeSummary) -> bool| summaries.iter().filter(|s| f(s)).count() as f64 / n.max(1) as f64;
    let mut lat: Vec<f64> = summaries.iter().filter_map(|s| s.exposure_latency.map(|l| l as f64)).collect();
    let qa: Vec<f64> = summaries.iter().filter_map(|s| s.q_at_alarm).collect();
    let mut dev: Vec<f64> = summaries.iter().map(|s| s.max_true_deviation).collect();
    BatchStats {
        n,
        exposure_rate: rate(&|s| s.exposed),
        false_alarm_rate: rate(&|s| s.false_alarm),
        post_attack_alarm_rate: rate(&|s| s.post_attack_alarm),
        latency_max: summaries.iter().filter_map(|s| s.exposure_latency).max(),
        latency_median: median(&mut lat),
        q_at_alarm_min: qa.iter().copied().reduce(f64::min),
        q_at_alarm_max: qa.iter().copied().reduce(f64::max),
        max_q_in_window: summaries.iter().filter_map(|s| s.max_q_in_window).reduce(f64::max),
        true_deviation_min: dev.iter().copied().fold(f64::INFINITY, f64::min),
        true_deviation_max: dev.iter().copied().fold(0.0, f64::max),
        true_deviation_median: median(&mut dev).unwrap_or(0.0),
        tail_error_max: summaries.iter().map(|s| s.tail_tracking_error).fold(0.0, f64::max),
        infeasible_entries: summaries.iter().map(|s| s.infeasible_entries).sum(),
    }
}

/// Seeds `cfg.seed .. cfg.seed + n_seeds`, run in parallel.
pub fn run_batch(cfg: &ScenarioConfig, n_seeds: usize) -> Result<(Vec<EpisodeSummary>, BatchStats)> {
    if n_seeds == 0 {
        return Err(Error::Parameter("n_seeds must be ≥ 1".into()));
    }
    Scenario::build(cfg)?;
    let summaries: Result<Vec<EpisodeSummary>> = (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(i);
            run_episode(&c).map(|(_, s)| s)
        })
        .collect();
    let summaries = summaries?;
    let stats = aggregate(&summaries);
    Ok((summaries, stats))
}
