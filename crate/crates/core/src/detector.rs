//! Max-ratio residual test and the three-mode rule.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::Vector;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Per-component residual thresholds (state units).
    pub t: Vector,
    /// Suspect threshold in (0, 1).
    pub eta: f64,
}

impl DetectorConfig {
    pub fn new(t: Vector, eta: f64) -> Result<Self> {
        if t.is_empty() || t.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Parameter("all thresholds must be finite and > 0".into()));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::Parameter(format!("eta must be in (0, 1), got {eta}")));
        }
        Ok(Self { t, eta })
    }

    /// Largest threshold component.
    pub fn t_bar(&self) -> f64 {
        self.t.max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Normal,
    Suspect,
    Attacked,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Normal => "normal",
            Mode::Suspect => "suspect",
            Mode::Attacked => "attacked",
        }
    }
}

/// `max_i |r_i| / T_i`.
pub fn statistic(r: &Vector, cfg: &DetectorConfig) -> Result<f64> {
    check_len("statistic", "r", r, cfg.t.len())?;
    Ok(r.iter().zip(cfg.t.iter()).map(|(ri, ti)| ri.abs() / ti).fold(0.0, f64::max))
}

/// `|r_i| ≤ T_i` for every component (closed set).
pub fn in_normal_set(r: &Vector, cfg: &DetectorConfig) -> Result<bool> {
    check_len("in_normal_set", "r", r, cfg.t.len())?;
    Ok(r.iter().zip(cfg.t.iter()).all(|(ri, ti)| ri.abs() <= *ti))
}

/// Memoryless rule; `q = 1` exactly counts as an alarm.
pub fn classify_mode(q: f64, cfg: &DetectorConfig) -> Mode {
    if q >= 1.0 {
        Mode::Attacked
    } else if q >= cfg.eta {
        Mode::Suspect
    } else {
        Mode::Normal
    }
}

/// Largest suspect threshold that a `beta`-sized injection is guaranteed to
/// cross: `(K_inf·beta − T_bar)/T_bar`. May be ≤ 0.
pub fn suspect_threshold_bound(beta: f64, k_inf: f64, t_bar: f64) -> f64 {
    (k_inf * beta - t_bar) / t_bar
}
