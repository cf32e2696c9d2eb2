//! Run metrics computed from a persisted trajectory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sim::Trajectory;

pub const POSITION_TOL: f64 = 0.5;
pub const HEADING_TOL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub samples: usize,
    pub final_time: f64,
    pub final_eta_norm: f64,
    pub final_position_error: f64,
    pub final_heading_error: f64,
    /// Relative parameter error at the end of the run.
    pub final_theta_err: f64,
    /// Earliest time after which position and heading stay within tolerance.
    pub station_time: Option<f64>,
    /// Earliest time after which the relative parameter error stays below 5%.
    pub theta_time_5pct: Option<f64>,
    /// Same for 0.1%.
    pub theta_time_01pct: Option<f64>,
    pub min_lambda: f64,
    pub max_abs_delta: f64,
    pub max_delta_k: f64,
    pub max_gamma_norm: f64,
    pub max_wa_norm: f64,
    pub final_wc_ref_err: f64,
    pub wall_clock_seconds: f64,
}

/// First time from which `ok` holds for every remaining sample.
pub fn settle_time(traj: &Trajectory, ok: impl Fn(usize) -> bool) -> Option<f64> {
    let n = traj.samples.len();
    let mut first = None;
    for i in (0..n).rev() {
        if ok(i) {
            first = Some(i);
        } else {
            break;
        }
    }
    first.map(|i| traj.samples[i].t)
}

impl RunReport {
    pub fn from_trajectory(traj: &Trajectory, wall_clock_seconds: f64) -> Self {
        let s = &traj.samples;
        let max = |f: &dyn Fn(usize) -> f64| (0..s.len()).map(f).fold(0.0, f64::max);
        let last = s.last();
        let pos = |i: usize| s[i].zeta[0].hypot(s[i].zeta[1]);
        Self {
            samples: s.len(),
            final_time: last.map_or(0.0, |l| l.t),
            final_eta_norm: last.map_or(0.0, |l| l.zeta.fixed_rows::<3>(0).norm()),
            final_position_error: last.map_or(0.0, |l| l.zeta[0].hypot(l.zeta[1])),
            final_heading_error: last.map_or(0.0, |l| l.zeta[2].abs()),
            final_theta_err: last.map_or(0.0, |l| l.diag.theta_err),
            station_time: settle_time(traj, |i| pos(i) <= POSITION_TOL && s[i].zeta[2].abs() <= HEADING_TOL),
            theta_time_5pct: settle_time(traj, |i| s[i].diag.theta_err <= 0.05),
            theta_time_01pct: settle_time(traj, |i| s[i].diag.theta_err <= 1e-3),
            min_lambda: s.iter().map(|x| x.diag.lambda_min).fold(f64::INFINITY, f64::min),
            max_abs_delta: max(&|i| s[i].diag.delta.abs()),
            max_delta_k: max(&|i| s[i].diag.delta_k_max),
            max_gamma_norm: max(&|i| s[i].diag.gamma_norm),
            max_wa_norm: max(&|i| s[i].diag.wa_norm),
            final_wc_ref_err: last.map_or(0.0, |l| l.diag.wc_ref_err),
            wall_clock_seconds,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
