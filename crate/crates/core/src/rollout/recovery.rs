//! Recovery mode: trigger test and linear blend toward the expert.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::geometry::wrap_angle;
use crate::sim::state::{AgentState, TrajectoryPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryConfig {
    pub enabled: bool,
    /// Trigger threshold on the generalized distance, meters.
    pub threshold: f64,
    /// Ramp length N_rec: λ_k = min(1, k / N_rec).
    pub ramp_steps: usize,
    /// Trailing episode steps during which recovery never triggers.
    pub disable_window: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { enabled: true, threshold: 0.75, ramp_steps: 15, disable_window: 30 }
    }
}

impl RecoveryConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self, prediction_horizon: usize) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Config("recovery threshold must be > 0".into()));
        }
        if self.ramp_steps == 0 || self.ramp_steps > prediction_horizon {
            return Err(Error::Config(format!(
                "recovery ramp {} must lie in 1..={prediction_horizon}",
                self.ramp_steps
            )));
        }
        if self.disable_window < prediction_horizon {
            return Err(Error::Config(format!(
                "disable window {} shorter than prediction horizon {prediction_horizon}",
                self.disable_window
            )));
        }
        Ok(())
    }

    /// Blend weight for waypoint `k` (1-based).
    pub fn lambda(&self, k: usize) -> f64 {
        (k as f64 / self.ramp_steps as f64).min(1.0)
    }
}

/// True iff recovery is on, the distance strictly exceeds the threshold and
/// `t` lies before the trailing disable window of an episode of `horizon` steps.
pub fn recovery_check(distance: f64, rcfg: &RecoveryConfig, t: usize, horizon: usize) -> bool {
    rcfg.enabled && distance > rcfg.threshold && t + rcfg.disable_window < horizon
}

/// Blends waypoint k of `plan` toward expert state t+k with weight λ_k.
/// Positions and speeds mix linearly, headings along the shorter arc; once
/// λ_k reaches 1 the expert state is copied exactly.
pub fn recovery_blend(plan: &TrajectoryPlan, expert_future: &[AgentState], rcfg: &RecoveryConfig) -> Result<TrajectoryPlan> {
    let f = plan.horizon();
    if expert_future.len() < f {
        return Err(Error::Horizon { needed: f, available: expert_future.len() });
    }
    let waypoints = plan
        .waypoints
        .iter()
        .zip(expert_future)
        .enumerate()
        .map(|(i, (p, e))| {
            let lam = rcfg.lambda(i + 1);
            if lam >= 1.0 {
                return *e;
            }
            AgentState {
                x: (1.0 - lam) * p.x + lam * e.x,
                y: (1.0 - lam) * p.y + lam * e.y,
                heading: wrap_angle(p.heading + lam * wrap_angle(e.heading - p.heading)),
                speed: (1.0 - lam) * p.speed + lam * e.speed,
            }
        })
        .collect();
    Ok(TrajectoryPlan::new(waypoints, plan.dt))
}
