//! Generalized trajectory distance between an action's implied states and the
//! expert continuation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::vocab::TokenVocabulary;
use crate::sim::dynamics::step_deterministic;
use crate::sim::geometry::wrap_angle;
use crate::sim::state::{Action, AgentState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Weighted ℓ2 over position, heading and speed of the reference point.
    CenterPoint,
    /// Mean Euclidean distance between the four footprint corners.
    FourCorner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistanceConfig {
    /// Comparison horizon H in steps.
    pub horizon: usize,
    /// Step weights w_1..w_H; `None` means uniform.
    pub weights: Option<Vec<f64>>,
    pub mode: DistanceMode,
    pub w_position: f64,
    pub w_heading: f64,
    pub w_speed: f64,
    /// Divide by the sum of the weights actually used.
    pub normalize: bool,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            weights: None,
            mode: DistanceMode::FourCorner,
            w_position: 1.0,
            w_heading: 1.0,
            w_speed: 0.1,
            normalize: true,
        }
    }
}

impl DistanceConfig {
    /// One-step weighted ℓ2 used for token projection.
    pub fn center_point() -> Self {
        Self { horizon: 1, mode: DistanceMode::CenterPoint, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("distance horizon must be >= 1".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.horizon {
                return Err(Error::Config(format!("{} weights for horizon {}", w.len(), self.horizon)));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|&v| v == 0.0) {
                return Err(Error::Config("weights must be >= 0 and not all zero".into()));
            }
        }
        Ok(())
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[k])
    }

    /// Per-state distance d(a, b).
    pub fn state_distance(&self, a: &AgentState, b: &AgentState) -> f64 {
        match self.mode {
            DistanceMode::FourCorner => {
                let ca = a.corners();
                let cb = b.corners();
                ca.iter().zip(&cb).map(|(p, q)| p.dist(*q)).sum::<f64>() / 4.0
            }
            DistanceMode::CenterPoint => {
                let dp2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
                let dh = wrap_angle(a.heading - b.heading);
                (self.w_position * dp2 + self.w_heading * dh * dh + self.w_speed * (a.speed - b.speed).powi(2)).sqrt()
            }
        }
    }
}

/// States implied by `a` from `s_now`: the plan itself, or the one-step
/// dynamics image for single-step actions.
pub fn implied_states(a: &Action, s_now: &AgentState, dt: f64, vocab: Option<&TokenVocabulary>) -> Result<Vec<AgentState>> {
    match a {
        Action::TrajectoryPlan(p) => Ok(p.waypoints.clone()),
        _ => Ok(vec![step_deterministic(s_now, a, dt, vocab)?]),
    }
}

/// Weighted step-wise distance between predicted states and the expert
/// future (`expert_future[k]` is the expert state at step t+k+1).
pub fn distance_of_states(predicted: &[AgentState], expert_future: &[AgentState], dcfg: &DistanceConfig) -> Result<f64> {
    if expert_future.is_empty() || predicted.is_empty() {
        return Err(Error::Horizon { needed: 1, available: 0 });
    }
    let h = dcfg.horizon.min(expert_future.len()).min(predicted.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..h {
        let w = dcfg.weight(k);
        num += w * dcfg.state_distance(&predicted[k], &expert_future[k]);
        den += w;
    }
    if !dcfg.normalize {
        return Ok(num);
    }
    if den == 0.0 {
        // Only zero-weight steps are left near the episode end; fall back to uniform.
        let total: f64 = (0..h).map(|k| dcfg.state_distance(&predicted[k], &expert_future[k])).sum();
        return Ok(total / h as f64);
    }
    Ok(num / den)
}

pub fn gen_distance(
    a: &Action,
    s_now: &AgentState,
    expert_future: &[AgentState],
    dcfg: &DistanceConfig,
    dt: f64,
    vocab: Option<&TokenVocabulary>,
) -> Result<f64> {
    if expert_future.is_empty() {
        return Err(Error::Horizon { needed: 1, available: 0 });
    }
    let predicted = implied_states(a, s_now, dt, vocab)?;
    distance_of_states(&predicted, expert_future, dcfg)
}
