use serde::{Deserialize, Serialize};

use super::geometry::{wrap_angle, OrientedRect, Vec2};
use crate::error::{Error, Result};

pub const EGO_LENGTH: f64 = 4.8;
pub const EGO_WIDTH: f64 = 2.0;

/// Pose and speed of a controlled agent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        Self { x, y, heading: wrap_angle(heading), speed: speed.max(0.0) }
    }

    pub fn pos(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite() && self.speed.is_finite()
    }

    pub fn footprint(&self) -> OrientedRect {
        OrientedRect::new(self.pos(), self.heading, EGO_LENGTH, EGO_WIDTH)
    }

    pub fn corners(&self) -> [Vec2; 4] {
        self.footprint().corners()
    }

    /// State reached by moving to `next` over `dt`; heading follows the
    /// displacement and is kept when the displacement is zero.
    pub fn moved_to(&self, next: Vec2, dt: f64) -> AgentState {
        let d = next - self.pos();
        let dist = d.norm();
        let heading = if dist > 0.0 { d.angle() } else { self.heading };
        AgentState { x: next.x, y: next.y, heading: wrap_angle(heading), speed: dist / dt }
    }
}

/// A multi-step plan of world-frame waypoints, one per simulator step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub waypoints: Vec<AgentState>,
    pub dt: f64,
}

impl TrajectoryPlan {
    pub fn new(waypoints: Vec<AgentState>, dt: f64) -> Self {
        Self { waypoints, dt }
    }

    /// Builds a plan from positions, deriving heading and speed from
    /// consecutive displacements starting at `start`.
    pub fn from_positions(start: &AgentState, positions: &[Vec2], dt: f64) -> Self {
        let mut prev = *start;
        let mut waypoints = Vec::with_capacity(positions.len());
        for &p in positions {
            let w = prev.moved_to(p, dt);
            waypoints.push(w);
            prev = w;
        }
        Self { waypoints, dt }
    }

    pub fn horizon(&self) -> usize {
        self.waypoints.len()
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.waypoints.iter().map(|w| w.pos()).collect()
    }

    pub fn validate(&self, expected_horizon: Option<usize>) -> Result<()> {
        if let Some(f) = expected_horizon {
            if self.waypoints.len() != f {
                return Err(Error::InvalidInput(format!(
                    "plan has {} waypoints, expected {f}",
                    self.waypoints.len()
                )));
            }
        }
        if !(self.dt.is_finite() && self.dt > 0.0) || !self.waypoints.iter().all(|w| w.is_finite()) {
            return Err(Error::InvalidInput("non-finite plan".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    /// Index into the policy's token vocabulary.
    DiscreteToken(usize),
    /// World-frame displacement for a single step.
    DeltaXY { dx: f64, dy: f64 },
    TrajectoryPlan(TrajectoryPlan),
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::DiscreteToken(_) => "token",
            Action::DeltaXY { .. } => "delta_xy",
            Action::TrajectoryPlan(_) => "trajectory",
        }
    }

    pub fn as_plan(&self) -> Option<&TrajectoryPlan> {
        match self {
            Action::TrajectoryPlan(p) => Some(p),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_wraps_and_clamps() {
        let s = AgentState::new(0.0, 0.0, 3.0 * std::f64::consts::PI, -1.0);
        assert!(s.heading <= std::f64::consts::PI && s.heading > -std::f64::consts::PI);
        assert_eq!(s.speed, 0.0);
    }

    #[test]
    fn plan_from_positions_derives_heading_and_speed() {
        let s = AgentState::new(0.0, 0.0, 0.0, 0.0);
        let p = TrajectoryPlan::from_positions(&s, &[Vec2::new(0.0, 1.0), Vec2::new(0.0, 1.0)], 0.1);
        assert!((p.waypoints[0].heading - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((p.waypoints[0].speed - 10.0).abs() < 1e-12);
        assert_eq!(p.waypoints[1].speed, 0.0);
        assert_eq!(p.waypoints[1].heading, p.waypoints[0].heading);
    }
}
