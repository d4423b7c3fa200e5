use serde::{Deserialize, Serialize};

use super::geometry::{OrientedRect, Polygon, Polyline, Vec2};
use super::state::AgentState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapGeometry {
    /// Lane centerlines; index 0 is the ego route.
    pub lanes: Vec<Polyline>,
    pub drivable: Polygon,
    pub obstacles: Vec<OrientedRect>,
}

impl MapGeometry {
    pub fn route(&self) -> &Polyline {
        &self.lanes[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.lanes.is_empty() {
            return Err(Error::InvalidInput("map has no lanes".into()));
        }
        if self.lanes.iter().any(|l| l.points().len() < 2) {
            return Err(Error::InvalidInput("lane with fewer than two points".into()));
        }
        if !self.drivable.is_simple() {
            return Err(Error::InvalidInput("drivable polygon is not simple".into()));
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            if let Some(p) = lane.points().iter().find(|p| !self.drivable.contains(**p)) {
                return Err(Error::InvalidInput(format!(
                    "lane {i} leaves the drivable area at ({}, {})",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }
}

/// A logged agent: full trajectory of `T + 1` states plus its box size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub length: f64,
    pub width: f64,
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    pub fn rect_at(&self, t: usize) -> OrientedRect {
        let s = &self.states[t.min(self.states.len() - 1)];
        OrientedRect::new(s.pos(), s.heading, self.length, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub map: MapGeometry,
    pub dt: f64,
    /// Step count T; every track holds T + 1 states.
    pub horizon: usize,
    pub ego: usize,
    pub agents: Vec<AgentTrack>,
}

/// Tolerance on heading/speed when checking that logged states follow the dynamics.
pub const DYNAMICS_TOL: f64 = 1e-6;

impl Scenario {
    pub fn expert(&self) -> &[AgentState] {
        &self.agents[self.ego].states
    }

    pub fn replay_agents(&self) -> impl Iterator<Item = &AgentTrack> {
        self.agents.iter().enumerate().filter(move |(i, _)| *i != self.ego).map(|(_, a)| a)
    }

    /// Expert states strictly after step `t`, up to the end of the episode.
    pub fn expert_future(&self, t: usize) -> &[AgentState] {
        let e = self.expert();
        &e[(t + 1).min(e.len())..]
    }

    pub fn validate(&self, min_steps: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("scenario {}: {m}", self.id)));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive".into());
        }
        if self.horizon < min_steps {
            return bad(format!("horizon {} shorter than required {min_steps}", self.horizon));
        }
        if self.ego >= self.agents.len() {
            return bad("ego index out of range".into());
        }
        self.map.validate()?;
        for (i, a) in self.agents.iter().enumerate() {
            if a.states.len() != self.horizon + 1 {
                return bad(format!("agent {i} has {} states, expected {}", a.states.len(), self.horizon + 1));
            }
            if !a.states.iter().all(|s| s.is_finite()) {
                return bad(format!("agent {i} has non-finite states"));
            }
            if let Some(t) = dynamics_violation(&a.states, self.dt) {
                return bad(format!("agent {i} violates dynamics at step {t}"));
            }
        }
        Ok(())
    }
}

/// First step whose successor is not the unicycle image of a displacement action.
pub fn dynamics_violation(states: &[AgentState], dt: f64) -> Option<usize> {
    states.windows(2).position(|w| {
        let implied = w[0].moved_to(Vec2::new(w[1].x, w[1].y), dt);
        let dh = super::geometry::wrap_angle(implied.heading - w[1].heading).abs();
        dh > DYNAMICS_TOL || (implied.speed - w[1].speed).abs() > DYNAMICS_TOL
    })
}
