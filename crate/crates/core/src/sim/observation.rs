//! World-frame observation of the ego's surroundings with a fixed-size layout.

use serde::{Deserialize, Serialize};

use super::geometry::Vec2;
use super::scenario::Scenario;
use super::state::{AgentState, EGO_LENGTH};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    /// Number of past ego states including the current one.
    pub history: usize,
    pub lane_points: usize,
    /// Arc-length spacing of lane samples ahead of the ego projection, meters.
    pub lane_spacing: f64,
    /// Number of entity slots (obstacles and replay agents).
    pub entities: usize,
    pub entity_radius: f64,
    /// Entities within this lateral offset of the route and not behind the
    /// ego are listed before all others.
    pub in_path_lateral: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self { history: 10, lane_points: 12, lane_spacing: 3.0, entities: 5, entity_radius: 50.0, in_path_lateral: 2.2 }
    }
}

impl ObservationConfig {
    pub fn encoding_len(&self) -> usize {
        1 + 4 * self.history + 2 * self.lane_points + EntitySlot::WIDTH * self.entities
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EntitySlot {
    pub present: bool,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    /// Route arc length ahead of the ego's projection, meters.
    pub station: f64,
    /// Signed offset from the route centerline (left positive), meters.
    pub lateral: f64,
}

impl EntitySlot {
    pub const WIDTH: usize = 9;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: usize,
    /// Oldest first; the last entry is the current state.
    pub history: Vec<AgentState>,
    /// Route centerline samples ahead of the ego, world frame.
    pub lane: Vec<Vec2>,
    /// In-path entities first, then the rest, each group nearest first.
    /// Absent slots have `present == false` and zeros.
    pub entities: Vec<EntitySlot>,
}

impl Observation {
    pub fn current(&self) -> &AgentState {
        self.history.last().expect("history is never empty")
    }

    /// Builds the observation at step `t` from the ego's visited states
    /// (`visited[t]` is the current state). Missing history is padded with the
    /// earliest state.
    pub fn build(scenario: &Scenario, visited: &[AgentState], t: usize, cfg: &ObservationConfig) -> Self {
        let cur = visited[t];
        let history = (0..cfg.history)
            .map(|i| {
                let back = cfg.history - 1 - i;
                visited[t.saturating_sub(back)]
            })
            .collect();
        let route = scenario.map.route();
        let proj = route.project(cur.pos());
        let lane = (0..cfg.lane_points)
            .map(|i| route.sample(proj.s + cfg.lane_spacing * i as f64).0)
            .collect();

        let frenet = |p: Vec2| {
            let q = route.project(p);
            (q.s - proj.s, q.lateral)
        };
        let mut cands: Vec<(f64, EntitySlot)> = Vec::new();
        for ob in &scenario.map.obstacles {
            let (station, lateral) = frenet(ob.center);
            cands.push((
                ob.center.dist(cur.pos()),
                EntitySlot {
                    present: true,
                    x: ob.center.x,
                    y: ob.center.y,
                    heading: ob.heading,
                    speed: 0.0,
                    length: ob.length,
                    width: ob.width,
                    station,
                    lateral,
                },
            ));
        }
        for a in scenario.replay_agents() {
            let s = a.states[t.min(a.states.len() - 1)];
            let (station, lateral) = frenet(s.pos());
            cands.push((
                s.pos().dist(cur.pos()),
                EntitySlot {
                    present: true,
                    x: s.x,
                    y: s.y,
                    heading: s.heading,
                    speed: s.speed,
                    length: a.length,
                    width: a.width,
                    station,
                    lateral,
                },
            ));
        }
        cands.retain(|(d, _)| *d <= cfg.entity_radius);
        let off_path = |e: &EntitySlot| !(e.lateral.abs() <= cfg.in_path_lateral && e.station > -EGO_LENGTH);
        cands.sort_by(|a, b| off_path(&a.1).cmp(&off_path(&b.1)).then(a.0.total_cmp(&b.0)));
        let mut entities: Vec<EntitySlot> = cands.into_iter().take(cfg.entities).map(|(_, e)| e).collect();
        entities.resize(cfg.entities, EntitySlot::default());
        Observation { t, history, lane, entities }
    }

    pub fn encode(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + 4 * self.history.len() + 2 * self.lane.len() + EntitySlot::WIDTH * self.entities.len());
        v.push(self.t as f64);
        for s in &self.history {
            v.extend_from_slice(&[s.x, s.y, s.heading, s.speed]);
        }
        for p in &self.lane {
            v.extend_from_slice(&[p.x, p.y]);
        }
        for e in &self.entities {
            v.extend_from_slice(&[
                if e.present { 1.0 } else { 0.0 },
                e.x,
                e.y,
                e.heading,
                e.speed,
                e.length,
                e.width,
                e.station,
                e.lateral,
            ]);
        }
        v
    }

    pub fn decode(v: &[f64], cfg: &ObservationConfig) -> Result<Self> {
        if v.len() != cfg.encoding_len() {
            return Err(Error::InvalidInput(format!(
                "observation encoding has {} values, expected {}",
                v.len(),
                cfg.encoding_len()
            )));
        }
        let t = v[0] as usize;
        let mut i = 1;
        let history = (0..cfg.history)
            .map(|_| {
                let s = AgentState { x: v[i], y: v[i + 1], heading: v[i + 2], speed: v[i + 3] };
                i += 4;
                s
            })
            .collect();
        let lane = (0..cfg.lane_points)
            .map(|_| {
                let p = Vec2::new(v[i], v[i + 1]);
                i += 2;
                p
            })
            .collect();
        let entities = (0..cfg.entities)
            .map(|_| {
                let e = EntitySlot {
                    present: v[i] != 0.0,
                    x: v[i + 1],
                    y: v[i + 2],
                    heading: v[i + 3],
                    speed: v[i + 4],
                    length: v[i + 5],
                    width: v[i + 6],
                    station: v[i + 7],
                    lateral: v[i + 8],
                };
                i += EntitySlot::WIDTH;
                e
            })
            .collect();
        Ok(Observation { t, history, lane, entities })
    }
}
