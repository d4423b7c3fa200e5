//! Synthetic expert: pure-pursuit lane following with IDM-style speed control.

use serde::{Deserialize, Serialize};

use super::geometry::{to_local, wrap_angle, OrientedRect, Polyline, Vec2};
use super::incident::{detect_incident, IncidentReport};
use super::scenario::{AgentTrack, MapGeometry, Scenario};
use super::state::{AgentState, EGO_LENGTH, EGO_WIDTH};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriverParams {
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub max_decel: f64,
    pub max_lateral_accel: f64,
    pub min_gap: f64,
    pub time_headway: f64,
    pub lookahead_min: f64,
    pub lookahead_gain: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        Self {
            max_accel: 2.0,
            comfort_decel: 2.0,
            max_decel: 8.0,
            max_lateral_accel: 2.0,
            min_gap: 3.0,
            time_headway: 1.2,
            lookahead_min: 2.5,
            lookahead_gain: 0.35,
        }
    }
}

/// Map plus non-ego agents, before the expert is synthesized.
#[derive(Debug, Clone)]
pub struct ScenarioShell {
    pub id: String,
    pub map: MapGeometry,
    pub dt: f64,
    pub horizon: usize,
    pub replay: Vec<AgentTrack>,
    pub ego_start: AgentState,
    /// Cruise speed of the expert, m/s.
    pub cruise_speed: f64,
}

/// Signed curvature at each route vertex.
pub(crate) fn route_curvature(route: &Polyline) -> Vec<(f64, f64)> {
    let pts = route.points();
    let mut s = 0.0;
    let mut out = Vec::with_capacity(pts.len());
    for i in 0..pts.len() {
        if i > 0 {
            s += pts[i].dist(pts[i - 1]);
        }
        let k = if i == 0 || i + 1 == pts.len() {
            0.0
        } else {
            let h0 = (pts[i] - pts[i - 1]).angle();
            let h1 = (pts[i + 1] - pts[i]).angle();
            let ds = 0.5 * (pts[i].dist(pts[i - 1]) + pts[i + 1].dist(pts[i]));
            wrap_angle(h1 - h0) / ds.max(1e-9)
        };
        out.push((s, k));
    }
    out
}

/// Speed that still allows slowing down for every upcoming curve.
pub(crate) fn curve_speed_limit(curv: &[(f64, f64)], s: f64, p: &DriverParams, cap: f64) -> f64 {
    let preview = cap * cap / (2.0 * p.comfort_decel) + 10.0;
    let mut v: f64 = cap;
    for &(si, k) in curv {
        if si < s - 1.0 {
            continue;
        }
        if si > s + preview {
            break;
        }
        if k.abs() > 1e-6 {
            let vc = (p.max_lateral_accel / k.abs()).sqrt();
            let ahead = (si - s).max(0.0);
            v = v.min((vc * vc + 2.0 * p.comfort_decel * ahead).sqrt());
        }
    }
    v
}

/// IDM acceleration toward `v0` with an optional leader (bumper gap, leader speed).
pub(crate) fn idm_accel(v: f64, v0: f64, leader: Option<(f64, f64)>, p: &DriverParams) -> f64 {
    let free = if v0 > 0.0 { 1.0 - (v / v0).powi(4) } else { -1.0 };
    let interaction = match leader {
        Some((gap, _)) if gap <= 0.0 => return -p.max_decel,
        Some((gap, vl)) => {
            let s_star = p.min_gap
                + (v * p.time_headway + v * (v - vl) / (2.0 * (p.max_accel * p.comfort_decel).sqrt())).max(0.0);
            (s_star / gap).powi(2)
        }
        None => 0.0,
    };
    (p.max_accel * (free - interaction)).clamp(-p.max_decel, p.max_accel)
}

struct Leader {
    s: f64,
    lateral: f64,
    half_width: f64,
    length: f64,
    speed: f64,
}

fn nearest_leader(s_ego: f64, leaders: impl Iterator<Item = Leader>) -> Option<(f64, f64)> {
    leaders
        .filter(|l| l.s > s_ego && l.lateral.abs() - l.half_width < 0.5 * EGO_WIDTH + 0.3)
        .map(|l| (l.s - s_ego - 0.5 * (EGO_LENGTH + l.length), l.speed))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

/// Rolls the lane-following expert forward over the shell's horizon.
pub fn synthesize_expert(shell: ScenarioShell, p: &DriverParams) -> Result<Scenario> {
    let route = shell.map.route().clone();
    let curv = route_curvature(&route);
    let dt = shell.dt;
    let mut states = Vec::with_capacity(shell.horizon + 1);
    let mut cur = shell.ego_start;
    states.push(cur);
    for t in 0..shell.horizon {
        let proj = route.project(cur.pos());
        let v = cur.speed;
        let v0 = curve_speed_limit(&curv, proj.s, p, shell.cruise_speed);
        let leaders = shell
            .replay
            .iter()
            .map(|a| {
                let st = a.states[t];
                let pr = route.project(st.pos());
                Leader { s: pr.s, lateral: pr.lateral, half_width: 0.5 * a.width, length: a.length, speed: st.speed }
            })
            .chain(shell.map.obstacles.iter().map(|o| {
                let pr = route.project(o.center);
                Leader { s: pr.s, lateral: pr.lateral, half_width: 0.5 * o.width, length: o.length, speed: 0.0 }
            }));
        let leader = nearest_leader(proj.s, leaders);
        let a = idm_accel(v, v0, leader, p);
        let v_next = (v + a * dt).max(0.0);
        let lookahead = p.lookahead_min.max(p.lookahead_gain * v_next);
        let (target, _) = route.sample(proj.s + lookahead);
        let alpha = wrap_angle((target - cur.pos()).angle() - cur.heading);
        let kappa = 2.0 * alpha.sin() / lookahead;
        let heading = cur.heading + kappa * v_next * dt;
        let next_pos = cur.pos() + Vec2::from_angle(heading) * (v_next * dt);
        cur = cur.moved_to(next_pos, dt);
        states.push(cur);
    }

    let mut agents = vec![AgentTrack { length: EGO_LENGTH, width: EGO_WIDTH, states }];
    agents.extend(shell.replay);
    let scenario = Scenario {
        id: shell.id,
        map: shell.map,
        dt,
        horizon: shell.horizon,
        ego: 0,
        agents,
    };
    check_expert_clean(&scenario)?;
    Ok(scenario)
}

/// Rejects scenarios whose expert log has any incident.
pub fn check_expert_clean(scenario: &Scenario) -> Result<()> {
    for (t, s) in scenario.expert().iter().enumerate() {
        let r = detect_incident(s, scenario, t);
        if r != IncidentReport::None {
            return Err(Error::Generation(format!(
                "expert of {} has incident {r:?} at step {t}",
                scenario.id
            )));
        }
        let padded = OrientedRect::new(s.pos(), s.heading, EGO_LENGTH + 2.0 * CLEARANCE, EGO_WIDTH + 2.0 * CLEARANCE);
        let tight = scenario.map.obstacles.iter().any(|o| o.overlaps(&padded))
            || scenario.replay_agents().any(|a| a.rect_at(t).overlaps(&padded) && !is_behind(s, a.states[t.min(a.states.len() - 1)].pos()));
        if tight {
            return Err(Error::Generation(format!("expert of {} passes too close at step {t}", scenario.id)));
        }
    }
    Ok(())
}

/// Clearance the logged expert keeps from obstacles and agents ahead, meters.
pub const CLEARANCE: f64 = 0.3;

fn is_behind(s: &AgentState, p: Vec2) -> bool {
    to_local(p, s.pos(), s.heading).x < 0.0
}
