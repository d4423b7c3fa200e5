use serde::{Deserialize, Serialize};

use super::geometry::{to_local, OrientedRect, Vec2};
use super::scenario::Scenario;
use super::state::AgentState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IncidentReport {
    None,
    Collision { at_fault: bool },
    Offroad,
}

impl IncidentReport {
    /// Incidents that end an evaluation rollout: off-road or at-fault collision.
    pub fn is_terminal(&self) -> bool {
        matches!(self, IncidentReport::Offroad | IncidentReport::Collision { at_fault: true })
    }
}

fn contact_point(ego: &OrientedRect, other: &OrientedRect) -> Vec2 {
    let pts: Vec<Vec2> = other
        .corners()
        .into_iter()
        .filter(|c| ego.contains(*c))
        .chain(ego.corners().into_iter().filter(|c| other.contains(*c)))
        .collect();
    if pts.is_empty() {
        ego.center.lerp(other.center, 0.5)
    } else {
        pts.iter().fold(Vec2::ZERO, |a, &p| a + p) * (1.0 / pts.len() as f64)
    }
}

/// Rear-end by a follower: contact on the ego's rear half and the other agent
/// heading toward the ego.
fn is_rear_ended(ego: &OrientedRect, other: &OrientedRect) -> bool {
    let c = to_local(contact_point(ego, other), ego.center, ego.heading);
    let toward = Vec2::from_angle(other.heading).dot(ego.center - other.center) > 0.0;
    c.x < 0.0 && toward
}

/// Classifies the ego state at step `t`. At-fault collisions take precedence
/// over off-road, which takes precedence over not-at-fault contacts.
pub fn detect_incident(s: &AgentState, scenario: &Scenario, t: usize) -> IncidentReport {
    let ego = s.footprint();
    let mut collision: Option<bool> = None;
    for ob in &scenario.map.obstacles {
        if ego.overlaps(ob) {
            collision = Some(true);
            break;
        }
    }
    if collision != Some(true) {
        for agent in scenario.replay_agents() {
            let r = agent.rect_at(t);
            if ego.overlaps(&r) {
                let at_fault = !is_rear_ended(&ego, &r);
                collision = Some(collision.unwrap_or(false) || at_fault);
                if at_fault {
                    break;
                }
            }
        }
    }
    if collision == Some(true) {
        return IncidentReport::Collision { at_fault: true };
    }
    let offroad = ego.corners().iter().any(|c| !scenario.map.drivable.contains(*c));
    if offroad {
        return IncidentReport::Offroad;
    }
    match collision {
        Some(at_fault) => IncidentReport::Collision { at_fault },
        None => IncidentReport::None,
    }
}
