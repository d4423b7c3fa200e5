//! Ego-frame feature encoding of observations.

use crate::sim::geometry::{to_local, wrap_angle};
use crate::sim::observation::{Observation, ObservationConfig};

const POS_SCALE: f64 = 10.0;
const ENTITY_POS_SCALE: f64 = 20.0;
const SPEED_SCALE: f64 = 10.0;
const SIZE_SCALE: f64 = 5.0;
const ENTITY_FEATURES: usize = 10;
const LATERAL_SCALE: f64 = 3.0;

pub type FeatureVector = Vec<f64>;

pub fn feature_len(cfg: &ObservationConfig) -> usize {
    1 + 4 * cfg.history.saturating_sub(1) + 2 * cfg.lane_points + ENTITY_FEATURES * cfg.entities
}

/// Encodes `obs` relative to the current ego pose, so the result is invariant
/// to rigid transforms of the whole scene. Absent entity slots are all zeros.
pub fn featurize(obs: &Observation) -> FeatureVector {
    let cur = *obs.current();
    let (origin, heading) = (cur.pos(), cur.heading);
    let mut f = Vec::with_capacity(1 + 4 * obs.history.len() + 2 * obs.lane.len() + ENTITY_FEATURES * obs.entities.len());
    f.push(cur.speed / SPEED_SCALE);
    for s in &obs.history[..obs.history.len() - 1] {
        let p = to_local(s.pos(), origin, heading);
        f.extend_from_slice(&[
            p.x / POS_SCALE,
            p.y / POS_SCALE,
            wrap_angle(s.heading - heading),
            s.speed / SPEED_SCALE,
        ]);
    }
    for q in &obs.lane {
        let p = to_local(*q, origin, heading);
        f.extend_from_slice(&[p.x / POS_SCALE, p.y / POS_SCALE]);
    }
    for e in &obs.entities {
        if !e.present {
            f.extend_from_slice(&[0.0; ENTITY_FEATURES]);
            continue;
        }
        let p = to_local(crate::sim::Vec2::new(e.x, e.y), origin, heading);
        let dh = e.heading - heading;
        f.extend_from_slice(&[
            1.0,
            p.x / ENTITY_POS_SCALE,
            p.y / ENTITY_POS_SCALE,
            dh.cos(),
            dh.sin(),
            e.speed / SPEED_SCALE,
            e.length / SIZE_SCALE,
            e.width / SIZE_SCALE,
            e.station / ENTITY_POS_SCALE,
            e.lateral / LATERAL_SCALE,
        ]);
    }
    f
}
