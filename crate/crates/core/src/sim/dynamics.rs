//! Unicycle dynamics, actuation noise and the delayed trajectory tracker.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::geometry::{wrap_angle, Vec2};
use super::state::{Action, AgentState, TrajectoryPlan};
use crate::error::{Error, Result};
use crate::policy::vocab::TokenVocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    /// Additive Gaussian noise std on (x [m], y [m], heading [rad], speed [m/s]).
    pub noise_std: [f64; 4],
    /// Actuation delay in whole steps.
    pub control_delay: usize,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self { noise_std: [0.03, 0.03, 0.01, 0.05], control_delay: 2, seed: 0 }
    }
}

impl SimulatorConfig {
    pub fn noiseless() -> Self {
        Self { noise_std: [0.0; 4], control_delay: 0, seed: 0 }
    }

    pub fn is_deterministic(&self) -> bool {
        self.noise_std.iter().all(|&s| s == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("noise stds must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// World-frame displacement of a single-step action.
pub fn single_step_displacement(
    s: &AgentState,
    a: &Action,
    vocab: Option<&TokenVocabulary>,
) -> Result<Vec2> {
    match a {
        Action::DeltaXY { dx, dy } => {
            if !(dx.is_finite() && dy.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite action ({dx}, {dy})")));
            }
            Ok(Vec2::new(*dx, *dy))
        }
        Action::DiscreteToken(i) => {
            let v = vocab.ok_or_else(|| Error::InvalidInput("token action without vocabulary".into()))?;
            v.decode(*i, s.heading)
        }
        Action::TrajectoryPlan(_) => Err(Error::InvalidInput(
            "trajectory plans are executed by the tracker, not step_dynamics".into(),
        )),
    }
}

/// Next state without noise.
pub fn step_deterministic(
    s: &AgentState,
    a: &Action,
    dt: f64,
    vocab: Option<&TokenVocabulary>,
) -> Result<AgentState> {
    let d = single_step_displacement(s, a, vocab)?;
    Ok(s.moved_to(s.pos() + d, dt))
}

pub fn apply_noise<R: Rng + ?Sized>(s: AgentState, cfg: &SimulatorConfig, rng: &mut R) -> AgentState {
    if cfg.is_deterministic() {
        return s;
    }
    let mut n = [0.0; 4];
    for (i, std) in cfg.noise_std.iter().enumerate() {
        if *std > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            n[i] = std * z;
        }
    }
    AgentState {
        x: s.x + n[0],
        y: s.y + n[1],
        heading: wrap_angle(s.heading + n[2]),
        speed: (s.speed + n[3]).max(0.0),
    }
}

/// One simulator step for a single-step action. With zero noise the RNG is untouched.
pub fn step_dynamics<R: Rng + ?Sized>(
    s: &AgentState,
    a: &Action,
    dt: f64,
    vocab: Option<&TokenVocabulary>,
    cfg: &SimulatorConfig,
    rng: &mut R,
) -> Result<AgentState> {
    let next = step_deterministic(s, a, dt, vocab)?;
    Ok(apply_noise(next, cfg, rng))
}

/// Feedback gain of the tracker; unity without delay, reduced with delay so the
/// delayed loop stays stable.
fn feedback_gain(delay: usize) -> f64 {
    if delay == 0 {
        1.0
    } else {
        0.5 / delay as f64
    }
}

/// Waypoint follower with an actuation queue.
///
/// Each step the controller computes a world-frame displacement command toward
/// the plan (feed-forward plan increment plus position feedback). Commands pass
/// through a FIFO of `control_delay` entries, so the command executed now was
/// computed `control_delay` steps ago. The queue persists across replans.
#[derive(Debug, Clone)]
pub struct Tracker {
    queue: VecDeque<Vec2>,
    delay: usize,
}

impl Tracker {
    /// Starts with the queue filled by constant-velocity commands from `s`.
    pub fn new(s: &AgentState, delay: usize, dt: f64) -> Self {
        let cmd = Vec2::from_angle(s.heading) * (s.speed * dt);
        Self { queue: std::iter::repeat(cmd).take(delay).collect(), delay }
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Executes the first `m` waypoints of `plan` starting from `s`.
    pub fn track<R: Rng + ?Sized>(
        &mut self,
        s: &AgentState,
        plan: &TrajectoryPlan,
        m: usize,
        cfg: &SimulatorConfig,
        rng: &mut R,
    ) -> Result<Vec<AgentState>> {
        if m > plan.horizon() {
            return Err(Error::Horizon { needed: m, available: plan.horizon() });
        }
        plan.validate(None)?;
        let gain = feedback_gain(self.delay);
        let mut out = Vec::with_capacity(m);
        let mut cur = *s;
        let mut prev_wp = s.pos();
        for wp in plan.waypoints.iter().take(m) {
            let target = wp.pos();
            let cmd = (target - prev_wp) + (prev_wp - cur.pos()) * gain;
            prev_wp = target;
            self.queue.push_back(cmd);
            let exec = limit_turn(
                self.queue.pop_front().expect("queue holds at least the new command"),
                cur.heading,
            );
            let next = cur.moved_to(cur.pos() + exec, plan.dt);
            cur = apply_noise(next, cfg, rng);
            out.push(cur);
        }
        Ok(out)
    }
}

/// Largest path curvature the tracker commands, 1/m.
pub const MAX_CURVATURE: f64 = 0.2;

/// Clamps the heading change of a displacement command to what a vehicle
/// with curvature limit `MAX_CURVATURE` can turn over that distance. The
/// component along the clamped direction is kept, so commands pointing
/// backwards stop the vehicle instead of spinning it around.
pub fn limit_turn(cmd: Vec2, heading: f64) -> Vec2 {
    let len = cmd.norm();
    if len == 0.0 {
        return cmd;
    }
    let dh = wrap_angle(cmd.angle() - heading);
    let max_dh = (MAX_CURVATURE * len).min(std::f64::consts::PI);
    let clamped = dh.clamp(-max_dh, max_dh);
    if clamped == dh {
        return cmd;
    }
    let along = len * (dh - clamped).cos();
    if along <= 0.0 {
        return Vec2::ZERO;
    }
    Vec2::from_angle(heading + clamped) * along
}

/// Tracks `plan` for `m` steps from a fresh tracker (queue primed at constant velocity).
pub fn track_trajectory<R: Rng + ?Sized>(
    s: &AgentState,
    plan: &TrajectoryPlan,
    m: usize,
    cfg: &SimulatorConfig,
    rng: &mut R,
) -> Result<Vec<AgentState>> {
    Tracker::new(s, cfg.control_delay, plan.dt).track(s, plan, m, cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use std::f64::consts::PI;

    fn s0() -> AgentState {
        AgentState::new(0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn zero_displacement_stops() {
        let mut rng = seed::stream(0, &[]);
        let s = step_dynamics(&s0(), &Action::DeltaXY { dx: 0.0, dy: 0.0 }, 0.1, None, &SimulatorConfig::noiseless(), &mut rng)
            .unwrap();
        assert_eq!(s, AgentState::new(0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn forward_euler_consistency() {
        let mut rng = seed::stream(0, &[]);
        let s = step_dynamics(&s0(), &Action::DeltaXY { dx: 0.1, dy: 0.0 }, 0.1, None, &SimulatorConfig::noiseless(), &mut rng)
            .unwrap();
        assert_eq!(s.x, 0.1);
        assert_eq!(s.y, 0.0);
        assert_eq!(s.heading, 0.0);
        assert!((s.speed - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_action_rejected() {
        let mut rng = seed::stream(0, &[]);
        let r = step_dynamics(&s0(), &Action::DeltaXY { dx: f64::NAN, dy: 0.0 }, 0.1, None, &SimulatorConfig::noiseless(), &mut rng);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn token_requires_vocabulary() {
        let mut rng = seed::stream(0, &[]);
        let cfg = SimulatorConfig::noiseless();
        assert!(step_dynamics(&s0(), &Action::DiscreteToken(3), 0.1, None, &cfg, &mut rng).is_err());
        let v = TokenVocabulary::default();
        let s = AgentState::new(0.0, 0.0, PI / 2.0, 1.0);
        let n = step_dynamics(&s, &Action::DiscreteToken(0), 0.1, Some(&v), &cfg, &mut rng).unwrap();
        assert_eq!(n.pos(), Vec2::ZERO);
    }

    #[test]
    fn noise_std_matches_configuration() {
        let cfg = SimulatorConfig { noise_std: [0.01, 0.0, 0.0, 0.0], control_delay: 0, seed: 0 };
        let mut rng = seed::stream(11, &["noise"]);
        let a = Action::DeltaXY { dx: 0.1, dy: 0.0 };
        let xs: Vec<f64> = (0..10_000)
            .map(|_| step_dynamics(&s0(), &a, 0.1, None, &cfg, &mut rng).unwrap().x)
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std - 0.01).abs() < 0.05 * 0.01, "sample std {std}");
        assert!((mean - 0.1).abs() < 4.0 * 0.01 / 100.0);
    }

    fn arc_plan(start: &AgentState, n: usize) -> TrajectoryPlan {
        // Constant-speed left arc of radius 20 m at 8 m/s.
        let r = 20.0;
        let v = 8.0;
        let c = start.pos() + Vec2::from_angle(start.heading + PI / 2.0) * r;
        let positions: Vec<Vec2> = (1..=n)
            .map(|k| {
                let phi = v * 0.1 * k as f64 / r;
                c + Vec2::from_angle(start.heading - PI / 2.0 + phi) * r
            })
            .collect();
        TrajectoryPlan::from_positions(start, &positions, 0.1)
    }

    #[test]
    fn feasible_plan_tracked_exactly_without_delay() {
        let s = AgentState::new(1.0, 2.0, 0.3, 8.0);
        let plan = arc_plan(&s, 30);
        let mut rng = seed::stream(0, &[]);
        let out = track_trajectory(&s, &plan, 30, &SimulatorConfig::noiseless(), &mut rng).unwrap();
        for (a, b) in out.iter().zip(&plan.waypoints) {
            assert!(a.pos().dist(b.pos()) < 1e-6);
        }
    }

    #[test]
    fn zero_steps_and_horizon_error() {
        let s = AgentState::new(0.0, 0.0, 0.0, 8.0);
        let plan = arc_plan(&s, 10);
        let mut rng = seed::stream(0, &[]);
        let cfg = SimulatorConfig::noiseless();
        assert!(track_trajectory(&s, &plan, 0, &cfg, &mut rng).unwrap().is_empty());
        assert!(matches!(track_trajectory(&s, &plan, 11, &cfg, &mut rng), Err(Error::Horizon { .. })));
    }

    #[test]
    fn delay_increases_tracking_error_on_curves() {
        let s = AgentState::new(0.0, 0.0, 0.0, 8.0);
        let plan = arc_plan(&s, 30);
        let mut rng = seed::stream(0, &[]);
        let err = |delay| {
            let cfg = SimulatorConfig { noise_std: [0.0; 4], control_delay: delay, seed: 0 };
            let out = track_trajectory(&s, &plan, 30, &cfg, &mut rng.clone()).unwrap();
            out.iter().zip(&plan.waypoints).map(|(a, b)| a.pos().dist(b.pos())).sum::<f64>() / 30.0
        };
        let e0 = err(0);
        let e2 = err(2);
        assert!(e0 < 1e-9);
        assert!(e2 > e0 + 1e-3, "delayed error {e2}");
        let _ = &mut rng;
    }
}
