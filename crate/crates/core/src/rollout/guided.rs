//! Closed-loop rollouts with optional expert guidance and recovery.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::distance::{gen_distance, DistanceConfig};
use super::recovery::{recovery_blend, recovery_check, RecoveryConfig};
use super::select::{ActionCandidateSet, Provenance};
use crate::error::{Error, Result};
use crate::policy::model::{Family, Policy};
use crate::policy::vocab::TokenVocabulary;
use crate::seed;
use crate::sim::dynamics::{step_dynamics, SimulatorConfig, Tracker};
use crate::sim::incident::{detect_incident, IncidentReport};
use crate::sim::observation::{Observation, ObservationConfig};
use crate::sim::scenario::Scenario;
use crate::sim::state::{Action, AgentState, TrajectoryPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    SampleK,
    TopK,
    Unguided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    pub mode: RolloutMode,
    pub k: usize,
    pub temperature: f64,
    /// Steps a plan is executed before the policy is queried again.
    pub replan_steps: usize,
    pub distance: DistanceConfig,
    pub recovery: RecoveryConfig,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            mode: RolloutMode::SampleK,
            k: 64,
            temperature: 0.8,
            replan_steps: 5,
            distance: DistanceConfig::default(),
            recovery: RecoveryConfig::default(),
        }
    }
}

impl RolloutConfig {
    /// Plain closed-loop rollouts: one sample per decision, no recovery.
    pub fn unguided(temperature: f64) -> Self {
        Self { mode: RolloutMode::Unguided, k: 1, temperature, recovery: RecoveryConfig::disabled(), ..Self::default() }
    }

    pub fn validate(&self, family: Family, prediction_horizon: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if family == Family::Trajectory {
            if self.replan_steps == 0 || self.replan_steps > prediction_horizon {
                return Err(Error::Config(format!(
                    "replan steps {} must lie in 1..={prediction_horizon}",
                    self.replan_steps
                )));
            }
            if self.mode == RolloutMode::TopK {
                return Err(Error::UnsupportedFamily("top-k rollouts need a token policy".into()));
            }
            self.recovery.validate(prediction_horizon)?;
        }
        self.distance.validate()
    }
}

/// Something that proposes actions in closed loop.
pub trait Driver: Sync {
    fn family(&self) -> Family;
    /// Plan length F for plan-emitting drivers, 1 otherwise.
    fn prediction_horizon(&self) -> usize;
    fn dt(&self) -> f64;
    fn vocab(&self) -> Option<&TokenVocabulary>;
    fn observation_config(&self) -> &ObservationConfig;
    /// `k` i.i.d. samples at temperature `t`.
    fn sample(&self, scenario: &Scenario, obs: &Observation, k: usize, t: f64, rng: &mut dyn RngCore) -> Result<Vec<Action>>;
    /// The `k` most likely actions.
    fn top_k(&self, _scenario: &Scenario, _obs: &Observation, _k: usize) -> Result<Vec<Action>> {
        Err(Error::UnsupportedFamily("this driver cannot enumerate actions".into()))
    }
}

impl Driver for Policy {
    fn family(&self) -> Family {
        Policy::family(self)
    }
    fn prediction_horizon(&self) -> usize {
        match Policy::family(self) {
            Family::Discrete => 1,
            Family::Trajectory => self.config.horizon,
        }
    }
    fn dt(&self) -> f64 {
        self.config.dt
    }
    fn vocab(&self) -> Option<&TokenVocabulary> {
        Policy::vocab(self)
    }
    fn observation_config(&self) -> &ObservationConfig {
        &self.config.observation
    }
    fn sample(&self, _: &Scenario, obs: &Observation, k: usize, t: f64, rng: &mut dyn RngCore) -> Result<Vec<Action>> {
        self.sample_actions(obs, k, t, rng)
    }
    fn top_k(&self, _: &Scenario, obs: &Observation, k: usize) -> Result<Vec<Action>> {
        Ok(Policy::top_k(self, obs, k)?.into_iter().map(Action::DiscreteToken).collect())
    }
}

/// Always proposes the logged expert continuation (padded with the final
/// expert state near the episode end).
#[derive(Debug, Clone)]
pub struct ExpertDriver {
    pub horizon: usize,
    pub dt: f64,
    pub observation: ObservationConfig,
}

impl ExpertDriver {
    pub fn chunk(&self, scenario: &Scenario, t: usize) -> TrajectoryPlan {
        let e = scenario.expert();
        let last = *e.last().expect("expert track is never empty");
        let waypoints = (1..=self.horizon).map(|k| e.get(t + k).copied().unwrap_or(last)).collect();
        TrajectoryPlan::new(waypoints, scenario.dt)
    }
}

impl Driver for ExpertDriver {
    fn family(&self) -> Family {
        Family::Trajectory
    }
    fn prediction_horizon(&self) -> usize {
        self.horizon
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn vocab(&self) -> Option<&TokenVocabulary> {
        None
    }
    fn observation_config(&self) -> &ObservationConfig {
        &self.observation
    }
    fn sample(&self, scenario: &Scenario, obs: &Observation, k: usize, _: f64, _: &mut dyn RngCore) -> Result<Vec<Action>> {
        Ok(vec![Action::TrajectoryPlan(self.chunk(scenario, obs.t)); k])
    }
}

/// Drives a constant-curvature arc at the current speed (left for positive
/// curvature).
#[derive(Debug, Clone)]
pub struct ArcDriver {
    pub curvature: f64,
    pub min_speed: f64,
    pub horizon: usize,
    pub dt: f64,
    pub observation: ObservationConfig,
}

impl Driver for ArcDriver {
    fn family(&self) -> Family {
        Family::Trajectory
    }
    fn prediction_horizon(&self) -> usize {
        self.horizon
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn vocab(&self) -> Option<&TokenVocabulary> {
        None
    }
    fn observation_config(&self) -> &ObservationConfig {
        &self.observation
    }
    fn sample(&self, _: &Scenario, obs: &Observation, k: usize, _: f64, _: &mut dyn RngCore) -> Result<Vec<Action>> {
        let mut s = *obs.current();
        let v = s.speed.max(self.min_speed);
        let mut wps = Vec::with_capacity(self.horizon);
        for _ in 0..self.horizon {
            let h = s.heading + self.curvature * v * self.dt;
            let next = s.pos() + crate::sim::geometry::Vec2::from_angle(h) * (v * self.dt);
            s = s.moved_to(next, self.dt);
            wps.push(s);
        }
        Ok(vec![Action::TrajectoryPlan(TrajectoryPlan::new(wps, self.dt)); k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub t: usize,
    pub observation: Observation,
    /// Executed action (after recovery blending).
    pub action: Action,
    pub recovery: bool,
    /// Generalized distance of the selected candidate before recovery.
    pub distance: f64,
    pub candidate_distances: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Incident { step: usize, report: IncidentReport },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub scenario_id: String,
    pub rollout_index: usize,
    pub steps: Vec<RolloutStep>,
    /// Ego states s_0.. up to the last simulated step.
    pub states: Vec<AgentState>,
    /// Every step with a non-empty incident report, in order.
    pub incidents: Vec<(usize, IncidentReport)>,
    pub termination: Termination,
}

impl RolloutRecord {
    /// Path length of the visited ego states, meters.
    pub fn distance_traveled(&self) -> f64 {
        self.states.windows(2).map(|w| w[0].pos().dist(w[1].pos())).sum()
    }

    pub fn first_incident(&self) -> Option<(usize, IncidentReport)> {
        match self.termination {
            Termination::Incident { step, report } => Some((step, report)),
            Termination::Completed => None,
        }
    }

    /// Mean position error to the expert over the simulated steps.
    pub fn ade_to_expert(&self, scenario: &Scenario) -> f64 {
        let e = scenario.expert();
        let n = self.states.len().saturating_sub(1).max(1);
        self.states.iter().zip(e).skip(1).map(|(s, x)| s.pos().dist(x.pos())).sum::<f64>() / n as f64
    }
}

/// Runs one rollout of `driver` on `scenario`. Candidate draws at decision
/// step t come from a stream keyed by (`seed`, t), so the first K candidates
/// do not depend on the total candidate count. Simulator noise uses its own
/// stream.
pub fn run_guided_rollout<D: Driver + ?Sized>(
    driver: &D,
    scenario: &Scenario,
    sim: &SimulatorConfig,
    rcfg: &RolloutConfig,
    seed: u64,
    rollout_index: usize,
) -> Result<RolloutRecord> {
    let family = driver.family();
    let f = driver.prediction_horizon();
    rcfg.validate(family, f)?;
    if family == Family::Discrete && rcfg.mode == RolloutMode::TopK && driver.vocab().is_none() {
        return Err(Error::UnsupportedFamily("top-k without a vocabulary".into()));
    }
    let dt = scenario.dt;
    let horizon = scenario.horizon;
    let vocab = driver.vocab();
    let mut noise_rng = seed::stream(seed, &["noise"]);
    let s0 = scenario.expert()[0];
    let mut states = vec![s0];
    let mut tracker = Tracker::new(&s0, sim.control_delay, dt);
    let mut steps = Vec::new();
    let mut incidents = Vec::new();
    let mut termination = Termination::Completed;
    let mut t = 0;
    'outer: while t < horizon {
        let obs = Observation::build(scenario, &states, t, driver.observation_config());
        let s_now = states[t];
        let expert_future = scenario.expert_future(t);
        let step_err = |e: Error| e.at_step(t);
        let candidates = match rcfg.mode {
            RolloutMode::TopK => driver.top_k(scenario, &obs, rcfg.k).map_err(step_err)?,
            RolloutMode::SampleK | RolloutMode::Unguided => {
                let k = if rcfg.mode == RolloutMode::Unguided { 1 } else { rcfg.k };
                let mut cand_rng = seed::stream(seed, &["candidates", &t.to_string()]);
                driver.sample(scenario, &obs, k, rcfg.temperature, &mut cand_rng).map_err(step_err)?
            }
        };
        let provenance = if rcfg.mode == RolloutMode::TopK { Provenance::TopK } else { Provenance::Sampled };
        let set = ActionCandidateSet::score(candidates, provenance, &s_now, expert_future, &rcfg.distance, dt, vocab)
            .map_err(step_err)?;
        let (idx, distance) = set.closest();
        let mut action = set.candidates[idx].clone();
        let recovery = family == Family::Trajectory && recovery_check(distance, &rcfg.recovery, t, horizon);
        if recovery {
            let plan = action.as_plan().expect("trajectory family emits plans");
            action = Action::TrajectoryPlan(recovery_blend(plan, expert_future, &rcfg.recovery).map_err(step_err)?);
        }
        let next_states = match &action {
            Action::TrajectoryPlan(plan) => {
                let m = rcfg.replan_steps.min(horizon - t);
                tracker.track(&s_now, plan, m, sim, &mut noise_rng).map_err(step_err)?
            }
            a => vec![step_dynamics(&s_now, a, dt, vocab, sim, &mut noise_rng).map_err(step_err)?],
        };
        steps.push(RolloutStep {
            t,
            observation: obs,
            action,
            recovery,
            distance,
            candidate_distances: set.distances,
        });
        for s in next_states {
            states.push(s);
            t += 1;
            let report = detect_incident(&s, scenario, t);
            if report != IncidentReport::None {
                incidents.push((t, report));
            }
            if report.is_terminal() {
                termination = Termination::Incident { step: t, report };
                break 'outer;
            }
        }
    }
    Ok(RolloutRecord {
        scenario_id: scenario.id.clone(),
        rollout_index,
        steps,
        states,
        incidents,
        termination,
    })
}

/// Distance of a single action, for re-checking recorded selections.
pub fn action_distance(
    a: &Action,
    s_now: &AgentState,
    scenario: &Scenario,
    t: usize,
    dcfg: &DistanceConfig,
    vocab: Option<&TokenVocabulary>,
) -> Result<f64> {
    gen_distance(a, s_now, scenario.expert_future(t), dcfg, scenario.dt, vocab)
}
