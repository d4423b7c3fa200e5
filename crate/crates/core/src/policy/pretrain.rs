//! Behavior cloning on expert logs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::featurize;
use super::model::{Family, Policy, Target};
use super::optim::{batch_nll, Sgd};
use crate::error::{Error, Result};
use crate::seed;
use crate::sim::geometry::to_local;
use crate::sim::observation::Observation;
use crate::sim::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Gradient norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: 4000, batch_size: 64, lr: 0.02, momentum: 0.9, clip_norm: 5.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

/// One (features, target) pair with its origin in the expert logs.
#[derive(Debug, Clone, PartialEq)]
pub struct BcSample {
    pub features: Vec<f64>,
    pub target: Target,
    pub scenario: String,
    pub t: usize,
}

/// Expert target at step `t`: the nearest token to the next expert
/// displacement, or the next F expert positions as ego-frame offsets.
pub fn expert_target(policy: &Policy, scenario: &Scenario, t: usize) -> Option<Target> {
    let e = scenario.expert();
    let cur = e[t];
    match policy.family() {
        Family::Discrete => {
            let next = e.get(t + 1)?;
            let local = to_local(next.pos(), cur.pos(), cur.heading);
            Some(Target::Token(policy.vocab().expect("token policy").nearest(local)))
        }
        Family::Trajectory => {
            let f = policy.config.horizon;
            if t + f >= e.len() {
                return None;
            }
            let plan = crate::sim::state::TrajectoryPlan::new(e[t + 1..=t + f].to_vec(), scenario.dt);
            Some(Target::Offsets(Policy::plan_to_offsets(&cur, &plan)))
        }
    }
}

pub fn expert_samples(policy: &Policy, scenarios: &[Scenario]) -> Vec<BcSample> {
    let obs_cfg = &policy.config.observation;
    let mut out = Vec::new();
    for s in scenarios {
        let e = s.expert();
        for t in 0..s.horizon {
            if let Some(target) = expert_target(policy, s, t) {
                let obs = Observation::build(s, e, t, obs_cfg);
                out.push(BcSample { features: featurize(&obs), target, scenario: s.id.clone(), t });
            }
        }
    }
    out
}

/// Runs `steps` SGD updates on uniformly drawn batches of `samples`.
pub fn train_on_samples(
    policy: &mut Policy,
    samples: &[BcSample],
    cfg: &PretrainConfig,
    stream_label: &str,
) -> Result<Vec<LossPoint>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    let mut rng = seed::stream(cfg.seed, &[stream_label]);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, (cfg.clip_norm > 0.0).then_some(cfg.clip_norm), policy.num_params());
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..samples.len())).collect();
        let (loss, grad) = batch_nll(policy, idx.iter().map(|&i| (samples[i].features.as_slice(), &samples[i].target)))
            .map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("behavior cloning diverged at step {step}: {m}")),
                other => other,
            })?;
        log.push(LossPoint { step, loss });
        opt.step(&mut policy.params.data, &grad, None);
        if policy.params.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("parameters became non-finite at step {step}")));
        }
    }
    Ok(log)
}

/// Behavior cloning on the expert logs of `scenarios`.
pub fn pretrain_bc(mut policy: Policy, scenarios: &[Scenario], cfg: &PretrainConfig) -> Result<(Policy, Vec<LossPoint>)> {
    if scenarios.is_empty() {
        return Err(Error::InvalidInput("pretraining needs at least one scenario".into()));
    }
    let samples = expert_samples(&policy, scenarios);
    let log = train_on_samples(&mut policy, &samples, cfg, "pretrain")?;
    Ok((policy, log))
}
