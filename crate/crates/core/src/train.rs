//! Closed-loop supervised fine-tuning on guided rollouts, the CAT-K
//! recovery-target baseline and data refresh schedules.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::features::featurize;
use crate::policy::model::{Family, Policy, Target};
use crate::policy::optim::{batch_nll, Sgd};
use crate::policy::pretrain::expert_samples;
use crate::policy::vocab::TokenVocabulary;
use crate::rollout::dataset::{checkpoint_id, collect_dataset, GenDataset};
use crate::rollout::distance::DistanceConfig;
use crate::rollout::guided::{RolloutConfig, RolloutRecord};
use crate::rollout::select::project_onto_vocabulary;
use crate::seed;
use crate::sim::dynamics::SimulatorConfig;
use crate::sim::observation::Observation;
use crate::sim::scenario::Scenario;
use crate::sim::state::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refresh {
    OneOff,
    EveryEpochs(usize),
    Always,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Likelihood of the executed (guided, possibly blended) actions.
    Road,
    /// Likelihood of the inverse-dynamics projection of the next expert state.
    Catk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Optimization steps N_train.
    pub steps: usize,
    /// Gradient norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub refresh: Refresh,
    /// Rollouts per scenario N_roll.
    pub rollouts_per_scenario: usize,
    pub loss: LossKind,
    /// Fraction of each batch drawn from the expert logs.
    pub expert_mix: f64,
    pub freeze_first_layer: bool,
    /// Scenarios re-rolled per optimization step under `always`.
    pub always_scenarios: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            batch_size: 64,
            steps: 1500,
            clip_norm: 5.0,
            refresh: Refresh::OneOff,
            rollouts_per_scenario: 3,
            loss: LossKind::Road,
            expert_mix: 0.0,
            freeze_first_layer: false,
            always_scenarios: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("training steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.rollouts_per_scenario == 0 {
            return Err(Error::Config("rollouts per scenario must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.expert_mix) {
            return Err(Error::Config("expert mix must lie in [0, 1]".into()));
        }
        if self.refresh == Refresh::EveryEpochs(0) {
            return Err(Error::Config("refresh interval must be >= 1 epoch".into()));
        }
        if self.refresh == Refresh::Always && self.always_scenarios == 0 {
            return Err(Error::Config("always refresh needs >= 1 scenario per step".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("lr must be >= 0 and momentum in [0, 1)".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip norm must be >= 0".into()));
        }
        Ok(())
    }
}

/// Where a training sample came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Rollout { scenario: String, rollout: usize, t: usize, generation: usize },
    Expert { scenario: String, t: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub features: Vec<f64>,
    pub target: Target,
    pub provenance: Provenance,
}

/// Mean NLL of executed actions over a batch of (observation, action) pairs.
pub fn road_loss(policy: &Policy, batch: &[(Observation, Action)]) -> Result<(f64, Vec<f64>)> {
    let prepared = batch
        .iter()
        .map(|(o, a)| Ok((featurize(o), policy.target_of(o, a)?)))
        .collect::<Result<Vec<_>>>()?;
    batch_nll(policy, prepared.iter().map(|(f, t)| (f.as_slice(), t)))
}

/// Mean NLL of projected tokens over a batch of (observation, token) pairs.
pub fn catk_loss(policy: &Policy, batch: &[(Observation, usize)]) -> Result<(f64, Vec<f64>)> {
    if policy.family() != Family::Discrete {
        return Err(Error::UnsupportedFamily("CAT-K targets need a token policy".into()));
    }
    let prepared: Vec<_> = batch.iter().map(|(o, i)| (featurize(o), Target::Token(*i))).collect();
    batch_nll(policy, prepared.iter().map(|(f, t)| (f.as_slice(), t)))
}

/// For each recorded step, the token whose one-step image from the visited
/// state is closest (center-point distance) to the next expert state.
pub fn catk_recovery_targets(
    record: &RolloutRecord,
    scenario: &Scenario,
    vocab: &TokenVocabulary,
    dcfg: &DistanceConfig,
    sim: &SimulatorConfig,
) -> Result<Vec<(Observation, usize)>> {
    if !sim.is_deterministic() {
        return Err(Error::UnsupportedFamily(
            "CAT-K recovery targets assume deterministic dynamics; disable simulator noise".into(),
        ));
    }
    if record.scenario_id != scenario.id {
        return Err(Error::Mismatch(format!("record of {} used with scenario {}", record.scenario_id, scenario.id)));
    }
    let e = scenario.expert();
    record
        .steps
        .iter()
        .filter(|st| st.t + 1 < e.len())
        .map(|st| {
            let s = record.states.get(st.t).ok_or_else(|| Error::InvalidInput("record shorter than its steps".into()))?;
            let (tok, _) = project_onto_vocabulary(vocab, s, &e[st.t + 1], dcfg, scenario.dt);
            Ok((st.observation.clone(), tok))
        })
        .collect()
}

/// Turns a dataset into training samples according to the loss kind.
pub fn dataset_samples(
    policy: &Policy,
    ds: &GenDataset,
    scenarios: &[Scenario],
    loss: LossKind,
    catk_distance: &DistanceConfig,
) -> Result<Vec<TrainSample>> {
    let mut out = Vec::new();
    for r in &ds.records {
        let prov = |t| Provenance::Rollout {
            scenario: r.scenario_id.clone(),
            rollout: r.rollout_index,
            t,
            generation: ds.meta.generation,
        };
        match loss {
            LossKind::Road => {
                for st in &r.steps {
                    out.push(TrainSample {
                        features: featurize(&st.observation),
                        target: policy.target_of(&st.observation, &st.action)?,
                        provenance: prov(st.t),
                    });
                }
            }
            LossKind::Catk => {
                let sc = scenarios
                    .iter()
                    .find(|s| s.id == r.scenario_id)
                    .ok_or_else(|| Error::Mismatch(format!("scenario {} missing", r.scenario_id)))?;
                let vocab = policy.vocab().ok_or_else(|| Error::UnsupportedFamily("CAT-K needs a token policy".into()))?;
                for (obs, tok) in catk_recovery_targets(r, sc, vocab, catk_distance, &ds.meta.sim)? {
                    let t = obs.t;
                    out.push(TrainSample { features: featurize(&obs), target: Target::Token(tok), provenance: prov(t) });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub loss: f64,
    pub generation: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub policy: Policy,
    pub log: Vec<TrainLogRow>,
    /// Number of rollout collections performed.
    pub generations: usize,
    pub coverage: Vec<f64>,
    /// Set when training stopped early on a non-finite loss; `policy` then
    /// holds the last finite parameters.
    pub aborted: Option<String>,
}

pub fn write_train_log(path: &Path, log: &[TrainLogRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss,refresh_generation,wall_seconds")?;
    for r in log {
        writeln!(f, "{},{},{},{:.3}", r.step, r.loss, r.generation, r.wall_seconds)?;
    }
    Ok(())
}

/// What the fine-tuning loop collects rollouts with.
pub enum Collector<'a> {
    /// The policy under training (RoaD).
    Current,
    /// A fixed driver, collected once (e.g. expert replay).
    Fixed(&'a (dyn crate::rollout::Driver + 'a)),
}

struct Epochs {
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
}

impl Epochs {
    fn new(n: usize) -> Self {
        Self { order: (0..n).collect(), pos: usize::MAX, epoch: 0 }
    }

    fn next_batch<R: Rng>(&mut self, size: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos >= self.order.len() {
                if self.pos != usize::MAX {
                    self.epoch += 1;
                }
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Fine-tunes `policy` on closed-loop rollouts over `scenarios`.
///
/// `one_off` collects once and trains for `steps` updates. `every_epochs(E)`
/// re-collects with the current parameters after every E passes over the
/// rollout data. `always` re-collects a fresh batch of `always_scenarios`
/// scenarios before every update.
pub fn finetune(
    policy: Policy,
    scenarios: &[Scenario],
    tcfg: &TrainConfig,
    sim: &SimulatorConfig,
    rcfg: &RolloutConfig,
    collector: Collector<'_>,
    seed: u64,
) -> Result<FinetuneOutcome> {
    finetune_from(policy, scenarios, tcfg, sim, rcfg, collector, seed, None)
}

/// Like [`finetune`], but trains on `initial` as the first rollout
/// generation instead of collecting it. Later refreshes collect as usual.
#[allow(clippy::too_many_arguments)]
pub fn finetune_from(
    policy: Policy,
    scenarios: &[Scenario],
    tcfg: &TrainConfig,
    sim: &SimulatorConfig,
    rcfg: &RolloutConfig,
    collector: Collector<'_>,
    seed: u64,
    initial: Option<&GenDataset>,
) -> Result<FinetuneOutcome> {
    tcfg.validate()?;
    if initial.is_some() && tcfg.refresh == Refresh::Always {
        return Err(Error::Config("an initial dataset cannot seed the always refresh schedule".into()));
    }
    if scenarios.is_empty() {
        return Err(Error::InvalidInput("fine-tuning needs at least one scenario".into()));
    }
    if let Collector::Fixed(_) = collector {
        if tcfg.refresh != Refresh::OneOff {
            return Err(Error::Config("a fixed collector only supports one-off collection".into()));
        }
    }
    let start = Instant::now();
    let catk_distance = DistanceConfig::center_point();
    let mut policy = policy;
    let mut opt = Sgd::new(tcfg.lr, tcfg.momentum, (tcfg.clip_norm > 0.0).then_some(tcfg.clip_norm), policy.num_params());
    let frozen: Option<Vec<bool>> = tcfg.freeze_first_layer.then(|| {
        let r = policy.first_layer_range();
        (0..policy.num_params()).map(|i| r.contains(&i)).collect()
    });
    let mut batch_rng = seed::stream(seed, &["finetune-batches"]);
    let mut mix_rng = seed::stream(seed, &["finetune-mix"]);
    let mut pick_rng = seed::stream(seed, &["finetune-always"]);
    let expert = if tcfg.expert_mix > 0.0 {
        expert_samples(&policy, scenarios)
            .into_iter()
            .map(|s| TrainSample {
                features: s.features,
                target: s.target,
                provenance: Provenance::Expert { scenario: s.scenario, t: s.t },
            })
            .collect()
    } else {
        Vec::new()
    };
    let use_rollouts = tcfg.expert_mix < 1.0;
    let mut generations = 0;
    let mut coverage = Vec::new();
    let collect = |policy: &Policy, subset: &[Scenario], generations: &mut usize, coverage: &mut Vec<f64>| -> Result<Vec<TrainSample>> {
        let ds = match &collector {
            Collector::Current => collect_dataset(
                policy,
                checkpoint_id(policy),
                subset,
                tcfg.rollouts_per_scenario,
                sim,
                rcfg,
                seed,
                *generations,
            )?,
            Collector::Fixed(d) => {
                collect_dataset(*d, "fixed".into(), subset, tcfg.rollouts_per_scenario, sim, rcfg, seed, *generations)?
            }
        };
        *generations += 1;
        coverage.push(ds.coverage());
        let s = dataset_samples(policy, &ds, scenarios, tcfg.loss, &catk_distance)?;
        log::debug!("generation {} collected {} samples", *generations - 1, s.len());
        Ok(s)
    };

    let mut data: Vec<TrainSample> = Vec::new();
    if use_rollouts && tcfg.refresh != Refresh::Always && tcfg.steps > 0 {
        data = match initial {
            Some(ds) => {
                generations += 1;
                coverage.push(ds.coverage());
                dataset_samples(&policy, ds, scenarios, tcfg.loss, &catk_distance)?
            }
            None => collect(&policy, scenarios, &mut generations, &mut coverage)?,
        };
    }
    let mut epochs = Epochs::new(data.len());
    let mut expert_epochs = Epochs::new(expert.len());
    let mut log = Vec::with_capacity(tcfg.steps);
    let mut last_good = policy.params.clone();
    let mut aborted = None;
    for step in 0..tcfg.steps {
        if use_rollouts {
            match tcfg.refresh {
                Refresh::Always => {
                    let picks: Vec<Scenario> = scenarios
                        .choose_multiple(&mut pick_rng, tcfg.always_scenarios.min(scenarios.len()))
                        .cloned()
                        .collect();
                    data = collect(&policy, &picks, &mut generations, &mut coverage)?;
                    epochs = Epochs::new(data.len());
                }
                Refresh::EveryEpochs(e) => {
                    if epochs.epoch >= e {
                        data = collect(&policy, scenarios, &mut generations, &mut coverage)?;
                        epochs = Epochs::new(data.len());
                    }
                }
                Refresh::OneOff => {}
            }
            if data.is_empty() {
                return Err(Error::InvalidInput("rollout collection produced no samples".into()));
            }
        }
        let n_expert = if tcfg.expert_mix >= 1.0 {
            tcfg.batch_size
        } else if tcfg.expert_mix > 0.0 {
            (0..tcfg.batch_size).filter(|_| mix_rng.gen::<f64>() < tcfg.expert_mix).count()
        } else {
            0
        };
        let mut batch: Vec<&TrainSample> = Vec::with_capacity(tcfg.batch_size);
        if n_expert > 0 {
            batch.extend(expert_epochs.next_batch(n_expert, &mut batch_rng).into_iter().map(|i| &expert[i]));
        }
        if n_expert < tcfg.batch_size {
            batch.extend(epochs.next_batch(tcfg.batch_size - n_expert, &mut batch_rng).into_iter().map(|i| &data[i]));
        }
        let (loss, grad) = match batch_nll(&policy, batch.iter().map(|s| (s.features.as_slice(), &s.target))) {
            Ok(v) => v,
            Err(Error::Numerical(m)) => {
                aborted = Some(format!("step {step}: {m}"));
                break;
            }
            Err(e) => return Err(e),
        };
        opt.step(&mut policy.params.data, &grad, frozen.as_deref());
        if policy.params.data.iter().any(|v| !v.is_finite()) {
            aborted = Some(format!("step {step}: parameters became non-finite"));
            break;
        }
        last_good.data.clone_from(&policy.params.data);
        log.push(TrainLogRow {
            step,
            loss,
            generation: generations.saturating_sub(1),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    if aborted.is_some() {
        policy.params = last_good;
    }
    Ok(FinetuneOutcome { policy, log, generations, coverage, aborted })
}
