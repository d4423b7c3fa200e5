//! The four-row comparison: closed-loop fine-tuning, fine-tuning on replayed
//! expert chunks, continued behavior cloning and the base model.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::manifest::{artifact, now_unix, StageRecord};
use super::pipeline::{eval_config, metrics_csv, run_pipeline_unpooled, with_jobs, PipelineOptions, Stage};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_evaluation, Evaluation};
use crate::policy::checkpoint::CheckpointRecord;
use crate::policy::model::Policy;
use crate::policy::pretrain::{expert_samples, train_on_samples, PretrainConfig};
use crate::rollout::dataset::hex;
use crate::rollout::guided::{ExpertDriver, RolloutConfig, RolloutMode};
use crate::rollout::recovery::RecoveryConfig;
use crate::sim::scenario::Scenario;
use crate::train::{finetune, Collector, Refresh, TrainConfig};

pub const METHODS: [&str; 4] = ["road", "expert_replay", "continued_bc", "base"];

#[derive(Debug, Clone)]
pub struct BaselineRow {
    pub method: String,
    pub evaluation: Evaluation,
}

#[derive(Debug)]
pub struct BaselinesOutput {
    pub rows: Vec<BaselineRow>,
    pub eval_seed: u64,
    /// Hash of the held-out scenario ids every row was evaluated on.
    pub scenes_hash: String,
}

/// Continues behavior cloning on the expert logs with the fine-tuning
/// budget (steps, batch, learning rate).
pub fn continued_bc(base: &Policy, train: &[Scenario], t: &TrainConfig, seed: u64) -> Result<Policy> {
    let mut p = base.clone();
    if t.steps == 0 {
        return Ok(p);
    }
    let pc = PretrainConfig {
        steps: t.steps,
        batch_size: t.batch_size,
        lr: t.lr,
        momentum: t.momentum,
        clip_norm: t.clip_norm,
        seed,
    };
    let samples = expert_samples(&p, train);
    train_on_samples(&mut p, &samples, &pc, "continued-bc")?;
    Ok(p)
}

/// Fine-tunes on expert chunks executed through the tracking controller.
pub fn expert_replay(cfg: &ExperimentConfig, base: &Policy, train: &[Scenario], seed: u64) -> Result<Policy> {
    if cfg.train.steps == 0 {
        return Ok(base.clone());
    }
    let expert = ExpertDriver { horizon: cfg.policy.horizon, dt: cfg.policy.dt, observation: cfg.policy.observation.clone() };
    let rcfg = RolloutConfig { mode: RolloutMode::Unguided, k: 1, recovery: RecoveryConfig::disabled(), ..cfg.rollout.clone() };
    let tcfg = TrainConfig { refresh: Refresh::OneOff, ..cfg.train.clone() };
    Ok(finetune(base.clone(), train, &tcfg, &cfg.sim, &rcfg, Collector::Fixed(&expert), seed)?.policy)
}

pub fn run_baselines(cfg: &ExperimentConfig, resume: bool) -> Result<BaselinesOutput> {
    cfg.validate()?;
    with_jobs(cfg.jobs, || run_inner(cfg, resume))?
}

fn run_inner(cfg: &ExperimentConfig, resume: bool) -> Result<BaselinesOutput> {
    let opts = PipelineOptions { resume, stop_after: Stage::Eval, ..PipelineOptions::default() };
    let mut run = run_pipeline_unpooled(cfg, &opts)?;
    let dir = run.dir.clone();
    let st = &run.state;
    let base = st.base.as_ref().ok_or_else(|| Error::InvalidInput("base checkpoint missing".into()))?;
    let road = st.evaluation.clone().ok_or_else(|| Error::InvalidInput("pipeline evaluation missing".into()))?;
    let ecfg = eval_config(cfg, &run.seeds);

    log::info!("baseline: expert replay");
    let replay = expert_replay(cfg, base, &st.train, run.seeds.finetune)?;
    log::info!("baseline: continued behavior cloning");
    let cbc = continued_bc(base, &st.train, &cfg.train, run.seeds.finetune)?;
    let bdir = dir.join("baselines");
    std::fs::create_dir_all(&bdir)?;
    CheckpointRecord::new(&replay, "expert_replay", cfg.train.steps, 0, None).save(&bdir.join("expert_replay.json"))?;
    CheckpointRecord::new(&cbc, "continued_bc", cfg.train.steps, 0, None).save(&bdir.join("continued_bc.json"))?;

    let mut rows = vec![BaselineRow { method: "road".into(), evaluation: road }];
    for (m, p) in [("expert_replay", &replay), ("continued_bc", &cbc), ("base", base)] {
        log::info!("evaluating {m}");
        rows.push(BaselineRow { method: m.into(), evaluation: evaluate(p, &st.test, &cfg.sim, &ecfg)? });
    }
    let ids: Vec<&str> = st.test.iter().map(|s| s.id.as_str()).collect();
    let scenes_hash = hex(&Sha256::digest(ids.join("\n").as_bytes()));

    let mut arts = vec!["baselines/expert_replay.json".to_string(), "baselines/continued_bc.json".to_string()];
    for r in &rows {
        write_evaluation(&bdir, &r.method, &r.evaluation)?;
        arts.push(format!("baselines/{}.csv", r.method));
    }
    std::fs::write(bdir.join("table.csv"), table_csv(&rows))?;
    std::fs::write(bdir.join("metrics.csv"), metrics_csv(rows.iter().map(|r| (r.method.as_str(), &r.evaluation.report))))?;
    arts.push("baselines/table.csv".into());
    arts.push("baselines/metrics.csv".into());

    let mut notes = BTreeMap::new();
    for r in &rows {
        notes.insert(format!("{}.eval_seed", r.method), ecfg.seed.to_string());
        notes.insert(format!("{}.scenes_sha256", r.method), scenes_hash.clone());
        notes.insert(format!("{}.rollouts_per_scene", r.method), ecfg.rollouts_per_scene.to_string());
    }
    run.manifest.record(StageRecord {
        name: "baselines".into(),
        completed_unix: now_unix(),
        artifacts: arts.iter().map(|a| artifact(&dir, "baseline", a)).collect::<Result<_>>()?,
        notes,
    });
    run.manifest.save(&dir)?;
    Ok(BaselinesOutput { rows, eval_seed: ecfg.seed, scenes_hash })
}

/// Driving score, collision rate, off-road rate and distance, each with its
/// spread across rollout repetitions.
pub fn table_csv(rows: &[BaselineRow]) -> String {
    let mut o = String::from("method,driving_score,driving_score_std,collision_rate,collision_rate_std,offroad_rate,offroad_rate_std,distance_m,distance_m_std\n");
    for r in rows {
        let m = &r.evaluation.report;
        o.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3},{:.3}\n",
            r.method,
            m.driving_score,
            m.std_driving_score,
            m.collision_rate,
            m.std_collision_rate,
            m.offroad_rate,
            m.std_offroad_rate,
            m.mean_distance_m,
            m.std_mean_distance_m
        ));
    }
    o
}
