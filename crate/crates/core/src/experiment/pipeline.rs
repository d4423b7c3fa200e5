//! Staged end-to-end run: scenarios, pretraining, rollout collection,
//! fine-tuning and evaluation, each recorded in the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::manifest::{artifact, now_unix, verify_stage, RunManifest, StageRecord, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_evaluation, EvalConfig, Evaluation, MetricsReport};
use crate::policy::checkpoint::CheckpointRecord;
use crate::policy::model::Policy;
use crate::policy::pretrain::{pretrain_bc, PretrainConfig};
use crate::rollout::dataset::{checkpoint_id, collect_dataset, read_dataset, write_dataset, GenDataset};
use crate::seed;
use crate::sim::generate::generate_one;
use crate::sim::io::{read_scenario_dir, write_scenario_dir};
use crate::sim::scenario::Scenario;
use crate::train::{finetune_from, write_train_log, Collector, Refresh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Scenarios,
    Pretrain,
    Collect,
    Finetune,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Scenarios, Stage::Pretrain, Stage::Collect, Stage::Finetune, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Scenarios => "scenarios",
            Stage::Pretrain => "pretrain",
            Stage::Collect => "collect",
            Stage::Finetune => "finetune",
            Stage::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s}")))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// Reuse completed stages whose artifacts still verify.
    pub resume: bool,
    /// Stages from this one on always rerun, even when resuming.
    pub force_from: Option<Stage>,
    pub stop_after: Stage,
    /// Mixed into the collection and fine-tuning seed (matrix cells).
    pub cell_key: String,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { resume: false, force_from: None, stop_after: Stage::Eval, cell_key: String::new() }
    }
}

/// Seeds handed to each stage, all derived from the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub scenarios: u64,
    pub init: u64,
    pub pretrain: u64,
    pub finetune: u64,
    pub eval: u64,
}

impl StageSeeds {
    pub fn new(cfg: &ExperimentConfig, cell_key: &str) -> Self {
        let s = cfg.seed;
        Self {
            scenarios: s,
            init: seed::derive_seed(s, &["policy-init"]),
            pretrain: seed::derive_seed(s, &["pretrain", &cfg.pretrain.seed.to_string()]),
            finetune: seed::derive_seed(s, &["finetune", &cfg.sim.seed.to_string(), cell_key]),
            eval: seed::derive_seed(s, &["eval", &cfg.eval.seed.to_string()]),
        }
    }
}

pub fn eval_config(cfg: &ExperimentConfig, seeds: &StageSeeds) -> EvalConfig {
    EvalConfig { seed: seeds.eval, scene_set: "test".into(), ..cfg.eval.clone() }
}

/// Outputs of the stages run or loaded so far.
#[derive(Debug, Default)]
pub struct RunState {
    pub train: Vec<Scenario>,
    pub val: Vec<Scenario>,
    pub test: Vec<Scenario>,
    pub base: Option<Policy>,
    pub dataset: Option<GenDataset>,
    pub policy: Option<Policy>,
    pub evaluation: Option<Evaluation>,
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub state: RunState,
    pub seeds: StageSeeds,
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool when 0.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub const METRICS_HEADER: &str = "name,driving_score,driving_score_std,collision_rate,collision_rate_std,offroad_rate,offroad_rate_std,incident_rate,incident_rate_std,mean_distance_m,mean_distance_m_std,min_ade_m,ade_to_expert_m,evaluated,excluded,failed";

pub fn metrics_row(name: &str, r: &MetricsReport) -> String {
    format!(
        "{name},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}",
        r.driving_score,
        r.std_driving_score,
        r.collision_rate,
        r.std_collision_rate,
        r.offroad_rate,
        r.std_offroad_rate,
        r.incident_rate,
        r.std_incident_rate,
        r.mean_distance_m,
        r.std_mean_distance_m,
        r.min_ade_m,
        r.ade_to_expert_m,
        r.evaluated,
        r.excluded,
        r.failed
    )
}

pub fn metrics_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
    let mut o = String::from(METRICS_HEADER);
    o.push('\n');
    for (n, r) in rows {
        let _ = writeln!(o, "{}", metrics_row(n, r));
    }
    o
}

/// Generates every scenario in parallel and splits them by index.
pub fn generate_splits(cfg: &ExperimentConfig) -> Result<(Vec<Scenario>, Vec<Scenario>, Vec<Scenario>)> {
    cfg.splits.validate()?;
    cfg.scenarios.validate()?;
    let sizes = cfg.splits.sizes();
    let mut all: Vec<Scenario> = (0..cfg.splits.count)
        .into_par_iter()
        .map(|i| generate_one(cfg.seed, i, &cfg.scenarios))
        .collect::<Result<_>>()?;
    let test = all.split_off(sizes.train + sizes.val);
    let val = all.split_off(sizes.train);
    Ok((all, val, test))
}

fn notes(items: &[(&str, String)]) -> BTreeMap<String, String> {
    items.iter().map(|(k, v)| ((*k).to_string(), v.clone())).collect()
}

fn save_checkpoint(dir: &Path, rel: &str, rec: &CheckpointRecord) -> Result<()> {
    let p = dir.join(rel);
    if let Some(parent) = p.parent() {
        std::fs::create_dir_all(parent)?;
    }
    rec.save(&p)
}

fn fresh_dir(p: &Path) -> Result<()> {
    if p.exists() {
        std::fs::remove_dir_all(p)?;
    }
    std::fs::create_dir_all(p)?;
    Ok(())
}

fn load_stage(stage: Stage, dir: &Path, st: &mut RunState) -> Result<()> {
    match stage {
        Stage::Scenarios => {
            st.train = read_scenario_dir(&dir.join("scenarios/train"))?;
            st.val = read_scenario_dir(&dir.join("scenarios/val"))?;
            st.test = read_scenario_dir(&dir.join("scenarios/test"))?;
        }
        Stage::Pretrain => st.base = Some(CheckpointRecord::load(&dir.join("checkpoints/base.json"))?.policy()?),
        Stage::Collect => {
            let d = dir.join("datasets/gen0");
            st.dataset = if d.join("manifest.json").exists() { Some(read_dataset(&d)?) } else { None };
        }
        Stage::Finetune => st.policy = Some(CheckpointRecord::load(&dir.join("checkpoints/final.json"))?.policy()?),
        Stage::Eval => {
            let p = dir.join("reports/evaluation.json");
            let text = std::fs::read_to_string(&p)?;
            st.evaluation = Some(serde_json::from_str(&text).map_err(|e| Error::parse(&p, e.to_string()))?);
        }
    }
    Ok(())
}

fn need<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::InvalidInput(format!("{what} is not available")))
}

fn run_stage(
    stage: Stage,
    cfg: &ExperimentConfig,
    seeds: &StageSeeds,
    dir: &Path,
    st: &mut RunState,
) -> Result<StageRecord> {
    let mut rec = StageRecord {
        name: stage.name().into(),
        completed_unix: 0,
        artifacts: Vec::new(),
        notes: BTreeMap::new(),
    };
    match stage {
        Stage::Scenarios => {
            let (train, val, test) = generate_splits(cfg)?;
            for (name, set) in [("train", &train), ("val", &val), ("test", &test)] {
                let rel = format!("scenarios/{name}");
                fresh_dir(&dir.join(&rel))?;
                write_scenario_dir(&dir.join(&rel), set)?;
                rec.artifacts.push(artifact(dir, "scenarios", &rel)?);
            }
            rec.notes = notes(&[
                ("train", train.len().to_string()),
                ("val", val.len().to_string()),
                ("test", test.len().to_string()),
                ("generation_seed", seeds.scenarios.to_string()),
            ]);
            (st.train, st.val, st.test) = (train, val, test);
        }
        Stage::Pretrain => {
            let init = Policy::init(cfg.policy.clone(), seeds.init)?;
            let pcfg = PretrainConfig { seed: seeds.pretrain, ..cfg.pretrain.clone() };
            let (base, log) = pretrain_bc(init, &st.train, &pcfg)?;
            let tail = &log[log.len().saturating_sub(50)..];
            let loss_mean = tail.iter().map(|p| p.loss).sum::<f64>() / tail.len().max(1) as f64;
            save_checkpoint(dir, "checkpoints/base.json", &CheckpointRecord::new(&base, "base", log.len(), 0, Some(loss_mean)))?;
            std::fs::create_dir_all(dir.join("logs"))?;
            let mut csv = String::from("step,loss\n");
            for p in &log {
                let _ = writeln!(csv, "{},{}", p.step, p.loss);
            }
            std::fs::write(dir.join("logs/pretrain_loss.csv"), csv)?;
            rec.artifacts.push(artifact(dir, "checkpoint", "checkpoints/base.json")?);
            rec.artifacts.push(artifact(dir, "log", "logs/pretrain_loss.csv")?);
            rec.notes = notes(&[("pretrain_seed", seeds.pretrain.to_string()), ("init_seed", seeds.init.to_string())]);
            st.base = Some(base);
        }
        Stage::Collect => {
            let base = need(&st.base, "base checkpoint")?;
            let t = &cfg.train;
            let d = dir.join("datasets/gen0");
            if d.exists() {
                std::fs::remove_dir_all(&d)?;
            }
            if t.steps == 0 || t.refresh == Refresh::Always || t.expert_mix >= 1.0 {
                rec.notes = notes(&[("skipped", "the training schedule collects its own data".into())]);
                st.dataset = None;
            } else {
                let ds = collect_dataset(
                    base,
                    checkpoint_id(base),
                    &st.train,
                    t.rollouts_per_scenario,
                    &cfg.sim,
                    &cfg.rollout,
                    seeds.finetune,
                    0,
                )?;
                write_dataset(&d, &ds)?;
                rec.artifacts.push(artifact(dir, "dataset", "datasets/gen0")?);
                rec.notes = notes(&[
                    ("records", ds.records.len().to_string()),
                    ("coverage", format!("{:.4}", ds.coverage())),
                    ("collection_seed", seeds.finetune.to_string()),
                ]);
                st.dataset = Some(ds);
            }
        }
        Stage::Finetune => {
            let base = need(&st.base, "base checkpoint")?.clone();
            std::fs::create_dir_all(dir.join("logs"))?;
            let (policy, ckpt) = if cfg.train.steps == 0 {
                rec.notes = notes(&[("skipped", "zero training steps".into())]);
                let ckpt = CheckpointRecord::new(&base, "final", 0, 0, None);
                (base, ckpt)
            } else {
                let out = finetune_from(
                    base,
                    &st.train,
                    &cfg.train,
                    &cfg.sim,
                    &cfg.rollout,
                    Collector::Current,
                    seeds.finetune,
                    st.dataset.as_ref(),
                )?;
                write_train_log(&dir.join("logs/train_log.csv"), &out.log)?;
                rec.artifacts.push(artifact(dir, "log", "logs/train_log.csv")?);
                let tail = &out.log[out.log.len().saturating_sub(50)..];
                let loss_mean = (!tail.is_empty()).then(|| tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64);
                let mut n = vec![
                    ("generations", out.generations.to_string()),
                    ("finetune_seed", seeds.finetune.to_string()),
                ];
                if let Some(a) = &out.aborted {
                    log::warn!("fine-tuning stopped early: {a}");
                    n.push(("aborted", a.clone()));
                }
                rec.notes = notes(&n);
                let ckpt = CheckpointRecord::new(&out.policy, "final", out.log.len(), out.generations.saturating_sub(1), loss_mean);
                (out.policy, ckpt)
            };
            save_checkpoint(dir, "checkpoints/final.json", &ckpt)?;
            rec.artifacts.push(artifact(dir, "checkpoint", "checkpoints/final.json")?);
            st.policy = Some(policy);
        }
        Stage::Eval => {
            let policy = need(&st.policy, "fine-tuned checkpoint")?;
            let ecfg = eval_config(cfg, seeds);
            let ev = evaluate(policy, &st.test, &cfg.sim, &ecfg)?;
            let rdir = dir.join("reports");
            write_evaluation(&rdir, "final", &ev)?;
            std::fs::write(rdir.join("metrics.csv"), metrics_csv([("final", &ev.report)]))?;
            std::fs::write(rdir.join("evaluation.json"), serde_json::to_string(&ev)?)?;
            for rel in ["reports/final.csv", "reports/final.summary.txt", "reports/metrics.csv", "reports/evaluation.json"] {
                rec.artifacts.push(artifact(dir, "report", rel)?);
            }
            rec.notes = notes(&[("eval_seed", ecfg.seed.to_string()), ("scenes", st.test.len().to_string())]);
            st.evaluation = Some(ev);
        }
    }
    rec.completed_unix = now_unix();
    Ok(rec)
}

/// Hash recorded in the manifest: the config plus the cell key.
pub fn run_hash(cfg: &ExperimentConfig, cell_key: &str) -> String {
    if cell_key.is_empty() {
        cfg.content_hash()
    } else {
        crate::rollout::dataset::hex(&seed::derive_key(0, &[&cfg.content_hash(), cell_key]))
    }
}

/// Opens the manifest of `dir`: the existing one when resuming (it must
/// belong to the same config), a new one otherwise.
pub fn open_manifest(cfg: &ExperimentConfig, dir: &Path, resume: bool, cell_key: &str) -> Result<RunManifest> {
    let hash = run_hash(cfg, cell_key);
    if resume && dir.join(MANIFEST_FILE).exists() {
        let m = RunManifest::load(dir)?;
        if m.config_hash != hash {
            return Err(Error::Config(format!(
                "{} holds a run of a different config; choose another output directory or rerun without resume",
                dir.display()
            )));
        }
        return Ok(m);
    }
    Ok(RunManifest::new(&cfg.name, &hash, cfg.seed))
}

pub fn run_pipeline(cfg: &ExperimentConfig, opts: &PipelineOptions) -> Result<PipelineOutput> {
    cfg.validate()?;
    with_jobs(cfg.jobs, || run_pipeline_unpooled(cfg, opts))?
}

/// [`run_pipeline`] on the current thread pool.
pub fn run_pipeline_unpooled(cfg: &ExperimentConfig, opts: &PipelineOptions) -> Result<PipelineOutput> {
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let mut manifest = open_manifest(cfg, &dir, opts.resume, &opts.cell_key)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let seeds = StageSeeds::new(cfg, &opts.cell_key);
    let mut st = RunState::default();
    let mut rerun = false;
    for stage in Stage::ALL.into_iter().filter(|s| *s <= opts.stop_after) {
        let forced = opts.force_from.is_some_and(|f| stage >= f);
        let reusable = opts.resume
            && !rerun
            && !forced
            && manifest.stage(stage.name()).is_some_and(|r| verify_stage(&dir, r).is_ok());
        if reusable {
            log::info!("stage {}: reusing completed outputs", stage.name());
            load_stage(stage, &dir, &mut st)?;
            continue;
        }
        rerun = true;
        let earlier: Vec<&str> = Stage::ALL.iter().filter(|s| **s < stage).map(|s| s.name()).collect();
        manifest.stages.retain(|s| earlier.contains(&s.name.as_str()));
        log::info!("stage {}: running", stage.name());
        match run_stage(stage, cfg, &seeds, &dir, &mut st) {
            Ok(rec) => {
                manifest.record(rec);
                manifest.save(&dir)?;
            }
            Err(e) => {
                manifest.failure = Some(format!("stage {}: {e}", stage.name()));
                manifest.save(&dir)?;
                return Err(e);
            }
        }
    }
    manifest.verify(&dir)?;
    Ok(PipelineOutput { dir, manifest, state: st, seeds })
}
