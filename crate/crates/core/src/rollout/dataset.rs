//! Accumulation of guided rollouts into an on-disk dataset.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::guided::{run_guided_rollout, Driver, RolloutConfig, RolloutRecord, RolloutStep, Termination};
use crate::error::{Error, Result};
use crate::policy::model::Policy;
use crate::seed;
use crate::sim::dynamics::SimulatorConfig;
use crate::sim::incident::IncidentReport;
use crate::sim::observation::{Observation, ObservationConfig};
use crate::sim::scenario::Scenario;
use crate::sim::state::{Action, AgentState, TrajectoryPlan};

pub const DATASET_SCHEMA: &str = "roadlab-gendataset/1";
const RECORD_MAGIC: &str = "roadlab-rollout";
const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionFailure {
    pub scenario: String,
    pub rollout: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub schema: String,
    pub checkpoint_id: String,
    pub generation: usize,
    pub seed: u64,
    pub rollouts_per_scenario: usize,
    pub rollout: RolloutConfig,
    pub sim: SimulatorConfig,
    pub observation: ObservationConfig,
    pub scenarios: Vec<String>,
    pub records: Vec<String>,
    pub failures: Vec<CollectionFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenDataset {
    pub meta: DatasetMeta,
    pub records: Vec<RolloutRecord>,
}

impl GenDataset {
    /// Fraction of requested rollouts that completed without error.
    pub fn coverage(&self) -> f64 {
        let requested = self.meta.scenarios.len() * self.meta.rollouts_per_scenario;
        if requested == 0 {
            return 0.0;
        }
        self.records.len() as f64 / requested as f64
    }

    pub fn num_steps(&self) -> usize {
        self.records.iter().map(|r| r.steps.len()).sum()
    }
}

/// Content hash of a parameter vector, used to tie datasets to checkpoints.
pub fn checkpoint_id(policy: &Policy) -> String {
    let mut h = Sha256::new();
    for v in &policy.params.data {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Seed of rollout `j` on `scenario_id` in collection `generation`.
pub fn rollout_seed(seed: u64, label: &str, generation: usize, scenario_id: &str, j: usize) -> u64 {
    seed::derive_seed(seed, &[label, &generation.to_string(), scenario_id, &j.to_string()])
}

/// Runs `n_roll` guided rollouts per scenario in parallel. Failed rollouts are
/// logged in the metadata and skipped.
#[allow(clippy::too_many_arguments)]
pub fn collect_dataset<D: Driver + ?Sized>(
    driver: &D,
    checkpoint: String,
    scenarios: &[Scenario],
    n_roll: usize,
    sim: &SimulatorConfig,
    rcfg: &RolloutConfig,
    seed: u64,
    generation: usize,
) -> Result<GenDataset> {
    if n_roll == 0 {
        return Err(Error::InvalidInput("rollouts per scenario must be >= 1".into()));
    }
    rcfg.validate(driver.family(), driver.prediction_horizon())?;
    let tasks: Vec<(usize, usize)> = (0..scenarios.len()).flat_map(|i| (0..n_roll).map(move |j| (i, j))).collect();
    let results: Vec<Result<RolloutRecord>> = tasks
        .par_iter()
        .map(|&(i, j)| {
            let sc = &scenarios[i];
            run_guided_rollout(driver, sc, sim, rcfg, rollout_seed(seed, "collect", generation, &sc.id, j), j)
        })
        .collect();
    let mut records = Vec::new();
    let mut names = Vec::new();
    let mut failures = Vec::new();
    for (&(i, j), r) in tasks.iter().zip(results) {
        match r {
            Ok(rec) => {
                names.push(record_file_name(&rec));
                records.push(rec);
            }
            Err(e) => failures.push(CollectionFailure { scenario: scenarios[i].id.clone(), rollout: j, error: e.to_string() }),
        }
    }
    Ok(GenDataset {
        meta: DatasetMeta {
            schema: DATASET_SCHEMA.into(),
            checkpoint_id: checkpoint,
            generation,
            seed,
            rollouts_per_scenario: n_roll,
            rollout: rcfg.clone(),
            sim: sim.clone(),
            observation: driver.observation_config().clone(),
            scenarios: scenarios.iter().map(|s| s.id.clone()).collect(),
            records: names,
            failures,
        },
        records,
    })
}

fn record_file_name(r: &RolloutRecord) -> String {
    format!("{}-r{:03}.roll", r.scenario_id, r.rollout_index)
}

fn push_floats(o: &mut String, v: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for x in v {
        if !first {
            o.push(' ');
        }
        first = false;
        let _ = write!(o, "{x}");
    }
}

fn state_floats(s: &AgentState) -> [f64; 4] {
    [s.x, s.y, s.heading, s.speed]
}

fn encode_action(a: &Action) -> String {
    let mut o = String::new();
    match a {
        Action::DiscreteToken(i) => {
            let _ = write!(o, "token {i}");
        }
        Action::DeltaXY { dx, dy } => {
            let _ = write!(o, "delta_xy {dx} {dy}");
        }
        Action::TrajectoryPlan(p) => {
            let _ = write!(o, "plan {} ", p.dt);
            push_floats(&mut o, p.waypoints.iter().flat_map(state_floats));
        }
    }
    o
}

fn report_name(r: &IncidentReport) -> &'static str {
    match r {
        IncidentReport::None => "none",
        IncidentReport::Collision { at_fault: true } => "collision_at_fault",
        IncidentReport::Collision { at_fault: false } => "collision_not_at_fault",
        IncidentReport::Offroad => "offroad",
    }
}

fn parse_report(s: &str) -> Option<IncidentReport> {
    Some(match s {
        "none" => IncidentReport::None,
        "collision_at_fault" => IncidentReport::Collision { at_fault: true },
        "collision_not_at_fault" => IncidentReport::Collision { at_fault: false },
        "offroad" => IncidentReport::Offroad,
        _ => return None,
    })
}

/// Text form of a rollout record: header lines, one tab-separated row per
/// decision step (t, recovery, distance, action, observation, candidate
/// distances), then the visited states and incidents.
pub fn record_to_text(r: &RolloutRecord) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "{RECORD_MAGIC} {RECORD_VERSION}");
    let _ = writeln!(o, "scenario {}", r.scenario_id);
    let _ = writeln!(o, "rollout {}", r.rollout_index);
    match r.termination {
        Termination::Completed => o.push_str("termination completed\n"),
        Termination::Incident { step, report } => {
            let _ = writeln!(o, "termination incident {step} {}", report_name(&report));
        }
    }
    let _ = writeln!(o, "steps {}", r.steps.len());
    for s in &r.steps {
        let _ = write!(o, "{}\t{}\t{}\t{}\t", s.t, u8::from(s.recovery), s.distance, encode_action(&s.action));
        push_floats(&mut o, s.observation.encode());
        o.push('\t');
        push_floats(&mut o, s.candidate_distances.iter().copied());
        o.push('\n');
    }
    let _ = writeln!(o, "states {}", r.states.len());
    for s in &r.states {
        push_floats(&mut o, state_floats(s));
        o.push('\n');
    }
    let _ = writeln!(o, "incidents {}", r.incidents.len());
    for (t, rep) in &r.incidents {
        let _ = writeln!(o, "{t} {}", report_name(rep));
    }
    o.push_str("end\n");
    o
}

fn floats(s: &str) -> Option<Vec<f64>> {
    s.split_whitespace().map(|x| x.parse().ok()).collect()
}

fn decode_action(s: &str) -> Option<Action> {
    let (kind, rest) = s.split_once(' ')?;
    match kind {
        "token" => Some(Action::DiscreteToken(rest.trim().parse().ok()?)),
        "delta_xy" => {
            let v = floats(rest)?;
            (v.len() == 2).then(|| Action::DeltaXY { dx: v[0], dy: v[1] })
        }
        "plan" => {
            let v = floats(rest)?;
            if v.is_empty() || (v.len() - 1) % 4 != 0 {
                return None;
            }
            let wps = v[1..].chunks(4).map(|c| AgentState { x: c[0], y: c[1], heading: c[2], speed: c[3] }).collect();
            Some(Action::TrajectoryPlan(TrajectoryPlan::new(wps, v[0])))
        }
        _ => None,
    }
}

pub fn record_from_text(text: &str, obs_cfg: &ObservationConfig, path: &Path) -> Result<RolloutRecord> {
    let mut lines = text.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, &str)> {
        lines.next().map(|(i, l)| (i + 1, l)).ok_or_else(|| Error::parse(path, format!("missing {what}")))
    };
    let err = |line: usize, msg: &str| Error::parse(path, format!("line {line}: {msg}"));
    let keyed = |l: (usize, &str), key: &str| -> Result<String> {
        l.1.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| err(l.0, &format!("expected `{key}`")))
    };
    let count = |l: (usize, &str), key: &str| -> Result<usize> {
        keyed(l, key)?.parse().map_err(|_| err(l.0, &format!("bad `{key}` count")))
    };
    let version = keyed(next("header")?, RECORD_MAGIC)?;
    if version != RECORD_VERSION.to_string() {
        return Err(Error::parse(path, format!("unsupported record version {version}")));
    }
    let scenario_id = keyed(next("scenario")?, "scenario")?;
    let rollout_index = count(next("rollout")?, "rollout")?;
    let l = next("termination")?;
    let term = keyed(l, "termination")?;
    let termination = match term.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["completed"] => Termination::Completed,
        ["incident", step, rep] => Termination::Incident {
            step: step.parse().map_err(|_| err(l.0, "bad incident step"))?,
            report: parse_report(rep).ok_or_else(|| err(l.0, "bad incident kind"))?,
        },
        _ => return Err(err(l.0, "bad termination")),
    };
    let n = count(next("steps")?, "steps")?;
    let mut steps = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, row) = next("step row")?;
        let f: Vec<&str> = row.split('\t').collect();
        if f.len() != 6 {
            return Err(err(ln, "step rows need 6 tab-separated fields"));
        }
        let obs = floats(f[4]).ok_or_else(|| err(ln, "bad observation"))?;
        steps.push(RolloutStep {
            t: f[0].parse().map_err(|_| err(ln, "bad t"))?,
            recovery: match f[1] {
                "0" => false,
                "1" => true,
                _ => return Err(err(ln, "bad recovery flag")),
            },
            distance: f[2].parse().map_err(|_| err(ln, "bad distance"))?,
            action: decode_action(f[3]).ok_or_else(|| err(ln, "bad action"))?,
            observation: Observation::decode(&obs, obs_cfg).map_err(|e| err(ln, &e.to_string()))?,
            candidate_distances: floats(f[5]).ok_or_else(|| err(ln, "bad candidate distances"))?,
        });
    }
    let n = count(next("states")?, "states")?;
    let mut states = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, row) = next("state row")?;
        match floats(row).as_deref() {
            Some([x, y, h, v]) => states.push(AgentState { x: *x, y: *y, heading: *h, speed: *v }),
            _ => return Err(err(ln, "bad state row")),
        }
    }
    let n = count(next("incidents")?, "incidents")?;
    let mut incidents = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, row) = next("incident row")?;
        let (t, k) = row.split_once(' ').ok_or_else(|| err(ln, "bad incident row"))?;
        incidents.push((
            t.parse().map_err(|_| err(ln, "bad incident step"))?,
            parse_report(k).ok_or_else(|| err(ln, "bad incident kind"))?,
        ));
    }
    let (ln, l) = next("end")?;
    if l != "end" {
        return Err(err(ln, "expected `end`"));
    }
    Ok(RolloutRecord { scenario_id, rollout_index, steps, states, incidents, termination })
}

/// Writes `manifest.json` plus one record file per rollout under `records/`.
pub fn write_dataset(dir: &Path, ds: &GenDataset) -> Result<()> {
    let rec_dir = dir.join("records");
    fs::create_dir_all(&rec_dir)?;
    for (name, r) in ds.meta.records.iter().zip(&ds.records) {
        fs::write(rec_dir.join(name), record_to_text(r))?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&ds.meta)? + "\n")?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<GenDataset> {
    let mpath = dir.join("manifest.json");
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&mpath)?)
        .map_err(|e| Error::parse(&mpath, e.to_string()))?;
    if meta.schema != DATASET_SCHEMA {
        return Err(Error::parse(&mpath, format!("unsupported schema {}", meta.schema)));
    }
    let records = meta
        .records
        .iter()
        .map(|name| {
            let p = dir.join("records").join(name);
            record_from_text(&fs::read_to_string(&p)?, &meta.observation, &p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GenDataset { meta, records })
}
