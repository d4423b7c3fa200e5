//! Closed-loop evaluation: driving score, incident rates, deviation
//! filtering, minADE and paired comparisons.

use std::fmt::Write as _;
use std::path::Path;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::dataset::rollout_seed;
use crate::rollout::guided::{run_guided_rollout, Driver, RolloutConfig, RolloutRecord};
use crate::seed;
use crate::sim::dynamics::{step_deterministic, SimulatorConfig};
use crate::sim::geometry::Vec2;
use crate::sim::incident::IncidentReport;
use crate::sim::observation::Observation;
use crate::sim::scenario::Scenario;
use crate::sim::state::Action;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub rollouts_per_scene: usize,
    /// Incidents where the ego is farther than this from the expert path are discarded.
    pub deviation_cutoff: f64,
    pub seed: u64,
    pub temperature: f64,
    pub replan_steps: usize,
    pub scene_set: String,
    /// Open-loop samples per minADE query.
    pub min_ade_samples: usize,
    /// Expert steps between minADE queries.
    pub min_ade_stride: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rollouts_per_scene: 3,
            deviation_cutoff: 4.0,
            seed: 0,
            temperature: 0.8,
            replan_steps: 5,
            scene_set: "test".into(),
            min_ade_samples: 6,
            min_ade_stride: 20,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts_per_scene == 0 {
            return Err(Error::Config("rollouts per scene must be >= 1".into()));
        }
        if !(self.deviation_cutoff > 0.0) {
            return Err(Error::Config("deviation cutoff must be > 0".into()));
        }
        if self.min_ade_samples == 0 || self.min_ade_stride == 0 {
            return Err(Error::Config("minADE samples and stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Kilometers per incident: Σ km / max(1, Σ incidents).
pub fn driving_score(distances_m: &[f64], incidents: &[usize]) -> f64 {
    let km: f64 = distances_m.iter().sum::<f64>() / 1000.0;
    let n: usize = incidents.iter().sum();
    km / n.max(1) as f64
}

/// Fraction of reports holding at least one qualifying event.
pub fn collision_rate(reports: &[Vec<IncidentReport>]) -> f64 {
    rate(reports, |r| matches!(r, IncidentReport::Collision { at_fault: true }))
}

pub fn offroad_rate(reports: &[Vec<IncidentReport>]) -> f64 {
    rate(reports, |r| matches!(r, IncidentReport::Offroad))
}

fn rate(reports: &[Vec<IncidentReport>], pred: impl Fn(&IncidentReport) -> bool) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().filter(|r| r.iter().any(&pred)).count() as f64 / reports.len() as f64
}

/// Minimum over samples of the mean per-step position error.
pub fn min_ade(samples: &[Vec<Vec2>], expert: &[Vec2]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("minADE needs at least one sample".into()));
    }
    if expert.is_empty() {
        return Err(Error::Horizon { needed: 1, available: 0 });
    }
    let mut best = f64::INFINITY;
    for s in samples {
        if s.len() != expert.len() {
            return Err(Error::Horizon { needed: expert.len(), available: s.len() });
        }
        let ade = s.iter().zip(expert).map(|(a, b)| a.dist(*b)).sum::<f64>() / expert.len() as f64;
        best = best.min(ade);
    }
    Ok(best)
}

/// Distance from `p` to the nearest logged expert position.
pub fn deviation(p: Vec2, scenario: &Scenario) -> f64 {
    scenario.expert().iter().map(|e| e.pos().dist(p)).fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilteredIncidents {
    pub kept: Vec<(usize, IncidentReport)>,
    pub excluded: Vec<(usize, IncidentReport)>,
}

/// Splits the incidents of `record` by the deviation of the ego at the
/// incident step.
pub fn deviation_filter(record: &RolloutRecord, scenario: &Scenario, cutoff: f64) -> FilteredIncidents {
    let mut out = FilteredIncidents::default();
    for &(t, rep) in &record.incidents {
        let d = record.states.get(t).map_or(f64::INFINITY, |s| deviation(s.pos(), scenario));
        if d > cutoff {
            out.excluded.push((t, rep));
        } else {
            out.kept.push((t, rep));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Evaluated,
    Excluded,
    Failed,
}

/// One scene-rollout of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRow {
    pub scene: String,
    pub rollout: usize,
    pub status: RowStatus,
    pub distance_m: f64,
    pub at_fault_collision: bool,
    pub offroad: bool,
    pub not_at_fault_collision: bool,
    pub deviation_max_m: f64,
    pub ade_m: f64,
    pub error: Option<String>,
}

impl RolloutRow {
    pub fn incidents(&self) -> usize {
        usize::from(self.at_fault_collision || self.offroad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub driving_score: f64,
    pub collision_rate: f64,
    pub offroad_rate: f64,
    /// Fraction of evaluated rollouts with an at-fault collision or off-road event.
    pub incident_rate: f64,
    pub mean_distance_m: f64,
    pub min_ade_m: f64,
    pub ade_to_expert_m: f64,
    pub std_driving_score: f64,
    pub std_collision_rate: f64,
    pub std_offroad_rate: f64,
    pub std_incident_rate: f64,
    pub std_mean_distance_m: f64,
    pub scenes: usize,
    pub rollouts_per_scene: usize,
    pub evaluated: usize,
    pub excluded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub rows: Vec<RolloutRow>,
}

fn row_from_record(rec: &RolloutRecord, sc: &Scenario, cutoff: f64) -> RolloutRow {
    let filtered = deviation_filter(rec, sc, cutoff);
    let terminal_excluded = filtered.excluded.iter().any(|(_, r)| r.is_terminal());
    let kept = |p: fn(&IncidentReport) -> bool| filtered.kept.iter().any(|(_, r)| p(r));
    RolloutRow {
        scene: sc.id.clone(),
        rollout: rec.rollout_index,
        status: if terminal_excluded { RowStatus::Excluded } else { RowStatus::Evaluated },
        distance_m: rec.distance_traveled(),
        at_fault_collision: kept(|r| matches!(r, IncidentReport::Collision { at_fault: true })),
        offroad: kept(|r| matches!(r, IncidentReport::Offroad)),
        not_at_fault_collision: kept(|r| matches!(r, IncidentReport::Collision { at_fault: false })),
        deviation_max_m: rec.states.iter().map(|s| deviation(s.pos(), sc)).fold(0.0, f64::max),
        ade_m: rec.ade_to_expert(sc),
        error: None,
    }
}

/// `samples` open-loop futures of `f` steps from the expert state at `t`.
pub fn open_loop_samples<D: Driver + ?Sized>(
    driver: &D,
    scenario: &Scenario,
    t: usize,
    samples: usize,
    f: usize,
    temperature: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<Vec<Vec2>>> {
    let e = scenario.expert();
    let obs = Observation::build(scenario, e, t, driver.observation_config());
    if driver.prediction_horizon() > 1 {
        let acts = driver.sample(scenario, &obs, samples, temperature, rng)?;
        return acts
            .iter()
            .map(|a| {
                let p = a.as_plan().ok_or_else(|| Error::InvalidInput("plan driver returned a non-plan".into()))?;
                Ok(p.positions().into_iter().take(f).collect())
            })
            .collect();
    }
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut visited = e[..=t].to_vec();
        for k in 0..f {
            let o = Observation::build(scenario, &visited, t + k, driver.observation_config());
            let a: Action = driver.sample(scenario, &o, 1, temperature, rng)?.remove(0);
            let next = step_deterministic(&visited[t + k], &a, scenario.dt, driver.vocab())?;
            visited.push(next);
        }
        out.push(visited[t + 1..].iter().map(|s| s.pos()).collect());
    }
    Ok(out)
}

fn scenario_min_ade<D: Driver + ?Sized>(driver: &D, sc: &Scenario, ecfg: &EvalConfig) -> Result<Option<(f64, usize)>> {
    let f = driver.prediction_horizon().max(10);
    let e = sc.expert();
    let mut rng = seed::stream(ecfg.seed, &["min-ade", &ecfg.scene_set, &sc.id]);
    let mut total = 0.0;
    let mut n = 0;
    let mut t = 0;
    while t + f < e.len() {
        let s = open_loop_samples(driver, sc, t, ecfg.min_ade_samples, f, ecfg.temperature, &mut rng)?;
        let truth: Vec<Vec2> = e[t + 1..=t + f].iter().map(|x| x.pos()).collect();
        total += min_ade(&s, &truth)?;
        n += 1;
        t += ecfg.min_ade_stride;
    }
    Ok((n > 0).then_some((total, n)))
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

struct Aggregate {
    score: f64,
    collision: f64,
    offroad: f64,
    incident: f64,
    distance: f64,
}

fn aggregate<'a>(rows: impl Iterator<Item = &'a RolloutRow>) -> Aggregate {
    let rows: Vec<&RolloutRow> = rows.filter(|r| r.status == RowStatus::Evaluated).collect();
    let n = rows.len().max(1) as f64;
    let dist: Vec<f64> = rows.iter().map(|r| r.distance_m).collect();
    let inc: Vec<usize> = rows.iter().map(|r| r.incidents()).collect();
    Aggregate {
        score: driving_score(&dist, &inc),
        collision: rows.iter().filter(|r| r.at_fault_collision).count() as f64 / n,
        offroad: rows.iter().filter(|r| r.offroad).count() as f64 / n,
        incident: inc.iter().sum::<usize>() as f64 / n,
        distance: dist.iter().sum::<f64>() / n,
    }
}

/// Aggregates rows into a report. Stds are taken across rollout repetitions:
/// repetition r pools the r-th rollout of every scene.
pub fn summarize(rows: &[RolloutRow], scenes: usize, rollouts_per_scene: usize, min_ade_m: f64) -> MetricsReport {
    let all = aggregate(rows.iter());
    let reps: Vec<Aggregate> = (0..rollouts_per_scene).map(|r| aggregate(rows.iter().filter(|x| x.rollout == r))).collect();
    let col = |f: fn(&Aggregate) -> f64| std_dev(&reps.iter().map(f).collect::<Vec<_>>());
    let evaluated: Vec<&RolloutRow> = rows.iter().filter(|r| r.status == RowStatus::Evaluated).collect();
    MetricsReport {
        driving_score: all.score,
        collision_rate: all.collision,
        offroad_rate: all.offroad,
        incident_rate: all.incident,
        mean_distance_m: all.distance,
        min_ade_m,
        ade_to_expert_m: evaluated.iter().map(|r| r.ade_m).sum::<f64>() / evaluated.len().max(1) as f64,
        std_driving_score: col(|a| a.score),
        std_collision_rate: col(|a| a.collision),
        std_offroad_rate: col(|a| a.offroad),
        std_incident_rate: col(|a| a.incident),
        std_mean_distance_m: col(|a| a.distance),
        scenes,
        rollouts_per_scene,
        evaluated: evaluated.len(),
        excluded: rows.iter().filter(|r| r.status == RowStatus::Excluded).count(),
        failed: rows.iter().filter(|r| r.status == RowStatus::Failed).count(),
    }
}

/// Unguided closed-loop evaluation of `driver` on `scenes`.
pub fn evaluate<D: Driver + ?Sized>(driver: &D, scenes: &[Scenario], sim: &SimulatorConfig, ecfg: &EvalConfig) -> Result<Evaluation> {
    ecfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::InvalidInput("evaluation needs at least one scene".into()));
    }
    let rcfg = RolloutConfig {
        replan_steps: ecfg.replan_steps.min(driver.prediction_horizon()),
        ..RolloutConfig::unguided(ecfg.temperature)
    };
    let tasks: Vec<(usize, usize)> =
        (0..scenes.len()).flat_map(|i| (0..ecfg.rollouts_per_scene).map(move |r| (i, r))).collect();
    let rows: Vec<RolloutRow> = tasks
        .par_iter()
        .map(|&(i, r)| {
            let sc = &scenes[i];
            let s = rollout_seed(ecfg.seed, &format!("eval-{}", ecfg.scene_set), 0, &sc.id, r);
            match run_guided_rollout(driver, sc, sim, &rcfg, s, r) {
                Ok(rec) => row_from_record(&rec, sc, ecfg.deviation_cutoff),
                Err(e) => RolloutRow {
                    scene: sc.id.clone(),
                    rollout: r,
                    status: RowStatus::Failed,
                    distance_m: 0.0,
                    at_fault_collision: false,
                    offroad: false,
                    not_at_fault_collision: false,
                    deviation_max_m: 0.0,
                    ade_m: 0.0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    for r in rows.iter().filter(|r| r.status == RowStatus::Failed) {
        log::warn!("rollout {} of {} failed: {}", r.rollout, r.scene, r.error.as_deref().unwrap_or(""));
    }
    let ades: Vec<Option<(f64, usize)>> =
        scenes.par_iter().map(|sc| scenario_min_ade(driver, sc, ecfg)).collect::<Result<Vec<_>>>()?;
    let (tot, n) = ades.iter().flatten().fold((0.0, 0), |(a, b), (x, y)| (a + x, b + y));
    let min_ade_m = if n > 0 { tot / n as f64 } else { 0.0 };
    Ok(Evaluation { report: summarize(&rows, scenes.len(), ecfg.rollouts_per_scene, min_ade_m), rows })
}

pub const REPORT_HEADER: &str = "scene,rollout,status,distance_m,at_fault_collision,offroad,not_at_fault_collision,incidents,deviation_max_m,excluded,ade_m";

pub fn rows_to_csv(rows: &[RolloutRow]) -> String {
    let mut o = String::from(REPORT_HEADER);
    o.push('\n');
    for r in rows {
        let status = match r.status {
            RowStatus::Evaluated => "evaluated",
            RowStatus::Excluded => "excluded",
            RowStatus::Failed => "failed",
        };
        let _ = writeln!(
            o,
            "{},{},{},{:.6},{},{},{},{},{:.6},{},{:.6}",
            r.scene,
            r.rollout,
            status,
            r.distance_m,
            u8::from(r.at_fault_collision),
            u8::from(r.offroad),
            u8::from(r.not_at_fault_collision),
            r.incidents(),
            r.deviation_max_m,
            u8::from(r.status == RowStatus::Excluded),
            r.ade_m
        );
    }
    o
}

/// `key = value` lines, fixed order.
pub fn summary_text(r: &MetricsReport) -> String {
    let mut o = String::new();
    let f = [
        ("driving_score_km_per_incident", r.driving_score, r.std_driving_score),
        ("collision_rate", r.collision_rate, r.std_collision_rate),
        ("offroad_rate", r.offroad_rate, r.std_offroad_rate),
        ("incident_rate", r.incident_rate, r.std_incident_rate),
        ("mean_distance_m", r.mean_distance_m, r.std_mean_distance_m),
    ];
    for (k, v, s) in f {
        let _ = writeln!(o, "{k} = {v:.6} +- {s:.6}");
    }
    let _ = writeln!(o, "min_ade_m = {:.6}", r.min_ade_m);
    let _ = writeln!(o, "ade_to_expert_m = {:.6}", r.ade_to_expert_m);
    let _ = writeln!(
        o,
        "scenes = {}\nrollouts_per_scene = {}\nevaluated = {}\nexcluded = {}\nfailed = {}",
        r.scenes, r.rollouts_per_scene, r.evaluated, r.excluded, r.failed
    );
    o
}

pub fn write_evaluation(dir: &Path, name: &str, ev: &Evaluation) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{name}.csv")), rows_to_csv(&ev.rows))?;
    std::fs::write(dir.join(format!("{name}.summary.txt")), summary_text(&ev.report))?;
    Ok(())
}

/// Two-sided sign test: p-value of a split at least as extreme as
/// `wins`/`losses` under a fair coin. Ties are dropped.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    (2.0 * binom_cdf(wins.min(losses), n)).min(1.0)
}

/// One-sided sign test for "wins exceed losses".
pub fn sign_test_one_sided(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    binom_cdf(losses, n)
}

/// P(X <= k) for X ~ Binomial(n, 1/2).
fn binom_cdf(k: usize, n: usize) -> f64 {
    let mut c = 1.0f64;
    let mut acc = 0.0;
    let half_n = 0.5f64.powi(n as i32);
    for i in 0..=k {
        if i > 0 {
            c = c * (n - i + 1) as f64 / i as f64;
        }
        acc += c * half_n;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    DrivingScore,
    IncidentRate,
    CollisionRate,
    OffroadRate,
    MeanDistance,
}

impl Metric {
    pub const ALL: [Metric; 5] =
        [Metric::DrivingScore, Metric::IncidentRate, Metric::CollisionRate, Metric::OffroadRate, Metric::MeanDistance];

    pub fn name(self) -> &'static str {
        match self {
            Metric::DrivingScore => "driving_score",
            Metric::IncidentRate => "incident_rate",
            Metric::CollisionRate => "collision_rate",
            Metric::OffroadRate => "offroad_rate",
            Metric::MeanDistance => "mean_distance_m",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::DrivingScore | Metric::MeanDistance)
    }

    pub fn of_report(self, r: &MetricsReport) -> f64 {
        match self {
            Metric::DrivingScore => r.driving_score,
            Metric::IncidentRate => r.incident_rate,
            Metric::CollisionRate => r.collision_rate,
            Metric::OffroadRate => r.offroad_rate,
            Metric::MeanDistance => r.mean_distance_m,
        }
    }

    fn of_rows(self, rows: &[&RolloutRow]) -> f64 {
        let a = aggregate(rows.iter().copied());
        match self {
            Metric::DrivingScore => a.score,
            Metric::IncidentRate => a.incident,
            Metric::CollisionRate => a.collision,
            Metric::OffroadRate => a.offroad,
            Metric::MeanDistance => a.distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: Metric,
    pub a: f64,
    pub b: f64,
    /// b - a.
    pub delta: f64,
    /// Scenes where b is better / worse / equal.
    pub b_better: usize,
    pub b_worse: usize,
    pub ties: usize,
    pub p_value: f64,
    pub per_scene: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub metrics: Vec<MetricDelta>,
}

impl ComparisonSummary {
    pub fn get(&self, m: Metric) -> &MetricDelta {
        self.metrics.iter().find(|d| d.metric == m).expect("all metrics are compared")
    }
}

fn scene_groups(ev: &Evaluation) -> Vec<(String, Vec<&RolloutRow>)> {
    let mut out: Vec<(String, Vec<&RolloutRow>)> = Vec::new();
    for r in &ev.rows {
        match out.last_mut() {
            Some((s, v)) if *s == r.scene => v.push(r),
            _ => out.push((r.scene.clone(), vec![r])),
        }
    }
    out
}

/// Per-scene paired comparison of two evaluations on the same scenes.
pub fn compare(a: &Evaluation, b: &Evaluation) -> Result<ComparisonSummary> {
    let ga = scene_groups(a);
    let gb = scene_groups(b);
    if ga.len() != gb.len() || ga.iter().zip(&gb).any(|(x, y)| x.0 != y.0 || x.1.len() != y.1.len()) {
        return Err(Error::Mismatch("evaluations cover different scene sets".into()));
    }
    let metrics = Metric::ALL
        .iter()
        .map(|&m| {
            let mut better = 0;
            let mut worse = 0;
            let mut ties = 0;
            let per_scene: Vec<(String, f64)> = ga
                .iter()
                .zip(&gb)
                .map(|((s, ra), (_, rb))| {
                    let d = m.of_rows(rb) - m.of_rows(ra);
                    let signed = if m.higher_is_better() { d } else { -d };
                    if signed > 0.0 {
                        better += 1;
                    } else if signed < 0.0 {
                        worse += 1;
                    } else {
                        ties += 1;
                    }
                    (s.clone(), d)
                })
                .collect();
            let (va, vb) = (m.of_report(&a.report), m.of_report(&b.report));
            MetricDelta {
                metric: m,
                a: va,
                b: vb,
                delta: vb - va,
                b_better: better,
                b_worse: worse,
                ties,
                p_value: sign_test(better, worse),
                per_scene,
            }
        })
        .collect();
    Ok(ComparisonSummary { metrics })
}
