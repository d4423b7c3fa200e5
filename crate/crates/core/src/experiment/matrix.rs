//! Cartesian sweeps over config keys.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::{Axis, ExperimentConfig, MatrixConfig};
use super::manifest::{artifact, now_unix, RunManifest, StageRecord};
use super::pipeline::{metrics_row, open_manifest, run_hash, run_pipeline_unpooled, with_jobs, PipelineOptions, Stage, METRICS_HEADER};
use super::plot::{auto_svg, Point};
use crate::error::{Error, Result};
use crate::eval::Evaluation;
use crate::rollout::dataset::hex;

#[derive(Debug, Clone)]
pub struct Cell {
    /// `key=value` pairs joined by `;`, or `base` without axes.
    pub label: String,
    pub values: Vec<String>,
    pub config: ExperimentConfig,
}

#[derive(Debug)]
pub struct MatrixOutput {
    pub cells: Vec<(Cell, Evaluation)>,
    pub table: String,
}

/// Compact text form of an axis value, safe inside a CSV field.
pub fn render_value(v: &toml::Value) -> String {
    let s = match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    s.replace(',', " ")
}

fn dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._=-".contains(c) { c } else { '_' })
        .collect()
}

/// Expands the axes into cells and validates every cell config before
/// anything runs.
pub fn expand(cfg: &ExperimentConfig, axes: &[Axis]) -> Result<Vec<Cell>> {
    if let Some(a) = axes.iter().find(|a| a.values.is_empty()) {
        return Err(Error::Config(format!("axis {} has no values", a.key)));
    }
    let mut base = cfg.clone();
    base.matrix = MatrixConfig::default();
    let mut cells = vec![(Vec::<String>::new(), Vec::<String>::new(), base)];
    for axis in axes {
        let mut next = Vec::with_capacity(cells.len() * axis.values.len());
        for (parts, vals, c) in &cells {
            for v in &axis.values {
                let c2 = c.with_override(&axis.key, v)?;
                let r = render_value(v);
                let mut p = parts.clone();
                p.push(format!("{}={r}", axis.key));
                let mut vs = vals.clone();
                vs.push(r);
                next.push((p, vs, c2));
            }
        }
        cells = next;
    }
    cells
        .into_iter()
        .map(|(parts, values, mut config)| {
            let label = if parts.is_empty() { "base".to_string() } else { parts.join(";") };
            config.out_dir = cfg.out_dir.join("cells").join(dir_name(&label));
            config
                .validate()
                .map_err(|e| Error::Config(format!("cell {label}: {e}")))?;
            Ok(Cell { label, values, config })
        })
        .collect()
}

fn upstream_hash(c: &ExperimentConfig) -> String {
    let json = serde_json::to_string(&(c.seed, &c.splits, &c.scenarios, &c.policy, &c.pretrain)).expect("serializable");
    hex(&Sha256::digest(json.as_bytes()))
}

fn copy_tree(from: &Path, to: &Path) -> Result<()> {
    if from.is_dir() {
        std::fs::create_dir_all(to)?;
        for e in std::fs::read_dir(from)? {
            let e = e?;
            copy_tree(&e.path(), &to.join(e.file_name()))?;
        }
    } else {
        if let Some(p) = to.parent() {
            std::fs::create_dir_all(p)?;
        }
        std::fs::copy(from, to)?;
    }
    Ok(())
}

/// Seeds `cell` with the scenario and pretraining outputs of an earlier
/// cell that shares them.
fn adopt_upstream(donor: &Path, cell: &Cell) -> Result<()> {
    let dm = RunManifest::load(donor)?;
    let dir = &cell.config.out_dir;
    let mut m = RunManifest::new(&cell.config.name, &run_hash(&cell.config, &cell.label_key()), cell.config.seed);
    for stage in [Stage::Scenarios, Stage::Pretrain] {
        let rec = dm
            .stage(stage.name())
            .ok_or_else(|| Error::Mismatch(format!("donor run lacks stage {}", stage.name())))?;
        for a in &rec.artifacts {
            let target = dir.join(&a.path);
            if target.exists() {
                if target.is_dir() {
                    std::fs::remove_dir_all(&target)?;
                } else {
                    std::fs::remove_file(&target)?;
                }
            }
            copy_tree(&donor.join(&a.path), &target)?;
        }
        m.record(rec.clone());
    }
    m.save(dir)
}

impl Cell {
    /// Seed-derivation key; empty for the axis-free cell so it matches a plain pipeline run.
    pub fn label_key(&self) -> String {
        if self.values.is_empty() {
            String::new()
        } else {
            self.label.clone()
        }
    }
}

pub fn run_matrix(cfg: &ExperimentConfig, axes: &[Axis], resume: bool) -> Result<MatrixOutput> {
    let cells = expand(cfg, axes)?;
    with_jobs(cfg.jobs, || run_cells(cfg, axes, cells, resume))?
}

fn run_cells(cfg: &ExperimentConfig, axes: &[Axis], cells: Vec<Cell>, resume: bool) -> Result<MatrixOutput> {
    let mut donors: HashMap<String, std::path::PathBuf> = HashMap::new();
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        log::info!("matrix cell {}", cell.label);
        let dir = cell.config.out_dir.clone();
        let up = upstream_hash(&cell.config);
        let has_run = dir.join(super::manifest::MANIFEST_FILE).exists();
        let mut opts = PipelineOptions { resume, cell_key: cell.label_key(), ..PipelineOptions::default() };
        if !(resume && has_run) {
            if let Some(donor) = donors.get(&up) {
                std::fs::create_dir_all(&dir)?;
                adopt_upstream(donor, &cell)?;
                opts.resume = true;
                opts.force_from = Some(Stage::Collect);
            }
        }
        let res = run_pipeline_unpooled(&cell.config, &opts)?;
        donors.entry(up).or_insert_with(|| dir.clone());
        let ev = res.state.evaluation.ok_or_else(|| Error::InvalidInput("cell produced no evaluation".into()))?;
        out.push((cell, ev));
    }
    let table = write_outputs(cfg, axes, &out)?;
    Ok(MatrixOutput { cells: out, table })
}

fn write_outputs(cfg: &ExperimentConfig, axes: &[Axis], cells: &[(Cell, Evaluation)]) -> Result<String> {
    let dir = &cfg.out_dir;
    let mut header = String::from("cell");
    for a in axes {
        header.push(',');
        header.push_str(&a.key);
    }
    header.push_str(&METRICS_HEADER["name".len()..]);
    let mut table = header + "\n";
    for (c, ev) in cells {
        let mut line = c.label.clone();
        for v in &c.values {
            line.push(',');
            line.push_str(v);
        }
        line.push_str(&metrics_row("", &ev.report));
        let _ = writeln!(table, "{line}");
    }
    std::fs::write(dir.join("matrix.csv"), &table)?;
    let mut arts = vec!["matrix.csv".to_string()];
    let points: Vec<Point> = cells
        .iter()
        .map(|(c, ev)| Point {
            label: if axes.len() == 1 { c.values[0].clone() } else { c.label.clone() },
            y: ev.report.driving_score,
            err: ev.report.std_driving_score,
        })
        .collect();
    if axes.len() == 1 {
        let mut curve = String::from("x,y,y_std\n");
        for p in &points {
            let _ = writeln!(curve, "{},{:.6},{:.6}", p.label, p.y, p.err);
        }
        std::fs::write(dir.join("curve.csv"), curve)?;
        arts.push("curve.csv".into());
    }
    let title = if axes.is_empty() {
        cfg.name.clone()
    } else {
        format!("{}: {}", cfg.name, axes.iter().map(|a| a.key.as_str()).collect::<Vec<_>>().join(" x "))
    };
    std::fs::write(dir.join("matrix_driving_score.svg"), auto_svg(&title, "driving score (km per incident)", &points))?;
    arts.push("matrix_driving_score.svg".into());
    for (c, _) in cells {
        let rel = c.config.out_dir.strip_prefix(dir).expect("cells live under the matrix dir");
        arts.push(format!("{}/reports/metrics.csv", rel.to_string_lossy().replace('\\', "/")));
    }
    let mut m = open_manifest(cfg, dir, false, "matrix")?;
    m.record(StageRecord {
        name: "matrix".into(),
        completed_unix: now_unix(),
        artifacts: arts.iter().map(|a| artifact(dir, "report", a)).collect::<Result<_>>()?,
        notes: cells.iter().enumerate().map(|(i, (c, _))| (format!("cell{i:03}"), c.label.clone())).collect(),
    });
    m.save(dir)?;
    Ok(table)
}
