use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use roadlab::eval::{evaluate, summary_text, write_evaluation};
use roadlab::experiment::baselines::table_csv;
use roadlab::experiment::config::Axis;
use roadlab::experiment::manifest::{artifact, now_unix, StageRecord};
use roadlab::experiment::pipeline::{eval_config, metrics_csv, StageSeeds};
use roadlab::experiment::plot::{auto_svg, Table};
use roadlab::experiment::{run_baselines, run_matrix, run_pipeline, ExperimentConfig, PipelineOptions, Stage};
use roadlab::policy::checkpoint::CheckpointRecord;
use roadlab::{Error, Result};

/// Closed-loop fine-tuning experiments for toy driving policies
#[derive(Parser, Debug)]
#[command(name = "roadlab", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config; defaults apply to every missing key
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the experiment seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Reuse completed stages of an earlier run in the output directory
    #[arg(long, global = true)]
    resume: bool,

    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the train/val/test scenario splits
    GenScenarios,
    /// Behavior-clone the base policy on the training logs
    Pretrain,
    /// Collect guided rollouts with the base policy
    Collect,
    /// Fine-tune on the collected rollouts
    Finetune,
    /// Evaluate the fine-tuned policy, or any checkpoint, on the test split
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every stage
    Pipeline {
        /// Stop after this stage (scenarios, pretrain, collect, finetune, eval)
        #[arg(long)]
        stop_after: Option<String>,
    },
    /// Sweep config keys, e.g. --axis 'rollout.k=[16, 64]'
    Matrix {
        #[arg(long = "axis")]
        axes: Vec<String>,
    },
    /// Compare fine-tuning, expert replay, continued cloning and the base model
    Baselines,
    /// Draw an SVG chart from a CSV table
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "x")]
        x: String,
        #[arg(long, default_value = "y")]
        y: String,
        /// Column holding error-bar half widths
        #[arg(long)]
        err: Option<String>,
        #[arg(long)]
        title: Option<String>,
        #[arg(long = "svg")]
        svg: PathBuf,
    },
    /// Print the effective config as TOML
    ShowConfig,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(j) = c.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `key=<toml value>`; an array sweeps its elements.
fn parse_axis(s: &str) -> Result<Axis> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("axis {s:?} is not key=values")))?;
    let doc: toml::Table =
        toml::from_str(&format!("v = {raw}")).map_err(|e| Error::Config(format!("axis {key}: {e}")))?;
    let values = match doc.get("v").cloned() {
        Some(toml::Value::Array(a)) => a,
        Some(v) => vec![v],
        None => Vec::new(),
    };
    Ok(Axis { key: key.trim().to_string(), values })
}

fn stage_run(cfg: &ExperimentConfig, common: &Common, stage: Stage) -> Result<()> {
    // Earlier stages are reused when present; the named stage reruns unless resuming.
    let opts = PipelineOptions {
        resume: true,
        force_from: (!common.resume).then_some(stage),
        stop_after: stage,
        ..PipelineOptions::default()
    };
    let out = run_pipeline(cfg, &opts)?;
    if let Some(rec) = out.manifest.stage(stage.name()) {
        for a in &rec.artifacts {
            println!("{}  {}", a.sha256, out.dir.join(&a.path).display());
        }
        for (k, v) in &rec.notes {
            println!("{k} = {v}");
        }
    }
    if let Some(ev) = out.state.evaluation.as_ref().filter(|_| stage == Stage::Eval) {
        print!("{}", summary_text(&ev.report));
    }
    Ok(())
}

fn eval_checkpoint(cfg: &ExperimentConfig, path: &PathBuf) -> Result<()> {
    let opts = PipelineOptions { resume: true, stop_after: Stage::Scenarios, ..PipelineOptions::default() };
    let mut out = run_pipeline(cfg, &opts)?;
    let policy = CheckpointRecord::load(path)?.policy()?;
    let ecfg = eval_config(cfg, &StageSeeds::new(cfg, ""));
    let ev = evaluate(&policy, &out.state.test, &cfg.sim, &ecfg)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into());
    let rdir = out.dir.join("reports");
    write_evaluation(&rdir, &name, &ev)?;
    std::fs::write(rdir.join(format!("{name}.metrics.csv")), metrics_csv([(name.as_str(), &ev.report)]))?;
    let mut arts = Vec::new();
    for ext in ["csv", "summary.txt", "metrics.csv"] {
        arts.push(artifact(&out.dir, "report", &format!("reports/{name}.{ext}"))?);
    }
    out.manifest.record(StageRecord {
        name: format!("eval-{name}"),
        completed_unix: now_unix(),
        artifacts: arts,
        notes: [("checkpoint".to_string(), path.display().to_string()), ("eval_seed".to_string(), ecfg.seed.to_string())]
            .into_iter()
            .collect(),
    });
    out.manifest.save(&out.dir)?;
    print!("{}", summary_text(&ev.report));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Cmd::Plot { input, x, y, err, title, svg } = &cli.cmd {
        let text = std::fs::read_to_string(input)?;
        let points = Table::parse(&text)?.points(x, y, err.as_deref())?;
        let t = title.clone().unwrap_or_else(|| format!("{y} vs {x}"));
        std::fs::write(svg, auto_svg(&t, y, &points))?;
        println!("{}", svg.display());
        return Ok(());
    }
    let cfg = load_config(&cli.common)?;
    match &cli.cmd {
        Cmd::GenScenarios => stage_run(&cfg, &cli.common, Stage::Scenarios),
        Cmd::Pretrain => stage_run(&cfg, &cli.common, Stage::Pretrain),
        Cmd::Collect => stage_run(&cfg, &cli.common, Stage::Collect),
        Cmd::Finetune => stage_run(&cfg, &cli.common, Stage::Finetune),
        Cmd::Eval { checkpoint: Some(p) } => eval_checkpoint(&cfg, p),
        Cmd::Eval { checkpoint: None } => stage_run(&cfg, &cli.common, Stage::Eval),
        Cmd::Pipeline { stop_after } => {
            let stop = stop_after.as_deref().map(Stage::parse).transpose()?.unwrap_or(Stage::Eval);
            let opts = PipelineOptions { resume: cli.common.resume, stop_after: stop, ..PipelineOptions::default() };
            let out = run_pipeline(&cfg, &opts)?;
            if let Some(ev) = &out.state.evaluation {
                print!("{}", summary_text(&ev.report));
            }
            println!("manifest: {}", out.dir.join("manifest.json").display());
            Ok(())
        }
        Cmd::Matrix { axes } => {
            let mut all = cfg.matrix.axes.clone();
            for a in axes {
                all.push(parse_axis(a)?);
            }
            let out = run_matrix(&cfg, &all, cli.common.resume)?;
            print!("{}", out.table);
            Ok(())
        }
        Cmd::Baselines => {
            let out = run_baselines(&cfg, cli.common.resume)?;
            print!("{}", table_csv(&out.rows));
            Ok(())
        }
        Cmd::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Cmd::Plot { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
