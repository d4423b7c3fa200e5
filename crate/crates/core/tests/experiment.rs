use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use roadlab::error::Error;
use roadlab::eval::evaluate;
use roadlab::experiment::baselines::run_baselines;
use roadlab::experiment::config::{Axis, ExperimentConfig};
use roadlab::experiment::manifest::{hash_path, RunManifest};
use roadlab::experiment::matrix::{expand, run_matrix};
use roadlab::experiment::pipeline::{eval_config, generate_splits, run_pipeline, PipelineOptions, Stage, StageSeeds};
use roadlab::experiment::plot::Table;
use roadlab::policy::checkpoint::CheckpointRecord;
use roadlab::train::Refresh;

fn tiny(out: &Path) -> ExperimentConfig {
    let text = r#"
name = "tiny"
seed = 4

[splits]
count = 12
val_fraction = 0.1
test_fraction = 0.3

[policy]
hidden = [8, 8]

[pretrain]
steps = 100

[train]
steps = 20
batch_size = 8
rollouts_per_scenario = 1

[eval]
rollouts_per_scene = 2
min_ade_samples = 2
min_ade_stride = 50
"#;
    let mut c = ExperimentConfig::from_toml(text).unwrap();
    c.out_dir = out.to_path_buf();
    c
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn split_sizes_use_floor_and_remainder() {
    let mut c = ExperimentConfig::default();
    for (count, v, t, want) in [(250, 0.2, 0.4, (100, 50, 100)), (10, 0.15, 0.25, (7, 1, 2)), (7, 0.0, 0.5, (4, 0, 3))] {
        c.splits.count = count;
        c.splits.val_fraction = v;
        c.splits.test_fraction = t;
        let s = c.splits.sizes();
        assert_eq!((s.train, s.val, s.test), want);
        assert_eq!(s.train + s.val + s.test, count);
    }
    c.splits.test_fraction = 0.05;
    c.splits.count = 10;
    assert!(matches!(c.splits.validate(), Err(Error::Config(_))));
}

#[test]
fn splits_are_disjoint_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    let (tr, va, te) = generate_splits(&c).unwrap();
    assert_eq!((tr.len(), va.len(), te.len()), (8, 1, 3));
    let ids: BTreeSet<&str> = tr.iter().chain(&va).chain(&te).map(|s| s.id.as_str()).collect();
    assert_eq!(ids.len(), 12);

    let opts = PipelineOptions { stop_after: Stage::Scenarios, ..PipelineOptions::default() };
    let a = run_pipeline(&c, &opts).unwrap();
    let c2 = tiny(&dir.path().join("again"));
    let b = run_pipeline(&c2, &opts).unwrap();
    assert_eq!(a.manifest.stages[0].artifacts, b.manifest.stages[0].artifacts);
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(ExperimentConfig::from_toml("nme = \"x\"").is_err());
    assert!(ExperimentConfig::from_toml("[train]\nstep = 3").is_err());
    assert!(ExperimentConfig::from_toml("[rollout.recovery]\nramp = 3").is_err());
    let c = ExperimentConfig::from_toml("[rollout]\nk = 16").unwrap();
    assert_eq!(c.rollout.k, 16);
    assert_eq!(c.train, ExperimentConfig::default().train);
}

#[test]
fn overrides_follow_dotted_keys() {
    let c = ExperimentConfig::default();
    let d = c.with_override("rollout.k", &toml::Value::Integer(16)).unwrap();
    assert_eq!(d.rollout.k, 16);
    let w = toml::Value::Array((0..20).map(|_| toml::Value::Float(0.5)).collect());
    let d = c.with_override("rollout.distance.weights", &w).unwrap();
    assert_eq!(d.rollout.distance.weights, Some(vec![0.5; 20]));
    let r: toml::Value = toml::from_str::<toml::Table>("v = { every_epochs = 2 }").unwrap()["v"].clone();
    assert_eq!(c.with_override("train.refresh", &r).unwrap().train.refresh, Refresh::EveryEpochs(2));
    for bad in ["rollout.kk", "nosuch.k", "seed.x"] {
        assert!(matches!(c.with_override(bad, &toml::Value::Integer(1)), Err(Error::Config(_))), "{bad}");
    }
    assert!(c.with_override("rollout.k", &toml::Value::String("many".into())).is_err());
}

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    (
        0u64..i64::MAX as u64,
        1usize..500,
        0.0f64..0.4,
        0.01f64..0.5,
        prop::collection::vec(1usize..128, 1..4),
        (1usize..200, 0.0f64..0.2, 0.0f64..1.0, any::<bool>()),
        (0usize..3, 1usize..5, 0.0f64..1.0, 0.0f64..10.0),
        "[a-z][a-z0-9_-]{0,12}",
    )
        .prop_map(|(seed, count, vf, tf, hidden, (k, thr, mix, rec), (refresh, n, noise, clip), name)| {
            let mut c = ExperimentConfig { seed, name, ..ExperimentConfig::default() };
            c.splits.count = count;
            c.splits.val_fraction = vf;
            c.splits.test_fraction = tf;
            c.policy.hidden = hidden;
            c.rollout.k = k;
            c.rollout.recovery.threshold = thr + 0.01;
            c.rollout.recovery.enabled = rec;
            c.train.expert_mix = mix;
            c.train.refresh = [Refresh::OneOff, Refresh::EveryEpochs(n), Refresh::Always][refresh];
            c.train.clip_norm = clip;
            c.sim.noise_std = [noise, noise / 3.0, noise * 0.1, 0.0];
            if n % 2 == 0 {
                c.rollout.distance.weights = Some((0..c.rollout.distance.horizon).map(|i| i as f64 * noise).collect());
            }
            c.matrix.axes = vec![Axis { key: "rollout.k".into(), values: vec![toml::Value::Integer(n as i64)] }];
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips_through_toml(c in arb_config()) {
        let text = c.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.content_hash(), c.content_hash());
    }
}

#[test]
fn zero_training_steps_equal_base_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.train.steps = 0;
    let out = run_pipeline(&c, &PipelineOptions::default()).unwrap();
    let base = CheckpointRecord::load(&dir.path().join("checkpoints/base.json")).unwrap().policy().unwrap();
    let ev = evaluate(&base, &out.state.test, &c.sim, &eval_config(&c, &StageSeeds::new(&c, ""))).unwrap();
    assert_eq!(out.state.evaluation.as_ref().unwrap(), &ev);
    assert!(out.manifest.stage("collect").unwrap().artifacts.is_empty());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = tiny(&dir.path().join("full"));
    run_pipeline(&full, &PipelineOptions::default()).unwrap();

    let part = tiny(&dir.path().join("part"));
    let stop = PipelineOptions { stop_after: Stage::Collect, ..PipelineOptions::default() };
    run_pipeline(&part, &stop).unwrap();
    assert!(!part.out_dir.join("reports").exists());
    let resumed = run_pipeline(&part, &PipelineOptions { resume: true, ..PipelineOptions::default() }).unwrap();
    assert_eq!(resumed.manifest.stages.len(), 5);
    for f in ["reports/metrics.csv", "reports/final.csv", "checkpoints/final.json"] {
        assert_eq!(read(&full.out_dir.join(f)), read(&part.out_dir.join(f)), "{f}");
    }

    // Everything verifies, and a resume with nothing to do changes nothing.
    let m = RunManifest::load(&part.out_dir).unwrap();
    m.verify(&part.out_dir).unwrap();
    let again = run_pipeline(&part, &PipelineOptions { resume: true, ..PipelineOptions::default() }).unwrap();
    assert_eq!(again.state.evaluation, resumed.state.evaluation);
    for (a, b) in m.stages.iter().zip(&again.manifest.stages) {
        assert_eq!(a.completed_unix, b.completed_unix, "stage {} reran", a.name);
    }
}

#[test]
fn tampered_artifacts_fail_verification_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    let first = run_pipeline(&c, &PipelineOptions::default()).unwrap();
    let ckpt = dir.path().join("checkpoints/final.json");
    let original = read(&ckpt);
    std::fs::write(&ckpt, b"{}").unwrap();
    assert!(matches!(first.manifest.verify(dir.path()), Err(Error::Mismatch(_))));
    std::fs::remove_file(dir.path().join("reports/metrics.csv")).unwrap();
    assert!(first.manifest.verify(dir.path()).is_err());

    let again = run_pipeline(&c, &PipelineOptions { resume: true, ..PipelineOptions::default() }).unwrap();
    assert_eq!(read(&ckpt), original);
    assert_eq!(again.state.evaluation, first.state.evaluation);
    again.manifest.verify(dir.path()).unwrap();
}

#[test]
fn resume_refuses_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    run_pipeline(&c, &PipelineOptions { stop_after: Stage::Scenarios, ..PipelineOptions::default() }).unwrap();
    let mut d = c.clone();
    d.train.lr = 0.5;
    let r = run_pipeline(&d, &PipelineOptions { resume: true, ..PipelineOptions::default() });
    assert!(matches!(r, Err(Error::Config(_))));
    // Output location and thread count do not count as config changes.
    let mut e = c.clone();
    e.jobs = 1;
    run_pipeline(&e, &PipelineOptions { resume: true, stop_after: Stage::Scenarios, ..PipelineOptions::default() }).unwrap();
}

#[test]
fn failed_stage_leaves_a_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.train.lr = 1e300;
    c.train.momentum = 0.0;
    c.train.clip_norm = 0.0;
    c.pretrain.lr = 1e300;
    c.pretrain.momentum = 0.0;
    c.pretrain.clip_norm = 0.0;
    let r = run_pipeline(&c, &PipelineOptions::default());
    assert!(matches!(r, Err(Error::Numerical(_))), "{r:?}");
    let m = RunManifest::load(dir.path()).unwrap();
    assert_eq!(m.stages.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(), ["scenarios"]);
    assert!(m.failure.as_deref().unwrap().starts_with("stage pretrain"));
    m.verify(dir.path()).unwrap();
}

fn axis(key: &str, values: &[i64]) -> Axis {
    Axis { key: key.into(), values: values.iter().map(|v| toml::Value::Integer(*v)).collect() }
}

#[test]
fn matrix_cells_are_labeled_by_override() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    let cells = expand(&c, &[axis("rollout.k", &[16, 64])]).unwrap();
    assert_eq!(cells.iter().map(|x| x.label.as_str()).collect::<Vec<_>>(), ["rollout.k=16", "rollout.k=64"]);
    assert_eq!(cells[1].config.rollout.k, 64);
    let two = expand(&c, &[axis("rollout.k", &[16, 64]), axis("train.rollouts_per_scenario", &[1, 3, 9])]).unwrap();
    assert_eq!(two.len(), 6);
    assert_eq!(two[5].label, "rollout.k=64;train.rollouts_per_scenario=9");

    let out = run_matrix(&c, &[axis("rollout.k", &[16, 64])], false).unwrap();
    let table = Table::parse(&out.table).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.rows[0][0], "rollout.k=16");
    assert_eq!(table.rows[1][table.column("rollout.k").unwrap()], "64");
    RunManifest::load(dir.path()).unwrap().verify(dir.path()).unwrap();
}

#[test]
fn invalid_axis_fails_before_any_run() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(&dir.path().join("m"));
    for bad in [axis("rollout.kay", &[1]), axis("rollout.k", &[]), axis("rollout.k", &[0])] {
        let r = run_matrix(&c, &[axis("train.steps", &[1]), bad], false);
        assert!(matches!(r, Err(Error::Config(_))), "{r:?}");
        assert!(!c.out_dir.exists());
    }
}

#[test]
fn empty_matrix_equals_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(&dir.path().join("pipe"));
    run_pipeline(&c, &PipelineOptions::default()).unwrap();
    let m = tiny(&dir.path().join("matrix"));
    let out = run_matrix(&m, &[], false).unwrap();
    assert_eq!(out.cells.len(), 1);
    assert_eq!(out.cells[0].0.label, "base");
    assert_eq!(
        read(&c.out_dir.join("reports/metrics.csv")),
        read(&m.out_dir.join("cells/base/reports/metrics.csv"))
    );
}

#[test]
fn rollout_axis_gives_a_three_point_curve() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    let out = run_matrix(&c, &[axis("train.rollouts_per_scenario", &[1, 3, 9])], false).unwrap();
    assert_eq!(out.cells.len(), 3);
    let curve = Table::parse(&std::fs::read_to_string(dir.path().join("curve.csv")).unwrap()).unwrap();
    let pts = curve.points("x", "y", Some("y_std")).unwrap();
    assert_eq!(pts.iter().map(|p| p.label.as_str()).collect::<Vec<_>>(), ["1", "3", "9"]);
    for (p, (_, ev)) in pts.iter().zip(&out.cells) {
        assert!((p.y - ev.report.driving_score).abs() < 1e-6);
    }
    let svg = std::fs::read_to_string(dir.path().join("matrix_driving_score.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    // Cells after the first reuse its scenarios and base checkpoint.
    let h = |cell: &str| hash_path(&dir.path().join("cells").join(cell).join("checkpoints/base.json")).unwrap();
    assert_eq!(h("train.rollouts_per_scenario=1"), h("train.rollouts_per_scenario=9"));
}

#[test]
fn continued_cloning_without_learning_rate_is_the_base_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.train.lr = 0.0;
    let out = run_baselines(&c, false).unwrap();
    let get = |m: &str| &out.rows.iter().find(|r| r.method == m).unwrap().evaluation;
    assert_eq!(get("continued_bc"), get("base"));
    assert_eq!(out.rows.iter().map(|r| r.method.as_str()).collect::<Vec<_>>(), ["road", "expert_replay", "continued_bc", "base"]);

    let m = RunManifest::load(dir.path()).unwrap();
    m.verify(dir.path()).unwrap();
    let notes = &m.stage("baselines").unwrap().notes;
    let seeds: BTreeSet<&String> = notes.iter().filter(|(k, _)| k.ends_with(".eval_seed")).map(|(_, v)| v).collect();
    let scenes: BTreeSet<&String> = notes.iter().filter(|(k, _)| k.ends_with(".scenes_sha256")).map(|(_, v)| v).collect();
    assert_eq!((seeds.len(), scenes.len()), (1, 1));
    assert_eq!(notes.keys().filter(|k| k.ends_with(".eval_seed")).count(), 4);

    let table = Table::parse(&std::fs::read_to_string(dir.path().join("baselines/table.csv")).unwrap()).unwrap();
    for col in ["driving_score", "collision_rate", "offroad_rate", "distance_m"] {
        table.column(col).unwrap();
    }
}

fn cli(args: &[&str]) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_roadlab")).args(args).env("RUST_LOG", "warn").output().unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stdout).into_owned())
}

#[test]
fn cli_runs_stages_and_reports_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.toml");
    std::fs::write(&cfg_path, tiny(&dir.path().join("run")).to_toml().unwrap()).unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let run = dir.path().join("run");
    let out = run.to_str().unwrap();

    let (code, stdout) = cli(&["--config", cfg, "gen-scenarios"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("scenarios/test"));
    assert_eq!(cli(&["--config", cfg, "pretrain"]).0, 0);
    assert_eq!(cli(&["--config", cfg, "--out", out, "--jobs", "1", "pipeline", "--stop-after", "finetune"]).0, 0);
    let (code, stdout) = cli(&["--config", cfg, "--resume", "eval"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("driving_score_km_per_incident"));
    let base = run.join("checkpoints/base.json");
    assert_eq!(cli(&["--config", cfg, "eval", "--checkpoint", base.to_str().unwrap()]).0, 0);
    assert!(run.join("reports/base.metrics.csv").exists());
    RunManifest::load(&run).unwrap().verify(&run).unwrap();

    let (code, stdout) = cli(&["--config", cfg, "show-config"]);
    assert_eq!(code, 0);
    assert_eq!(ExperimentConfig::from_toml(&stdout).unwrap(), ExperimentConfig::load(&cfg_path).unwrap());

    // Config errors exit with 1, runtime failures with 2.
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nsteps = \"many\"\n").unwrap();
    assert_eq!(cli(&["--config", bad.to_str().unwrap(), "pipeline"]).0, 1);
    assert_eq!(cli(&["--config", "/nonexistent.toml", "pipeline"]).0, 1);
    assert_eq!(cli(&["--config", cfg, "matrix", "--axis", "rollout.nope=[1]"]).0, 1);
    assert_eq!(cli(&["no-such-command"]).0, 1);
    assert_eq!(cli(&["--config", cfg, "eval", "--checkpoint", "/nonexistent.json"]).0, 2);

    let csv = dir.path().join("c.csv");
    std::fs::write(&csv, "x,y,e\na,1.0,0.1\nb,2.0,0.2\n").unwrap();
    let svg = dir.path().join("c.svg");
    assert_eq!(cli(&["plot", "--input", csv.to_str().unwrap(), "--err", "e", "--svg", svg.to_str().unwrap()]).0, 0);
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<rect"));
    assert_eq!(cli(&["plot", "--input", csv.to_str().unwrap(), "--y", "zz", "--svg", svg.to_str().unwrap()]).0, 2);
}

#[test]
fn identical_configs_give_identical_metric_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = tiny(&dir.path().join("a"));
    a.train.refresh = Refresh::EveryEpochs(1);
    let mut b = a.clone();
    b.out_dir = dir.path().join("b");
    b.jobs = 1;
    run_pipeline(&a, &PipelineOptions::default()).unwrap();
    run_pipeline(&b, &PipelineOptions::default()).unwrap();
    for f in ["reports/metrics.csv", "reports/final.csv", "reports/final.summary.txt"] {
        assert_eq!(read(&a.out_dir.join(f)), read(&b.out_dir.join(f)), "{f}");
    }
}
