mod common;

use std::f64::consts::PI;

use common::{randomize, scenarios, small_config};
use proptest::prelude::*;
use rand::Rng;
use roadlab::error::Error;
use roadlab::policy::model::{Family, Policy, PolicyConfig};
use roadlab::rollout::dataset::{collect_dataset, read_dataset, record_from_text, record_to_text, write_dataset};
use roadlab::rollout::distance::{gen_distance, DistanceConfig, DistanceMode};
use roadlab::rollout::guided::{run_guided_rollout, ExpertDriver, RolloutConfig, RolloutMode, Termination};
use roadlab::rollout::recovery::{recovery_blend, recovery_check, RecoveryConfig};
use roadlab::rollout::select::{select_closest, topk_select, ActionCandidateSet, Provenance};
use roadlab::seed;
use roadlab::sim::dynamics::{step_deterministic, SimulatorConfig};
use roadlab::sim::geometry::{wrap_angle, Vec2};
use roadlab::sim::observation::Observation;
use roadlab::sim::state::{Action, AgentState, TrajectoryPlan, EGO_LENGTH, EGO_WIDTH};

fn random_state<R: Rng>(rng: &mut R) -> AgentState {
    AgentState::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-PI..PI), rng.gen_range(0.0..12.0))
}

fn random_plan<R: Rng>(rng: &mut R, n: usize) -> Vec<AgentState> {
    (0..n).map(|_| random_state(rng)).collect()
}

/// Footprint corners written out independently of the library.
fn corners(s: &AgentState) -> [Vec2; 4] {
    let (c, sn) = (s.heading.cos(), s.heading.sin());
    let (hl, hw) = (0.5 * EGO_LENGTH, 0.5 * EGO_WIDTH);
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, b)| Vec2::new(s.x + a * c - b * sn, s.y + a * sn + b * c))
}

fn oracle_state_distance(dcfg: &DistanceConfig, a: &AgentState, b: &AgentState) -> f64 {
    match dcfg.mode {
        DistanceMode::FourCorner => {
            // Corner order does not matter as long as both use the same one.
            let (ca, cb) = (corners(a), corners(b));
            (0..4).map(|i| ((ca[i].x - cb[i].x).powi(2) + (ca[i].y - cb[i].y).powi(2)).sqrt()).sum::<f64>() / 4.0
        }
        DistanceMode::CenterPoint => {
            let dh = wrap_angle(a.heading - b.heading);
            (dcfg.w_position * ((a.x - b.x).powi(2) + (a.y - b.y).powi(2))
                + dcfg.w_heading * dh * dh
                + dcfg.w_speed * (a.speed - b.speed).powi(2))
            .sqrt()
        }
    }
}

fn oracle_gen_distance(plan: &[AgentState], expert: &[AgentState], dcfg: &DistanceConfig) -> f64 {
    let h = dcfg.horizon.min(plan.len()).min(expert.len());
    let w: Vec<f64> = (0..h).map(|k| dcfg.weights.as_ref().map_or(1.0, |w| w[k])).collect();
    let d: Vec<f64> = (0..h).map(|k| oracle_state_distance(dcfg, &plan[k], &expert[k])).collect();
    let num: f64 = w.iter().zip(&d).map(|(a, b)| a * b).sum();
    let den: f64 = w.iter().sum();
    if !dcfg.normalize {
        num
    } else if den == 0.0 {
        d.iter().sum::<f64>() / h as f64
    } else {
        num / den
    }
}

fn plan_action(states: Vec<AgentState>) -> Action {
    Action::TrajectoryPlan(TrajectoryPlan::new(states, 0.1))
}

#[test]
fn identical_plan_has_zero_distance() {
    let mut rng = seed::stream(1, &["d0"]);
    let expert = random_plan(&mut rng, 30);
    let s = random_state(&mut rng);
    for dcfg in [DistanceConfig::default(), DistanceConfig { horizon: 30, ..DistanceConfig::center_point() }] {
        assert_eq!(gen_distance(&plan_action(expert.clone()), &s, &expert, &dcfg, 0.1, None).unwrap(), 0.0);
    }
}

#[test]
fn one_meter_shift_is_one_meter() {
    let expert: Vec<AgentState> = (1..=30).map(|k| AgentState::new(k as f64, 0.0, 0.0, 10.0)).collect();
    let shifted: Vec<AgentState> = expert.iter().map(|s| AgentState { x: s.x + 1.0, ..*s }).collect();
    let d = gen_distance(&plan_action(shifted), &expert[0], &expert, &DistanceConfig::default(), 0.1, None).unwrap();
    assert!((d - 1.0).abs() < 1e-12, "{d}");
}

#[test]
fn empty_expert_future_is_a_horizon_error() {
    let s = AgentState::new(0.0, 0.0, 0.0, 1.0);
    let r = gen_distance(&plan_action(vec![s]), &s, &[], &DistanceConfig::default(), 0.1, None);
    assert!(matches!(r, Err(Error::Horizon { .. })));
}

#[test]
fn gen_distance_matches_resummation() {
    let mut rng = seed::stream(2, &["resum"]);
    for case in 0..1000 {
        let h = rng.gen_range(1..25);
        let weights = rng.gen_bool(0.5).then(|| {
            let mut w: Vec<f64> = (0..h).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..3.0) }).collect();
            w[rng.gen_range(0..h)] = rng.gen_range(0.1..1.0);
            w
        });
        let dcfg = DistanceConfig {
            horizon: h,
            weights,
            mode: if rng.gen_bool(0.5) { DistanceMode::FourCorner } else { DistanceMode::CenterPoint },
            w_position: rng.gen_range(0.1..2.0),
            w_heading: rng.gen_range(0.0..2.0),
            w_speed: rng.gen_range(0.0..1.0),
            normalize: rng.gen_bool(0.8),
        };
        dcfg.validate().unwrap();
        let plan = random_plan(&mut rng, 30);
        // Short expert futures exercise truncation near the episode end.
        let n = rng.gen_range(1..31);
        let expert = random_plan(&mut rng, n);
        let got = gen_distance(&plan_action(plan.clone()), &plan[0], &expert, &dcfg, 0.1, None).unwrap();
        let want = oracle_gen_distance(&plan, &expert, &dcfg);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "case {case}: {got} vs {want}");
    }
}

#[test]
fn single_step_action_uses_dynamics_image() {
    let s = AgentState::new(0.0, 0.0, 0.0, 1.0);
    let a = Action::DeltaXY { dx: 1.0, dy: 0.0 };
    let next = step_deterministic(&s, &a, 0.1, None).unwrap();
    let expert = [next, AgentState::new(50.0, 50.0, 0.0, 0.0)];
    let d = gen_distance(&a, &s, &expert, &DistanceConfig::default(), 0.1, None).unwrap();
    assert_eq!(d, 0.0);
}

/// Exhaustive scan with strict improvement, so the first minimum wins.
fn scan(distances: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..distances.len() {
        if distances[i] < distances[best] {
            best = i;
        }
    }
    best
}

#[test]
fn select_closest_matches_exhaustive_scan() {
    let mut rng = seed::stream(3, &["select"]);
    let dcfg = DistanceConfig::default();
    for _ in 0..1000 {
        let s = random_state(&mut rng);
        let expert = random_plan(&mut rng, 20);
        let k = rng.gen_range(1..12);
        let mut cands: Vec<Action> = (0..k).map(|_| plan_action(random_plan(&mut rng, 20))).collect();
        if k > 2 && rng.gen_bool(0.3) {
            // Duplicates force ties.
            let j = rng.gen_range(1..k);
            cands[j] = cands[0].clone();
        }
        let set = ActionCandidateSet::score(cands.clone(), Provenance::Sampled, &s, &expert, &dcfg, 0.1, None).unwrap();
        let dists: Vec<f64> = cands.iter().map(|a| gen_distance(a, &s, &expert, &dcfg, 0.1, None).unwrap()).collect();
        let i = scan(&dists);
        let (a, d) = select_closest(&set);
        assert_eq!(a, cands[i]);
        assert_eq!(d, dists[i]);
        assert_eq!(set.closest().0, i);
    }
}

#[test]
fn select_closest_trivial_cases() {
    let mut rng = seed::stream(4, &["trivial"]);
    let s = random_state(&mut rng);
    let expert = random_plan(&mut rng, 20);
    let dcfg = DistanceConfig::default();
    let one = vec![plan_action(random_plan(&mut rng, 20))];
    let set = ActionCandidateSet::score(one.clone(), Provenance::Sampled, &s, &expert, &dcfg, 0.1, None).unwrap();
    assert_eq!(select_closest(&set).0, one[0]);
    let mut many: Vec<Action> = (0..5).map(|_| plan_action(random_plan(&mut rng, 20))).collect();
    many[3] = plan_action(expert.clone());
    let set = ActionCandidateSet::score(many.clone(), Provenance::Sampled, &s, &expert, &dcfg, 0.1, None).unwrap();
    assert_eq!(select_closest(&set), (many[3].clone(), 0.0));
    assert!(ActionCandidateSet::score(vec![], Provenance::Sampled, &s, &expert, &dcfg, 0.1, None).is_err());
}

fn discrete_policy(seed_value: u64) -> Policy {
    let mut p = Policy::zeros(small_config(Family::Discrete)).unwrap();
    randomize(&mut p, 0.5, seed_value);
    p
}

#[test]
fn topk_full_vocabulary_matches_brute_force_projection() {
    let p = discrete_policy(5);
    let vocab = p.vocab().unwrap().clone();
    let m = vocab.len();
    let scs = scenarios(5, 4);
    let dcfg = DistanceConfig::center_point();
    let mut rng = seed::stream(5, &["topk"]);
    for case in 0..1000 {
        let sc = &scs[case % scs.len()];
        let t = rng.gen_range(0..sc.horizon - 1);
        let obs = Observation::build(sc, sc.expert(), t, &p.config.observation);
        let s = random_state(&mut rng);
        let target = s.moved_to(
            s.pos() + Vec2::from_angle(s.heading + rng.gen_range(-0.5..0.5)) * rng.gen_range(0.0..1.6),
            0.1,
        );
        let (a, d) = topk_select(&p, &obs, m, &s, &target, &dcfg).unwrap();
        let dists: Vec<f64> = (0..m)
            .map(|i| {
                let next = step_deterministic(&s, &Action::DiscreteToken(i), 0.1, Some(&vocab)).unwrap();
                oracle_state_distance(&dcfg, &next, &target)
            })
            .collect();
        let best = scan(&dists);
        assert_eq!(a, Action::DiscreteToken(best), "case {case}");
        assert!((d - dists[best]).abs() <= 1e-12, "case {case}");
    }
}

#[test]
fn topk_one_is_policy_argmax() {
    let p = discrete_policy(6);
    let sc = &scenarios(6, 1)[0];
    let obs = Observation::build(sc, sc.expert(), 10, &p.config.observation);
    let top = p.top_k(&obs, 1).unwrap()[0];
    let s = sc.expert()[10];
    let far = AgentState::new(s.x + 100.0, s.y - 100.0, 0.0, 0.0);
    let (a, _) = topk_select(&p, &obs, 1, &s, &far, &DistanceConfig::center_point()).unwrap();
    assert_eq!(a, Action::DiscreteToken(top));
}

#[test]
fn one_hot_policy_selects_its_token() {
    let mut p = Policy::zeros(small_config(Family::Discrete)).unwrap();
    let m = p.vocab().unwrap().len();
    let r = p.output_layer_range();
    let j = 7;
    p.params.data[r.end - m + j] = 50.0;
    let sc = &scenarios(6, 1)[0];
    let obs = Observation::build(sc, sc.expert(), 3, &p.config.observation);
    let s = sc.expert()[3];
    let (a, _) = topk_select(&p, &obs, 1, &s, &sc.expert()[4], &DistanceConfig::center_point()).unwrap();
    assert_eq!(a, Action::DiscreteToken(j));
}

#[test]
fn topk_on_trajectory_policy_is_unsupported() {
    let p = Policy::zeros(small_config(Family::Trajectory)).unwrap();
    let sc = &scenarios(6, 1)[0];
    let obs = Observation::build(sc, sc.expert(), 3, &p.config.observation);
    let s = sc.expert()[3];
    let r = topk_select(&p, &obs, 4, &s, &sc.expert()[4], &DistanceConfig::center_point());
    assert!(matches!(r, Err(Error::UnsupportedFamily(_))));
    let rcfg = RolloutConfig { mode: RolloutMode::TopK, ..Default::default() };
    assert!(rcfg.validate(Family::Trajectory, 30).is_err());
}

#[test]
fn recovery_trigger_examples() {
    let r = RecoveryConfig::default();
    assert!(!recovery_check(r.threshold, &r, 0, 150));
    assert!(recovery_check(r.threshold + 1e-9, &r, 0, 150));
    assert!(recovery_check(r.threshold + 1e-9, &r, 150 - r.disable_window - 1, 150));
    assert!(!recovery_check(r.threshold + 1e-9, &r, 150 - r.disable_window, 150));
    assert!(!recovery_check(1e9, &RecoveryConfig::disabled(), 0, 150));
}

#[test]
fn recovery_blend_examples() {
    let mut rng = seed::stream(7, &["blend"]);
    let plan: Vec<AgentState> = random_plan(&mut rng, 30);
    let expert: Vec<AgentState> = random_plan(&mut rng, 30);
    let r = RecoveryConfig { ramp_steps: 30, ..Default::default() };
    let out = recovery_blend(&TrajectoryPlan::new(plan.clone(), 0.1), &expert, &r).unwrap();
    // Waypoint k = 15 is index 14.
    let mid = out.waypoints[14];
    assert!((mid.x - 0.5 * (plan[14].x + expert[14].x)).abs() < 1e-12);
    assert!((mid.y - 0.5 * (plan[14].y + expert[14].y)).abs() < 1e-12);
    assert!((mid.speed - 0.5 * (plan[14].speed + expert[14].speed)).abs() < 1e-12);
    assert_eq!(out.waypoints[29], expert[29]);

    let same = recovery_blend(&TrajectoryPlan::new(expert.clone(), 0.1), &expert, &r).unwrap();
    for (a, b) in same.waypoints.iter().zip(&expert) {
        assert!(a.pos().dist(b.pos()) < 1e-12 && wrap_angle(a.heading - b.heading).abs() < 1e-12);
    }

    let all = recovery_blend(&TrajectoryPlan::new(plan.clone(), 0.1), &expert, &RecoveryConfig { ramp_steps: 1, ..r.clone() }).unwrap();
    assert_eq!(all.waypoints, expert);

    let short = recovery_blend(&TrajectoryPlan::new(plan, 0.1), &expert[..10], &r);
    assert!(matches!(short, Err(Error::Horizon { .. })));
}

#[test]
fn blend_heading_takes_shorter_arc() {
    let r = RecoveryConfig { ramp_steps: 2, ..Default::default() };
    let p = AgentState::new(0.0, 0.0, PI - 0.1, 1.0);
    let e = AgentState::new(0.0, 0.0, -PI + 0.1, 1.0);
    let out = recovery_blend(&TrajectoryPlan::new(vec![p, p], 0.1), &[e, e], &r).unwrap();
    assert!((out.waypoints[0].heading.abs() - PI).abs() < 1e-12);
}

fn trained_like_policy() -> Policy {
    let mut p = Policy::zeros(PolicyConfig { hidden: vec![16, 16], ..Default::default() }).unwrap();
    randomize(&mut p, 0.3, 8);
    if let Some(r) = p.log_std_range() {
        p.params.data[r].fill(-1.0);
    }
    p
}

#[test]
fn sample_k_with_k1_equals_unguided() {
    let p = trained_like_policy();
    let sim = SimulatorConfig::default();
    for sc in &scenarios(9, 3) {
        let k1 = RolloutConfig { k: 1, recovery: RecoveryConfig::disabled(), ..Default::default() };
        let a = run_guided_rollout(&p, sc, &sim, &k1, 77, 0).unwrap();
        let b = run_guided_rollout(&p, sc, &sim, &RolloutConfig::unguided(0.8), 77, 0).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.termination, b.termination);
    }
}

#[test]
fn expert_driver_reproduces_the_log() {
    let cfg = PolicyConfig::default();
    let d = ExpertDriver { horizon: 30, dt: 0.1, observation: cfg.observation };
    let sim = SimulatorConfig::noiseless();
    for sc in &scenarios(10, 5) {
        let rec = run_guided_rollout(&d, sc, &sim, &RolloutConfig::default(), 1, 0).unwrap();
        assert_eq!(rec.termination, Termination::Completed);
        assert_eq!(rec.states.len(), sc.horizon + 1);
        assert!(rec.steps.iter().all(|s| !s.recovery && s.distance < 1e-6));
        for (a, b) in rec.states.iter().zip(sc.expert()) {
            assert!(a.pos().dist(b.pos()) < 1e-6);
        }
    }
}

#[test]
fn rollout_records_satisfy_invariants() {
    let p = trained_like_policy();
    let sim = SimulatorConfig::default();
    let rcfg = RolloutConfig { k: 16, ..Default::default() };
    let mut triggered = 0;
    for sc in &scenarios(11, 6) {
        for j in 0..2 {
            let rec = run_guided_rollout(&p, sc, &sim, &rcfg, 100 + j as u64, j).unwrap();
            assert_eq!(rec.rollout_index, j);
            for st in &rec.steps {
                // Guidance dominance.
                assert!(st.candidate_distances.iter().all(|&d| st.distance <= d));
                assert_eq!(st.candidate_distances.len(), 16);
                // Recovery flag iff the trigger condition held.
                assert_eq!(st.recovery, recovery_check(st.distance, &rcfg.recovery, st.t, sc.horizon));
                if st.recovery {
                    triggered += 1;
                    let plan = st.action.as_plan().unwrap();
                    let future = sc.expert_future(st.t);
                    for k in rcfg.recovery.ramp_steps..=plan.horizon() {
                        assert_eq!(plan.waypoints[k - 1], future[k - 1]);
                    }
                }
            }
            let last_t = rec.states.len() - 1;
            match rec.termination {
                Termination::Incident { step, report } => {
                    assert!(report.is_terminal());
                    assert_eq!(step, last_t);
                    assert!(rec.steps.iter().all(|s| s.t < step));
                    assert_eq!(rec.incidents.last(), Some(&(step, report)));
                    assert!(rec.incidents.iter().filter(|(_, r)| r.is_terminal()).count() == 1);
                }
                Termination::Completed => assert_eq!(last_t, sc.horizon),
            }
            assert!(rec.steps.windows(2).all(|w| w[1].t == w[0].t + rcfg.replan_steps));
        }
    }
    assert!(triggered > 0, "recovery never fired");
}

#[test]
fn discrete_topk_rollout_runs_with_one_step_decisions() {
    let p = discrete_policy(12);
    let sc = &scenarios(12, 1)[0];
    let rcfg = RolloutConfig { mode: RolloutMode::TopK, k: 8, distance: DistanceConfig::center_point(), ..Default::default() };
    let rec = run_guided_rollout(&p, sc, &SimulatorConfig::noiseless(), &rcfg, 3, 0).unwrap();
    assert_eq!(rec.steps.len(), rec.states.len() - 1);
    assert!(rec.steps.iter().all(|s| matches!(s.action, Action::DiscreteToken(_)) && !s.recovery));
}

#[test]
fn collect_counts_and_determinism() {
    let p = trained_like_policy();
    let scs = scenarios(13, 10);
    let sim = SimulatorConfig::default();
    let rcfg = RolloutConfig { k: 8, ..Default::default() };
    let ds = collect_dataset(&p, "ck".into(), &scs, 3, &sim, &rcfg, 5, 0).unwrap();
    assert_eq!(ds.records.len(), 30);
    assert_eq!(ds.coverage(), 1.0);
    let again = collect_dataset(&p, "ck".into(), &scs, 3, &sim, &rcfg, 5, 0).unwrap();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    write_dataset(d1.path(), &ds).unwrap();
    write_dataset(d2.path(), &again).unwrap();
    let files = |d: &std::path::Path| {
        let mut v: Vec<(String, Vec<u8>)> = walk(d).into_iter().map(|p| (p.strip_prefix(d).unwrap().display().to_string(), std::fs::read(&p).unwrap())).collect();
        v.sort();
        v
    };
    assert_eq!(files(d1.path()), files(d2.path()));
    let back = read_dataset(d1.path()).unwrap();
    assert_eq!(back, ds);
    assert!(collect_dataset(&p, "ck".into(), &scs, 0, &sim, &rcfg, 5, 0).is_err());
}

fn walk(d: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(d).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn more_rollouts_extend_the_index_set() {
    let p = trained_like_policy();
    let scs = scenarios(14, 3);
    let sim = SimulatorConfig::default();
    let rcfg = RolloutConfig { k: 4, ..Default::default() };
    let one = collect_dataset(&p, "ck".into(), &scs, 1, &sim, &rcfg, 9, 0).unwrap();
    let nine = collect_dataset(&p, "ck".into(), &scs, 9, &sim, &rcfg, 9, 0).unwrap();
    assert_eq!(nine.records.len(), 9 * one.records.len());
    for r in &one.records {
        let twin = nine.records.iter().find(|x| x.scenario_id == r.scenario_id && x.rollout_index == r.rollout_index).unwrap();
        assert_eq!(twin, r);
    }
    let distinct: std::collections::BTreeSet<(String, usize)> =
        nine.records.iter().map(|r| (r.scenario_id.clone(), r.rollout_index)).collect();
    assert_eq!(distinct.len(), 27);
    assert!(nine.num_steps() > one.num_steps());
}

#[test]
fn corrupt_record_is_rejected() {
    let p = trained_like_policy();
    let sc = &scenarios(15, 1)[0];
    let rec = run_guided_rollout(&p, sc, &SimulatorConfig::default(), &RolloutConfig { k: 4, ..Default::default() }, 1, 0).unwrap();
    let text = record_to_text(&rec);
    let back = record_from_text(&text, &p.config.observation, "r".as_ref()).unwrap();
    assert_eq!(back, rec);
    let broken = text.replacen("end", "", 1);
    assert!(record_from_text(&broken, &p.config.observation, "r".as_ref()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn lambda_is_a_monotone_ramp(n in 1usize..40) {
        let r = RecoveryConfig { ramp_steps: n, ..Default::default() };
        let mut prev = 0.0;
        for k in 1..=40 {
            let l = r.lambda(k);
            prop_assert!((0.0..=1.0).contains(&l) && l >= prev);
            prev = l;
        }
        prop_assert_eq!(r.lambda(n), 1.0);
    }

    #[test]
    fn distance_is_nonnegative_and_symmetric(seed_value in any::<u64>(), h in 1usize..20) {
        let mut rng = seed::stream(seed_value, &[]);
        let a = random_plan(&mut rng, h);
        let b = random_plan(&mut rng, h);
        let dcfg = DistanceConfig { horizon: h, ..Default::default() };
        let ab = gen_distance(&plan_action(a.clone()), &a[0], &b, &dcfg, 0.1, None).unwrap();
        let ba = gen_distance(&plan_action(b.clone()), &b[0], &a, &dcfg, 0.1, None).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-9);
    }
}
