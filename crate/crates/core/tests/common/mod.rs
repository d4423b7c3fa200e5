#![allow(dead_code)]

use rand::Rng;
use roadlab::policy::model::{Family, Policy, PolicyConfig, Target};
use roadlab::seed;
use roadlab::sim::generate::{generate_scenarios, ScenarioParams};
use roadlab::sim::observation::Observation;
use roadlab::sim::scenario::Scenario;

pub fn small_config(family: Family) -> PolicyConfig {
    PolicyConfig { family, hidden: vec![16, 16], horizon: 30, ..PolicyConfig::default() }
}

pub fn scenarios(seed: u64, n: usize) -> Vec<Scenario> {
    generate_scenarios(seed, n, &ScenarioParams::default()).expect("generation succeeds")
}

/// Observation at a random step of a random expert log.
pub fn random_obs<R: Rng>(scenarios: &[Scenario], policy: &Policy, rng: &mut R) -> Observation {
    let sc = &scenarios[rng.gen_range(0..scenarios.len())];
    let t = rng.gen_range(0..sc.horizon - policy.config.horizon);
    Observation::build(sc, sc.expert(), t, &policy.config.observation)
}

/// Randomizes every parameter in [-scale, scale] (log-stds in [-1.5, -0.5]).
pub fn randomize(policy: &mut Policy, scale: f64, seed_value: u64) {
    let mut rng = seed::stream(seed_value, &["randomize"]);
    for v in &mut policy.params.data {
        *v = rng.gen_range(-scale..scale);
    }
    if let Some(r) = policy.log_std_range() {
        for v in &mut policy.params.data[r] {
            *v = rng.gen_range(-1.5..-0.5);
        }
    }
}

pub fn random_target<R: Rng>(policy: &Policy, feat: &[f64], rng: &mut R) -> Target {
    match policy.family() {
        Family::Discrete => Target::Token(rng.gen_range(0..policy.vocab().expect("tokens").len())),
        Family::Trajectory => {
            let _ = feat;
            Target::Offsets((0..2 * policy.config.horizon).map(|_| rng.gen_range(-0.05..0.05)).collect())
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Worst relative error between `analytic` and central differences of `f`
/// (step `h`) along `dirs`.
pub fn directional_fd_error(
    params: &[f64],
    analytic: &[f64],
    dirs: &[Vec<f64>],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for d in dirs {
        for (x, (b, dd)) in p.iter_mut().zip(params.iter().zip(d)) {
            *x = b + h * dd;
        }
        let up = f(&p);
        for (x, (b, dd)) in p.iter_mut().zip(params.iter().zip(d)) {
            *x = b - h * dd;
        }
        let down = f(&p);
        let numeric = (up - down) / (2.0 * h);
        let exact: f64 = analytic.iter().zip(d).map(|(g, dd)| g * dd).sum();
        worst = worst.max(relative_error(exact, numeric));
    }
    worst
}

/// Random unit directions plus coordinate directions on the largest gradient entries.
pub fn probe_directions<R: Rng>(grad: &[f64], n_random: usize, n_coord: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for _ in 0..n_random {
        let mut d: Vec<f64> = (0..grad.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        d.iter_mut().for_each(|v| *v /= n);
        dirs.push(d);
    }
    let mut idx: Vec<usize> = (0..grad.len()).collect();
    idx.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
    for &i in idx.iter().take(n_coord) {
        let mut d = vec![0.0; grad.len()];
        d[i] = 1.0;
        dirs.push(d);
    }
    dirs
}
