//! Procedural scenario generation.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::expert::{check_expert_clean, idm_accel, synthesize_expert, DriverParams, ScenarioShell};
use super::geometry::{OrientedRect, Polygon, Polyline, Vec2};
use super::scenario::{AgentTrack, MapGeometry, Scenario};
use super::state::{AgentState, EGO_LENGTH, EGO_WIDTH};
use crate::error::{Error, Result};
use crate::seed;

const ROUTE_SPACING: f64 = 1.0;
const EGO_START_S: f64 = 25.0;
const CAR_LENGTH: f64 = 4.5;
const CAR_WIDTH: f64 = 1.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    /// 0 = easy, 1 = hard. Scales curvature, road width, obstacles and traffic.
    pub difficulty: f64,
    pub horizon: usize,
    pub dt: f64,
    /// Parked obstacles per 100 m of route at difficulty 0.5.
    pub obstacle_density: f64,
    pub max_retries: usize,
    /// Minimum step count every scenario must satisfy (twice the prediction horizon).
    pub min_steps: usize,
    pub driver: DriverParams,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            difficulty: 0.5,
            horizon: 150,
            dt: 0.1,
            obstacle_density: 1.0,
            max_retries: 25,
            min_steps: 60,
            driver: DriverParams::default(),
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::Config(format!("difficulty {} outside [0, 1]", self.difficulty)));
        }
        if !(self.dt > 0.0) || self.horizon < self.min_steps {
            return Err(Error::Config("horizon must cover min_steps with positive dt".into()));
        }
        if !(self.obstacle_density >= 0.0) {
            return Err(Error::Config("obstacle density must be >= 0".into()));
        }
        Ok(())
    }

    fn half_width(&self) -> f64 {
        3.6 - 0.5 * self.difficulty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RoadKind {
    Straight,
    Curvy,
    Turn(TurnDir),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TurnDir {
    Left,
    Right,
    Through,
}

struct LocalMap {
    route: Vec<Vec2>,
    extra_lanes: Vec<Vec<Vec2>>,
    drivable: Vec<Vec2>,
    /// Arc-length intervals of the route where parked cars may be placed.
    parkable: Vec<(f64, f64)>,
    kind: RoadKind,
}

fn push_straight(pts: &mut Vec<Vec2>, heading: &mut f64, len: f64) {
    let start = *pts.last().expect("route seeded");
    let n = (len / ROUTE_SPACING).round().max(1.0) as usize;
    for i in 1..=n {
        pts.push(start + Vec2::from_angle(*heading) * (len * i as f64 / n as f64));
    }
}

fn push_arc(pts: &mut Vec<Vec2>, heading: &mut f64, radius: f64, angle: f64) {
    let start = *pts.last().expect("route seeded");
    let side = angle.signum();
    let center = start + Vec2::from_angle(*heading + side * FRAC_PI_2) * radius;
    let phi0 = *heading - side * FRAC_PI_2;
    let n = ((radius * angle.abs()) / ROUTE_SPACING).ceil().max(1.0) as usize;
    for i in 1..=n {
        let phi = phi0 + angle * i as f64 / n as f64;
        pts.push(center + Vec2::from_angle(phi) * radius);
    }
    *heading += angle;
}

fn corridor(route: &[Vec2], half_width: f64) -> Vec<Vec2> {
    // Extend both ends so route endpoints are strictly interior.
    let n = route.len();
    let h0 = (route[1] - route[0]).angle();
    let h1 = (route[n - 1] - route[n - 2]).angle();
    let mut pts = vec![route[0] - Vec2::from_angle(h0) * 5.0];
    pts.extend(route.iter().step_by(3));
    if *pts.last().expect("nonempty") != route[n - 1] {
        pts.push(route[n - 1]);
    }
    pts.push(route[n - 1] + Vec2::from_angle(h1) * 5.0);
    let m = pts.len();
    let normal = |i: usize| {
        let a = pts[i.saturating_sub(1)];
        let b = pts[(i + 1).min(m - 1)];
        Vec2::from_angle((b - a).angle() + FRAC_PI_2)
    };
    let mut left: Vec<Vec2> = (0..m).map(|i| pts[i] + normal(i) * half_width).collect();
    let right: Vec<Vec2> = (0..m).rev().map(|i| pts[i] - normal(i) * half_width).collect();
    left.extend(right);
    left
}

fn curvy_route<R: Rng>(rng: &mut R, difficulty: f64) -> Vec<Vec2> {
    let min_radius = 70.0 - 45.0 * difficulty;
    let mut pts = vec![Vec2::ZERO];
    let mut heading = 0.0;
    push_straight(&mut pts, &mut heading, 40.0);
    let mut length = 40.0;
    while length < 300.0 {
        if rng.gen_bool(0.65) {
            let radius = rng.gen_range(min_radius..200.0);
            let mut angle = rng.gen_range(0.25..1.2) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            if (heading + angle).abs() > 1.75 {
                angle = -angle;
            }
            push_arc(&mut pts, &mut heading, radius, angle);
            length += radius * angle.abs();
        } else {
            let len = rng.gen_range(15.0..50.0);
            push_straight(&mut pts, &mut heading, len);
            length += len;
        }
    }
    pts
}

fn intersection_map<R: Rng>(rng: &mut R, w: f64) -> LocalMap {
    let b = 12.0;
    let approach = 110.0;
    let arm = b + 170.0;
    let dir = match rng.gen_range(0..3) {
        0 => TurnDir::Left,
        1 => TurnDir::Right,
        _ => TurnDir::Through,
    };
    let mut route = vec![Vec2::new(-approach, 0.0)];
    let mut heading = 0.0;
    push_straight(&mut route, &mut heading, approach - b);
    match dir {
        TurnDir::Left => push_arc(&mut route, &mut heading, b, FRAC_PI_2),
        TurnDir::Right => push_arc(&mut route, &mut heading, b, -FRAC_PI_2),
        TurnDir::Through => push_straight(&mut route, &mut heading, 2.0 * b),
    }
    push_straight(&mut route, &mut heading, arm - b - 5.0);
    let e = approach + 5.0;
    #[rustfmt::skip]
    let drivable = vec![
        Vec2::new(-e, -w), Vec2::new(-b, -w), Vec2::new(-b, -b), Vec2::new(-w, -b),
        Vec2::new(-w, -arm), Vec2::new(w, -arm), Vec2::new(w, -b), Vec2::new(b, -b),
        Vec2::new(b, -w), Vec2::new(arm, -w), Vec2::new(arm, w), Vec2::new(b, w),
        Vec2::new(b, b), Vec2::new(w, b), Vec2::new(w, arm), Vec2::new(-w, arm),
        Vec2::new(-w, b), Vec2::new(-b, b), Vec2::new(-b, w), Vec2::new(-e, w),
    ];
    let cross = vec![Vec2::new(0.0, -(arm - 5.0)), Vec2::new(0.0, arm - 5.0)];
    let exit_start = approach - b + (if dir == TurnDir::Through { 2.0 * b } else { b * FRAC_PI_2 });
    LocalMap {
        route,
        extra_lanes: vec![cross],
        drivable,
        parkable: vec![(EGO_START_S + 25.0, approach - b - 8.0), (exit_start + 10.0, exit_start + 140.0)],
        kind: RoadKind::Turn(dir),
    }
}

fn local_map<R: Rng>(rng: &mut R, params: &ScenarioParams) -> LocalMap {
    let w = params.half_width();
    let u: f64 = rng.gen();
    if u < 0.25 {
        let mut route = vec![Vec2::ZERO];
        push_straight(&mut route, &mut 0.0, 300.0);
        let drivable = corridor(&route, w);
        LocalMap { route, extra_lanes: vec![], drivable, parkable: vec![(EGO_START_S + 25.0, 280.0)], kind: RoadKind::Straight }
    } else if u < 0.7 {
        let route = curvy_route(rng, params.difficulty);
        let drivable = corridor(&route, w);
        let len = Polyline::new(route.clone()).length();
        LocalMap { route, extra_lanes: vec![], drivable, parkable: vec![(EGO_START_S + 25.0, len - 20.0)], kind: RoadKind::Curvy }
    } else {
        intersection_map(rng, w)
    }
}

fn speed_profile_track(route: &Polyline, s0: f64, speeds: &[f64], dt: f64, length: f64, width: f64) -> AgentTrack {
    let mut s = s0;
    let (p0, h0) = route.sample(s);
    let mut states = vec![AgentState::new(p0.x, p0.y, h0, speeds[0])];
    for &v in &speeds[1..] {
        s += v * dt;
        let (p, _) = route.sample(s);
        let last = *states.last().expect("seeded");
        states.push(last.moved_to(p, dt));
    }
    AgentTrack { length, width, states }
}

fn lead_track<R: Rng>(rng: &mut R, route: &Polyline, params: &ScenarioParams, ego_speed: f64) -> AgentTrack {
    let d = params.difficulty;
    let gap = rng.gen_range(18.0..35.0);
    let v0 = (ego_speed * rng.gen_range(0.75..1.0)).max(3.0);
    let t_brake = rng.gen_range(15..100);
    let decel = 1.5 + 2.5 * d;
    let v_low = v0 * rng.gen_range(0.15..(0.6 - 0.3 * d));
    let hold = rng.gen_range(10..30);
    let mut speeds = Vec::with_capacity(params.horizon + 1);
    let mut v = v0;
    let mut phase_end = None;
    for t in 0..=params.horizon {
        if t >= t_brake {
            match phase_end {
                None if v > v_low => v = (v - decel * params.dt).max(v_low),
                None => phase_end = Some(t + hold),
                Some(e) if t >= e => v = (v + 1.0 * params.dt).min(v0),
                _ => {}
            }
        }
        speeds.push(v);
    }
    speed_profile_track(route, EGO_START_S + gap + EGO_LENGTH, &speeds, params.dt, EGO_LENGTH, EGO_WIDTH)
}

/// Follower that reacts to the logged expert with IDM along the route.
fn follower_track<R: Rng>(rng: &mut R, route: &Polyline, expert: &[AgentState], params: &ScenarioParams) -> AgentTrack {
    let p = DriverParams { time_headway: 1.0, ..params.driver.clone() };
    let gap = rng.gen_range(10.0..18.0);
    let cruise = expert[0].speed * rng.gen_range(1.05..1.25) + 0.5;
    let mut s = EGO_START_S - gap - EGO_LENGTH;
    let mut v = expert[0].speed;
    let mut speeds = vec![v];
    for e in expert.iter().take(expert.len() - 1) {
        let se = route.project(e.pos()).s;
        let bumper = se - s - EGO_LENGTH;
        let a = idm_accel(v, cruise, Some((bumper, e.speed)), &p);
        v = (v + a * params.dt).max(0.0);
        s += v * params.dt;
        speeds.push(v);
    }
    speed_profile_track(route, EGO_START_S - gap - EGO_LENGTH, &speeds, params.dt, EGO_LENGTH, EGO_WIDTH)
}

/// Crossing vehicle timed to pass the conflict point while the expert is clear of it.
fn cross_track<R: Rng>(
    rng: &mut R,
    lane: &Polyline,
    conflict: Vec2,
    expert: &[AgentState],
    params: &ScenarioParams,
) -> Option<AgentTrack> {
    let dt = params.dt;
    let v = rng.gen_range(6.0..10.0);
    let busy: Vec<usize> = expert
        .iter()
        .enumerate()
        .filter(|(_, s)| s.pos().dist(conflict) < 14.0)
        .map(|(t, _)| t)
        .collect();
    let s_conflict = lane.project(conflict).s;
    let forward = rng.gen_bool(0.5);
    let clear_steps = (14.0 / (v * dt)).ceil() as isize;
    for _ in 0..20 {
        let tc = rng.gen_range(20..params.horizon.saturating_sub(20).max(21)) as isize;
        let ok = busy.iter().all(|&t| (t as isize - tc).abs() > clear_steps + 10);
        if !ok {
            continue;
        }
        let speeds = vec![v; params.horizon + 1];
        let track = if forward {
            speed_profile_track(lane, s_conflict - v * dt * tc as f64, &speeds, dt, EGO_LENGTH, EGO_WIDTH)
        } else {
            let rev = Polyline::new(lane.points().iter().rev().copied().collect());
            let sc = rev.project(conflict).s;
            speed_profile_track(&rev, sc - v * dt * tc as f64, &speeds, dt, EGO_LENGTH, EGO_WIDTH)
        };
        return Some(track);
    }
    None
}

fn transform(p: Vec2, rot: f64, shift: Vec2) -> Vec2 {
    p.rotate(rot) + shift
}

fn place_parked<R: Rng>(
    rng: &mut R,
    route: &Polyline,
    parkable: &[(f64, f64)],
    params: &ScenarioParams,
    ego: &AgentState,
) -> Result<Vec<OrientedRect>> {
    let w = params.half_width();
    let span: f64 = parkable.iter().map(|(a, b)| (b - a).max(0.0)).sum();
    let expected = params.obstacle_density * (0.5 + params.difficulty) * span / 100.0;
    let n = rng.gen_range(0.0..=(2.0 * expected)).round() as usize;
    let mut out: Vec<OrientedRect> = Vec::new();
    let ego_box = ego.footprint();
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..30 {
            let mut s = rng.gen_range(0.0..span.max(1e-9));
            let mut seg = parkable[0];
            for &(a, b) in parkable {
                if s <= b - a {
                    seg = (a, b);
                    break;
                }
                s -= b - a;
            }
            let s = seg.0 + s;
            let (p, h) = route.sample(s);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let lateral = side * (w - 0.6);
            let c = p + Vec2::from_angle(h + FRAC_PI_2) * lateral;
            let r = OrientedRect::new(c, h, CAR_LENGTH, CAR_WIDTH);
            let padded = OrientedRect::new(c, h, CAR_LENGTH + 4.0, CAR_WIDTH + 1.0);
            if out.iter().any(|o| o.overlaps(&padded)) || ego_box.overlaps(&padded) {
                continue;
            }
            out.push(r);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Generation(format!("could not place {n} parked obstacles")));
        }
    }
    Ok(out)
}

fn try_generate<R: Rng>(rng: &mut R, id: &str, params: &ScenarioParams) -> Result<Scenario> {
    let d = params.difficulty;
    let local = local_map(rng, params);
    let rot = rng.gen_range(-PI..PI);
    let shift = Vec2::new(rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0));
    let tf = |pts: &[Vec2]| pts.iter().map(|&p| transform(p, rot, shift)).collect::<Vec<_>>();
    let route = Polyline::new(tf(&local.route));
    let mut lanes = vec![route.clone()];
    lanes.extend(local.extra_lanes.iter().map(|l| Polyline::new(tf(l))));
    let drivable = Polygon::new(tf(&local.drivable));

    let cruise = rng.gen_range(7.0..11.0) + 2.0 * d;
    let curv = super::expert::route_curvature(&route);
    let (p0, h0) = route.sample(EGO_START_S);
    let v_start = super::expert::curve_speed_limit(&curv, EGO_START_S, &params.driver, cruise * rng.gen_range(0.8..1.0));
    let ego_start = AgentState::new(p0.x, p0.y, h0, v_start);

    let mut obstacles = place_parked(rng, &route, &local.parkable, params, &ego_start)?;
    let blocked = rng.gen_bool(0.08 + 0.15 * d);
    if blocked {
        let s = rng.gen_range(90.0..170.0);
        let (p, h) = route.sample(s);
        obstacles.push(OrientedRect::new(p, h, CAR_LENGTH, CAR_WIDTH));
    }
    let map = MapGeometry { lanes, drivable, obstacles };

    let mut replay = Vec::new();
    if !blocked && rng.gen_bool(0.3 + 0.5 * d) {
        replay.push(lead_track(rng, &route, params, v_start));
    }
    let shell = ScenarioShell {
        id: id.to_string(),
        map,
        dt: params.dt,
        horizon: params.horizon,
        replay,
        ego_start,
        cruise_speed: cruise,
    };
    let mut scenario = synthesize_expert(shell, &params.driver)?;

    if rng.gen_bool(0.3 + 0.3 * d) {
        let f = follower_track(rng, &route, scenario.expert(), params);
        scenario.agents.push(f);
    }
    if local.kind == RoadKind::Turn(TurnDir::Through) && rng.gen_bool(0.5 + 0.4 * d) {
        let conflict = transform(Vec2::ZERO, rot, shift);
        if let Some(c) = cross_track(rng, &scenario.map.lanes[1], conflict, scenario.expert(), params) {
            scenario.agents.push(c);
        }
    }
    check_expert_clean(&scenario)?;
    scenario.validate(params.min_steps)?;
    Ok(scenario)
}

/// Generates `n` scenarios. Scenario `i` depends only on `(seed, i)`.
pub fn generate_scenarios(seed: u64, n: usize, params: &ScenarioParams) -> Result<Vec<Scenario>> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be >= 1".into()));
    }
    params.validate()?;
    (0..n).map(|i| generate_one(seed, i, params)).collect()
}

pub fn generate_one(seed: u64, index: usize, params: &ScenarioParams) -> Result<Scenario> {
    let id = format!("s{seed}-{index:05}");
    let mut last = None;
    for attempt in 0..params.max_retries.max(1) {
        let mut rng = seed::stream(seed, &["scenario", &index.to_string(), &attempt.to_string()]);
        match try_generate(&mut rng, &id, params) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Generation(format!(
        "scenario {index}: no valid scenario after {} attempts (last: {})",
        params.max_retries.max(1),
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}
