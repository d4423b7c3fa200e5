//! Plain-text scenario files.
//!
//! Layout, one record per line, whitespace separated:
//!
//! ```text
//! roadlab-scenario 1
//! id <string>
//! dt <seconds>
//! steps <T>
//! ego <agent index>
//! lanes <count>
//!   lane <points>            followed by <points> rows: x y
//! drivable <points>          followed by rows: x y
//! obstacles <count>          followed by rows: cx cy heading length width
//! agents <count>
//!   agent <length> <width>   followed by T+1 rows: t x y heading speed
//! end
//! ```
//!
//! Floats use the shortest representation that parses back to the same value,
//! so files round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::geometry::{OrientedRect, Polygon, Polyline, Vec2};
use super::scenario::{AgentTrack, MapGeometry, Scenario};
use super::state::AgentState;
use crate::error::{Error, Result};

const MAGIC: &str = "roadlab-scenario";
const VERSION: u32 = 1;

pub fn to_text(s: &Scenario) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "{MAGIC} {VERSION}");
    let _ = writeln!(o, "id {}", s.id);
    let _ = writeln!(o, "dt {}", s.dt);
    let _ = writeln!(o, "steps {}", s.horizon);
    let _ = writeln!(o, "ego {}", s.ego);
    let _ = writeln!(o, "lanes {}", s.map.lanes.len());
    for lane in &s.map.lanes {
        let _ = writeln!(o, "lane {}", lane.points().len());
        for p in lane.points() {
            let _ = writeln!(o, "{} {}", p.x, p.y);
        }
    }
    let _ = writeln!(o, "drivable {}", s.map.drivable.vertices.len());
    for p in &s.map.drivable.vertices {
        let _ = writeln!(o, "{} {}", p.x, p.y);
    }
    let _ = writeln!(o, "obstacles {}", s.map.obstacles.len());
    for r in &s.map.obstacles {
        let _ = writeln!(o, "{} {} {} {} {}", r.center.x, r.center.y, r.heading, r.length, r.width);
    }
    let _ = writeln!(o, "agents {}", s.agents.len());
    for a in &s.agents {
        let _ = writeln!(o, "agent {} {}", a.length, a.width);
        for (t, st) in a.states.iter().enumerate() {
            let _ = writeln!(o, "{t} {} {} {} {}", st.x, st.y, st.heading, st.speed);
        }
    }
    o.push_str("end\n");
    o
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path, format!("line {}: {}", self.line, msg.into()))
    }

    fn next_fields(&mut self) -> Result<Vec<&'a str>> {
        for (i, l) in self.it.by_ref() {
            self.line = i + 1;
            let l = l.trim();
            if !l.is_empty() {
                return Ok(l.split_whitespace().collect());
            }
        }
        Err(self.err("unexpected end of file"))
    }

    fn keyed(&mut self, key: &str, n: usize) -> Result<Vec<&'a str>> {
        let f = self.next_fields()?;
        if f.first() != Some(&key) || f.len() != n + 1 {
            return Err(self.err(format!("expected `{key}` with {n} value(s)")));
        }
        Ok(f[1..].to_vec())
    }

    fn value<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.keyed(key, 1)?;
        self.num(v[0])
    }

    fn num<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("bad number `{s}`")))
    }

    fn row(&mut self, n: usize) -> Result<Vec<f64>> {
        let f = self.next_fields()?;
        if f.len() != n {
            return Err(self.err(format!("expected {n} columns, got {}", f.len())));
        }
        f.iter().map(|s| self.num(s)).collect()
    }

    fn points(&mut self, n: usize) -> Result<Vec<Vec2>> {
        (0..n).map(|_| self.row(2).map(|r| Vec2::new(r[0], r[1]))).collect()
    }
}

pub fn from_text(text: &str, path: &Path) -> Result<Scenario> {
    let mut r = Lines { it: text.lines().enumerate(), path, line: 0 };
    let v = r.keyed(MAGIC, 1)?;
    if r.num::<u32>(v[0])? != VERSION {
        return Err(r.err(format!("unsupported version {}", v[0])));
    }
    let id = r.keyed("id", 1)?[0].to_string();
    let dt: f64 = r.value("dt")?;
    let horizon: usize = r.value("steps")?;
    let ego: usize = r.value("ego")?;
    let n_lanes: usize = r.value("lanes")?;
    let mut lanes = Vec::with_capacity(n_lanes);
    for _ in 0..n_lanes {
        let n: usize = r.value("lane")?;
        lanes.push(Polyline::new(r.points(n)?));
    }
    let n: usize = r.value("drivable")?;
    let drivable = Polygon::new(r.points(n)?);
    let n: usize = r.value("obstacles")?;
    let obstacles = (0..n)
        .map(|_| r.row(5).map(|v| OrientedRect::new(Vec2::new(v[0], v[1]), v[2], v[3], v[4])))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = r.value("agents")?;
    let mut agents = Vec::with_capacity(n);
    for _ in 0..n {
        let dims = r.keyed("agent", 2)?;
        let (length, width) = (r.num(dims[0])?, r.num(dims[1])?);
        let mut states = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            let v = r.row(5)?;
            if v[0] as usize != t {
                return Err(r.err(format!("expected row for t={t}")));
            }
            states.push(AgentState { x: v[1], y: v[2], heading: v[3], speed: v[4] });
        }
        agents.push(AgentTrack { length, width, states });
    }
    r.keyed("end", 0)?;
    Ok(Scenario { id, map: MapGeometry { lanes, drivable, obstacles }, dt, horizon, ego, agents })
}

pub fn write_scenario(path: &Path, s: &Scenario) -> Result<()> {
    std::fs::write(path, to_text(s))?;
    Ok(())
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    from_text(&text, path)
}

/// Writes scenarios as `<dir>/<id>.scn` and returns the file names in order.
pub fn write_scenario_dir(dir: &Path, scenarios: &[Scenario]) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let name = format!("{}.scn", s.id);
        write_scenario(&dir.join(&name), s)?;
        names.push(name);
    }
    Ok(names)
}

/// Reads every `.scn` file in `dir`, sorted by file name.
pub fn read_scenario_dir(dir: &Path) -> Result<Vec<Scenario>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "scn"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_scenario(p)).collect()
}
