//! Planar geometry: points, polylines, simple polygons and oriented boxes.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotates counter-clockwise by `theta`.
    pub fn rotate(self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Self {
        Self::new((1.0 - t) * self.x + t * o.x, (1.0 - t) * self.y + t * o.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Expresses a world point in the frame of a pose.
pub fn to_local(p: Vec2, origin: Vec2, heading: f64) -> Vec2 {
    (p - origin).rotate(-heading)
}

pub fn to_world(p: Vec2, origin: Vec2, heading: f64) -> Vec2 {
    p.rotate(heading) + origin
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

/// Proper or touching intersection test for closed segments.
pub fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Vec2, b: Vec2, p: Vec2, d: f64| {
        d == 0.0
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Vec2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Self {
        Self { vertices }
    }

    fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Winding-number containment. Points exactly on an edge count as inside.
    pub fn contains(&self, p: Vec2) -> bool {
        let mut winding = 0i32;
        for (a, b) in self.edges() {
            if point_segment_distance(p, a, b) == 0.0 {
                return true;
            }
            if a.y <= p.y {
                if b.y > p.y && orient(a, b, p) > 0.0 {
                    winding += 1;
                }
            } else if b.y <= p.y && orient(a, b, p) < 0.0 {
                winding -= 1;
            }
        }
        winding != 0
    }

    /// Distance to the boundary, positive inside and negative outside.
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        let d = self
            .edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min);
        if self.contains(p) {
            d
        } else {
            -d
        }
    }

    /// True when no two non-adjacent edges touch.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let e: Vec<(Vec2, Vec2)> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(e[i].0, e[i].1, e[j].0, e[j].1) {
                    return false;
                }
            }
        }
        true
    }

    pub fn translate(&self, d: Vec2) -> Self {
        Self::new(self.vertices.iter().map(|&v| v + d).collect())
    }
}

/// Rectangle with a center, heading (long axis) and full length/width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Self { center, heading, length, width }
    }

    /// Corners in order front-left, front-right, rear-right, rear-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let f = Vec2::from_angle(self.heading) * (0.5 * self.length);
        let l = Vec2::from_angle(self.heading + 0.5 * PI) * (0.5 * self.width);
        let c = self.center;
        [c + f + l, c + f - l, c - f - l, c - f + l]
    }

    /// Separating-axis overlap test; touching boxes count as overlapping.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let a = self.corners();
        let b = other.corners();
        let axes = [
            Vec2::from_angle(self.heading),
            Vec2::from_angle(self.heading + 0.5 * PI),
            Vec2::from_angle(other.heading),
            Vec2::from_angle(other.heading + 0.5 * PI),
        ];
        for ax in axes {
            let (amin, amax) = project(&a, ax);
            let (bmin, bmax) = project(&b, ax);
            if amax < bmin || bmax < amin {
                return false;
            }
        }
        true
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let q = to_local(p, self.center, self.heading);
        q.x.abs() <= 0.5 * self.length && q.y.abs() <= 0.5 * self.width
    }
}

fn project(pts: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    pts.iter()
        .map(|p| p.dot(axis))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of travel direction.
    pub lateral: f64,
    pub point: Vec2,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl From<Vec<Vec2>> for Polyline {
    fn from(points: Vec<Vec2>) -> Self {
        Polyline::new(points)
    }
}

impl From<Polyline> for Vec<Vec2> {
    fn from(p: Polyline) -> Self {
        p.points
    }
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Self {
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                acc += p.dist(points[i - 1]);
            }
            cumulative.push(acc);
        }
        Self { points, cumulative }
    }

    pub fn length(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    fn segment_heading(&self, i: usize) -> f64 {
        (self.points[i + 1] - self.points[i]).angle()
    }

    pub fn project(&self, p: Vec2) -> Projection {
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for i in 0..self.points.len().saturating_sub(1) {
            let a = self.points[i];
            let ab = self.points[i + 1] - a;
            let len2 = ab.dot(ab);
            let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let d = p.dist(a + ab * t);
            if d < best.0 {
                best = (d, i, t);
            }
        }
        let (_, i, t) = best;
        let a = self.points[i];
        let b = self.points[i + 1];
        let foot = a.lerp(b, t);
        let heading = self.segment_heading(i);
        let lateral = Vec2::from_angle(heading).cross(p - foot);
        let s = self.cumulative[i] + t * a.dist(b);
        Projection { s, lateral, point: foot, heading }
    }

    /// Point and heading at arc length `s`, extrapolating linearly past either end.
    pub fn sample(&self, s: f64) -> (Vec2, f64) {
        let n = self.points.len();
        if s <= 0.0 {
            let h = self.segment_heading(0);
            return (self.points[0] + Vec2::from_angle(h) * s, h);
        }
        if s >= self.length() {
            let h = self.segment_heading(n - 2);
            return (self.points[n - 1] + Vec2::from_angle(h) * (s - self.length()), h);
        }
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        };
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let t = if seg > 0.0 { (s - self.cumulative[i]) / seg } else { 0.0 };
        (self.points[i].lerp(self.points[i + 1], t), self.segment_heading(i))
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(2.5 * PI) - 0.5 * PI).abs() < 1e-12);
        assert!((wrap_angle(-2.5 * PI) + 0.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn rect_corner_order_and_overlap() {
        let r = OrientedRect::new(Vec2::ZERO, 0.0, 4.0, 2.0);
        let c = r.corners();
        assert_eq!(c[0], Vec2::new(2.0, 1.0));
        assert_eq!(c[2], Vec2::new(-2.0, -1.0));
        let far = OrientedRect::new(Vec2::new(5.0, 0.0), 0.3, 4.0, 2.0);
        assert!(!r.overlaps(&far));
        let near = OrientedRect::new(Vec2::new(3.5, 0.5), 0.3, 4.0, 2.0);
        assert!(r.overlaps(&near));
        // Corner-to-edge diagonal gap which axis-aligned bounding boxes would miss.
        let diag = OrientedRect::new(Vec2::new(3.3, 2.2), PI / 4.0, 2.0, 2.0);
        assert!(!r.overlaps(&diag));
    }

    #[test]
    fn polygon_signed_distance() {
        let sq = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(4.0, 0.0),
            Vec2::new(4.0, 4.0),
            Vec2::new(0.0, 4.0),
        ]);
        assert!(sq.is_simple());
        assert!((sq.signed_distance(Vec2::new(1.0, 2.0)) - 1.0).abs() < 1e-12);
        assert!((sq.signed_distance(Vec2::new(-0.5, 2.0)) + 0.5).abs() < 1e-12);
        let bowtie = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(4.0, 4.0),
            Vec2::new(4.0, 0.0),
            Vec2::new(0.0, 4.0),
        ]);
        assert!(!bowtie.is_simple());
    }

    #[test]
    fn polyline_projection_and_sampling() {
        let pl = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)]);
        assert_eq!(pl.length(), 20.0);
        let pr = pl.project(Vec2::new(5.0, 1.5));
        assert_eq!(pr.s, 5.0);
        assert_eq!(pr.lateral, 1.5);
        let (p, h) = pl.sample(15.0);
        assert!((p.x - 10.0).abs() < 1e-12 && (p.y - 5.0).abs() < 1e-12);
        assert!((h - 0.5 * PI).abs() < 1e-12);
        let (p, _) = pl.sample(25.0);
        assert!((p.y - 15.0).abs() < 1e-12);
        let (p, _) = pl.sample(-2.0);
        assert!((p.x + 2.0).abs() < 1e-12);
    }
}
