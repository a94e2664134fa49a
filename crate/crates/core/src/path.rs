//! Reference path polyline and the arc-length projection that maps Cartesian
//! support points to along-path (`s`) and lateral (`d`) coordinates.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{PlannerError, Result};

pub type Point = Vector2<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct RefPath {
    points: Vec<Point>,
    cumulative: Vec<f64>,
}

/// Frenet coordinates of a point relative to one path segment. `tangent` and
/// `normal` are the derivatives of `s` and `d` with respect to the point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    pub d: f64,
    pub tangent: Point,
    pub normal: Point,
    pub segment: usize,
}

impl RefPath {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(PlannerError::Input("reference path needs at least two points".into()));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for w in points.windows(2) {
            let len = (w[1] - w[0]).norm();
            if !(len > 0.0) || !len.is_finite() {
                return Err(PlannerError::Input("reference path arc length must be strictly increasing".into()));
            }
            cumulative.push(cumulative.last().unwrap() + len);
        }
        Ok(RefPath { points, cumulative })
    }

    /// Straight path along +x starting at the origin.
    pub fn straight(length: f64) -> Self {
        RefPath::new(vec![Point::new(0.0, 0.0), Point::new(length, 0.0)]).expect("positive length")
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment_frame(&self, k: usize) -> (Point, Point, f64) {
        let a = self.points[k];
        let delta = self.points[k + 1] - a;
        let len = self.cumulative[k + 1] - self.cumulative[k];
        (a, delta / len, len)
    }

    pub fn project(&self, p: &Point) -> Projection {
        let segments = self.points.len() - 1;
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for k in 0..segments {
            let (a, t, len) = self.segment_frame(k);
            let along = (p - a).dot(&t);
            let clamped = match k {
                _ if segments == 1 => along,
                0 => along.min(len),
                _ if k == segments - 1 => along.max(0.0),
                _ => along.clamp(0.0, len),
            };
            let dist = (p - (a + t * clamped)).norm_squared();
            if dist < best_dist {
                best_dist = dist;
                best = k;
            }
        }
        let (a, t, _) = self.segment_frame(best);
        let rel = p - a;
        let normal = Point::new(-t.y, t.x);
        Projection {
            s: self.cumulative[best] + rel.dot(&t),
            d: rel.dot(&normal),
            tangent: t,
            normal,
            segment: best,
        }
    }

    /// Cartesian point at arc length `s` and lateral offset `d`. The first and
    /// last segments extend linearly beyond the path ends.
    pub fn point_at(&self, s: f64, d: f64) -> Point {
        let segments = self.points.len() - 1;
        let k = self.cumulative[1..segments].partition_point(|&c| c <= s);
        let (a, t, _) = self.segment_frame(k);
        let normal = Point::new(-t.y, t.x);
        a + t * (s - self.cumulative[k]) + normal * d
    }
}

impl TryFrom<Vec<[f64; 2]>> for RefPath {
    type Error = PlannerError;

    fn try_from(raw: Vec<[f64; 2]>) -> Result<Self> {
        RefPath::new(raw.into_iter().map(|[x, y]| Point::new(x, y)).collect())
    }
}

impl From<RefPath> for Vec<[f64; 2]> {
    fn from(path: RefPath) -> Self {
        path.points.iter().map(|p| [p.x, p.y]).collect()
    }
}
