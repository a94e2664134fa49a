//! Support-point trajectories, forward-difference derivatives and the
//! combined two-maneuver decision vector.
//!
//! Storage layout of a [`CombinedVector`] with horizon `n` and pin index `p`:
//!
//! ```text
//! index:  0 ..= p | p+1 ..= 2p | 2p+1 ..= n | n+1 ..= 2n-p
//!         pinned  | shared (C) | branch A   | branch B
//! ```
//!
//! Maneuver A is `0..=n`; maneuver B is `0..=2p` followed by `n+1..=2n-p`.
//! Everything after the pinned block is free, `2n - 2p` points in total.

use serde::{Deserialize, Serialize};

use crate::error::{PlannerError, Result};
use crate::path::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ManeuverId {
    /// Ignore the uncertain object (pass).
    A,
    /// Treat the object as real (yield).
    B,
    /// Shared, undecided prefix.
    C,
    /// Full-braking fallback.
    Z,
}

impl std::fmt::Display for ManeuverId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self {
            ManeuverId::A => "A",
            ManeuverId::B => "B",
            ManeuverId::C => "C",
            ManeuverId::Z => "Z",
        };
        f.write_str(tag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<Point>,
    step: f64,
    t0: f64,
    n_pin: usize,
}

impl Trajectory {
    pub fn new(points: Vec<Point>, step: f64, t0: f64, n_pin: usize) -> Result<Self> {
        if points.len() < 4 {
            return Err(PlannerError::Size(format!(
                "trajectory needs at least 4 points, got {}",
                points.len()
            )));
        }
        if 2 * n_pin > points.len() {
            return Err(PlannerError::Size(format!(
                "pin index {n_pin} leaves no room for the shared window in {} points",
                points.len()
            )));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(PlannerError::Domain(format!("step width must be positive, got {step}")));
        }
        Ok(Trajectory { points, step, t0, n_pin })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn n_pin(&self) -> usize {
        self.n_pin
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.step
    }

    pub fn t_pin(&self) -> f64 {
        self.time_at(self.n_pin)
    }

    pub fn t_2pin(&self) -> f64 {
        self.time_at(2 * self.n_pin)
    }

    pub fn horizon(&self) -> f64 {
        (self.len() - 1) as f64 * self.step
    }

    /// Linear combination `a·self + b·other` on identical grids.
    pub fn combine(&self, a: f64, other: &Trajectory, b: f64) -> Result<Trajectory> {
        if self.len() != other.len() {
            return Err(PlannerError::Size("trajectories differ in length".into()));
        }
        let points = self.points.iter().zip(&other.points).map(|(p, q)| p * a + q * b).collect();
        Trajectory::new(points, self.step, self.t0, self.n_pin)
    }
}

const DIFF_STENCILS: [&[f64]; 3] = [&[-1.0, 1.0], &[1.0, -2.0, 1.0], &[-1.0, 3.0, -3.0, 1.0]];

/// Forward-difference stencil of the given order (1..=3).
pub(crate) fn stencil(order: usize) -> &'static [f64] {
    DIFF_STENCILS[order - 1]
}

/// `order`-th forward differences scaled by `step^-order`: velocity,
/// acceleration or jerk at each index where the stencil fits.
pub fn forward_diffs(t: &Trajectory, order: usize) -> Result<Vec<Point>> {
    if !(1..=3).contains(&order) {
        return Err(PlannerError::Domain(format!("difference order {order} not in 1..=3")));
    }
    if t.len() <= order {
        return Err(PlannerError::Size(format!(
            "order {order} differences need more than {order} points"
        )));
    }
    let coeffs = stencil(order);
    let scale = t.step.powi(-(order as i32));
    Ok(t.points
        .windows(order + 1)
        .map(|w| {
            let mut acc = Point::zeros();
            for (c, p) in coeffs.iter().zip(w) {
                acc += p * *c;
            }
            acc * scale
        })
        .collect())
}

/// Horizon `n` and pin index `n_pin` of a combined problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n: usize,
    pub n_pin: usize,
}

impl Layout {
    pub fn new(n: usize, n_pin: usize) -> Result<Self> {
        if n < 2 * n_pin + 2 || n < 3 {
            return Err(PlannerError::Size(format!(
                "horizon {n} too short for pin index {n_pin} (need n >= 2*n_pin + 2 and n >= 3)"
            )));
        }
        Ok(Layout { n, n_pin })
    }

    pub fn total_points(&self) -> usize {
        2 * self.n - self.n_pin + 1
    }

    pub fn free_points(&self) -> usize {
        self.total_points() - self.pinned_points()
    }

    pub fn pinned_points(&self) -> usize {
        self.n_pin + 1
    }

    pub fn shared_range(&self) -> std::ops::RangeInclusive<usize> {
        self.n_pin + 1..=2 * self.n_pin
    }

    pub fn branch_range(&self, id: ManeuverId) -> std::ops::RangeInclusive<usize> {
        match id {
            ManeuverId::B => self.n + 1..=2 * self.n - self.n_pin,
            _ => 2 * self.n_pin + 1..=self.n,
        }
    }

    pub fn maneuver_len(&self, id: ManeuverId) -> usize {
        match id {
            ManeuverId::B => self.n + self.n_pin + 1,
            _ => self.n + 1,
        }
    }

    /// Storage indices making up maneuver A or B, in time order.
    pub fn maneuver_indices(&self, id: ManeuverId) -> Result<Vec<usize>> {
        match id {
            ManeuverId::A => Ok((0..=self.n).collect()),
            ManeuverId::B => Ok((0..=2 * self.n_pin).chain(self.branch_range(ManeuverId::B)).collect()),
            other => Err(PlannerError::Input(format!("maneuver {other} has no branch in the combined vector"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedVector {
    layout: Layout,
    points: Vec<Point>,
    step: f64,
    t0: f64,
}

impl CombinedVector {
    pub fn from_storage(layout: Layout, points: Vec<Point>, step: f64, t0: f64) -> Result<Self> {
        if points.len() != layout.total_points() {
            return Err(PlannerError::Size(format!(
                "combined vector expects {} points, got {}",
                layout.total_points(),
                points.len()
            )));
        }
        if !(step > 0.0) {
            return Err(PlannerError::Domain(format!("step width must be positive, got {step}")));
        }
        Ok(CombinedVector { layout, points, step, t0 })
    }

    /// Assemble from the two maneuvers; their prefixes through `2·n_pin` must
    /// agree exactly.
    pub fn from_maneuvers(a: &Trajectory, b: &Trajectory) -> Result<Self> {
        let n_pin = a.n_pin;
        let layout = Layout::new(a.len() - 1, n_pin)?;
        if b.len() != layout.maneuver_len(ManeuverId::B) || b.n_pin != n_pin {
            return Err(PlannerError::Size(format!(
                "maneuver B must have {} points and pin index {n_pin}",
                layout.maneuver_len(ManeuverId::B)
            )));
        }
        if a.points[..=2 * n_pin] != b.points[..=2 * n_pin] {
            return Err(PlannerError::Input("maneuvers disagree on the pinned/shared prefix".into()));
        }
        let mut points = a.points.clone();
        points.extend_from_slice(&b.points[2 * n_pin + 1..]);
        CombinedVector::from_storage(layout, points, a.step, a.t0)
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    #[cfg(test)]
    pub(crate) fn points_mut(&mut self) -> &mut [Point] {
        &mut self.points
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn pinned(&self) -> &[Point] {
        &self.points[..=self.layout.n_pin]
    }

    pub fn shared(&self) -> &[Point] {
        &self.points[self.layout.shared_range()]
    }

    pub fn branch(&self, id: ManeuverId) -> &[Point] {
        &self.points[self.layout.branch_range(id)]
    }

    pub fn free_point_count(&self) -> usize {
        self.layout.free_points()
    }
}

/// Seed a combined vector for the planning cycle that starts one replanning
/// interval (`n_pin` steps) after `prev.t0`.
///
/// Pinned and shared points are copied from `prev` shifted by `n_pin`; both
/// branches continue with constant velocity from the last two kept points.
pub fn build_combined(prev: &Trajectory, n_pin: usize, n: usize) -> Result<CombinedVector> {
    let layout = Layout::new(n, n_pin)?;
    if prev.len() < 2 * n_pin + 1 {
        return Err(PlannerError::Size(format!(
            "previous plan has {} points, need at least {}",
            prev.len(),
            2 * n_pin + 1
        )));
    }
    let src = prev.points();
    let last = src.len() - 1;
    let prev_velocity = src[last] - src[last - 1];
    let sample = |j: usize| -> Point {
        if j <= last {
            src[j]
        } else {
            src[last] + prev_velocity * (j - last) as f64
        }
    };

    let kept = 2 * n_pin;
    let mut points: Vec<Point> = (0..=kept).map(|i| sample(i + n_pin)).collect();
    let velocity = if kept >= 1 {
        points[kept] - points[kept - 1]
    } else {
        sample(n_pin + 1) - sample(n_pin)
    };
    let anchor = points[kept];
    for id in [ManeuverId::A, ManeuverId::B] {
        let extra = layout.maneuver_len(id) - (kept + 1);
        points.extend((1..=extra).map(|k| anchor + velocity * k as f64));
    }
    CombinedVector::from_storage(layout, points, prev.step(), prev.t0() + n_pin as f64 * prev.step())
}

/// Trajectory of maneuver A or B out of a combined vector.
pub fn extract_maneuver(v: &CombinedVector, id: ManeuverId) -> Result<Trajectory> {
    let idx = v.layout.maneuver_indices(id)?;
    let points = idx.iter().map(|&i| v.points[i]).collect();
    Trajectory::new(points, v.step, v.t0, v.layout.n_pin)
}

/// Constant-velocity trajectory with `len` points.
pub fn constant_velocity(start: Point, velocity: Point, len: usize, step: f64, t0: f64, n_pin: usize) -> Result<Trajectory> {
    let points = (0..len).map(|i| start + velocity * (i as f64 * step)).collect();
    Trajectory::new(points, step, t0, n_pin)
}
