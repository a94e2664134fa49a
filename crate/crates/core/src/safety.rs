//! Hard feasibility: the full-braking stop constraint over the next execution
//! window, branch-specific yield/pass constraints, corridor bounds, and the
//! hypothetical object placed at the end of the visible field.

use serde::{Deserialize, Serialize};

use crate::error::{PlannerError, Result};
use crate::path::{Point, Projection, RefPath};
use crate::prob::TruncatedNormal;
use crate::scene::{Behavior, PredictedObject, Scene};
use crate::trajectory::{CombinedVector, ManeuverId, Trajectory};

/// Constant-deceleration stopping distance `v² / (2·a_max)`.
pub fn stop_distance(v: f64, a_max: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(PlannerError::Domain(format!("speed must be nonnegative, got {v}")));
    }
    if !(a_max > 0.0) {
        return Err(PlannerError::Domain(format!("braking deceleration must be positive, got {a_max}")));
    }
    Ok(v * v / (2.0 * a_max))
}

/// Indices `n_pin ..= 2·n_pin − 1` at which the braking fallback must exist.
pub fn stop_window(n_pin: usize) -> std::ops::Range<usize> {
    n_pin..2 * n_pin
}

/// Margins `l_i − (s_i + stop_distance(v_i))` over the stop window, with
/// `v_i` the forward-difference along-path speed. All margins ≥ 0 means the
/// plan keeps a full-braking fallback against `obj`.
pub fn check_stop_feasibility(t: &Trajectory, obj: &PredictedObject, a_max: f64, path: &RefPath) -> Result<Vec<f64>> {
    let window = stop_window(t.n_pin());
    if window.end >= t.len() {
        return Err(PlannerError::Size("trajectory too short for the stop window".into()));
    }
    window
        .map(|i| {
            let bound = obj.lower_bound(i)?;
            let s = path.project(&t.points()[i]).s;
            let s_next = path.project(&t.points()[i + 1]).s;
            let v = ((s_next - s) / t.step()).max(0.0);
            Ok(bound - (s + stop_distance(v, a_max)?))
        })
        .collect()
}

/// True when an observed road user can still stop comfortably before the
/// conflict zone, i.e. `v² / (2·a_comfort) ≤ distance`.
pub fn yield_intention_clear(observed_speed: f64, distance_to_conflict: f64, a_comfort: f64) -> bool {
    observed_speed * observed_speed / (2.0 * a_comfort) <= distance_to_conflict
}

/// End of the visible field along the path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FovBoundary {
    /// m
    pub s_visible: f64,
    /// position spread of the hypothetical object, m
    #[serde(default = "default_fov_sigma")]
    pub sigma: f64,
}

fn default_fov_sigma() -> f64 {
    0.5
}

impl FovBoundary {
    /// Stationary object whose lower position bound sits exactly at the
    /// visibility limit.
    pub fn hypothetical_object(&self, steps: usize, truncation: f64) -> Result<PredictedObject> {
        let mu = self.s_visible + truncation * self.sigma;
        let d = TruncatedNormal::new(mu, self.sigma, self.s_visible, mu + truncation * self.sigma)?;
        Ok(PredictedObject {
            id: "hypothetical".into(),
            p_exist: 1.0,
            active: true,
            hypothetical: true,
            behavior_a: Behavior::Ignore,
            behavior_b: Behavior::Ignore,
            track: vec![d; steps],
            intention: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    /// Full-braking fallback at window step `step`.
    Stop { object: String, step: usize },
    /// Maneuver stays behind the object at local step `step`.
    Yield { object: String, maneuver: ManeuverId, step: usize },
    /// Maneuver passes at a lateral offset at local step `step`.
    PassLateral { object: String, maneuver: ManeuverId, step: usize },
    /// Lateral corridor bound at a storage point; `left` selects the side.
    Corridor { point: usize, left: bool },
}

/// Scalar inequality `g(points) ≥ 0` over one or two storage points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inequality {
    /// `bound − s_at − max(0, (s_next − s_at)/step)² / (2·a_max) ≥ 0`
    StopMargin { at: usize, next: usize, bound: f64, a_max: f64, step: f64 },
    /// `bound − s_at ≥ 0`
    Behind { at: usize, bound: f64 },
    /// `sign·d_at − offset ≥ 0`
    LateralAtLeast { at: usize, sign: f64, offset: f64 },
    /// `half_width − sign·d_at ≥ 0`
    LateralWithin { at: usize, sign: f64, half_width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRecord {
    pub kind: ConstraintKind,
    pub ineq: Inequality,
}

impl ConstraintRecord {
    pub fn label(&self) -> String {
        match &self.kind {
            ConstraintKind::Stop { object, step } => format!("stop[{object}@{step}]"),
            ConstraintKind::Yield { object, maneuver, step } => format!("yield[{object}/{maneuver}@{step}]"),
            ConstraintKind::PassLateral { object, maneuver, step } => format!("pass[{object}/{maneuver}@{step}]"),
            ConstraintKind::Corridor { point, left } => {
                format!("corridor[{}@{point}]", if *left { "left" } else { "right" })
            }
        }
    }
}

/// Value, sparse gradient over storage coordinates, and the curvature of the
/// stop margin (`-(1/(a·step²))` along `(tangent_at − tangent_next)`).
pub(crate) struct Linearization {
    pub value: f64,
    pub grad: Vec<(usize, f64)>,
    pub concave_dir: Option<(f64, Vec<(usize, f64)>)>,
}

impl Inequality {
    pub fn points(&self) -> [Option<usize>; 2] {
        match *self {
            Inequality::StopMargin { at, next, .. } => [Some(at), Some(next)],
            Inequality::Behind { at, .. }
            | Inequality::LateralAtLeast { at, .. }
            | Inequality::LateralWithin { at, .. } => [Some(at), None],
        }
    }

    pub fn value(&self, proj: &[Projection]) -> f64 {
        self.linearize(proj).value
    }

    pub(crate) fn linearize(&self, proj: &[Projection]) -> Linearization {
        let c = |j: usize, dim: usize| 2 * j + dim;
        match *self {
            Inequality::StopMargin { at, next, bound, a_max, step } => {
                let (p, q) = (&proj[at], &proj[next]);
                let v = ((q.s - p.s) / step).max(0.0);
                let value = bound - p.s - v * v / (2.0 * a_max);
                // d/ds_at = -1 + v/(a·step), d/ds_next = -v/(a·step)
                let k = v / (a_max * step);
                let grad = vec![
                    (c(at, 0), (k - 1.0) * p.tangent.x),
                    (c(at, 1), (k - 1.0) * p.tangent.y),
                    (c(next, 0), -k * q.tangent.x),
                    (c(next, 1), -k * q.tangent.y),
                ];
                let concave_dir = (v > 0.0).then(|| {
                    (
                        1.0 / (a_max * step * step),
                        vec![
                            (c(at, 0), p.tangent.x),
                            (c(at, 1), p.tangent.y),
                            (c(next, 0), -q.tangent.x),
                            (c(next, 1), -q.tangent.y),
                        ],
                    )
                });
                Linearization { value, grad, concave_dir }
            }
            Inequality::Behind { at, bound } => {
                let p = &proj[at];
                Linearization {
                    value: bound - p.s,
                    grad: vec![(c(at, 0), -p.tangent.x), (c(at, 1), -p.tangent.y)],
                    concave_dir: None,
                }
            }
            Inequality::LateralAtLeast { at, sign, offset } => {
                let p = &proj[at];
                Linearization {
                    value: sign * p.d - offset,
                    grad: vec![(c(at, 0), sign * p.normal.x), (c(at, 1), sign * p.normal.y)],
                    concave_dir: None,
                }
            }
            Inequality::LateralWithin { at, sign, half_width } => {
                let p = &proj[at];
                Linearization {
                    value: half_width - sign * p.d,
                    grad: vec![(c(at, 0), -sign * p.normal.x), (c(at, 1), -sign * p.normal.y)],
                    concave_dir: None,
                }
            }
        }
    }
}

/// Builds the inequality set for maneuvers given as storage-index lists that
/// share the prefix `0 ..= 2·n_pin`. Storage points below `first_free` are
/// fixed and receive no constraints of their own.
pub(crate) fn build_constraints(
    scene: &Scene,
    maneuvers: &[(ManeuverId, Vec<usize>)],
    n_pin: usize,
    first_free: usize,
    total_points: usize,
    step: f64,
    a_max: f64,
) -> Result<Vec<ConstraintRecord>> {
    let mut out = Vec::new();
    let objects: Vec<&PredictedObject> = scene.active_objects().collect();

    for obj in &objects {
        for i in stop_window(n_pin) {
            out.push(ConstraintRecord {
                kind: ConstraintKind::Stop { object: obj.id.clone(), step: i },
                ineq: Inequality::StopMargin { at: i, next: i + 1, bound: obj.lower_bound(i)?, a_max, step },
            });
        }
    }

    let shared_end = 2 * n_pin;
    for obj in &objects {
        for (m, idx) in maneuvers {
            match obj.behavior(*m) {
                Behavior::Ignore => {}
                Behavior::Yield => {
                    for (i, &j) in idx.iter().enumerate() {
                        if j < first_free {
                            continue;
                        }
                        // shared points carry one record even if both branches yield
                        let duplicate = i <= shared_end
                            && maneuvers.iter().take_while(|(other, _)| other != m).any(|(other, _)| {
                                obj.behavior(*other) == Behavior::Yield
                            });
                        if duplicate {
                            continue;
                        }
                        out.push(ConstraintRecord {
                            kind: ConstraintKind::Yield { object: obj.id.clone(), maneuver: *m, step: i },
                            ineq: Inequality::Behind { at: j, bound: obj.lower_bound(i)? },
                        });
                    }
                }
                Behavior::PassLateral(offset) => {
                    let sign = if offset >= 0.0 { 1.0 } else { -1.0 };
                    for (i, &j) in idx.iter().enumerate().skip(shared_end + 1) {
                        out.push(ConstraintRecord {
                            kind: ConstraintKind::PassLateral { object: obj.id.clone(), maneuver: *m, step: i },
                            ineq: Inequality::LateralAtLeast { at: j, sign, offset: offset.abs() },
                        });
                    }
                }
            }
        }
    }

    if scene.corridor_half_width.is_finite() {
        for j in first_free..total_points {
            for left in [true, false] {
                out.push(ConstraintRecord {
                    kind: ConstraintKind::Corridor { point: j, left },
                    ineq: Inequality::LateralWithin {
                        at: j,
                        sign: if left { 1.0 } else { -1.0 },
                        half_width: scene.corridor_half_width,
                    },
                });
            }
        }
    }
    Ok(out)
}

/// Constraint records of the combined problem: stop constraints on the
/// shared window, per-branch yield/pass constraints, and corridor bounds.
pub fn constraint_set(scene: &Scene, v: &CombinedVector, a_max: f64) -> Result<Vec<ConstraintRecord>> {
    let layout = v.layout();
    let maneuvers = [ManeuverId::A, ManeuverId::B]
        .into_iter()
        .map(|m| Ok((m, layout.maneuver_indices(m)?)))
        .collect::<Result<Vec<_>>>()?;
    build_constraints(scene, &maneuvers, layout.n_pin, layout.pinned_points(), layout.total_points(), v.step(), a_max)
}

/// Most violated constraint value (0 when all hold).
pub fn max_violation(records: &[ConstraintRecord], points: &[Point], path: &RefPath) -> f64 {
    let proj: Vec<Projection> = points.iter().map(|p| path.project(p)).collect();
    records.iter().map(|r| (-r.ineq.value(&proj)).max(0.0)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{build_combined, constant_velocity};

    fn object(id: &str, lower: f64, a: Behavior, b: Behavior, steps: usize) -> PredictedObject {
        let d = TruncatedNormal::new(lower + 1.5, 0.5, lower, lower + 3.0).unwrap();
        PredictedObject {
            id: id.into(),
            p_exist: 0.4,
            active: true,
            hypothetical: false,
            behavior_a: a,
            behavior_b: b,
            track: vec![d; steps],
            intention: None,
        }
    }

    #[test]
    fn stop_distance_examples() {
        assert_eq!(stop_distance(0.0, 8.0).unwrap(), 0.0);
        assert_eq!(stop_distance(10.0, 8.0).unwrap(), 6.25);
        assert_eq!(stop_distance(20.0, 8.0).unwrap(), 4.0 * stop_distance(10.0, 8.0).unwrap());
        assert!(stop_distance(-1.0, 8.0).is_err());
        assert!(stop_distance(1.0, 0.0).is_err());
    }

    #[test]
    fn braking_simulation_matches_closed_form() {
        // integrate a constant-deceleration stop at 1 ms
        let (mut s, mut v, dt, a) = (0.0f64, 10.0f64, 1e-3f64, 8.0f64);
        while v > 0.0 {
            let dv = (a * dt).min(v);
            s += v * dt - 0.5 * dv * dt;
            v -= dv;
        }
        assert!((s - stop_distance(10.0, 8.0).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn margins() {
        let path = RefPath::straight(1e3);
        let far = object("far", 500.0, Behavior::Ignore, Behavior::Yield, 12);
        let parked = constant_velocity(Point::zeros(), Point::zeros(), 12, 0.2, 0.0, 2).unwrap();
        assert!(check_stop_feasibility(&parked, &far, 8.0, &path).unwrap().iter().all(|m| *m > 0.0));

        let at_bound = object("o", 0.0, Behavior::Ignore, Behavior::Yield, 12);
        assert_eq!(check_stop_feasibility(&parked, &at_bound, 8.0, &path).unwrap(), vec![0.0, 0.0]);

        // s = 0 with 10 m/s at the first window index
        let moving = constant_velocity(Point::new(-4.0, 0.0), Point::new(10.0, 0.0), 12, 0.2, 0.0, 2).unwrap();
        let wall = object("w", 6.25, Behavior::Ignore, Behavior::Yield, 12);
        let m = check_stop_feasibility(&moving, &wall, 8.0, &path).unwrap();
        assert!(m[0].abs() < 1e-12, "{m:?}");

        let short = object("s", 6.25, Behavior::Ignore, Behavior::Yield, 2);
        assert!(matches!(check_stop_feasibility(&moving, &short, 8.0, &path), Err(PlannerError::Input(_))));
    }

    #[test]
    fn margins_grow_with_braking_capability() {
        let path = RefPath::straight(1e3);
        let moving = constant_velocity(Point::zeros(), Point::new(12.0, 0.0), 12, 0.2, 0.0, 3).unwrap();
        let wall = object("w", 20.0, Behavior::Ignore, Behavior::Yield, 12);
        let mut prev = check_stop_feasibility(&moving, &wall, 1.0, &path).unwrap();
        for a in [2.0, 4.0, 8.0, 12.0] {
            let m = check_stop_feasibility(&moving, &wall, a, &path).unwrap();
            assert!(m.iter().zip(&prev).all(|(x, y)| x >= y));
            prev = m;
        }
    }

    #[test]
    fn yield_intention_examples() {
        assert!(yield_intention_clear(0.0, 0.0, 2.0));
        assert!(yield_intention_clear(10.0, 25.0, 2.0));
        assert!(!yield_intention_clear(10.0, 24.9, 2.0));
    }

    fn seed() -> CombinedVector {
        let prev = constant_velocity(Point::zeros(), Point::new(10.0, 0.0), 20, 0.2, 0.0, 2).unwrap();
        build_combined(&prev, 2, 12).unwrap()
    }

    #[test]
    fn empty_and_deactivated_scenes_only_bound_the_corridor() {
        let v = seed();
        let empty = Scene::empty(RefPath::straight(1e3), 3.0);
        let base = constraint_set(&empty, &v, 8.0).unwrap();
        assert_eq!(base.len(), 2 * v.free_point_count());
        assert!(base.iter().all(|r| matches!(r.kind, ConstraintKind::Corridor { .. })));

        let mut with = empty.clone();
        let mut o = object("red", 60.0, Behavior::Ignore, Behavior::Yield, 15);
        o.active = false;
        with.objects.push(o);
        assert_eq!(constraint_set(&with, &v, 8.0).unwrap(), base);
    }

    #[test]
    fn phantom_scene_constraints() {
        let v = seed();
        let mut scene = Scene::empty(RefPath::straight(1e3), 3.0);
        scene.objects.push(object("red", 60.0, Behavior::Ignore, Behavior::Yield, 15));
        let set = constraint_set(&scene, &v, 8.0).unwrap();
        let stops: Vec<usize> = set
            .iter()
            .filter_map(|r| match r.kind {
                ConstraintKind::Stop { step, .. } => Some(step),
                _ => None,
            })
            .collect();
        assert_eq!(stops, vec![2, 3]);
        let yields: Vec<_> = set.iter().filter(|r| matches!(r.kind, ConstraintKind::Yield { .. })).collect();
        assert!(!yields.is_empty());
        assert!(yields.iter().all(|r| matches!(r.kind, ConstraintKind::Yield { maneuver: ManeuverId::B, .. })));
        // every free point of B: shared (2) + branch B (N - n_pin = 10)
        assert_eq!(yields.len(), 12);
    }

    #[test]
    fn hypothetical_object_bound() {
        let fov = FovBoundary { s_visible: 40.0, sigma: 0.5 };
        let o = fov.hypothetical_object(10, 3.0).unwrap();
        assert!(o.track.iter().all(|d| d.lower >= 40.0));
        assert!(o.hypothetical && !o.is_decision_object());
    }
}
