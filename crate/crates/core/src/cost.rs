//! Smoothness cost over forward differences, the soft chance-collision cost,
//! and the existence-weighted blend of both maneuvers, with analytic
//! gradients and a Gauss-Newton curvature model for the optimizer.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PlannerError, Result};
use crate::path::{Point, Projection, RefPath};
use crate::prob::{tn_cdf, ManeuverWeights};
use crate::scene::{PredictedObject, Scene};
use crate::trajectory::{extract_maneuver, stencil, CombinedVector, ManeuverId, Trajectory};

pub const TERM_JERK: &str = "jerk";
pub const TERM_ACCEL: &str = "accel";
pub const TERM_VELOCITY: &str = "velocity";
pub const TERM_PATH_OFFSET: &str = "path_offset";
pub const TERM_COLLISION: &str = "collision";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    /// per (m/s³)²
    pub jerk: f64,
    /// per (m/s²)²
    pub accel: f64,
    /// per (m/s)² of along-path speed error
    pub velocity_track: f64,
    /// target speed, m/s
    pub v_ref: f64,
    /// multiplier on predicted collision probability mass
    pub collision_soft: f64,
    /// ego front margin added before evaluating the collision cdf, m
    pub collision_margin: f64,
    /// per m² of lateral offset from the reference path
    pub path_offset: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            jerk: 1.0,
            accel: 1.0,
            velocity_track: 1.0,
            v_ref: 10.0,
            collision_soft: 20.0,
            collision_margin: 5.0,
            path_offset: 1.0,
        }
    }
}

impl CostWeights {
    pub fn jerk_only() -> Self {
        CostWeights {
            jerk: 1.0,
            accel: 0.0,
            velocity_track: 0.0,
            v_ref: 0.0,
            collision_soft: 0.0,
            collision_margin: 0.0,
            path_offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("jerk", self.jerk),
            ("accel", self.accel),
            ("velocity_track", self.velocity_track),
            ("collision_soft", self.collision_soft),
            ("collision_margin", self.collision_margin),
            ("path_offset", self.path_offset),
        ];
        let mut errors: Vec<String> = fields
            .iter()
            .filter(|(_, v)| !(*v >= 0.0) || !v.is_finite())
            .map(|(k, v)| format!("weights.{k} must be a finite nonnegative number, got {v}"))
            .collect();
        if !(self.jerk > 0.0) {
            errors.push("weights.jerk must be positive".into());
        }
        if !self.v_ref.is_finite() {
            errors.push("weights.v_ref must be finite".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(PlannerError::Validation(errors))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub total: f64,
    /// Weighted contribution of each cost term; sums to `total`.
    pub per_term: BTreeMap<String, f64>,
    /// Unweighted `(J_A, J_B)`.
    pub per_maneuver: (f64, f64),
}

/// Objective value, gradient over storage coordinates (x0, y0, x1, y1, ...)
/// and an optional positive semidefinite curvature model.
pub(crate) struct Accumulator {
    pub f: f64,
    pub grad: Vec<f64>,
    pub hess: Option<DMatrix<f64>>,
}

impl Accumulator {
    pub fn new(points: usize, with_hessian: bool) -> Self {
        Accumulator {
            f: 0.0,
            grad: vec![0.0; 2 * points],
            hess: with_hessian.then(|| DMatrix::zeros(2 * points, 2 * points)),
        }
    }

    /// Adds `r²` where `r` has sparse Jacobian `jac` (coordinate, partial).
    pub fn add_residual(&mut self, r: f64, jac: &[(usize, f64)]) {
        self.f += r * r;
        for &(c, j) in jac {
            self.grad[c] += 2.0 * r * j;
        }
        if let Some(h) = self.hess.as_mut() {
            for &(c1, j1) in jac {
                for &(c2, j2) in jac {
                    h[(c1, c2)] += 2.0 * j1 * j2;
                }
            }
        }
    }

    /// Adds a scalar term with given gradient and rank-one curvature
    /// `curvature · g gᵀ` along the unit direction `dir`.
    pub fn add_scalar(&mut self, value: f64, grad: &[(usize, f64)]) {
        self.f += value;
        for &(c, g) in grad {
            self.grad[c] += g;
        }
    }

    pub fn add_curvature(&mut self, coeff: f64, dir: &[(usize, f64)]) {
        if let Some(h) = self.hess.as_mut() {
            for &(c1, d1) in dir {
                for &(c2, d2) in dir {
                    h[(c1, c2)] += coeff * d1 * d2;
                }
            }
        }
    }
}

/// One maneuver's contribution to the objective: its storage indices in time
/// order and the blend weight.
#[derive(Debug, Clone)]
pub(crate) struct CostView {
    pub class: ManeuverId,
    pub weight: f64,
    pub indices: Vec<usize>,
}

#[derive(Debug, Default)]
pub(crate) struct Breakdown {
    pub per_view: Vec<f64>,
    pub per_term: BTreeMap<String, f64>,
}

fn coord(idx: usize, dim: usize) -> usize {
    2 * idx + dim
}

/// Number of smoothness summands for a trajectory of `len` points.
fn summands(len: usize) -> usize {
    len.saturating_sub(3)
}

pub(crate) fn project_all(points: &[Point], path: &RefPath) -> Vec<Projection> {
    points.iter().map(|p| path.project(p)).collect()
}

fn add_difference_term(
    acc: &mut Accumulator,
    points: &[Point],
    idx: &[usize],
    order: usize,
    scale: f64,
    step: f64,
) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let coeffs = stencil(order);
    let root = scale.sqrt() * step.powi(-(order as i32));
    let before = acc.f;
    let mut jac = Vec::with_capacity(order + 1);
    for i in 0..summands(idx.len()) {
        for dim in 0..2 {
            jac.clear();
            let mut r = 0.0;
            for (k, c) in coeffs.iter().enumerate() {
                let j = idx[i + k];
                r += c * points[j][dim];
                jac.push((coord(j, dim), c * root));
            }
            acc.add_residual(r * root, &jac);
        }
    }
    acc.f - before
}

#[allow(clippy::too_many_arguments)]
fn accumulate_smoothness(
    acc: &mut Accumulator,
    points: &[Point],
    proj: &[Projection],
    idx: &[usize],
    scale: f64,
    w: &CostWeights,
    step: f64,
    terms: &mut BTreeMap<String, f64>,
) {
    let mut bump = |name: &str, v: f64| *terms.entry(name.to_string()).or_insert(0.0) += v;

    bump(TERM_JERK, add_difference_term(acc, points, idx, 3, scale * w.jerk, step));
    bump(TERM_ACCEL, add_difference_term(acc, points, idx, 2, scale * w.accel, step));

    let count = summands(idx.len());
    if w.velocity_track > 0.0 && scale > 0.0 {
        let root = (scale * w.velocity_track).sqrt();
        let before = acc.f;
        for i in 0..count {
            let (p, q) = (&proj[idx[i]], &proj[idx[i + 1]]);
            let r = root * ((q.s - p.s) / step - w.v_ref);
            let k = root / step;
            let jac = [
                (coord(idx[i + 1], 0), k * q.tangent.x),
                (coord(idx[i + 1], 1), k * q.tangent.y),
                (coord(idx[i], 0), -k * p.tangent.x),
                (coord(idx[i], 1), -k * p.tangent.y),
            ];
            acc.add_residual(r, &jac);
        }
        bump(TERM_VELOCITY, acc.f - before);
    } else {
        bump(TERM_VELOCITY, 0.0);
    }

    if w.path_offset > 0.0 && scale > 0.0 {
        let root = (scale * w.path_offset).sqrt();
        let before = acc.f;
        for &j in &idx[..count] {
            let p = &proj[j];
            acc.add_residual(root * p.d, &[(coord(j, 0), root * p.normal.x), (coord(j, 1), root * p.normal.y)]);
        }
        bump(TERM_PATH_OFFSET, acc.f - before);
    } else {
        bump(TERM_PATH_OFFSET, 0.0);
    }
}

/// Adds `scale · Σ_i cdf(s_i + margin)` for one object; returns the raw sum.
fn accumulate_collision(
    acc: &mut Accumulator,
    proj: &[Projection],
    idx: &[usize],
    obj: &PredictedObject,
    class: ManeuverId,
    margin: f64,
    scale: f64,
) -> Result<f64> {
    let Some(pred) = obj.prediction_for(class) else {
        return Ok(0.0);
    };
    if pred.len() < idx.len() {
        return Err(PlannerError::Input(format!(
            "object {} predicts {} steps, maneuver {class} needs {}",
            obj.id,
            pred.len(),
            idx.len()
        )));
    }
    let mut raw = 0.0;
    for (i, &j) in idx.iter().enumerate() {
        let d = &pred[i];
        let p = &proj[j];
        let x = p.s + margin;
        let mass = tn_cdf(d, x)?;
        raw += mass;
        if scale == 0.0 {
            continue;
        }
        let (density, slope) = if x > d.lower && x < d.upper {
            (d.pdf(x)?, d.pdf_slope(x)?)
        } else {
            (0.0, 0.0)
        };
        let dir = [(coord(j, 0), p.tangent.x), (coord(j, 1), p.tangent.y)];
        let grad = [(dir[0].0, scale * density * dir[0].1), (dir[1].0, scale * density * dir[1].1)];
        acc.add_scalar(scale * mass, &grad);
        if slope > 0.0 {
            acc.add_curvature(scale * slope, &dir);
        }
    }
    Ok(raw)
}

/// Evaluates the weighted sum of maneuver costs over storage `points`.
pub(crate) fn evaluate_views(
    points: &[Point],
    views: &[CostView],
    w: &CostWeights,
    scene: &Scene,
    step: f64,
    with_hessian: bool,
) -> Result<(Accumulator, Breakdown)> {
    let proj = project_all(points, &scene.path);
    let mut acc = Accumulator::new(points.len(), with_hessian);
    let mut breakdown = Breakdown::default();
    for view in views {
        let mut terms = BTreeMap::new();
        // Unweighted pass for the report, weighted pass for the objective.
        let mut local = Accumulator::new(points.len(), false);
        accumulate_smoothness(&mut local, points, &proj, &view.indices, 1.0, w, step, &mut terms);
        let mut collision = 0.0;
        for obj in &scene.objects {
            collision += accumulate_collision(&mut local, &proj, &view.indices, obj, view.class, w.collision_margin, 0.0)?;
        }
        let collision_cost = w.collision_soft * collision;
        *terms.entry(TERM_COLLISION.to_string()).or_insert(0.0) += collision_cost;
        let j_view = local.f + collision_cost;
        breakdown.per_view.push(j_view);
        for (k, v) in terms {
            *breakdown.per_term.entry(k).or_insert(0.0) += view.weight * v;
        }

        if view.weight > 0.0 {
            let mut scratch = BTreeMap::new();
            accumulate_smoothness(&mut acc, points, &proj, &view.indices, view.weight, w, step, &mut scratch);
            let scale = view.weight * w.collision_soft;
            if scale > 0.0 {
                for obj in &scene.objects {
                    accumulate_collision(&mut acc, &proj, &view.indices, obj, view.class, w.collision_margin, scale)?;
                }
            }
        }
    }
    // Report the blend from the unweighted maneuver costs so that
    // total = w_a·J_A + w_b·J_B holds to rounding.
    acc.f = views.iter().zip(&breakdown.per_view).map(|(v, j)| v.weight * j).sum();
    Ok((acc, breakdown))
}

fn single_view(t: &Trajectory, class: ManeuverId) -> CostView {
    CostView { class, weight: 1.0, indices: (0..t.len()).collect() }
}

/// Smoothness cost of one trajectory: jerk, acceleration, speed
/// tracking and path offset residuals, each squared.
pub fn smoothness_cost(t: &Trajectory, w: &CostWeights, path: &RefPath) -> f64 {
    let proj = project_all(t.points(), path);
    let mut acc = Accumulator::new(t.len(), false);
    let mut terms = BTreeMap::new();
    accumulate_smoothness(&mut acc, t.points(), &proj, &single_view(t, ManeuverId::A).indices, 1.0, w, t.step(), &mut terms);
    acc.f
}

/// Sum over the trajectory of the probability that the object lies behind the
/// ego front plus `margin`. Zero when the maneuver class ignores the object.
pub fn collision_soft_cost(
    t: &Trajectory,
    obj: &PredictedObject,
    class: ManeuverId,
    path: &RefPath,
    margin: f64,
) -> Result<f64> {
    let proj = project_all(t.points(), path);
    let mut acc = Accumulator::new(t.len(), false);
    accumulate_collision(&mut acc, &proj, &single_view(t, class).indices, obj, class, margin, 0.0)
}

pub(crate) fn combined_views(v: &CombinedVector, mw: &ManeuverWeights) -> Vec<CostView> {
    let layout = v.layout();
    [(ManeuverId::A, mw.w_a), (ManeuverId::B, mw.w_b)]
        .into_iter()
        .map(|(class, weight)| CostView {
            class,
            weight,
            indices: layout.maneuver_indices(class).expect("A and B always have branches"),
        })
        .collect()
}

/// Existence-weighted objective `w_a·J_A + w_b·J_B`.
pub fn combined_cost(v: &CombinedVector, w: &CostWeights, mw: &ManeuverWeights, scene: &Scene) -> Result<CostReport> {
    let views = combined_views(v, mw);
    let (acc, breakdown) = evaluate_views(v.points(), &views, w, scene, v.step(), false)?;
    Ok(CostReport {
        total: acc.f,
        per_term: breakdown.per_term,
        per_maneuver: (breakdown.per_view[0], breakdown.per_view[1]),
    })
}

/// Gradient of [`combined_cost`] over the free coordinates, ordered as
/// `(x, y)` pairs of storage points `n_pin + 1 ..`.
pub fn combined_gradient(v: &CombinedVector, w: &CostWeights, mw: &ManeuverWeights, scene: &Scene) -> Result<Vec<f64>> {
    let views = combined_views(v, mw);
    let (acc, _) = evaluate_views(v.points(), &views, w, scene, v.step(), false)?;
    let first_free = 2 * v.layout().pinned_points();
    Ok(acc.grad[first_free..].to_vec())
}

/// Independent recomputation of one maneuver's cost from the public pieces.
pub fn maneuver_cost(t: &Trajectory, class: ManeuverId, w: &CostWeights, scene: &Scene) -> Result<f64> {
    let mut j = smoothness_cost(t, w, &scene.path);
    for obj in &scene.objects {
        j += w.collision_soft * collision_soft_cost(t, obj, class, &scene.path, w.collision_margin)?;
    }
    Ok(j)
}

/// `(J_A, J_B)` of a combined vector computed maneuver by maneuver.
pub fn maneuver_costs(v: &CombinedVector, w: &CostWeights, scene: &Scene) -> Result<(f64, f64)> {
    Ok((
        maneuver_cost(&extract_maneuver(v, ManeuverId::A)?, ManeuverId::A, w, scene)?,
        maneuver_cost(&extract_maneuver(v, ManeuverId::B)?, ManeuverId::B, w, scene)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::TruncatedNormal;
    use crate::scene::Behavior;
    use crate::trajectory::{build_combined, constant_velocity};
    use proptest::prelude::*;

    fn along_x(xs: impl IntoIterator<Item = f64>, step: f64) -> Trajectory {
        Trajectory::new(xs.into_iter().map(|x| Point::new(x, 0.0)).collect(), step, 0.0, 0).unwrap()
    }

    fn wall(track: Vec<TruncatedNormal>) -> PredictedObject {
        PredictedObject {
            id: "o".into(),
            p_exist: 1.0,
            active: true,
            hypothetical: false,
            behavior_a: Behavior::Yield,
            behavior_b: Behavior::Yield,
            track,
            intention: None,
        }
    }

    #[test]
    fn smooth_cruise_costs_nothing() {
        let path = RefPath::straight(500.0);
        let t = constant_velocity(Point::zeros(), Point::new(10.0, 0.0), 30, 0.2, 0.0, 2).unwrap();
        let w = CostWeights { collision_soft: 0.0, ..CostWeights::default() };
        assert!(smoothness_cost(&t, &w, &path).abs() < 1e-18);
    }

    #[test]
    fn cubic_jerk_cost() {
        let path = RefPath::straight(1e4);
        let t = along_x((0..10).map(|i| (i * i * i) as f64), 1.0);
        assert_eq!(smoothness_cost(&t, &CostWeights::jerk_only(), &path), 252.0);
        let double = CostWeights { jerk: 2.0, ..CostWeights::jerk_only() };
        assert!((smoothness_cost(&t, &double, &path) - 504.0).abs() < 1e-12);
    }

    #[test]
    fn collision_examples() {
        let path = RefPath::straight(1e3);
        let d = TruncatedNormal::symmetric(100.0, 1.0, 3.0).unwrap();
        let obj = wall(vec![d; 10]);
        let behind = along_x((0..10).map(|i| i as f64), 0.2);
        assert!(collision_soft_cost(&behind, &obj, ManeuverId::B, &path, 5.0).unwrap() <= 1e-12);
        let beyond = along_x((0..10).map(|i| 200.0 + i as f64), 0.2);
        assert_eq!(collision_soft_cost(&beyond, &obj, ManeuverId::B, &path, 5.0).unwrap(), 10.0);

        let unit = TruncatedNormal::new(0.0, 1.0, -1.0, 1.0).unwrap();
        let single = wall(vec![unit; 4]);
        let t = along_x([-5.0, -100.0, -100.0, -100.0], 0.2);
        assert!((collision_soft_cost(&t, &single, ManeuverId::B, &path, 5.0).unwrap() - 0.5).abs() < 2e-7);

        let short = wall(vec![d; 3]);
        assert!(matches!(
            collision_soft_cost(&behind, &short, ManeuverId::B, &path, 5.0),
            Err(PlannerError::Input(_))
        ));
    }

    #[test]
    fn degenerate_weights_select_one_maneuver() {
        let path = RefPath::straight(1e3);
        let scene = Scene::empty(path, 3.0);
        let prev = constant_velocity(Point::zeros(), Point::new(8.0, 0.3), 20, 0.2, 0.0, 2).unwrap();
        let mut v = build_combined(&prev, 2, 12).unwrap();
        for (k, p) in v.points_mut().iter_mut().enumerate() {
            p.y += (k as f64 * 0.7).sin();
        }
        let w = CostWeights::default();
        let r = combined_cost(&v, &w, &ManeuverWeights::new(1.0, 0.0).unwrap(), &scene).unwrap();
        assert_eq!(r.total, r.per_maneuver.0);
        let sum: f64 = r.per_term.values().sum();
        assert!((sum - r.total).abs() <= 1e-12 * r.total);
    }

    #[test]
    fn zero_weight_branch_has_zero_gradient() {
        let scene = Scene::empty(RefPath::straight(1e3), 3.0);
        let prev = constant_velocity(Point::zeros(), Point::new(8.0, 0.0), 20, 0.2, 0.0, 2).unwrap();
        let mut v = build_combined(&prev, 2, 12).unwrap();
        for (k, p) in v.points_mut().iter_mut().enumerate() {
            p.y += 0.1 * k as f64;
        }
        let g = combined_gradient(&v, &CostWeights::default(), &ManeuverWeights::new(1.0, 0.0).unwrap(), &scene).unwrap();
        let layout = v.layout();
        let first_free = layout.pinned_points();
        for j in layout.branch_range(ManeuverId::B) {
            assert_eq!(g[2 * (j - first_free)], 0.0);
            assert_eq!(g[2 * (j - first_free) + 1], 0.0);
        }
    }

    proptest! {
        #[test]
        fn collision_monotone_in_ego_position(mu in 0.0..50.0f64, sigma in 0.2..5.0f64, k in 1.0..4.0f64,
                                              s in -20.0..80.0f64, ds in 0.0..10.0f64) {
            let path = RefPath::straight(1e3);
            let d = TruncatedNormal::symmetric(mu, sigma, k).unwrap();
            let obj = wall(vec![d; 4]);
            let base = along_x([s, s, s, s], 0.2);
            let ahead = along_x([s, s + ds, s, s], 0.2);
            let c0 = collision_soft_cost(&base, &obj, ManeuverId::B, &path, 5.0).unwrap();
            let c1 = collision_soft_cost(&ahead, &obj, ManeuverId::B, &path, 5.0).unwrap();
            prop_assert!(c1 >= c0);
        }

        #[test]
        fn smoothness_translation_invariant(dx in -100.0..100.0f64, dy in -100.0..100.0f64,
                                            pts in proptest::collection::vec((-20.0..20.0f64, -20.0..20.0f64), 8)) {
            let path = RefPath::straight(1e3);
            let w = CostWeights { velocity_track: 0.0, path_offset: 0.0, ..CostWeights::default() };
            let t = Trajectory::new(pts.iter().map(|&(x, y)| Point::new(x, y)).collect(), 0.2, 0.0, 1).unwrap();
            let moved = Trajectory::new(pts.iter().map(|&(x, y)| Point::new(x + dx, y + dy)).collect(), 0.2, 0.0, 1).unwrap();
            let (a, b) = (smoothness_cost(&t, &w, &path), smoothness_cost(&moved, &w, &path));
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        }

        #[test]
        fn blend_scales_linearly(c in 0.01..100.0f64, wa in 0.0..1.0f64) {
            let scene = Scene::empty(RefPath::straight(1e3), 3.0);
            let prev = constant_velocity(Point::zeros(), Point::new(8.0, 0.2), 20, 0.2, 0.0, 2).unwrap();
            let mut v = build_combined(&prev, 2, 12).unwrap();
            for (k, p) in v.points_mut().iter_mut().enumerate() { p.x += (k as f64).cos(); }
            let w = CostWeights::default();
            let base = combined_cost(&v, &w, &ManeuverWeights::new(wa, 1.0 - wa + 1e-3).unwrap(), &scene).unwrap();
            let scaled = combined_cost(&v, &w, &ManeuverWeights::new(c * wa, c * (1.0 - wa + 1e-3)).unwrap(), &scene).unwrap();
            prop_assert!((scaled.total - c * base.total).abs() <= 1e-12 * scaled.total.abs().max(1.0));
        }
    }
}
