//! Guiding trajectory for the multi-rotor body.
//!
//! Grid A* on the distance field (voxels with clearance `<= rho` are
//! blocked), a trapezoidal time allocation, a least-squares B-spline fit with
//! rest-to-rest boundary control points, and gradient-based refinement for
//! smoothness, clearance and soft velocity/acceleration limits.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::{fit_from_samples, BSplineCurve, BoundaryPins, KnotVector, SplineError};
use crate::costs::obstacle_point;
use crate::esdf::EsdfGrid;
use crate::geometry::{polyline_length, Vec3};
use crate::optimizer::{minimize, LbfgsConfig};

type V3 = Vec3<f64>;

pub const ORDER: usize = 3;
/// Keeps at least `2 * ORDER + 2` control points so the end-effector plan has
/// free variables after pinning both ends.
const MIN_SEGMENTS: usize = ORDER + 2;

#[derive(Debug, Error)]
pub enum GuideError {
    #[error("start {0} is in collision or outside the map")]
    StartInCollision(V3),
    #[error("goal {0} is in collision or outside the map")]
    GoalInCollision(V3),
    #[error("invalid guide configuration: {0}")]
    Config(String),
    #[error("path has fewer than two waypoints")]
    TooFewWaypoints,
    #[error(transparent)]
    Spline(#[from] SplineError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidePlanConfig {
    /// Body clearance radius used for search and verification (m).
    pub inflation_radius: f64,
    pub v_max: f64,
    pub a_max: f64,
    /// Target knot spacing (s).
    pub segment_time: f64,
    /// Duration used for zero-length plans (s).
    pub hover_time: f64,
    pub smoothness_weight: f64,
    pub clearance_weight: f64,
    pub feasibility_weight: f64,
    /// Extra clearance demanded from control points during refinement (m).
    pub clearance_margin: f64,
    pub goal_tolerance: f64,
    /// Samples per knot span for fitting.
    pub samples_per_span: usize,
    /// Samples per knot span for clearance checks.
    pub check_samples_per_span: usize,
    pub max_iterations: usize,
    /// Refinement rounds; each failed round doubles the clearance weight.
    pub refine_rounds: usize,
}

impl Default for GuidePlanConfig {
    fn default() -> Self {
        Self {
            inflation_radius: 0.3,
            v_max: 1.5,
            a_max: 1.5,
            segment_time: 0.25,
            hover_time: 1.0,
            smoothness_weight: 1.0,
            clearance_weight: 50.0,
            feasibility_weight: 1.0,
            clearance_margin: 0.1,
            goal_tolerance: 0.05,
            samples_per_span: 10,
            check_samples_per_span: 50,
            max_iterations: 200,
            refine_rounds: 4,
        }
    }
}

impl GuidePlanConfig {
    pub fn validate(&self) -> Result<(), GuideError> {
        let pos = [
            ("inflation_radius", self.inflation_radius),
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("segment_time", self.segment_time),
            ("hover_time", self.hover_time),
            ("goal_tolerance", self.goal_tolerance),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GuideError::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("smoothness_weight", self.smoothness_weight),
            ("clearance_weight", self.clearance_weight),
            ("feasibility_weight", self.feasibility_weight),
            ("clearance_margin", self.clearance_margin),
        ] {
            if !(v >= 0.0) {
                return Err(GuideError::Config(format!("{name} must be non-negative")));
            }
        }
        for (name, v) in [
            ("samples_per_span", self.samples_per_span),
            ("check_samples_per_span", self.check_samples_per_span),
        ] {
            if v == 0 {
                return Err(GuideError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GuideTrajectory {
    pub curve: BSplineCurve<f64>,
    pub total_time: f64,
}

impl GuideTrajectory {
    pub fn start(&self) -> V3 {
        self.curve.evaluate(self.curve.domain().0).expect("domain")
    }

    pub fn end(&self) -> V3 {
        self.curve.evaluate(self.curve.domain().1).expect("domain")
    }

    /// Length of the densely sampled curve.
    pub fn length(&self, samples: usize) -> f64 {
        let pts: Vec<V3> = self
            .curve
            .sample_uniform(samples)
            .into_iter()
            .map(|(_, p)| p)
            .collect();
        polyline_length(&pts)
    }
}

/// Result of a grid search.
#[derive(Clone, Debug, PartialEq)]
pub enum PathSearch {
    Found(Vec<V3>),
    NoPath,
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    seq: u64,
    node: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on f, then FIFO on insertion order.
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn point_clear(esdf: &EsdfGrid<f64>, p: V3, rho: f64) -> bool {
    let q = esdf.query(p);
    !q.out_of_bounds && q.distance > rho
}

/// 26-connected A* over voxels whose distance exceeds `rho`.
pub fn search_path(
    esdf: &EsdfGrid<f64>,
    start: V3,
    goal: V3,
    rho: f64,
) -> Result<PathSearch, GuideError> {
    let geo = *esdf.geometry();
    if !point_clear(esdf, start, rho) {
        return Err(GuideError::StartInCollision(start));
    }
    if !point_clear(esdf, goal, rho) {
        return Err(GuideError::GoalInCollision(goal));
    }
    let s_vox = geo
        .voxel_of(start)
        .ok_or(GuideError::StartInCollision(start))?;
    let g_vox = geo
        .voxel_of(goal)
        .ok_or(GuideError::GoalInCollision(goal))?;
    let s_idx = geo.flat(s_vox);
    let g_idx = geo.flat(g_vox);
    let n = geo.len();
    let res = geo.resolution;
    let passable = |idx: usize| idx == s_idx || idx == g_idx || esdf.distances()[idx] > rho;

    let goal_c = geo.center(g_vox);
    let h = |idx: usize| geo.center(geo.unflat(idx)).distance(&goal_c);
    let mut g_cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    g_cost[s_idx] = 0.0;
    heap.push(Open {
        f: h(s_idx),
        seq,
        node: s_idx,
    });

    let mut offsets = Vec::with_capacity(26);
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                let len = ((dx * dx + dy * dy + dz * dz) as f64).sqrt() * res;
                offsets.push(([dx, dy, dz], len));
            }
        }
    }

    let mut found = false;
    while let Some(Open { node, .. }) = heap.pop() {
        if closed[node] {
            continue;
        }
        if node == g_idx {
            found = true;
            break;
        }
        closed[node] = true;
        let v = geo.unflat(node);
        for (d, len) in &offsets {
            let mut w = [0usize; 3];
            let mut inside = true;
            for a in 0..3 {
                let c = v[a] as i64 + d[a];
                if c < 0 || c >= geo.dims[a] as i64 {
                    inside = false;
                    break;
                }
                w[a] = c as usize;
            }
            if !inside {
                continue;
            }
            let wi = geo.flat(w);
            if closed[wi] || !passable(wi) {
                continue;
            }
            let cand = g_cost[node] + len;
            if cand < g_cost[wi] {
                g_cost[wi] = cand;
                parent[wi] = node;
                seq += 1;
                heap.push(Open {
                    f: cand + h(wi),
                    seq,
                    node: wi,
                });
            }
        }
    }
    if !found {
        return Ok(PathSearch::NoPath);
    }
    let mut chain = vec![g_idx];
    let mut cur = g_idx;
    while cur != s_idx {
        cur = parent[cur];
        chain.push(cur);
    }
    chain.reverse();
    let mut path: Vec<V3> = chain.iter().map(|i| geo.center(geo.unflat(*i))).collect();
    path[0] = start;
    let last = path.len() - 1;
    if last == 0 {
        path.push(goal);
    } else {
        path[last] = goal;
    }
    Ok(PathSearch::Found(path))
}

fn segment_clear(esdf: &EsdfGrid<f64>, a: V3, b: V3, rho: f64) -> bool {
    let step = esdf.geometry().resolution * 0.25;
    let n = (a.distance(&b) / step).ceil().max(1.0) as usize;
    (0..=n).all(|i| point_clear(esdf, a + (b - a) * (i as f64 / n as f64), rho))
}

/// Greedy line-of-sight shortcutting of a grid path.
pub fn shortcut_path(esdf: &EsdfGrid<f64>, path: &[V3], rho: f64) -> Vec<V3> {
    if path.len() <= 2 {
        return path.to_vec();
    }
    let mut out = vec![path[0]];
    let mut anchor = 0;
    while anchor < path.len() - 1 {
        let mut next = anchor + 1;
        for j in (anchor + 2..path.len()).rev() {
            if segment_clear(esdf, path[anchor], path[j], rho) {
                next = j;
                break;
            }
        }
        out.push(path[next]);
        anchor = next;
    }
    out
}

/// Duration of a rest-to-rest trapezoidal (or triangular) speed profile.
pub fn trapezoid_duration(length: f64, v_max: f64, a_max: f64) -> f64 {
    let d_ramp = v_max * v_max / a_max;
    if length >= d_ramp {
        2.0 * v_max / a_max + (length - d_ramp) / v_max
    } else {
        2.0 * (length / a_max).sqrt()
    }
}

/// Distance travelled at time `t` along the same profile.
pub fn trapezoid_position(t: f64, length: f64, v_max: f64, a_max: f64) -> f64 {
    let total = trapezoid_duration(length, v_max, a_max);
    let t = t.clamp(0.0, total);
    let v_peak = v_max.min((length * a_max).sqrt());
    let t_ramp = v_peak / a_max;
    let d_ramp = 0.5 * a_max * t_ramp * t_ramp;
    if t <= t_ramp {
        0.5 * a_max * t * t
    } else if t <= total - t_ramp {
        d_ramp + v_peak * (t - t_ramp)
    } else {
        let r = total - t;
        length - 0.5 * a_max * r * r
    }
}

fn point_at_arclength(path: &[V3], cumulative: &[f64], s: f64) -> V3 {
    let idx = cumulative
        .partition_point(|c| *c <= s)
        .clamp(1, path.len() - 1);
    let seg = cumulative[idx] - cumulative[idx - 1];
    if seg <= 0.0 {
        return path[idx];
    }
    let u = ((s - cumulative[idx - 1]) / seg).clamp(0.0, 1.0);
    path[idx - 1] + (path[idx] - path[idx - 1]) * u
}

/// Time allocation and B-spline fit of a waypoint path.
pub fn parameterize(path: &[V3], cfg: &GuidePlanConfig) -> Result<GuideTrajectory, GuideError> {
    cfg.validate()?;
    if path.len() < 2 {
        return Err(GuideError::TooFewWaypoints);
    }
    let start = path[0];
    let goal = *path.last().unwrap();
    let length = polyline_length(path);
    if length < 1e-9 {
        let n_seg = ((cfg.hover_time / cfg.segment_time).ceil() as usize).max(MIN_SEGMENTS);
        let dt = cfg.hover_time / n_seg as f64;
        let n_ctrl = n_seg + ORDER;
        let knots = KnotVector::uniform(ORDER, n_ctrl, dt, 0.0);
        let curve = BSplineCurve::new(ORDER, vec![start; n_ctrl], knots)?;
        return Ok(GuideTrajectory {
            curve,
            total_time: cfg.hover_time,
        });
    }
    let total = trapezoid_duration(length, cfg.v_max, cfg.a_max);
    let n_seg = ((total / cfg.segment_time).ceil() as usize).max(MIN_SEGMENTS);
    let dt = total / n_seg as f64;
    let n_ctrl = n_seg + ORDER;
    let knots = KnotVector::uniform(ORDER, n_ctrl, dt, 0.0);
    let mut cumulative = Vec::with_capacity(path.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in path.windows(2) {
        acc += w[0].distance(&w[1]);
        cumulative.push(acc);
    }
    let n_samples = n_seg * cfg.samples_per_span + 1;
    let samples: Vec<(f64, V3)> = (0..n_samples)
        .map(|i| {
            let t = if i + 1 == n_samples {
                total
            } else {
                total * i as f64 / (n_samples - 1) as f64
            };
            let s = trapezoid_position(t, length, cfg.v_max, cfg.a_max);
            (t, point_at_arclength(path, &cumulative, s))
        })
        .collect();
    let fit = fit_from_samples(
        &samples,
        &knots,
        ORDER,
        &BoundaryPins::rest(start, goal, ORDER),
    )?;
    Ok(GuideTrajectory {
        curve: fit.curve,
        total_time: total,
    })
}

/// Refinement objective over the guide control points.
pub struct GuideCost<'a> {
    pub esdf: &'a EsdfGrid<f64>,
    pub knots: KnotVector<f64>,
    pub cfg: &'a GuidePlanConfig,
    pub clearance_weight: f64,
    pub d_thr: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GuideCostTerms {
    pub smoothness: f64,
    pub clearance: f64,
    pub feasibility: f64,
    pub total: f64,
}

impl GuideCost<'_> {
    /// Cost and gradient; pinned control points get zero gradient.
    pub fn evaluate(&self, x: &[V3], grad: &mut [V3]) -> GuideCostTerms {
        let n = x.len() - 1;
        let s = ORDER;
        let k = &self.knots;
        grad.iter_mut().for_each(|g| *g = Vec3::zeros());
        let mut terms = GuideCostTerms::default();
        let ws = self.cfg.smoothness_weight;
        let wf = self.cfg.feasibility_weight;
        let v2 = self.cfg.v_max * self.cfg.v_max;
        let a2 = self.cfg.a_max * self.cfg.a_max;

        for i in s - 2..=n - s {
            let m = crate::bspline::accel_coefficients(k, s, i)
                .expect("validated knots")
                .0;
            let a = x[i] * m[0] + x[i + 1] * m[1] + x[i + 2] * m[2];
            let an = a.norm_squared();
            terms.smoothness += an;
            let mut g = a * (2.0 * ws);
            let over = an - a2;
            if over > 0.0 {
                terms.feasibility += over * over;
                g += a * (4.0 * wf * over);
            }
            grad[i] += g * m[0];
            grad[i + 1] += g * m[1];
            grad[i + 2] += g * m[2];
        }
        for i in s - 1..=n - s {
            let c = s as f64 / k.span(i + 1, s);
            let v = (x[i + 1] - x[i]) * c;
            let over = v.norm_squared() - v2;
            if over > 0.0 {
                terms.feasibility += over * over;
                let g = v * (4.0 * wf * over * c);
                grad[i + 1] += g;
                grad[i] -= g;
            }
        }
        for i in s..=n - s {
            let (v, g) = obstacle_point(self.esdf, self.d_thr, x[i]);
            terms.clearance += v;
            grad[i] += g * self.clearance_weight;
        }
        for (i, g) in grad.iter_mut().enumerate() {
            if i < s || i > n - s {
                *g = Vec3::zeros();
            }
        }
        terms.total = ws * terms.smoothness
            + self.clearance_weight * terms.clearance
            + wf * terms.feasibility;
        terms
    }
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub trajectory: GuideTrajectory,
    /// Minimum distance over dense samples of the refined curve (m).
    pub min_clearance: f64,
    /// True when `min_clearance >= inflation_radius`.
    pub clear: bool,
    pub cost_before: GuideCostTerms,
    pub cost_after: GuideCostTerms,
    pub iterations: usize,
}

pub fn dense_clearance(esdf: &EsdfGrid<f64>, curve: &BSplineCurve<f64>, per_span: usize) -> f64 {
    let count = curve.segment_count() * per_span.max(1) + 1;
    let pts: Vec<V3> = curve
        .sample_uniform(count)
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    esdf.min_clearance(pts.iter())
}

/// Gradient-based refinement. Endpoint control points are never moved.
pub fn refine(
    traj: &GuideTrajectory,
    esdf: &EsdfGrid<f64>,
    cfg: &GuidePlanConfig,
) -> Result<RefineOutcome, GuideError> {
    cfg.validate()?;
    let curve = &traj.curve;
    let n = curve.last_index();
    let knots = curve.knots().clone();
    let mut x: Vec<V3> = curve.control_points().to_vec();
    let mut weight = cfg.clearance_weight;
    let mut margin = cfg.clearance_margin;
    let free: Vec<usize> = (ORDER..=n - ORDER).collect();
    let mut grad = vec![Vec3::zeros(); n + 1];
    let mut cost_before = None;
    let mut iterations = 0;
    let per_span = cfg.check_samples_per_span;
    // Fallback when no round clears: the candidate with the largest clearance,
    // starting with the unrefined input.
    let mut fallback = (dense_clearance(esdf, curve, per_span), curve.clone(), None);
    let lbfgs = LbfgsConfig {
        max_iterations: cfg.max_iterations,
        ..LbfgsConfig::default()
    };

    for _ in 0..cfg.refine_rounds.max(1) {
        let cost = GuideCost {
            esdf,
            knots: knots.clone(),
            cfg,
            clearance_weight: weight,
            d_thr: cfg.inflation_radius + margin,
        };
        if cost_before.is_none() {
            cost_before = Some(cost.evaluate(&x, &mut grad));
        }
        let x0: Vec<f64> = free.iter().flat_map(|i| x[*i].to_array()).collect();
        let mut work = x.clone();
        let mut work_grad = vec![Vec3::zeros(); n + 1];
        let outcome = minimize(x0, &lbfgs, |v, g| {
            for (slot, i) in free.iter().enumerate() {
                work[*i] = Vec3::new(v[3 * slot], v[3 * slot + 1], v[3 * slot + 2]);
            }
            let t = cost.evaluate(&work, &mut work_grad);
            for (slot, i) in free.iter().enumerate() {
                g[3 * slot] = work_grad[*i].x;
                g[3 * slot + 1] = work_grad[*i].y;
                g[3 * slot + 2] = work_grad[*i].z;
            }
            t.total
        });
        let best = match outcome {
            Ok(o) => {
                iterations += o.iterations;
                o.x
            }
            Err(crate::optimizer::OptimizeError::NonFinite {
                last_finite,
                iterations: it,
            }) => {
                iterations += it;
                last_finite
            }
        };
        for (slot, i) in free.iter().enumerate() {
            x[*i] = Vec3::new(best[3 * slot], best[3 * slot + 1], best[3 * slot + 2]);
        }
        let cost_after = cost.evaluate(&x, &mut grad);
        let refined = curve.with_control_points(x.clone())?;
        let clearance = dense_clearance(esdf, &refined, per_span);
        if clearance > cfg.inflation_radius {
            return Ok(RefineOutcome {
                trajectory: GuideTrajectory {
                    curve: refined,
                    total_time: traj.total_time,
                },
                min_clearance: clearance,
                clear: true,
                cost_before: cost_before.unwrap_or_default(),
                cost_after,
                iterations,
            });
        }
        if clearance > fallback.0 {
            fallback = (clearance, refined, Some(cost_after));
        }
        weight *= 2.0;
        margin += 0.5 * esdf.geometry().resolution;
    }
    let (clearance, curve, cost_after) = fallback;
    let cost_before = cost_before.unwrap_or_default();
    Ok(RefineOutcome {
        trajectory: GuideTrajectory {
            curve,
            total_time: traj.total_time,
        },
        min_clearance: clearance,
        clear: clearance > cfg.inflation_radius,
        cost_after: cost_after.unwrap_or(cost_before),
        cost_before,
        iterations,
    })
}

/// Outcome of the full guide pipeline.
#[derive(Clone, Debug)]
pub enum GuidePlan {
    Feasible(RefineOutcome),
    /// Search failed or refinement could not clear obstacles; carries the best
    /// refined trajectory when one exists.
    Infeasible {
        reason: String,
        best: Option<RefineOutcome>,
    },
}

/// Search, shortcut, parameterize and refine.
pub fn plan_guide(
    esdf: &EsdfGrid<f64>,
    start: V3,
    goal: V3,
    cfg: &GuidePlanConfig,
) -> Result<GuidePlan, GuideError> {
    cfg.validate()?;
    let rho = cfg.inflation_radius;
    let path = match search_path(esdf, start, goal, rho)? {
        PathSearch::Found(p) => p,
        PathSearch::NoPath => {
            return Ok(GuidePlan::Infeasible {
                reason: format!("no path with clearance {rho} m"),
                best: None,
            })
        }
    };
    let mut best = refine(
        &parameterize(&shortcut_path(esdf, &path, rho), cfg)?,
        esdf,
        cfg,
    )?;
    // The fitted spline cuts corners of the polyline. When refinement cannot
    // recover, search again with a wider berth and keep the clearest result.
    let res = esdf.geometry().resolution;
    for widen in [res, 2.0 * res] {
        if best.clear {
            break;
        }
        let wide = rho + widen;
        if !point_clear(esdf, start, wide) || !point_clear(esdf, goal, wide) {
            break;
        }
        let PathSearch::Found(path) = search_path(esdf, start, goal, wide)? else {
            break;
        };
        let traj = parameterize(&shortcut_path(esdf, &path, wide), cfg)?;
        let refined = refine(&traj, esdf, cfg)?;
        if refined.clear || refined.min_clearance > best.min_clearance {
            best = refined;
        }
    }
    if best.clear {
        Ok(GuidePlan::Feasible(best))
    } else {
        Ok(GuidePlan::Infeasible {
            reason: format!(
                "refined clearance {:.3} m below {rho} m",
                best.min_clearance
            ),
            best: Some(best),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esdf::{build_esdf, GridGeometry, Obstacle, OccupancyGrid};

    fn empty_map() -> EsdfGrid<f64> {
        let g = OccupancyGrid::new(
            GridGeometry::new(Vec3::new(-1.0, -1.0, 0.0), 0.1, [80, 20, 20]).unwrap(),
        );
        build_esdf(&g, 10.0)
    }

    fn wall_map(gap_half: f64) -> EsdfGrid<f64> {
        let mut g = OccupancyGrid::new(
            GridGeometry::new(Vec3::new(0.0, -1.5, 0.0), 0.1, [40, 30, 20]).unwrap(),
        );
        g.add_obstacle(&Obstacle::Box {
            min: [1.9, -1.6, -0.1],
            max: [2.1, -gap_half, 2.1],
        })
        .unwrap();
        g.add_obstacle(&Obstacle::Box {
            min: [1.9, gap_half, -0.1],
            max: [2.1, 1.6, 2.1],
        })
        .unwrap();
        build_esdf(&g, 10.0)
    }

    #[test]
    fn free_space_line() {
        let e = empty_map();
        let start = Vec3::new(0.0, 0.0, 1.0);
        let goal = Vec3::new(5.0, 0.0, 1.0);
        let PathSearch::Found(p) = search_path(&e, start, goal, 0.3).unwrap() else {
            panic!()
        };
        let len = polyline_length(&p);
        assert!((len - 5.0).abs() <= 0.1 * 3f64.sqrt(), "{len}");
    }

    #[test]
    fn gap_wider_than_clearance_is_used() {
        // Gap between y = -0.4 and 0.4; occupied centers at +-0.45.
        let e = wall_map(0.4);
        let start = Vec3::new(0.5, 0.02, 1.0);
        let goal = Vec3::new(3.5, 0.02, 1.0);
        let PathSearch::Found(p) = search_path(&e, start, goal, 0.3).unwrap() else {
            panic!("no path")
        };
        let crossing = p.iter().find(|q| (q.x - 2.0).abs() < 0.06).unwrap();
        assert!(crossing.y.abs() < 0.2);
        // Exhaustive oracle: the only passable voxels in the wall slab are those
        // with |y| small enough.
        for q in &p {
            assert!(
                e.nearest_voxel_distance(*q) > 0.3
                    || q.distance(&start) < 1e-9
                    || q.distance(&goal) < 1e-9
            );
        }
    }

    #[test]
    fn narrow_gap_is_infeasible() {
        let e = wall_map(0.2);
        let r = search_path(&e, Vec3::new(0.5, 0.0, 1.0), Vec3::new(3.5, 0.0, 1.0), 0.3).unwrap();
        assert_eq!(r, PathSearch::NoPath);
    }

    #[test]
    fn start_in_collision() {
        let e = wall_map(0.2);
        assert!(matches!(
            search_path(&e, Vec3::new(2.0, 1.0, 1.0), Vec3::new(3.5, 0.0, 1.0), 0.3),
            Err(GuideError::StartInCollision(_))
        ));
    }

    #[test]
    fn trapezoid_example() {
        assert!((trapezoid_duration(4.0, 2.0, 2.0) - 3.0).abs() < 1e-12);
        assert!((trapezoid_position(1.0, 4.0, 2.0, 2.0) - 1.0).abs() < 1e-12);
        assert!((trapezoid_position(2.0, 4.0, 2.0, 2.0) - 3.0).abs() < 1e-12);
        assert!((trapezoid_position(3.0, 4.0, 2.0, 2.0) - 4.0).abs() < 1e-12);
        // Triangular profile.
        assert!((trapezoid_duration(1.0, 2.0, 2.0) - 2.0 * 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn parameterize_line() {
        let cfg = GuidePlanConfig {
            v_max: 2.0,
            a_max: 2.0,
            ..GuidePlanConfig::default()
        };
        let a = Vec3::new(0.0, 0.0, 1.0);
        let b = Vec3::new(4.0, 0.0, 1.0);
        let t = parameterize(&[a, b], &cfg).unwrap();
        assert!((t.total_time - 3.0).abs() < 1e-12);
        assert!((t.curve.duration() - 3.0).abs() < 1e-12);
        assert!(t.start().distance(&a) < 1e-6 && t.end().distance(&b) < 1e-6);
        let vel = t.curve.derivative().unwrap();
        for (_, v) in vel.sample_uniform(600) {
            assert!(v.norm() <= 2.0 * 1.05, "{}", v.norm());
        }
        let k = t.curve.knots().as_slice();
        assert!(k.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn zero_length_path_hovers() {
        let cfg = GuidePlanConfig::default();
        let a = Vec3::new(1.0, 1.0, 1.0);
        let t = parameterize(&[a, a], &cfg).unwrap();
        assert_eq!(t.total_time, cfg.hover_time);
        assert!(t.curve.control_points().iter().all(|p| *p == a));
    }

    #[test]
    fn refine_is_idempotent_in_free_space() {
        let e = empty_map();
        let cfg = GuidePlanConfig::default();
        let t = parameterize(&[Vec3::new(0.0, 0.0, 1.0), Vec3::new(5.0, 0.0, 1.0)], &cfg).unwrap();
        let r1 = refine(&t, &e, &cfg).unwrap();
        assert!(r1.cost_after.total <= r1.cost_before.total);
        assert!(r1.cost_after.smoothness <= r1.cost_before.smoothness);
        let r2 = refine(&r1.trajectory, &e, &cfg).unwrap();
        for (a, b) in r1
            .trajectory
            .curve
            .control_points()
            .iter()
            .zip(r2.trajectory.curve.control_points())
        {
            assert!(a.distance(b) < 1e-6);
        }
        assert_eq!(r1.trajectory.start(), t.start());
    }

    #[test]
    fn refine_pushes_away_from_grazing_obstacle() {
        let mut g = OccupancyGrid::new(
            GridGeometry::new(Vec3::new(-1.0, -1.5, 0.0), 0.1, [70, 30, 20]).unwrap(),
        );
        g.add_obstacle(&Obstacle::Cylinder {
            center: [2.5, 0.35],
            radius: 0.2,
            z_min: 0.0,
            z_max: 2.0,
        })
        .unwrap();
        let e = build_esdf(&g, 10.0);
        let cfg = GuidePlanConfig {
            inflation_radius: 0.3,
            ..GuidePlanConfig::default()
        };
        let t = parameterize(&[Vec3::new(0.0, 0.0, 1.0), Vec3::new(5.0, 0.0, 1.0)], &cfg).unwrap();
        let before = dense_clearance(&e, &t.curve, 20);
        assert!(before < 0.3);
        let r = refine(&t, &e, &cfg).unwrap();
        assert!(r.clear, "clearance {}", r.min_clearance);
        assert!(r.min_clearance >= 0.3);
        assert!(r.trajectory.end().distance(&t.end()) < 1e-12);
    }
}
