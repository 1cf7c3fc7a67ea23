//! End-effector trajectory on top of a guiding trajectory.
//!
//! The end-effector curve `Q` shares the guide's knot vector, so the relative
//! curve `E = Q - X` is itself a B-spline with control points `Q_i - X_i`.
//! The pipeline is: quadratic Bézier initial guess in the body frame, fit onto
//! the shared knots, minimize the total cost over the free control points,
//! verify, and convert to joint angles.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{
    normalize_angle, ArmError, ArmGeometry, ElbowBranch, GeneralizedJoint, WorkspaceParams,
};
use crate::bspline::{fit_from_samples, BSplineCurve, BoundaryPins, SplineError};
use crate::costs::{total_cost, CostContext, CostError, CostReport, CostWeights};
use crate::esdf::EsdfGrid;
use crate::geometry::Vec3;
use crate::guide_planner::GuideTrajectory;
use crate::optimizer::{minimize_observed, LbfgsConfig, OptimizeError, StopReason};

type V3 = Vec3<f64>;

#[derive(Debug, Error)]
pub enum EeError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("end-effector {which} position {point} is outside the workspace")]
    OutsideWorkspace { which: &'static str, point: V3 },
    #[error("guide has {got} control points, need at least {needed}")]
    GuideTooShort { got: usize, needed: usize },
    #[error("non-finite cost or gradient after {iterations} iterations")]
    Numerical {
        last_finite: Vec<V3>,
        iterations: usize,
    },
    #[error("inverse kinematics failed at t = {time:.4} s: {source}")]
    Ik { time: f64, source: ArmError },
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Quadratic Bézier `start -> middle -> goal` over `s in [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticBezier {
    pub start: V3,
    pub middle: V3,
    pub goal: V3,
    pub lambda: f64,
}

impl QuadraticBezier {
    pub fn evaluate(&self, s: f64) -> V3 {
        let u = 1.0 - s;
        self.start * (u * u) + self.middle * (2.0 * u * s) + self.goal * (s * s)
    }
}

/// Push factor for the middle control point; grows with the angle between
/// the endpoint directions, `ln(1.5)` when they coincide.
pub fn bezier_lambda(angle: f64) -> f64 {
    (0.5 * (angle + 1.0) + 1.0).ln()
}

pub fn bezier_init(xve_start: V3, xve_goal: V3) -> Result<QuadraticBezier, EeError> {
    let a = xve_start
        .normalized()
        .ok_or_else(|| EeError::Degenerate("start position is the zero vector".into()))?;
    let b = xve_goal
        .normalized()
        .ok_or_else(|| EeError::Degenerate("goal position is the zero vector".into()))?;
    let angle = a.dot(&b).clamp(-1.0, 1.0).acos();
    let lambda = bezier_lambda(angle);
    Ok(QuadraticBezier {
        start: xve_start,
        middle: (xve_start + xve_goal) * (0.5 * lambda),
        goal: xve_goal,
        lambda,
    })
}

/// Fits `x(t) + bezier((t - t0) / (tM - t0))` onto the guide's knots with the
/// first and last `order` relative control points pinned to the endpoints.
pub fn build_initial_q(
    guide: &GuideTrajectory,
    bezier: &QuadraticBezier,
    samples_per_span: usize,
) -> Result<(BSplineCurve<f64>, f64), EeError> {
    let curve = &guide.curve;
    let order = curve.order();
    let (t0, t1) = curve.domain();
    let count = curve.segment_count() * samples_per_span.max(2) + 1;
    // The guide is exactly representable on its own knots, so fitting the
    // relative offset and adding X back is the same least-squares problem.
    let samples: Vec<(f64, V3)> = (0..count)
        .map(|i| {
            let t = if i + 1 == count {
                t1
            } else {
                t0 + (t1 - t0) * i as f64 / (count - 1) as f64
            };
            (t, bezier.evaluate((t - t0) / (t1 - t0)))
        })
        .collect();
    let fit = fit_from_samples(
        &samples,
        curve.knots(),
        order,
        &BoundaryPins::rest(bezier.start, bezier.goal, order),
    )?;
    let q = fit.curve.add(curve)?;
    Ok((q, fit.residual_rms))
}

/// One accepted optimizer iterate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub total: f64,
    pub smoothness: f64,
    pub workspace: f64,
    pub yaw: f64,
    pub obstacle: f64,
    pub gradient_max_norm: f64,
}

impl IterationRecord {
    pub fn from_report(iteration: usize, rep: &CostReport<f64>) -> Self {
        Self {
            iteration,
            total: rep.total,
            smoothness: rep.smoothness,
            workspace: rep.workspace,
            yaw: rep.yaw,
            obstacle: rep.obstacle,
            gradient_max_norm: rep.gradient_max_norm(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
    pub initial: CostReport<f64>,
    pub last: CostReport<f64>,
    /// Total cost after each accepted iteration, starting with the initial cost.
    pub trace: Vec<f64>,
    /// Per-term breakdown of every accepted iterate; filled only when tracing.
    pub records: Vec<IterationRecord>,
}

/// Minimizes the total cost over the free control points of `initial`.
///
/// With `trace` set, every accepted iterate is re-evaluated term by term and
/// logged at debug level.
pub fn optimize(
    initial: &BSplineCurve<f64>,
    ctx: &CostContext<f64>,
    lbfgs: &LbfgsConfig<f64>,
    trace: bool,
) -> Result<(BSplineCurve<f64>, OptimizeDiagnostics), EeError> {
    let free: Vec<usize> = ctx.free_range().collect();
    let initial_report = total_cost(initial.control_points(), ctx)?;
    let x0: Vec<f64> = free
        .iter()
        .flat_map(|i| initial.control_points()[*i].to_array())
        .collect();
    let mut work = initial.control_points().to_vec();
    let mut failure: Option<CostError> = None;
    let mut records = Vec::new();
    let mut observed = initial.control_points().to_vec();
    let observer = |k: usize, v: &[f64], _f: f64| {
        if !trace {
            return;
        }
        for (slot, i) in free.iter().enumerate() {
            observed[*i] = Vec3::new(v[3 * slot], v[3 * slot + 1], v[3 * slot + 2]);
        }
        if let Ok(rep) = total_cost(&observed, ctx) {
            let rec = IterationRecord::from_report(k, &rep);
            log::debug!(
                "ee iteration {k}: total {:.6e} smooth {:.6e} workspace {:.6e} yaw {:.6e} obstacle {:.6e} |g| {:.3e}",
                rec.total,
                rec.smoothness,
                rec.workspace,
                rec.yaw,
                rec.obstacle,
                rec.gradient_max_norm
            );
            records.push(rec);
        }
    };
    let outcome = minimize_observed(
        x0,
        lbfgs,
        |v, g| {
            for (slot, i) in free.iter().enumerate() {
                work[*i] = Vec3::new(v[3 * slot], v[3 * slot + 1], v[3 * slot + 2]);
            }
            match total_cost(&work, ctx) {
                Ok(rep) => {
                    for (slot, i) in free.iter().enumerate() {
                        let gi = rep.gradient[*i];
                        g[3 * slot] = gi.x;
                        g[3 * slot + 1] = gi.y;
                        g[3 * slot + 2] = gi.z;
                    }
                    rep.total
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        observer,
    );
    if let Some(e) = failure {
        return Err(e.into());
    }
    let unpack = |v: &[f64]| {
        let mut q = initial.control_points().to_vec();
        for (slot, i) in free.iter().enumerate() {
            q[*i] = Vec3::new(v[3 * slot], v[3 * slot + 1], v[3 * slot + 2]);
        }
        q
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(OptimizeError::NonFinite {
            last_finite,
            iterations,
        }) => {
            return Err(EeError::Numerical {
                last_finite: unpack(&last_finite),
                iterations,
            })
        }
    };
    let q = unpack(&outcome.x);
    let last = total_cost(&q, ctx)?;
    let curve = initial.with_control_points(q)?;
    Ok((
        curve,
        OptimizeDiagnostics {
            iterations: outcome.iterations,
            evaluations: outcome.evaluations,
            reason: outcome.reason,
            initial: initial_report,
            last,
            trace: outcome.trace,
            records,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyFlags {
    pub workspace_ok: bool,
    pub collision_ok: bool,
    /// Dense samples of the relative curve outside the workspace.
    pub sampled_workspace_violations: usize,
    pub min_body_clearance: f64,
    pub min_ee_clearance: f64,
}

impl VerifyFlags {
    pub fn feasible(&self) -> bool {
        self.workspace_ok && self.collision_ok
    }
}

/// Control-point workspace test plus dense collision sampling.
#[allow(clippy::too_many_arguments)]
pub fn verify(
    guide: &BSplineCurve<f64>,
    ee: &BSplineCurve<f64>,
    relative: &BSplineCurve<f64>,
    ws: &WorkspaceParams<f64>,
    workspace_margin: f64,
    esdf: Option<&EsdfGrid<f64>>,
    rho_b: f64,
    rho_e: f64,
    samples_per_span: usize,
) -> VerifyFlags {
    let workspace_ok = relative
        .control_points()
        .iter()
        .all(|p| ws.contains(*p, workspace_margin));
    let count = relative.segment_count() * samples_per_span.max(1) + 1;
    let sampled_workspace_violations = relative
        .sample_uniform(count)
        .iter()
        .filter(|(_, p)| !ws.contains(*p, workspace_margin))
        .count();
    let (min_body_clearance, min_ee_clearance) = match esdf {
        Some(map) => {
            let body: Vec<V3> = guide
                .sample_uniform(count)
                .into_iter()
                .map(|(_, p)| p)
                .collect();
            let arm: Vec<V3> = ee
                .sample_uniform(count)
                .into_iter()
                .map(|(_, p)| p)
                .collect();
            (
                map.min_clearance(body.iter()),
                map.min_clearance(arm.iter()),
            )
        }
        None => (f64::INFINITY, f64::INFINITY),
    };
    VerifyFlags {
        workspace_ok,
        collision_ok: min_body_clearance > rho_b && min_ee_clearance > rho_e,
        sampled_workspace_violations,
        min_body_clearance,
        min_ee_clearance,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    pub t: f64,
    pub joint: GeneralizedJoint<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub branch: ElbowBranch,
    pub samples: Vec<JointSample>,
}

impl JointTrajectory {
    pub fn max_yaw_step(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].joint.psi - w[0].joint.psi).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-sample inverse kinematics of the relative curve with the elbow branch
/// locked after the first sample and yaw unwrapped.
pub fn extract_joint_trajectory(
    relative: &BSplineCurve<f64>,
    geom: &ArmGeometry<f64>,
    sample_rate: f64,
    preferred: ElbowBranch,
) -> Result<JointTrajectory, EeError> {
    if !(sample_rate > 0.0) {
        return Err(EeError::Degenerate("sample rate must be positive".into()));
    }
    let (t0, t1) = relative.domain();
    let steps = ((t1 - t0) * sample_rate).ceil().max(1.0) as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut branch = preferred;
    let mut prev_psi: Option<f64> = None;
    for i in 0..=steps {
        let t = if i == steps {
            t1
        } else {
            t0 + i as f64 / sample_rate
        };
        let target = relative.evaluate(t)?;
        let hint = prev_psi.map(normalize_angle);
        let joint = if i == 0 {
            let (j, b) = geom
                .inverse_kinematics(target, preferred, hint)
                .map_err(|source| EeError::Ik { time: t, source })?;
            branch = b;
            j
        } else {
            geom.inverse_on_branch(target, branch, hint)
                .map_err(|source| EeError::Ik { time: t, source })?
        };
        let psi = match prev_psi {
            Some(p) => p + normalize_angle(joint.psi - p),
            None => joint.psi,
        };
        prev_psi = Some(psi);
        samples.push(JointSample {
            t,
            joint: GeneralizedJoint { psi, ..joint },
        });
    }
    Ok(JointTrajectory { branch, samples })
}

/// Weights, workspace and solver settings of the end-effector stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EePlanConfig {
    pub smoothness_weight: f64,
    pub workspace_weight: f64,
    pub yaw_weight: f64,
    pub obstacle_weight: f64,
    pub workspace: WorkspaceParams<f64>,
    /// The workspace cost is built on W shrunk by this much (m).
    pub workspace_cost_margin: f64,
    /// Move `r_d`/`z_d` to the goal's radius and depth.
    pub shape_from_goal: bool,
    /// Fraction of each range kept between the moved extremum and the faces.
    pub shape_inset: f64,
    /// Margin used by the control-point containment test (m).
    pub verify_margin: f64,
    /// Obstacle hinge threshold for end-effector control points (m).
    pub obstacle_threshold: f64,
    pub fit_samples_per_span: usize,
    pub check_samples_per_span: usize,
    pub g_tol: f64,
    pub f_tol: f64,
    pub max_iterations: usize,
    pub history: usize,
    /// Extra optimization rounds with raised weights when verification fails.
    pub retry_rounds: usize,
    pub joint_sample_rate: f64,
    pub elbow: ElbowBranch,
    /// Record per-term costs for every optimizer iteration.
    pub trace_iterations: bool,
}

impl Default for EePlanConfig {
    fn default() -> Self {
        Self {
            smoothness_weight: 1.0,
            workspace_weight: 10.0,
            yaw_weight: 0.5,
            obstacle_weight: 50.0,
            workspace: WorkspaceParams {
                r_max: 0.55,
                r_min: 0.15,
                r_d: 0.3,
                z_d: 0.35,
                f_d: -0.1,
                k: 20.0,
                h_o: 1.0,
                h_l: 1.0,
            },
            workspace_cost_margin: 0.02,
            shape_from_goal: true,
            shape_inset: 0.2,
            verify_margin: 0.0,
            obstacle_threshold: 0.15,
            fit_samples_per_span: 10,
            check_samples_per_span: 50,
            g_tol: 1e-6,
            f_tol: 1e-8,
            max_iterations: 200,
            history: 8,
            retry_rounds: 3,
            joint_sample_rate: 100.0,
            elbow: ElbowBranch::Up,
            trace_iterations: false,
        }
    }
}

impl EePlanConfig {
    pub fn weights(&self) -> CostWeights<f64> {
        CostWeights {
            smoothness: self.smoothness_weight,
            workspace: self.workspace_weight,
            yaw: self.yaw_weight,
            obstacle: self.obstacle_weight,
        }
    }

    pub fn lbfgs(&self) -> LbfgsConfig<f64> {
        LbfgsConfig {
            g_tol: self.g_tol,
            f_tol: self.f_tol,
            max_iterations: self.max_iterations,
            history: self.history,
            ..LbfgsConfig::default()
        }
    }

    /// Workspace used inside the cost for a plan ending at `goal`.
    pub fn cost_workspace(&self, goal: V3) -> WorkspaceParams<f64> {
        let ws = self.workspace.shrunk(self.workspace_cost_margin);
        if self.shape_from_goal {
            ws.centered_on(goal, self.shape_inset)
        } else {
            ws
        }
    }
}

#[derive(Clone, Debug)]
pub struct EePlanRequest<'a> {
    pub guide: &'a GuideTrajectory,
    pub xve_start: V3,
    pub xve_goal: V3,
    pub config: &'a EePlanConfig,
    pub esdf: Option<Arc<EsdfGrid<f64>>>,
    /// Clearance radii used by verification (m).
    pub body_radius: f64,
    pub ee_radius: f64,
}

#[derive(Clone, Debug)]
pub struct EePlanResult {
    pub bezier: QuadraticBezier,
    pub initial_curve: BSplineCurve<f64>,
    pub ee_curve: BSplineCurve<f64>,
    pub relative_curve: BSplineCurve<f64>,
    pub fit_residual: f64,
    pub diagnostics: OptimizeDiagnostics,
    pub flags: VerifyFlags,
    /// Wall time of initialization and optimization (µs).
    pub planning_us: f64,
    /// Wall time of inverse kinematics (µs).
    pub ik_us: f64,
    /// Present when the workspace check passed.
    pub joint_trajectory: Option<JointTrajectory>,
    pub rounds: usize,
}

/// Initialization, optimization, verification and joint extraction.
pub fn plan(req: &EePlanRequest, arm: &ArmGeometry<f64>) -> Result<EePlanResult, EeError> {
    let cfg = req.config;
    let order = req.guide.curve.order();
    let n_ctrl = req.guide.curve.control_points().len();
    if n_ctrl < 2 * order + 2 {
        return Err(EeError::GuideTooShort {
            got: n_ctrl,
            needed: 2 * order + 2,
        });
    }
    for (which, p) in [("start", req.xve_start), ("goal", req.xve_goal)] {
        if !cfg.workspace.contains(p, 0.0) {
            return Err(EeError::OutsideWorkspace { which, point: p });
        }
    }
    let clock = Instant::now();
    let bezier = bezier_init(req.xve_start, req.xve_goal)?;
    let (initial, fit_residual) = build_initial_q(req.guide, &bezier, cfg.fit_samples_per_span)?;
    let mut weights = cfg.weights();
    let mut d_thr = cfg.obstacle_threshold;
    let mut q = initial.clone();
    let mut first_diag: Option<OptimizeDiagnostics> = None;
    let mut rounds = 0;
    let lbfgs = cfg.lbfgs();
    let (ee_curve, relative_curve, diagnostics, flags) = loop {
        rounds += 1;
        let ctx = CostContext::new(
            weights,
            cfg.cost_workspace(req.xve_goal),
            d_thr,
            req.guide.curve.control_points().to_vec(),
            req.guide.curve.knots().clone(),
            order,
            req.esdf.clone(),
        )?;
        let (next, mut diag) = optimize(&q, &ctx, &lbfgs, cfg.trace_iterations)?;
        if let Some(first) = &first_diag {
            diag.initial = first.initial.clone();
            diag.iterations += first.iterations;
            diag.evaluations += first.evaluations;
            let mut records = first.records.clone();
            records.append(&mut diag.records);
            diag.records = records;
        }
        q = next;
        let relative = q.subtract(&req.guide.curve)?;
        let flags = verify(
            &req.guide.curve,
            &q,
            &relative,
            &cfg.workspace,
            cfg.verify_margin,
            req.esdf.as_deref(),
            req.body_radius,
            req.ee_radius,
            cfg.check_samples_per_span,
        );
        if flags.feasible() || rounds > cfg.retry_rounds {
            break (q.clone(), relative, diag, flags);
        }
        if !flags.workspace_ok {
            weights.workspace *= 4.0;
        }
        if flags.min_ee_clearance <= req.ee_radius {
            // The hinge only sees control points, so a thin obstacle between
            // two of them needs a wider threshold rather than a larger weight.
            weights.obstacle *= 4.0;
            d_thr *= 1.5;
        }
        if flags.workspace_ok && flags.min_ee_clearance > req.ee_radius {
            // Body clearance is a property of the guide; nothing to retune.
            break (q.clone(), relative, diag, flags);
        }
        log::debug!(
            "ee verification failed ({flags:?}); retrying with {weights:?}, threshold {d_thr}"
        );
        first_diag = Some(diag);
    };
    let planning_us = clock.elapsed().as_secs_f64() * 1e6;

    let ik_clock = Instant::now();
    let joint_trajectory = if flags.workspace_ok {
        Some(extract_joint_trajectory(
            &relative_curve,
            arm,
            cfg.joint_sample_rate,
            cfg.elbow,
        )?)
    } else {
        None
    };
    let ik_us = ik_clock.elapsed().as_secs_f64() * 1e6;
    Ok(EePlanResult {
        bezier,
        initial_curve: initial,
        ee_curve,
        relative_curve,
        fit_residual,
        diagnostics,
        flags,
        planning_us,
        ik_us,
        joint_trajectory,
        rounds,
    })
}

/// Largest yaw step allowed between consecutive joint samples.
pub const MAX_YAW_STEP: f64 = PI / 2.0;
