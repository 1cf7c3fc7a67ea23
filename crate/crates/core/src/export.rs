//! File output: sampled trajectories as CSV, curves and diagnostics as JSON.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::bspline::{BSplineCurve, SplineError};
use crate::ee_planner::{EePlanResult, IterationRecord, JointTrajectory, VerifyFlags};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

pub fn write_curve_json<W: Write>(curve: &BSplineCurve<f64>, w: W) -> Result<(), ExportError> {
    serde_json::to_writer_pretty(w, &curve.to_record())?;
    Ok(())
}

/// `t, x, y, z` at `count` uniform samples of the domain.
pub fn write_positions_csv<W: Write>(
    curve: &BSplineCurve<f64>,
    count: usize,
    w: W,
) -> Result<(), ExportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "x", "y", "z"])?;
    for (t, p) in curve.sample_uniform(count) {
        out.serialize((t, p.x, p.y, p.z))?;
    }
    out.flush()?;
    Ok(())
}

/// `t, psi, theta1, theta2`.
pub fn write_joints_csv<W: Write>(joints: &JointTrajectory, w: W) -> Result<(), ExportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "psi", "theta1", "theta2"])?;
    for s in &joints.samples {
        out.serialize((s.t, s.joint.psi, s.joint.theta1, s.joint.theta2))?;
    }
    out.flush()?;
    Ok(())
}

/// Body position, end-effector position and joint angles at the joint sample
/// times. Joint columns are left empty when no joint trajectory exists, in
/// which case `count` uniform samples are used.
pub fn write_bundle_csv<W: Write>(
    guide: &BSplineCurve<f64>,
    ee: &BSplineCurve<f64>,
    joints: Option<&JointTrajectory>,
    count: usize,
    w: W,
) -> Result<(), ExportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "t", "x", "y", "z", "xe_x", "xe_y", "xe_z", "psi", "theta1", "theta2",
    ])?;
    match joints {
        Some(j) => {
            for s in &j.samples {
                let x = guide.evaluate(s.t)?;
                let e = ee.evaluate(s.t)?;
                out.serialize((
                    s.t,
                    x.x,
                    x.y,
                    x.z,
                    e.x,
                    e.y,
                    e.z,
                    s.joint.psi,
                    s.joint.theta1,
                    s.joint.theta2,
                ))?;
            }
        }
        None => {
            for (t, x) in guide.sample_uniform(count) {
                let e = ee.evaluate(t)?;
                out.serialize((
                    t,
                    x.x,
                    x.y,
                    x.z,
                    e.x,
                    e.y,
                    e.z,
                    None::<f64>,
                    None::<f64>,
                    None::<f64>,
                ))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct TermValues {
    pub total: f64,
    pub smoothness: f64,
    pub workspace: f64,
    pub yaw: f64,
    pub obstacle: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EeDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub stop_reason: String,
    pub rounds: usize,
    pub initial_cost: TermValues,
    pub final_cost: TermValues,
    pub fit_residual: f64,
    pub planning_us: f64,
    pub ik_us: f64,
    pub flags: VerifyFlags,
    pub max_yaw_step: Option<f64>,
    pub trace: Vec<IterationRecord>,
}

impl EeDiagnostics {
    pub fn from_result(r: &EePlanResult) -> Self {
        let terms = |c: &crate::costs::CostReport<f64>| TermValues {
            total: c.total,
            smoothness: c.smoothness,
            workspace: c.workspace,
            yaw: c.yaw,
            obstacle: c.obstacle,
        };
        Self {
            iterations: r.diagnostics.iterations,
            evaluations: r.diagnostics.evaluations,
            stop_reason: format!("{:?}", r.diagnostics.reason),
            rounds: r.rounds,
            initial_cost: terms(&r.diagnostics.initial),
            final_cost: terms(&r.diagnostics.last),
            fit_residual: r.fit_residual,
            planning_us: r.planning_us,
            ik_us: r.ik_us,
            flags: r.flags,
            max_yaw_step: r.joint_trajectory.as_ref().map(|j| j.max_yaw_step()),
            trace: r.diagnostics.records.clone(),
        }
    }
}

pub fn write_json<W: Write, S: Serialize>(value: &S, w: W) -> Result<(), ExportError> {
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}
