//! Trajectory planning for a multi-rotor carrying a yaw + pitch-pitch arm.
//!
//! The multi-rotor is planned first as a guiding B-spline. The end-effector is
//! then planned as a second B-spline on the same knots, so the relative curve
//! (end-effector minus body) is itself a B-spline whose control points can be
//! kept inside a convex workspace. See [`ee_planner::plan`] for the end-to-end
//! entry point and [`sim_harness`] for scenario runs.
//!
//! The numeric modules are generic over [`Real`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`, which is what the planners and
//! the harness use.

// NaN-rejecting validation is written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod arm;
pub mod bspline;
pub mod checks;
pub mod costs;
pub mod ee_planner;
pub mod esdf;
pub mod export;
pub mod geometry;
pub mod guide_planner;
pub mod hull;
pub mod linalg;
pub mod optimizer;
pub mod scalar;
pub mod sim_harness;

pub use scalar::Real;

pub type Vec3 = geometry::Vec3<f64>;
pub type KnotVector = bspline::KnotVector<f64>;
pub type BSplineCurve = bspline::BSplineCurve<f64>;
pub type OccupancyGrid = esdf::OccupancyGrid<f64>;
pub type EsdfGrid = esdf::EsdfGrid<f64>;
pub type ArmGeometry = arm::ArmGeometry<f64>;
pub type WorkspaceParams = arm::WorkspaceParams<f64>;
pub type GeneralizedJoint = arm::GeneralizedJoint<f64>;
pub type CostContext = costs::CostContext<f64>;
pub type CostReport = costs::CostReport<f64>;

pub type Vec3f = geometry::Vec3<f32>;
pub type BSplineCurvef = bspline::BSplineCurve<f32>;
pub type EsdfGridf = esdf::EsdfGrid<f32>;
pub type ArmGeometryf = arm::ArmGeometry<f32>;
