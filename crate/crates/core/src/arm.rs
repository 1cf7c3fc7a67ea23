//! Yaw + pitch-pitch arm kinematics and the convex end-effector workspace.
//!
//! Positions are expressed in the virtual body frame: origin at the
//! multi-rotor center, axes parallel to the world frame. The arm plane is the
//! vertical plane spanned by the body x-axis rotated by yaw `psi`. Inside that
//! plane a point is `(h, z)` with `h` the horizontal reach along the plane.
//!
//! Joint zero is the hanging configuration: with `theta1 = theta2 = 0` both
//! links point along `-z`. Positive angles swing the links towards `+h`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArmError {
    #[error("joint {joint} = {value} rad outside limits [{lo}, {hi}]")]
    JointLimit {
        joint: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("target at distance {distance} m outside reach [{min}, {max}]")]
    Unreachable { distance: f64, min: f64, max: f64 },
    #[error("invalid arm geometry: {0}")]
    Geometry(String),
    #[error("invalid workspace parameters: {0}")]
    Workspace(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedJoint<T> {
    pub psi: T,
    pub theta1: T,
    pub theta2: T,
}

/// Which way the elbow bends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ElbowBranch {
    /// `theta2 <= 0`: the elbow sits counter-clockwise of the shoulder-target
    /// chord in the `(h, z)` plane, i.e. above it for targets ahead of the body.
    #[default]
    Up,
    /// `theta2 >= 0`.
    Down,
}

impl ElbowBranch {
    fn sign<T: Real>(self) -> T {
        match self {
            ElbowBranch::Up => -T::one(),
            ElbowBranch::Down => T::one(),
        }
    }

    pub fn other(self) -> Self {
        match self {
            ElbowBranch::Up => ElbowBranch::Down,
            ElbowBranch::Down => ElbowBranch::Up,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmGeometry<T> {
    pub l1: T,
    pub l2: T,
    /// Closed interval per pitch joint (rad).
    pub theta_limits: [[T; 2]; 2],
    /// Vector from the body center to the first joint axis (m).
    pub mount_offset: Vec3<T>,
}

impl<T: Real> ArmGeometry<T> {
    pub fn new(l1: T, l2: T) -> Self {
        let pi = T::PI();
        Self {
            l1,
            l2,
            theta_limits: [[-pi, pi], [-pi, pi]],
            mount_offset: Vec3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<(), ArmError> {
        if !(self.l1 > T::zero() && self.l2 > T::zero()) {
            return Err(ArmError::Geometry("link lengths must be positive".into()));
        }
        for (j, lim) in self.theta_limits.iter().enumerate() {
            if !(lim[0] <= lim[1]) {
                return Err(ArmError::Geometry(format!(
                    "joint {} limits are empty",
                    j + 1
                )));
            }
        }
        if !self.mount_offset.is_finite() {
            return Err(ArmError::Geometry("mount offset must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn max_reach(&self) -> T {
        self.l1 + self.l2
    }

    #[inline]
    pub fn min_reach(&self) -> T {
        (self.l1 - self.l2).abs()
    }

    fn check_limits(&self, t1: T, t2: T) -> Result<(), ArmError> {
        for (j, v) in [t1, t2].into_iter().enumerate() {
            let [lo, hi] = self.theta_limits[j];
            if !(v >= lo && v <= hi) {
                return Err(ArmError::JointLimit {
                    joint: j + 1,
                    value: v.as_f64(),
                    lo: lo.as_f64(),
                    hi: hi.as_f64(),
                });
            }
        }
        Ok(())
    }

    /// End-effector position in the virtual body frame.
    pub fn forward_kinematics(&self, j: &GeneralizedJoint<T>) -> Result<Vec3<T>, ArmError> {
        self.check_limits(j.theta1, j.theta2)?;
        Ok(self.forward_unchecked(j))
    }

    pub(crate) fn forward_unchecked(&self, j: &GeneralizedJoint<T>) -> Vec3<T> {
        let a12 = j.theta1 + j.theta2;
        let h = self.l1 * j.theta1.sin() + self.l2 * a12.sin();
        let z = -(self.l1 * j.theta1.cos() + self.l2 * a12.cos());
        let (s, c) = j.psi.sin_cos();
        self.mount_offset + Vec3::new(c * h, s * h, z)
    }

    /// Joint angles reaching `target` on the preferred branch, falling back to
    /// the other branch if the preferred one breaks a joint limit.
    ///
    /// `psi_hint` resolves the yaw when the target lies on the vertical axis
    /// through the mount point.
    pub fn inverse_kinematics(
        &self,
        target: Vec3<T>,
        branch: ElbowBranch,
        psi_hint: Option<T>,
    ) -> Result<(GeneralizedJoint<T>, ElbowBranch), ArmError> {
        match self.inverse_on_branch(target, branch, psi_hint) {
            Ok(j) => Ok((j, branch)),
            Err(ArmError::JointLimit { .. }) => {
                let other = branch.other();
                self.inverse_on_branch(target, other, psi_hint)
                    .map(|j| (j, other))
            }
            Err(e) => Err(e),
        }
    }

    /// Joint angles on exactly the requested branch.
    pub fn inverse_on_branch(
        &self,
        target: Vec3<T>,
        branch: ElbowBranch,
        psi_hint: Option<T>,
    ) -> Result<GeneralizedJoint<T>, ArmError> {
        let v = target - self.mount_offset;
        let dist = v.norm();
        let (lo, hi) = (self.min_reach(), self.max_reach());
        let slack = T::lit(1e-12) * hi;
        if !(dist >= lo - slack && dist <= hi + slack) {
            return Err(ArmError::Unreachable {
                distance: dist.as_f64(),
                min: lo.as_f64(),
                max: hi.as_f64(),
            });
        }
        let h_raw = v.xy_norm();
        let axis_tol = T::lit(1e-12) * hi;
        let psi = if h_raw <= axis_tol {
            psi_hint.unwrap_or_else(T::zero)
        } else {
            v.y.atan2(v.x)
        };
        let psi = normalize_angle(psi);
        // Project onto the arm plane; signed h keeps the hint usable on-axis.
        let (s, c) = psi.sin_cos();
        let h = c * v.x + s * v.y;
        let z = v.z;
        let (l1, l2) = (self.l1, self.l2);
        let cos2 = ((h * h + z * z - l1 * l1 - l2 * l2) / (T::lit(2.0) * l1 * l2))
            .max(-T::one())
            .min(T::one());
        let theta2 = branch.sign::<T>() * cos2.acos();
        let theta1 = h.atan2(-z) - (l2 * theta2.sin()).atan2(l1 + l2 * theta2.cos());
        let theta1 = normalize_angle(theta1);
        self.check_limits(theta1, theta2)?;
        Ok(GeneralizedJoint {
            psi,
            theta1,
            theta2,
        })
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle<T: Real>(a: T) -> T {
    let two_pi = T::lit(2.0 * PI);
    let mut r = a % two_pi;
    if r <= -T::PI() {
        r += two_pi;
    } else if r > T::PI() {
        r -= two_pi;
    }
    r
}

/// Convex workspace (sphere of radius `r_max` intersected with the slab
/// `-r_max <= z <= -r_min`) together with the shaping parameters of the
/// workspace cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceParams<T> {
    pub r_max: T,
    pub r_min: T,
    /// Radius where the radial cost peaks.
    pub r_d: T,
    /// Depth where the planar cost peaks (the peak sits at `z = -z_d`).
    pub z_d: T,
    /// Extreme value of both piecewise costs, reached at `r_d` and `-z_d`.
    /// Negative values make them signed-distance-like: below zero inside the
    /// region, zero on its faces, positive outside.
    pub f_d: T,
    /// Log-sum-exp sharpness.
    pub k: T,
    pub h_o: T,
    pub h_l: T,
}

impl<T: Real> WorkspaceParams<T> {
    pub fn validate(&self) -> Result<(), ArmError> {
        let z = T::zero();
        let err = |m: &str| Err(ArmError::Workspace(m.into()));
        if !(self.r_max > z && self.r_min >= z && self.r_min < self.r_max) {
            return err("need 0 <= r_min < r_max");
        }
        if !(self.r_d > z && self.r_d < self.r_max) {
            return err("need 0 < r_d < r_max");
        }
        if !(self.z_d > self.r_min && self.z_d < self.r_max) {
            return err("need r_min < z_d < r_max");
        }
        if !(self.f_d != z && self.f_d.is_finite()) {
            return err("need a finite, nonzero f_d");
        }
        if !(self.k > z) {
            return err("need k > 0");
        }
        if !(self.h_o >= z && self.h_l >= z) {
            return err("need h_o, h_l >= 0");
        }
        Ok(())
    }

    /// Closed-set membership with an inward margin.
    pub fn contains(&self, p: Vec3<T>, margin: T) -> bool {
        p.norm() <= self.r_max - margin
            && p.z >= -self.r_max + margin
            && p.z <= -self.r_min - margin
    }

    /// Distance by which `p` violates the workspace (zero when inside).
    pub fn violation(&self, p: Vec3<T>) -> T {
        let a = p.norm() - self.r_max;
        let b = -self.r_max - p.z;
        let c = p.z + self.r_min;
        a.max(b).max(c).max(T::zero())
    }

    /// Copy whose region is shrunk by `margin` on every face; shaping
    /// parameters are shifted with it.
    pub fn shrunk(&self, margin: T) -> Self {
        Self {
            r_max: self.r_max - margin,
            r_min: self.r_min + margin,
            ..*self
        }
    }

    /// Copy with the extremum placed at the radius and depth of `goal`,
    /// clamped to stay `inset` (fraction of each range) away from the faces.
    pub fn centered_on(&self, goal: Vec3<T>, inset: T) -> Self {
        let clamp = |v: T, lo: T, hi: T| {
            let pad = (hi - lo) * inset;
            v.max(lo + pad).min(hi - pad)
        };
        Self {
            r_d: clamp(goal.norm(), T::zero(), self.r_max),
            z_d: clamp(-goal.z, self.r_min, self.r_max),
            ..*self
        }
    }
}

/// Free-standing form of [`WorkspaceParams::contains`].
pub fn workspace_contains<T: Real>(ws: &WorkspaceParams<T>, p: Vec3<T>, margin: T) -> bool {
    ws.contains(p, margin)
}
