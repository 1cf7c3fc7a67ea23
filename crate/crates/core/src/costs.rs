//! Cost terms over the end-effector control points and their gradients.
//!
//! The decision variables are the control points `Q` of the end-effector
//! curve. The guide control points `X` are fixed and `E_i = Q_i - X_i` is the
//! relative (virtual body frame) curve. Only `Q_order..=Q_{N-order}` are free;
//! every gradient entry outside that range is exactly zero.

use std::sync::Arc;

use thiserror::Error;

use crate::arm::WorkspaceParams;
use crate::bspline::{accel_coefficients, AccelCoefficients, KnotVector, SplineError};
use crate::esdf::EsdfGrid;
use crate::geometry::Vec3;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("expected {expected} control points, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("need at least {needed} control points for order {order}, got {got}")]
    TooShort {
        needed: usize,
        order: usize,
        got: usize,
    },
    #[error("invalid cost configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// Cubic pieces of the two workspace shaping functions.
///
/// Each piece is `b u^2 + a u^3` in a shifted argument `u`; coefficients are
/// chosen so the piece reaches `f_d` with zero slope at the extremum and joins
/// the neighbouring piece with value and slope zero at its other end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PiecewiseCoefficients<T> {
    pub a_o1: T,
    pub b_o1: T,
    pub a_o2: T,
    pub b_o2: T,
    pub a_l1: T,
    pub b_l1: T,
    pub a_l2: T,
    pub b_l2: T,
}

/// `(a, b)` with `b u^2 + a u^3 = f` and `2 b u + 3 a u^2 = 0` at `u = peak`.
fn cubic_peak<T: Real>(peak: T, f: T) -> (T, T) {
    let a = T::lit(-2.0) * f / (peak * peak * peak);
    let b = T::lit(3.0) * f / (peak * peak);
    (a, b)
}

pub fn derive_piecewise_coefficients<T: Real>(
    ws: &WorkspaceParams<T>,
) -> Result<PiecewiseCoefficients<T>, CostError> {
    ws.validate()
        .map_err(|e| CostError::Config(e.to_string()))?;
    let (a_o1, b_o1) = cubic_peak(ws.r_d, ws.f_d);
    let (a_o2, b_o2) = cubic_peak(ws.r_d - ws.r_max, ws.f_d);
    let (a_l1, b_l1) = cubic_peak(ws.r_max - ws.z_d, ws.f_d);
    let (a_l2, b_l2) = cubic_peak(ws.r_min - ws.z_d, ws.f_d);
    Ok(PiecewiseCoefficients {
        a_o1,
        b_o1,
        a_o2,
        b_o2,
        a_l1,
        b_l1,
        a_l2,
        b_l2,
    })
}

impl<T: Real> PiecewiseCoefficients<T> {
    /// Radial shaping function and its derivative in `r`.
    pub fn radial(&self, ws: &WorkspaceParams<T>, r: T) -> (T, T) {
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        if r <= ws.r_d {
            (
                self.b_o1 * r * r + self.a_o1 * r * r * r,
                two * self.b_o1 * r + three * self.a_o1 * r * r,
            )
        } else if r <= ws.r_max {
            let u = r - ws.r_max;
            (
                self.b_o2 * u * u + self.a_o2 * u * u * u,
                two * self.b_o2 * u + three * self.a_o2 * u * u,
            )
        } else {
            let u = r - ws.r_max;
            (u * u, two * u)
        }
    }

    /// Planar shaping function and its derivative in `z`.
    pub fn planar(&self, ws: &WorkspaceParams<T>, z: T) -> (T, T) {
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        if z <= -ws.r_max {
            let u = z + ws.r_max;
            (u * u, two * u)
        } else if z <= -ws.z_d {
            let u = z + ws.r_max;
            (
                self.b_l1 * u * u + self.a_l1 * u * u * u,
                two * self.b_l1 * u + three * self.a_l1 * u * u,
            )
        } else if z <= -ws.r_min {
            let u = z + ws.r_min;
            (
                self.b_l2 * u * u + self.a_l2 * u * u * u,
                two * self.b_l2 * u + three * self.a_l2 * u * u,
            )
        } else {
            let u = z + ws.r_min;
            (u * u, two * u)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostWeights<T> {
    pub smoothness: T,
    pub workspace: T,
    pub yaw: T,
    pub obstacle: T,
}

/// Everything the cost evaluation needs besides the decision variables.
#[derive(Clone, Debug)]
pub struct CostContext<T> {
    pub weights: CostWeights<T>,
    pub ws: WorkspaceParams<T>,
    pub coeffs: PiecewiseCoefficients<T>,
    /// Obstacle clearance threshold for the end-effector control points (m).
    pub d_thr: T,
    /// Regularisation of the x-y norm in the yaw term (m).
    pub yaw_eps: T,
    pub guide: Vec<Vec3<T>>,
    pub knots: KnotVector<T>,
    pub order: usize,
    /// `M_i` for `i = 0..=N-2`.
    pub accel: Vec<AccelCoefficients<T>>,
    pub esdf: Option<Arc<EsdfGrid<T>>>,
}

impl<T: Real> CostContext<T> {
    pub fn new(
        weights: CostWeights<T>,
        ws: WorkspaceParams<T>,
        d_thr: T,
        guide: Vec<Vec3<T>>,
        knots: KnotVector<T>,
        order: usize,
        esdf: Option<Arc<EsdfGrid<T>>>,
    ) -> Result<Self, CostError> {
        let coeffs = derive_piecewise_coefficients(&ws)?;
        let n = guide.len();
        if n < 2 * order + 1 {
            return Err(CostError::TooShort {
                needed: 2 * order + 1,
                order,
                got: n,
            });
        }
        if knots.len() != n + order + 1 {
            return Err(CostError::Config(format!(
                "{} knots for {n} control points of order {order}",
                knots.len()
            )));
        }
        for w in [
            weights.smoothness,
            weights.workspace,
            weights.yaw,
            weights.obstacle,
        ] {
            if !(w >= T::zero()) {
                return Err(CostError::Config("weights must be non-negative".into()));
            }
        }
        let accel = (0..n - 2)
            .map(|i| accel_coefficients(&knots, order, i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            weights,
            ws,
            coeffs,
            d_thr,
            yaw_eps: T::lit(1e-6),
            guide,
            knots,
            order,
            accel,
            esdf,
        })
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.guide.len()
    }

    /// Indices of the free control points, `order..=N-order`.
    #[inline]
    pub fn free_range(&self) -> std::ops::RangeInclusive<usize> {
        let n = self.guide.len() - 1;
        self.order..=n - self.order
    }

    fn check_len(&self, q: &[Vec3<T>]) -> Result<(), CostError> {
        if q.len() != self.guide.len() {
            return Err(CostError::LengthMismatch {
                expected: self.guide.len(),
                got: q.len(),
            });
        }
        Ok(())
    }

    pub fn relative(&self, q: &[Vec3<T>]) -> Vec<Vec3<T>> {
        q.iter().zip(&self.guide).map(|(a, b)| *a - *b).collect()
    }

    fn zero_pinned(&self, grad: &mut [Vec3<T>]) {
        let free = self.free_range();
        for (i, g) in grad.iter_mut().enumerate() {
            if !free.contains(&i) {
                *g = Vec3::zeros();
            }
        }
    }
}

/// Value and gradient of one term.
#[derive(Clone, Debug)]
pub struct TermEval<T> {
    pub value: T,
    pub gradient: Vec<Vec3<T>>,
}

/// Per-point workspace term and its gradient with respect to `E_i`.
pub fn workspace_point<T: Real>(ctx: &CostContext<T>, e: Vec3<T>) -> (T, Vec3<T>) {
    let ws = &ctx.ws;
    let r = e.norm();
    let (fo, dfo) = ctx.coeffs.radial(ws, r);
    let (fl, dfl) = ctx.coeffs.planar(ws, e.z);
    let ao = ws.h_o * ws.k * fo;
    let al = ws.h_l * ws.k * fl;
    let m = ao.max(al);
    let eo = (ao - m).exp();
    let el = (al - m).exp();
    let sum = eo + el;
    let value = (m + sum.ln()) / ws.k;
    let wo = ws.h_o * eo / sum;
    let wl = ws.h_l * el / sum;
    let grad_o = if r > T::zero() {
        e * (dfo / r)
    } else {
        Vec3::zeros()
    };
    let grad_l = Vec3::new(T::zero(), T::zero(), dfl);
    (value, grad_o * wo + grad_l * wl)
}

pub fn workspace_cost<T: Real>(
    q: &[Vec3<T>],
    ctx: &CostContext<T>,
) -> Result<TermEval<T>, CostError> {
    ctx.check_len(q)?;
    let mut grad = vec![Vec3::zeros(); q.len()];
    let mut value = T::zero();
    for i in ctx.free_range() {
        let (v, g) = workspace_point(ctx, q[i] - ctx.guide[i]);
        value += v;
        grad[i] = g;
    }
    Ok(TermEval {
        value,
        gradient: grad,
    })
}

/// Regularised unit x-y direction and its 2x2 Jacobian (symmetric).
fn unit_xy<T: Real>(e: Vec3<T>, eps: T) -> ([T; 2], [[T; 2]; 2]) {
    let sq = e.x * e.x + e.y * e.y + eps * eps;
    let norm = sq.sqrt();
    let n = [e.x / norm, e.y / norm];
    let c = T::one() / (sq * norm);
    let jac = [
        [(e.y * e.y + eps * eps) * c, -e.x * e.y * c],
        [-e.x * e.y * c, (e.x * e.x + eps * eps) * c],
    ];
    (n, jac)
}

pub fn yaw_rate_cost<T: Real>(
    q: &[Vec3<T>],
    ctx: &CostContext<T>,
) -> Result<TermEval<T>, CostError> {
    ctx.check_len(q)?;
    let mut grad = vec![Vec3::zeros(); q.len()];
    let mut value = T::zero();
    let free = ctx.free_range();
    let (lo, hi) = (*free.start(), *free.end());
    let two = T::lit(2.0);
    for i in lo..hi {
        let (ni, ji) = unit_xy(q[i] - ctx.guide[i], ctx.yaw_eps);
        let (nj, jj) = unit_xy(q[i + 1] - ctx.guide[i + 1], ctx.yaw_eps);
        let d = [nj[0] - ni[0], nj[1] - ni[1]];
        value += d[0] * d[0] + d[1] * d[1];
        // d/dE_i = -2 J_i^T d, d/dE_{i+1} = 2 J_{i+1}^T d.
        grad[i].x -= two * (ji[0][0] * d[0] + ji[1][0] * d[1]);
        grad[i].y -= two * (ji[0][1] * d[0] + ji[1][1] * d[1]);
        grad[i + 1].x += two * (jj[0][0] * d[0] + jj[1][0] * d[1]);
        grad[i + 1].y += two * (jj[0][1] * d[0] + jj[1][1] * d[1]);
    }
    Ok(TermEval {
        value,
        gradient: grad,
    })
}

/// Acceleration control points of the relative curve, `A_i` for
/// `i = order-2..=N-order`.
pub fn relative_accel<T: Real>(q: &[Vec3<T>], ctx: &CostContext<T>) -> Vec<(usize, Vec3<T>)> {
    let n = q.len() - 1;
    let s = ctx.order;
    (s - 2..=n - s)
        .map(|i| {
            let e = |k: usize| q[k] - ctx.guide[k];
            (i, ctx.accel[i].apply(e(i), e(i + 1), e(i + 2)))
        })
        .collect()
}

pub fn smoothness_cost<T: Real>(
    q: &[Vec3<T>],
    ctx: &CostContext<T>,
) -> Result<TermEval<T>, CostError> {
    ctx.check_len(q)?;
    if ctx.order < 2 {
        return Err(CostError::Config("smoothness needs order >= 2".into()));
    }
    let mut grad = vec![Vec3::zeros(); q.len()];
    let mut value = T::zero();
    let two = T::lit(2.0);
    for (i, a) in relative_accel(q, ctx) {
        value += a.norm_squared();
        let m = ctx.accel[i].0;
        grad[i] += a * (two * m[0]);
        grad[i + 1] += a * (two * m[1]);
        grad[i + 2] += a * (two * m[2]);
    }
    ctx.zero_pinned(&mut grad);
    Ok(TermEval {
        value,
        gradient: grad,
    })
}

/// Hinge penalty on one point: `(d - d_thr)^2` below the threshold.
pub fn obstacle_point<T: Real>(esdf: &EsdfGrid<T>, d_thr: T, p: Vec3<T>) -> (T, Vec3<T>) {
    let q = esdf.query_signed(p);
    let (d, grad_d) = if q.out_of_bounds {
        let inward = (q.clamped - p).normalized().unwrap_or_else(Vec3::zeros);
        (T::zero(), inward)
    } else {
        (q.distance, q.gradient)
    };
    if d > d_thr {
        return (T::zero(), Vec3::zeros());
    }
    let diff = d - d_thr;
    (diff * diff, grad_d * (T::lit(2.0) * diff))
}

pub fn obstacle_cost<T: Real>(
    q: &[Vec3<T>],
    ctx: &CostContext<T>,
) -> Result<TermEval<T>, CostError> {
    ctx.check_len(q)?;
    let mut grad = vec![Vec3::zeros(); q.len()];
    let mut value = T::zero();
    if let Some(esdf) = &ctx.esdf {
        for i in ctx.free_range() {
            let (v, g) = obstacle_point(esdf, ctx.d_thr, q[i]);
            value += v;
            grad[i] = g;
        }
    }
    Ok(TermEval {
        value,
        gradient: grad,
    })
}

#[derive(Clone, Debug)]
pub struct CostReport<T> {
    pub total: T,
    pub smoothness: T,
    pub workspace: T,
    pub yaw: T,
    pub obstacle: T,
    pub gradient: Vec<Vec3<T>>,
}

impl<T: Real> CostReport<T> {
    pub fn gradient_max_norm(&self) -> T {
        self.gradient
            .iter()
            .map(|g| g.max_abs())
            .fold(T::zero(), T::max)
    }
}

type TermFn<T> = fn(&[Vec3<T>], &CostContext<T>) -> Result<TermEval<T>, CostError>;

pub fn total_cost<T: Real>(
    q: &[Vec3<T>],
    ctx: &CostContext<T>,
) -> Result<CostReport<T>, CostError> {
    ctx.check_len(q)?;
    let w = ctx.weights;
    let mut grad = vec![Vec3::zeros(); q.len()];
    let mut terms = [T::zero(); 4];
    let evals: [(T, TermFn<T>); 4] = [
        (w.smoothness, smoothness_cost),
        (w.workspace, workspace_cost),
        (w.yaw, yaw_rate_cost),
        (w.obstacle, obstacle_cost),
    ];
    for (slot, (weight, f)) in evals.iter().enumerate() {
        let t = f(q, ctx)?;
        terms[slot] = t.value;
        if *weight != T::zero() {
            for (g, tg) in grad.iter_mut().zip(&t.gradient) {
                *g += *tg * *weight;
            }
        }
    }
    ctx.zero_pinned(&mut grad);
    let total =
        w.smoothness * terms[0] + w.workspace * terms[1] + w.yaw * terms[2] + w.obstacle * terms[3];
    Ok(CostReport {
        total,
        smoothness: terms[0],
        workspace: terms[1],
        yaw: terms[2],
        obstacle: terms[3],
        gradient: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esdf::{build_esdf, GridGeometry, OccupancyGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ws() -> WorkspaceParams<f64> {
        WorkspaceParams {
            r_max: 0.5,
            r_min: 0.15,
            r_d: 0.3,
            z_d: 0.3,
            f_d: 1.0,
            k: 10.0,
            h_o: 1.0,
            h_l: 1.0,
        }
    }

    fn weights(s: f64, w: f64, y: f64, d: f64) -> CostWeights<f64> {
        CostWeights {
            smoothness: s,
            workspace: w,
            yaw: y,
            obstacle: d,
        }
    }

    fn ctx_uniform(n: usize, w: CostWeights<f64>) -> CostContext<f64> {
        let guide = (0..n)
            .map(|i| Vec3::new(0.3 * i as f64, 0.0, 1.0))
            .collect();
        CostContext::new(
            w,
            ws(),
            0.2,
            guide,
            KnotVector::uniform(3, n, 1.0, 0.0),
            3,
            None,
        )
        .unwrap()
    }

    #[test]
    fn coefficient_example_values() {
        let ws = WorkspaceParams {
            r_d: 0.3,
            r_max: 0.5,
            f_d: 1.0,
            ..ws()
        };
        let c = derive_piecewise_coefficients(&ws).unwrap();
        // Solve b r^2 + a r^3 = 1, 2 b r + 3 a r^2 = 0 at r = 0.3 by elimination.
        let r: f64 = 0.3;
        let b = 3.0 / (r * r);
        let a = -2.0 * b / (3.0 * r);
        assert!((c.a_o1 - a).abs() < 1e-9 && (c.a_o1 + 74.074_074_074).abs() < 1e-6);
        assert!((c.b_o1 - b).abs() < 1e-9 && (c.b_o1 - 33.333_333_333).abs() < 1e-6);
        let (f, df) = c.radial(&ws, 0.3);
        assert!((f - 1.0).abs() < 1e-12 && df.abs() < 1e-10);
        let (f, df) = c.planar(&ws, -ws.z_d);
        assert!((f - 1.0).abs() < 1e-12 && df.abs() < 1e-10);
        let (f2, _) = c.planar(&ws, -ws.z_d + 1e-15);
        assert!((f2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn boundary_term_is_log_two_over_k() {
        let ctx = ctx_uniform(9, weights(0.0, 1.0, 0.0, 0.0));
        // On the sphere and on the lower plane simultaneously.
        let (v, _) = workspace_point(&ctx, Vec3::new(0.0, 0.0, -0.5));
        assert!((v - 2f64.ln() / 10.0).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_bracket() {
        let ctx = ctx_uniform(9, weights(0.0, 1.0, 0.0, 0.0));
        let w = ctx.ws;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let e = Vec3::new(
                rng.gen_range(-0.7..0.7),
                rng.gen_range(-0.7..0.7),
                rng.gen_range(-0.8..0.2),
            );
            let (v, _) = workspace_point(&ctx, e);
            let fo = ctx.coeffs.radial(&w, e.norm()).0 * w.h_o;
            let fl = ctx.coeffs.planar(&w, e.z).0 * w.h_l;
            let m = fo.max(fl);
            assert!(v >= m - 1e-12 && v <= m + 2f64.ln() / w.k + 1e-12);
        }
    }

    #[test]
    fn planar_slope_changes_sign_at_peak() {
        let ctx = ctx_uniform(9, weights(0.0, 1.0, 0.0, 0.0));
        let w = ctx.ws;
        let (_, above) = ctx.coeffs.planar(&w, -w.z_d + 0.01);
        let (_, below) = ctx.coeffs.planar(&w, -w.z_d - 0.01);
        assert!(above < 0.0 && below > 0.0);
    }

    #[test]
    fn yaw_terms() {
        let mut ctx = ctx_uniform(8, weights(0.0, 0.0, 1.0, 0.0));
        ctx.yaw_eps = 0.0;
        let n = ctx.n_points();
        let dir = Vec3::new(0.2, 0.1, -0.3);
        let q: Vec<_> = ctx.guide.iter().map(|x| *x + dir).collect();
        assert!(yaw_rate_cost(&q, &ctx).unwrap().value.abs() < 1e-20);
        let mut q2 = q.clone();
        q2[3] = ctx.guide[3] + Vec3::new(1.0, 0.0, -0.3);
        q2[4] = ctx.guide[4] + Vec3::new(0.0, 1.0, -0.3);
        for i in 5..n {
            q2[i] = ctx.guide[i] + Vec3::new(0.0, 1.0, -0.3);
        }
        // Free range is 3..=4: one pair, (1,0) -> (0,1).
        let v = yaw_rate_cost(&q2, &ctx).unwrap().value;
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn smoothness_single_bump() {
        let ctx = ctx_uniform(10, weights(1.0, 0.0, 0.0, 0.0));
        let mut q = ctx.guide.clone();
        q[5] += Vec3::new(1.0, 0.0, 0.0);
        let t = smoothness_cost(&q, &ctx).unwrap();
        // A_3 = E_5, A_4 = -2 E_5, A_5 = E_5 -> 1 + 4 + 1.
        assert!((t.value - 6.0).abs() < 1e-12);
    }

    #[test]
    fn pinned_gradients_are_zero() {
        let ctx = ctx_uniform(12, weights(1.0, 1.0, 1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q: Vec<_> = ctx
            .guide
            .iter()
            .map(|x| {
                *x + Vec3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.45..-0.2),
                )
            })
            .collect();
        let rep = total_cost(&q, &ctx).unwrap();
        let free = ctx.free_range();
        for (i, g) in rep.gradient.iter().enumerate() {
            if !free.contains(&i) {
                assert_eq!(*g, Vec3::zeros());
            }
        }
        let w = ctx.weights;
        let sum = w.smoothness * rep.smoothness
            + w.workspace * rep.workspace
            + w.yaw * rep.yaw
            + w.obstacle * rep.obstacle;
        assert!((rep.total - sum).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_zero_total() {
        let ctx = ctx_uniform(9, weights(0.0, 0.0, 0.0, 0.0));
        let q: Vec<_> = ctx
            .guide
            .iter()
            .map(|x| *x + Vec3::new(0.1, 0.0, -0.3))
            .collect();
        let rep = total_cost(&q, &ctx).unwrap();
        assert_eq!(rep.total, 0.0);
        assert!(rep.gradient.iter().all(|g| *g == Vec3::zeros()));
    }

    #[test]
    fn length_mismatch() {
        let ctx = ctx_uniform(9, weights(1.0, 0.0, 0.0, 0.0));
        assert!(matches!(
            total_cost(&ctx.guide[..5], &ctx),
            Err(CostError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn obstacle_hinge() {
        let mut g =
            OccupancyGrid::<f64>::new(GridGeometry::new(Vec3::zeros(), 0.1, [20, 20, 20]).unwrap());
        g.set([10, 10, 10], true);
        let esdf = build_esdf(&g, 5.0);
        let center = esdf.geometry().center([10, 10, 10]);
        let d_thr: f64 = 0.4;
        // Voxel center two cells away: stored distance 0.2 = d_thr / 2.
        let (v, _) = obstacle_point(&esdf, d_thr, center + Vec3::new(0.2, 0.0, 0.0));
        assert!((v - 0.04).abs() < 1e-12);
        let (v, gr) = obstacle_point(&esdf, d_thr, center + Vec3::new(0.5, 0.0, 0.0));
        assert_eq!(v, 0.0);
        assert_eq!(gr, Vec3::zeros());
        // Outside the grid: d = 0 and the gradient points back in.
        let (v, gr) = obstacle_point(&esdf, d_thr, Vec3::new(-0.5, 1.0, 1.0));
        assert!((v - d_thr * d_thr).abs() < 1e-12);
        assert!(gr.x < 0.0);
    }
}
