//! Non-uniform B-spline curves in 3-space.
//!
//! Curves are stored as `order` (the polynomial degree, `3` for the cubic
//! trajectories used by the planners), `N + 1` control points and a knot
//! vector `t_0..t_M` with `M = N + order + 1`. The valid evaluation domain is
//! `[t_order, t_{N+1}]`.
//!
//! Knot vectors are reference counted. Curves that must stay knot-aligned
//! (the guide `X`, the end-effector `Q` and the relative curve `E = Q - X`)
//! hold clones of the same handle, so alignment is a property of how they were
//! built rather than something re-validated on every call.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::linalg::SquareMatrix;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("knot vector is not non-decreasing at index {0}")]
    UnsortedKnots(usize),
    #[error("knot vector contains a non-finite value at index {0}")]
    NonFiniteKnot(usize),
    #[error(
        "expected {expected} knots for {control_points} control points of order {order}, got {got}"
    )]
    KnotCount {
        expected: usize,
        got: usize,
        control_points: usize,
        order: usize,
    },
    #[error("order {order} needs at least {} control points, got {got}", order + 1)]
    TooFewControlPoints { order: usize, got: usize },
    #[error("parameter {t} outside curve domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("curves are not knot-aligned: {0}")]
    Incompatible(&'static str),
    #[error("segment {index} out of range (curve has {count} segments)")]
    SegmentOutOfRange { index: usize, count: usize },
    #[error("zero knot span at index {0}")]
    SingularSpan(usize),
    #[error("fit failed: {0}")]
    Fit(String),
}

/// Shared, immutable knot vector.
#[derive(Clone, Debug)]
pub struct KnotVector<T> {
    knots: Arc<Vec<T>>,
}

impl<T: Real> KnotVector<T> {
    pub fn new(knots: Vec<T>) -> Result<Self, SplineError> {
        for (i, k) in knots.iter().enumerate() {
            if !k.is_finite() {
                return Err(SplineError::NonFiniteKnot(i));
            }
        }
        if let Some(i) = knots.windows(2).position(|w| w[1] < w[0]) {
            return Err(SplineError::UnsortedKnots(i + 1));
        }
        Ok(Self {
            knots: Arc::new(knots),
        })
    }

    /// Uniform knots with spacing `dt` such that a curve with `n_control`
    /// control points of the given order has domain starting at `t_start`.
    pub fn uniform(order: usize, n_control: usize, dt: T, t_start: T) -> Self {
        let m = n_control + order + 1;
        let knots = (0..m)
            .map(|i| t_start + dt * T::lit(i as f64 - order as f64))
            .collect();
        Self {
            knots: Arc::new(knots),
        }
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.knots
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.knots.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// `t_{i+span} - t_i`.
    #[inline]
    pub fn span(&self, i: usize, span: usize) -> T {
        self.knots[i + span] - self.knots[i]
    }

    /// True when both handles point at the same allocation.
    #[inline]
    pub fn same_handle(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.knots, &other.knots)
    }

    /// Handle identity or element-wise equality.
    pub fn aligned_with(&self, other: &Self) -> bool {
        self.same_handle(other) || self.knots == other.knots
    }

    pub fn is_uniform(&self, rel_tol: T) -> bool {
        let k = self.as_slice();
        if k.len() < 2 {
            return true;
        }
        let dt = k[1] - k[0];
        k.windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= rel_tol * dt.abs())
    }
}

/// Stencil weights producing one acceleration control point from three
/// consecutive control points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccelCoefficients<T>(pub [T; 3]);

impl<T: Real> AccelCoefficients<T> {
    #[inline]
    pub fn apply(&self, p0: Vec3<T>, p1: Vec3<T>, p2: Vec3<T>) -> Vec3<T> {
        p0 * self.0[0] + p1 * self.0[1] + p2 * self.0[2]
    }
}

/// Boundary control points held fixed during a fit.
#[derive(Clone, Debug, Default)]
pub struct BoundaryPins<T> {
    pub head: Vec<Vec3<T>>,
    pub tail: Vec<Vec3<T>>,
}

impl<T: Real> BoundaryPins<T> {
    pub fn none() -> Self {
        Self {
            head: Vec::new(),
            tail: Vec::new(),
        }
    }

    /// Rest-to-rest boundary: `count` copies of each end point.
    pub fn rest(start: Vec3<T>, goal: Vec3<T>, count: usize) -> Self {
        Self {
            head: vec![start; count],
            tail: vec![goal; count],
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult<T> {
    pub curve: BSplineCurve<T>,
    /// Root mean square of the sample residuals (m).
    pub residual_rms: T,
}

#[derive(Clone, Debug)]
pub struct BSplineCurve<T> {
    order: usize,
    control_points: Vec<Vec3<T>>,
    knots: KnotVector<T>,
}

impl<T: Real> BSplineCurve<T> {
    pub fn new(
        order: usize,
        control_points: Vec<Vec3<T>>,
        knots: KnotVector<T>,
    ) -> Result<Self, SplineError> {
        if control_points.len() < order + 1 {
            return Err(SplineError::TooFewControlPoints {
                order,
                got: control_points.len(),
            });
        }
        let expected = control_points.len() + order + 1;
        if knots.len() != expected {
            return Err(SplineError::KnotCount {
                expected,
                got: knots.len(),
                control_points: control_points.len(),
                order,
            });
        }
        Ok(Self {
            order,
            control_points,
            knots,
        })
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn control_points(&self) -> &[Vec3<T>] {
        &self.control_points
    }

    #[inline]
    pub fn knots(&self) -> &KnotVector<T> {
        &self.knots
    }

    /// Index of the last control point, `N`.
    #[inline]
    pub fn last_index(&self) -> usize {
        self.control_points.len() - 1
    }

    /// Same knots, different control points.
    pub fn with_control_points(&self, control_points: Vec<Vec3<T>>) -> Result<Self, SplineError> {
        Self::new(self.order, control_points, self.knots.clone())
    }

    pub fn domain(&self) -> (T, T) {
        let k = self.knots.as_slice();
        (k[self.order], k[self.control_points.len()])
    }

    pub fn duration(&self) -> T {
        let (a, b) = self.domain();
        b - a
    }

    /// Knot span index `k` with `t_k <= t < t_{k+1}`, clamped into `[order, N]`.
    fn find_span(&self, t: T) -> usize {
        let k = self.knots.as_slice();
        let n = self.last_index();
        let (lo, hi) = (self.order, n);
        if t >= k[hi + 1] {
            // Right end of the domain: last non-empty span.
            let mut s = hi;
            while s > lo && k[s] >= k[s + 1] {
                s -= 1;
            }
            return s;
        }
        // Largest index in [lo, hi] with k[idx] <= t.
        let upper = k[lo..=hi].partition_point(|&kv| kv <= t);
        (lo + upper.saturating_sub(1)).max(lo)
    }

    fn check_domain(&self, t: T) -> Result<(), SplineError> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return Err(SplineError::OutOfDomain {
                t: t.as_f64(),
                lo: lo.as_f64(),
                hi: hi.as_f64(),
            });
        }
        Ok(())
    }

    /// Non-zero basis values at `t`: returns the span `k` and
    /// `[B_{k-order}(t), ..., B_k(t)]`.
    ///
    /// Triangular Cox–de Boor evaluation; `0/0` is taken as zero.
    pub fn basis(&self, t: T) -> Result<(usize, Vec<T>), SplineError> {
        self.check_domain(t)?;
        let span = self.find_span(t);
        Ok((
            span,
            basis_at_span(self.knots.as_slice(), self.order, span, t),
        ))
    }

    pub fn evaluate(&self, t: T) -> Result<Vec3<T>, SplineError> {
        let (span, basis) = self.basis(t)?;
        let first = span - self.order;
        let mut p = Vec3::zeros();
        for (j, b) in basis.iter().enumerate() {
            p += self.control_points[first + j] * *b;
        }
        Ok(p)
    }

    /// `count` evenly spaced samples over the domain, endpoints included.
    pub fn sample_uniform(&self, count: usize) -> Vec<(T, Vec3<T>)> {
        let (lo, hi) = self.domain();
        let count = count.max(2);
        (0..count)
            .map(|i| {
                let t = if i + 1 == count {
                    hi
                } else {
                    lo + (hi - lo) * T::lit(i as f64 / (count - 1) as f64)
                };
                (t, self.evaluate(t).expect("sample inside domain"))
            })
            .collect()
    }

    /// Derivative curve, one order lower, on the knot vector with its first
    /// and last knot removed.
    pub fn derivative(&self) -> Result<Self, SplineError> {
        if self.order == 0 {
            return Err(SplineError::Incompatible(
                "cannot differentiate an order-0 curve",
            ));
        }
        let s = self.order;
        let k = self.knots.as_slice();
        let order_t = T::lit(s as f64);
        let pts = self
            .control_points
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let span = k[i + s + 1] - k[i + 1];
                if span > T::zero() {
                    (w[1] - w[0]) * (order_t / span)
                } else {
                    Vec3::zeros()
                }
            })
            .collect();
        let knots = KnotVector::new(k[1..k.len() - 1].to_vec())?;
        Self::new(s - 1, pts, knots)
    }

    /// Number of polynomial segments, `N + 1 - order`.
    pub fn segment_count(&self) -> usize {
        self.control_points.len() - self.order
    }

    /// Control points whose convex hull contains segment `index`, which
    /// covers `[t_{order+index}, t_{order+index+1}]`.
    pub fn segment_hull(&self, index: usize) -> Result<&[Vec3<T>], SplineError> {
        let count = self.segment_count();
        if index >= count {
            return Err(SplineError::SegmentOutOfRange { index, count });
        }
        Ok(&self.control_points[index..=index + self.order])
    }

    pub fn segment_span(&self, index: usize) -> Result<(T, T), SplineError> {
        let count = self.segment_count();
        if index >= count {
            return Err(SplineError::SegmentOutOfRange { index, count });
        }
        let k = self.knots.as_slice();
        Ok((k[self.order + index], k[self.order + index + 1]))
    }

    /// Stencil `M_i` for acceleration control point `i`.
    pub fn accel_coefficients(&self, i: usize) -> Result<AccelCoefficients<T>, SplineError> {
        accel_coefficients(&self.knots, self.order, i)
    }

    /// All acceleration control points `A_0..A_{N-2}`.
    pub fn accel_control_points(&self) -> Result<Vec<Vec3<T>>, SplineError> {
        let n = self.control_points.len();
        if self.order < 2 || n < 3 {
            return Ok(Vec::new());
        }
        (0..n - 2)
            .map(|i| {
                let m = self.accel_coefficients(i)?;
                let p = &self.control_points;
                Ok(m.apply(p[i], p[i + 1], p[i + 2]))
            })
            .collect()
    }

    /// Control-point-wise difference `self - other`; both curves must share
    /// order and knots.
    pub fn subtract(&self, other: &Self) -> Result<Self, SplineError> {
        if self.order != other.order {
            return Err(SplineError::Incompatible("order differs"));
        }
        if self.control_points.len() != other.control_points.len() {
            return Err(SplineError::Incompatible("control point count differs"));
        }
        if !self.knots.aligned_with(&other.knots) {
            return Err(SplineError::Incompatible("knot vectors differ"));
        }
        let pts = self
            .control_points
            .iter()
            .zip(&other.control_points)
            .map(|(a, b)| *a - *b)
            .collect();
        Ok(Self {
            order: self.order,
            control_points: pts,
            knots: self.knots.clone(),
        })
    }

    /// Control-point-wise sum.
    pub fn add(&self, other: &Self) -> Result<Self, SplineError> {
        let neg = Self {
            order: other.order,
            control_points: other.control_points.iter().map(|p| -*p).collect(),
            knots: other.knots.clone(),
        };
        self.subtract(&neg)
    }

    pub fn to_record(&self) -> CurveRecord {
        CurveRecord {
            order: self.order,
            knots: self.knots.as_slice().iter().map(|k| k.as_f64()).collect(),
            control_points: self
                .control_points
                .iter()
                .map(|p| [p.x.as_f64(), p.y.as_f64(), p.z.as_f64()])
                .collect(),
        }
    }

    pub fn from_record(rec: &CurveRecord) -> Result<Self, SplineError> {
        let knots = KnotVector::new(rec.knots.iter().map(|k| T::lit(*k)).collect())?;
        let pts = rec
            .control_points
            .iter()
            .map(|p| Vec3::new(T::lit(p[0]), T::lit(p[1]), T::lit(p[2])))
            .collect();
        Self::new(rec.order, pts, knots)
    }
}

pub(crate) fn basis_at_span<T: Real>(k: &[T], order: usize, span: usize, t: T) -> Vec<T> {
    let mut n = vec![T::zero(); order + 1];
    let mut left = vec![T::zero(); order + 1];
    let mut right = vec![T::zero(); order + 1];
    n[0] = T::one();
    for j in 1..=order {
        left[j] = t - k[span + 1 - j];
        right[j] = k[span + j] - t;
        let mut saved = T::zero();
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == T::zero() {
                T::zero()
            } else {
                n[r] / denom
            };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

pub fn accel_coefficients<T: Real>(
    knots: &KnotVector<T>,
    order: usize,
    i: usize,
) -> Result<AccelCoefficients<T>, SplineError> {
    let s = order;
    if s < 2 {
        return Err(SplineError::Incompatible("acceleration needs order >= 2"));
    }
    if i + 2 + s > knots.len() {
        return Err(SplineError::SegmentOutOfRange {
            index: i,
            count: knots.len().saturating_sub(s + 2),
        });
    }
    let t1 = knots.span(i + 1, s);
    let t2 = knots.span(i + 2, s);
    let t2m = knots.span(i + 2, s - 1);
    for (idx, span) in [(i + 1, t1), (i + 2, t2), (i + 2, t2m)] {
        if !(span > T::zero()) {
            return Err(SplineError::SingularSpan(idx));
        }
    }
    let scale = T::lit((s * (s - 1)) as f64) / t2m;
    let a = T::one() / t1;
    let c = T::one() / t2;
    Ok(AccelCoefficients([scale * a, -scale * (c + a), scale * c]))
}

/// Least-squares fit of control points on the given knots.
///
/// The first `pins.head.len()` and last `pins.tail.len()` control points are
/// fixed to the pinned values; the remaining ones minimise the sum of squared
/// position residuals at the samples.
pub fn fit_from_samples<T: Real>(
    samples: &[(T, Vec3<T>)],
    knots: &KnotVector<T>,
    order: usize,
    pins: &BoundaryPins<T>,
) -> Result<FitResult<T>, SplineError> {
    if knots.len() < 2 * order + 2 {
        return Err(SplineError::Fit("knot vector too short for order".into()));
    }
    let n_ctrl = knots.len() - order - 1;
    let head = pins.head.len();
    let tail = pins.tail.len();
    if head + tail > n_ctrl {
        return Err(SplineError::Fit(format!(
            "{} pinned control points exceed the {n_ctrl} available",
            head + tail
        )));
    }
    let n_free = n_ctrl - head - tail;
    let mut pts = vec![Vec3::zeros(); n_ctrl];
    pts[..head].copy_from_slice(&pins.head);
    pts[n_ctrl - tail..].copy_from_slice(&pins.tail);
    let template = BSplineCurve::new(order, pts.clone(), knots.clone())?;

    if n_free > 0 {
        if samples.len() < n_free {
            return Err(SplineError::Fit(format!(
                "{} samples for {n_free} free control points",
                samples.len()
            )));
        }
        let mut normal = SquareMatrix::zeros(n_free);
        let mut rhs = [
            vec![T::zero(); n_free],
            vec![T::zero(); n_free],
            vec![T::zero(); n_free],
        ];
        for (t, p) in samples {
            let (span, basis) = template.basis(*t)?;
            let first = span - order;
            // Residual target after removing pinned contributions.
            let mut target = *p;
            for (j, b) in basis.iter().enumerate() {
                let idx = first + j;
                if idx < head || idx >= n_ctrl - tail {
                    target -= pts[idx] * *b;
                }
            }
            for (a, ba) in basis.iter().enumerate() {
                let ia = first + a;
                if ia < head || ia >= n_ctrl - tail {
                    continue;
                }
                let fa = ia - head;
                for d in 0..3 {
                    rhs[d][fa] += *ba * target[d];
                }
                for (b, bb) in basis.iter().enumerate() {
                    let ib = first + b;
                    if ib < head || ib >= n_ctrl - tail {
                        continue;
                    }
                    normal.add_to(fa, ib - head, *ba * *bb);
                }
            }
        }
        let chol = normal
            .cholesky(T::lit(1e-13).max(T::epsilon() * T::lit(16.0)))
            .ok_or_else(|| SplineError::Fit("normal equations are rank deficient".into()))?;
        let sol: Vec<Vec<T>> = rhs.iter().map(|r| chol.solve(r)).collect();
        for f in 0..n_free {
            pts[head + f] = Vec3::new(sol[0][f], sol[1][f], sol[2][f]);
        }
    }

    let curve = BSplineCurve::new(order, pts, knots.clone())?;
    let mut sq = T::zero();
    for (t, p) in samples {
        sq += (curve.evaluate(*t)? - *p).norm_squared();
    }
    let residual_rms = if samples.is_empty() {
        T::zero()
    } else {
        (sq / T::lit(samples.len() as f64)).sqrt()
    };
    Ok(FitResult {
        curve,
        residual_rms,
    })
}

/// Plain-data curve record used for dumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub order: usize,
    pub knots: Vec<f64>,
    pub control_points: Vec<[f64; 3]>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3<f64> {
        Vec3::new(x, y, z)
    }

    /// Textbook recursive basis, used as an independent oracle.
    fn cox_de_boor(k: &[f64], i: usize, p: usize, t: f64, last_span: usize) -> f64 {
        if p == 0 {
            // The right end of the domain belongs to the last non-empty span.
            if t == k[last_span + 1] {
                return if i == last_span { 1.0 } else { 0.0 };
            }
            return if k[i] <= t && t < k[i + 1] { 1.0 } else { 0.0 };
        }
        let mut out = 0.0;
        let d1 = k[i + p] - k[i];
        if d1 != 0.0 {
            out += (t - k[i]) / d1 * cox_de_boor(k, i, p - 1, t, last_span);
        }
        let d2 = k[i + p + 1] - k[i + 1];
        if d2 != 0.0 {
            out += (k[i + p + 1] - t) / d2 * cox_de_boor(k, i + 1, p - 1, t, last_span);
        }
        out
    }

    fn direct_eval(c: &BSplineCurve<f64>, t: f64) -> Vec3<f64> {
        let k = c.knots().as_slice();
        let n = c.last_index();
        let mut last_span = n;
        while k[last_span] >= k[last_span + 1] {
            last_span -= 1;
        }
        let mut p = Vec3::zeros();
        for (i, cp) in c.control_points().iter().enumerate() {
            p += *cp * cox_de_boor(k, i, c.order(), t, last_span);
        }
        p
    }

    fn uniform_line() -> BSplineCurve<f64> {
        let pts = vec![
            v(0.0, 0.0, 0.0),
            v(1.0, 0.0, 0.0),
            v(2.0, 0.0, 0.0),
            v(3.0, 0.0, 0.0),
        ];
        BSplineCurve::new(3, pts, KnotVector::uniform(3, 4, 1.0, 0.0)).unwrap()
    }

    #[test]
    fn constant_curve_is_constant() {
        let p = v(0.3, -1.2, 2.0);
        let knots =
            KnotVector::new(vec![0.0, 0.1, 0.5, 0.7, 1.0, 1.6, 1.7, 2.5, 3.0, 3.2]).unwrap();
        let c = BSplineCurve::new(3, vec![p; 6], knots).unwrap();
        let (lo, hi) = c.domain();
        for i in 0..=50 {
            let t = lo + (hi - lo) * i as f64 / 50.0;
            assert!((c.evaluate(t).unwrap() - p).max_abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_segment_midpoint() {
        let c = uniform_line();
        // Single segment on [t_3, t_4] = [0, 1].
        let mid = c.evaluate(0.5).unwrap();
        assert!((mid - v(1.5, 0.0, 0.0)).max_abs() < 1e-12);
        let oracle = direct_eval(&c, 0.5);
        assert!((mid - oracle).max_abs() < 1e-12);
    }

    #[test]
    fn matches_recursive_oracle_on_nonuniform_knots() {
        let knots =
            KnotVector::new(vec![0.0, 0.0, 0.3, 0.5, 0.6, 1.1, 1.5, 1.5, 2.0, 2.4, 3.0]).unwrap();
        let pts: Vec<_> = (0..7)
            .map(|i| v(i as f64, (i as f64 * 0.7).sin(), (i * i) as f64 * 0.1))
            .collect();
        let c = BSplineCurve::new(3, pts, knots).unwrap();
        let (lo, hi) = c.domain();
        for i in 0..=200 {
            let t = lo + (hi - lo) * i as f64 / 200.0;
            let a = c.evaluate(t).unwrap();
            let b = direct_eval(&c, t);
            assert!((a - b).max_abs() < 1e-12, "t={t}: {a:?} vs {b:?}");
        }
    }

    #[test]
    fn collinear_control_points_stay_collinear() {
        let c = uniform_line();
        for i in 0..=20 {
            let p = c.evaluate(i as f64 / 20.0).unwrap();
            assert!(p.y.abs() < 1e-15 && p.z.abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_domain_is_error() {
        let c = uniform_line();
        assert!(matches!(
            c.evaluate(-0.01),
            Err(SplineError::OutOfDomain { .. })
        ));
        assert!(matches!(
            c.evaluate(1.01),
            Err(SplineError::OutOfDomain { .. })
        ));
        assert!(c.evaluate(1.0).is_ok());
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            KnotVector::new(vec![0.0, 1.0, 0.5]),
            Err(SplineError::UnsortedKnots(2))
        ));
        let knots = KnotVector::uniform(3, 4, 1.0, 0.0);
        assert!(matches!(
            BSplineCurve::new(3, vec![v(0.0, 0.0, 0.0); 3], knots.clone()),
            Err(SplineError::TooFewControlPoints { .. })
        ));
        assert!(matches!(
            BSplineCurve::new(3, vec![v(0.0, 0.0, 0.0); 5], knots),
            Err(SplineError::KnotCount { .. })
        ));
    }

    #[test]
    fn subtract_self_is_zero_and_offset_is_constant() {
        let a = uniform_line();
        let z = a.subtract(&a).unwrap();
        assert!(z.control_points().iter().all(|p| p.max_abs() == 0.0));
        let c = v(0.1, 0.2, -0.3);
        let shifted = a
            .with_control_points(a.control_points().iter().map(|p| *p + c).collect())
            .unwrap();
        let d = shifted.subtract(&a).unwrap();
        assert!((d.evaluate(0.37).unwrap() - c).max_abs() < 1e-12);
        assert!(d.knots().same_handle(a.knots()));
    }

    #[test]
    fn subtract_rejects_misaligned() {
        let a = uniform_line();
        let other = BSplineCurve::new(
            3,
            a.control_points().to_vec(),
            KnotVector::uniform(3, 4, 2.0, 0.0),
        )
        .unwrap();
        assert!(matches!(
            a.subtract(&other),
            Err(SplineError::Incompatible(_))
        ));
    }

    #[test]
    fn segment_hull_indices() {
        let pts: Vec<_> = (0..7).map(|i| v(i as f64, 0.0, 0.0)).collect();
        let c = BSplineCurve::new(3, pts.clone(), KnotVector::uniform(3, 7, 1.0, 0.0)).unwrap();
        assert_eq!(c.segment_count(), 4);
        assert_eq!(c.segment_hull(2).unwrap(), &pts[2..6]);
        assert!(matches!(
            c.segment_hull(4),
            Err(SplineError::SegmentOutOfRange { .. })
        ));
    }

    #[test]
    fn uniform_accel_stencil() {
        let knots = KnotVector::uniform(3, 6, 1.0, 0.0);
        for i in 0..4 {
            assert_eq!(
                accel_coefficients(&knots, 3, i).unwrap().0,
                [1.0, -2.0, 1.0]
            );
        }
        let knots = KnotVector::uniform(3, 6, 0.5, 0.0);
        assert_eq!(
            accel_coefficients(&knots, 3, 1).unwrap().0,
            [4.0, -8.0, 4.0]
        );
    }

    #[test]
    fn accel_control_point_example() {
        let pts = vec![
            v(0.0, 0.0, 0.0),
            v(1.0, 0.0, 0.0),
            v(4.0, 0.0, 0.0),
            v(4.0, 0.0, 0.0),
        ];
        let c = BSplineCurve::new(3, pts, KnotVector::uniform(3, 4, 1.0, 0.0)).unwrap();
        let a = c.accel_control_points().unwrap();
        assert_eq!(a[0], v(2.0, 0.0, 0.0));
    }

    #[test]
    fn singular_span_is_reported() {
        let knots = KnotVector::new(vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(
            accel_coefficients(&knots, 3, 0),
            Err(SplineError::SingularSpan(_))
        ));
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let knots =
            KnotVector::new(vec![0.0, 0.2, 0.5, 0.9, 1.0, 1.4, 2.1, 2.2, 2.9, 3.3]).unwrap();
        let pts: Vec<_> = (0..6)
            .map(|i| v((i as f64).sqrt(), (i as f64).cos(), 0.2 * i as f64))
            .collect();
        let c = BSplineCurve::new(3, pts, knots).unwrap();
        let d = c.derivative().unwrap();
        let h = 1e-6;
        for t in [1.05, 1.3, 1.8, 2.05] {
            let fd = (c.evaluate(t + h).unwrap() - c.evaluate(t - h).unwrap()) / (2.0 * h);
            assert!((d.evaluate(t).unwrap() - fd).max_abs() < 1e-6);
        }
    }

    #[test]
    fn fit_round_trip_and_constant() {
        let knots = KnotVector::new(vec![
            0.0, 0.4, 0.7, 1.0, 1.6, 2.0, 2.3, 3.1, 3.5, 3.6, 4.2, 4.8,
        ])
        .unwrap();
        let pts: Vec<_> = (0..8)
            .map(|i| v(i as f64 * 0.5, (i as f64).sin(), 1.0 - 0.1 * i as f64))
            .collect();
        let c = BSplineCurve::new(3, pts.clone(), knots.clone()).unwrap();
        let samples = c.sample_uniform(80);
        let fit = fit_from_samples(&samples, &knots, 3, &BoundaryPins::none()).unwrap();
        for (a, b) in fit.curve.control_points().iter().zip(&pts) {
            assert!((*a - *b).max_abs() < 1e-8);
        }
        assert!(fit.residual_rms < 1e-10);

        let pins = BoundaryPins {
            head: pts[..3].to_vec(),
            tail: pts[5..].to_vec(),
        };
        let fit = fit_from_samples(&samples, &knots, 3, &pins).unwrap();
        for (a, b) in fit.curve.control_points().iter().zip(&pts) {
            assert!((*a - *b).max_abs() < 1e-8);
        }

        let p = v(1.0, 2.0, 3.0);
        let samples: Vec<_> = samples.iter().map(|(t, _)| (*t, p)).collect();
        let fit = fit_from_samples(&samples, &knots, 3, &BoundaryPins::rest(p, p, 3)).unwrap();
        assert!(fit
            .curve
            .control_points()
            .iter()
            .all(|q| (*q - p).max_abs() < 1e-10));
    }

    #[test]
    fn fit_linear_samples_gives_collinear_points() {
        let knots = KnotVector::uniform(3, 10, 0.5, 0.0);
        let dir = v(1.0, -0.5, 0.25);
        let base = v(0.2, 0.1, 1.0);
        let c0 = BSplineCurve::new(3, vec![Vec3::zeros(); 10], knots.clone()).unwrap();
        let (lo, hi) = c0.domain();
        let samples: Vec<_> = (0..60)
            .map(|i| {
                let t = lo + (hi - lo) * i as f64 / 59.0;
                (t, base + dir * t)
            })
            .collect();
        let fit = fit_from_samples(&samples, &knots, 3, &BoundaryPins::none()).unwrap();
        let unit = dir.normalized().unwrap();
        for p in fit.curve.control_points() {
            let rel = *p - base;
            let off = rel - unit * rel.dot(&unit);
            assert!(off.max_abs() < 1e-9);
        }
    }

    #[test]
    fn fit_rank_deficient() {
        let knots = KnotVector::uniform(3, 10, 1.0, 0.0);
        let samples = vec![(0.5, v(0.0, 0.0, 0.0)); 20];
        assert!(matches!(
            fit_from_samples(&samples, &knots, 3, &BoundaryPins::none()),
            Err(SplineError::Fit(_))
        ));
    }

    #[test]
    fn record_round_trip() {
        let c = uniform_line();
        let rec = c.to_record();
        let json = serde_json::to_string(&rec).unwrap();
        let back: CurveRecord = serde_json::from_str(&json).unwrap();
        let c2 = BSplineCurve::<f64>::from_record(&back).unwrap();
        assert_eq!(c2.control_points(), c.control_points());
    }

    #[test]
    fn single_precision_evaluation() {
        let pts: Vec<Vec3<f32>> = (0..4).map(|i| Vec3::new(i as f32, 0.0, 0.0)).collect();
        let c = BSplineCurve::new(3, pts, KnotVector::uniform(3, 4, 1.0f32, 0.0)).unwrap();
        assert!((c.evaluate(0.5).unwrap().x - 1.5).abs() < 1e-6);
    }
}
