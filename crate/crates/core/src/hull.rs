//! Exact point-to-convex-hull distance for small point sets.
//!
//! Enumerates every affinely independent subset of the input, projects the
//! query onto its affine span and keeps projections with non-negative
//! barycentric weights. With at most a handful of points (a spline segment
//! has `order + 1`) this is cheap and has no tolerances to tune.

use crate::geometry::Vec3;

/// Euclidean distance from `p` to the convex hull of `points`.
///
/// Returns `f64::INFINITY` for an empty input. Intended for up to ~8 points.
pub fn distance_to_hull(points: &[Vec3<f64>], p: Vec3<f64>) -> f64 {
    let n = points.len();
    assert!(n <= 12, "hull oracle is exponential in the point count");
    let mut best = f64::INFINITY;
    for mask in 1u32..(1u32 << n) {
        let subset: Vec<Vec3<f64>> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| points[i])
            .collect();
        // Affine dimension in 3-space is at most 3.
        if subset.len() > 4 {
            continue;
        }
        if let Some(proj) = project_on_simplex_face(&subset, p) {
            best = best.min(proj.distance(&p));
        }
    }
    best
}

/// Projection of `p` onto the affine hull of `verts` when it falls inside the
/// simplex (all barycentric weights >= 0). `None` for degenerate subsets or
/// projections outside the face.
fn project_on_simplex_face(verts: &[Vec3<f64>], p: Vec3<f64>) -> Option<Vec3<f64>> {
    let base = verts[0];
    let dirs: Vec<Vec3<f64>> = verts[1..].iter().map(|v| *v - base).collect();
    let k = dirs.len();
    if k == 0 {
        return Some(base);
    }
    // Gram system G w = b.
    let mut g = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for i in 0..k {
        for j in 0..k {
            g[i][j] = dirs[i].dot(&dirs[j]);
        }
        b[i] = dirs[i].dot(&(p - base));
    }
    let w = solve_small(&g, &b, k)?;
    let sum: f64 = w[..k].iter().sum();
    let tol = -1e-12;
    if w[..k].iter().any(|x| *x < tol) || 1.0 - sum < tol {
        return None;
    }
    let mut q = base;
    for i in 0..k {
        q += dirs[i] * w[i];
    }
    Some(q)
}

fn solve_small(g: &[[f64; 3]; 3], b: &[f64; 3], k: usize) -> Option<[f64; 3]> {
    let mut a = *g;
    let mut x = *b;
    let scale = (0..k).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        x.swap(col, piv);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..k {
                    a[r][c] -= f * a[col][c];
                }
                x[r] -= f * x[col];
            }
        }
    }
    let mut out = [0.0; 3];
    for i in 0..k {
        out[i] = x[i] / a[i][i];
    }
    Some(out)
}
