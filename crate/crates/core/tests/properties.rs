use std::sync::Arc;

use armguide::arm::WorkspaceParams;
use armguide::bspline::{accel_coefficients, BSplineCurve, KnotVector};
use armguide::costs::{total_cost, workspace_point, yaw_rate_cost, CostContext, CostWeights};
use armguide::esdf::{build_esdf, GridGeometry, OccupancyGrid};
use armguide::geometry::Vec3;
use armguide::hull::distance_to_hull;
use proptest::prelude::*;

type V = Vec3<f64>;

fn workspace() -> WorkspaceParams<f64> {
    WorkspaceParams {
        r_max: 0.55,
        r_min: 0.15,
        r_d: 0.3,
        z_d: 0.35,
        f_d: -0.1,
        k: 20.0,
        h_o: 1.0,
        h_l: 1.0,
    }
}

fn vec3(range: f64) -> impl Strategy<Value = V> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| V::new(x, y, z))
}

/// Strictly increasing knots for `n` control points of a cubic.
fn knots(n: usize) -> impl Strategy<Value = KnotVector<f64>> {
    (-2.0..2.0f64, prop::collection::vec(0.05..1.5f64, n + 3)).prop_map(|(t0, gaps)| {
        let mut k = vec![t0];
        for g in gaps {
            k.push(k.last().unwrap() + g);
        }
        KnotVector::new(k).unwrap()
    })
}

fn in_workspace() -> impl Strategy<Value = V> {
    (-0.55..0.55f64, -0.55..0.55f64, -0.55..-0.15f64)
        .prop_map(|(x, y, z)| V::new(x, y, z))
        .prop_filter("inside the workspace", |p| workspace().contains(*p, 0.0))
}

fn curve(range: f64) -> impl Strategy<Value = BSplineCurve<f64>> {
    (4usize..14).prop_flat_map(move |n| {
        (prop::collection::vec(vec3(range), n), knots(n))
            .prop_map(|(pts, k)| BSplineCurve::new(3, pts, k).unwrap())
    })
}

fn curve_pair() -> impl Strategy<Value = (BSplineCurve<f64>, BSplineCurve<f64>)> {
    (4usize..14).prop_flat_map(|n| {
        (
            prop::collection::vec(vec3(5.0), n),
            prop::collection::vec(vec3(5.0), n),
            knots(n),
        )
            .prop_map(|(a, b, k)| {
                (
                    BSplineCurve::new(3, a, k.clone()).unwrap(),
                    BSplineCurve::new(3, b, k).unwrap(),
                )
            })
    })
}

fn in_domain(c: &BSplineCurve<f64>, u: f64) -> f64 {
    let (a, b) = c.domain();
    a + (b - a) * u
}

fn context(n: usize, weights: CostWeights<f64>, guide: Vec<V>) -> CostContext<f64> {
    let knots = KnotVector::uniform(3, n, 0.3, 0.0);
    CostContext::new(weights, workspace(), 0.15, guide, knots, 3, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn partition_of_unity(k in knots(9), c in vec3(3.0), u in 0.0..=1.0f64) {
        let curve = BSplineCurve::new(3, vec![c; 9], k).unwrap();
        let p = curve.evaluate(in_domain(&curve, u)).unwrap();
        prop_assert!((p - c).max_abs() < 1e-12);
    }

    #[test]
    fn point_lies_in_segment_hull(c in curve(2.0), u in 0.0..=1.0f64) {
        let t = in_domain(&c, u);
        let p = c.evaluate(t).unwrap();
        let seg = (0..c.segment_count())
            .find(|s| {
                let (a, b) = c.segment_span(*s).unwrap();
                t >= a && t <= b
            })
            .unwrap();
        prop_assert!(distance_to_hull(c.segment_hull(seg).unwrap(), p) < 1e-9);
    }

    #[test]
    fn subtract_commutes_with_evaluation((q, x) in curve_pair(), u in 0.0..=1.0f64) {
        let e = q.subtract(&x).unwrap();
        let t = in_domain(&e, u);
        let d = e.evaluate(t).unwrap() - (q.evaluate(t).unwrap() - x.evaluate(t).unwrap());
        prop_assert!(d.max_abs() < 1e-10);
        prop_assert!(e.knots().same_handle(q.knots()));
    }

    #[test]
    fn uniform_stencil_is_exact(exp in -4i32..4, i in 0usize..6) {
        let dt = 2f64.powi(exp);
        let k = KnotVector::uniform(3, 10, dt, 0.0);
        let m = accel_coefficients(&k, 3, i).unwrap().0;
        let inv = 1.0 / (dt * dt);
        prop_assert_eq!(m, [inv, -2.0 * inv, inv]);
    }

    #[test]
    fn workspace_is_convex(a in in_workspace(), b in in_workspace(), s in 0.0..=1.0f64) {
        let ws = workspace();
        prop_assert!(ws.contains(a + (b - a) * s, 0.0));
    }

    #[test]
    fn log_sum_exp_bracket(e in vec3(0.8)) {
        let ctx = context(8, CostWeights { smoothness: 0.0, workspace: 1.0, yaw: 0.0, obstacle: 0.0 }, vec![V::zeros(); 8]);
        let ws = &ctx.ws;
        let (v, _) = workspace_point(&ctx, e);
        let fo = ws.h_o * ctx.coeffs.radial(ws, e.norm()).0;
        let fl = ws.h_l * ctx.coeffs.planar(ws, e.z).0;
        let m = fo.max(fl);
        prop_assert!(v >= m - 1e-12 && v <= m + 2f64.ln() / ws.k + 1e-12);
    }

    #[test]
    fn yaw_term_matches_unit_vector_identity(offsets in prop::collection::vec(vec3(0.5), 8)) {
        prop_assume!(offsets.iter().all(|e| e.xy_norm() > 1e-3));
        let mut ctx = context(8, CostWeights { smoothness: 0.0, workspace: 0.0, yaw: 1.0, obstacle: 0.0 }, vec![V::new(1.0, 2.0, 3.0); 8]);
        ctx.yaw_eps = 0.0;
        let q: Vec<V> = ctx.guide.iter().zip(&offsets).map(|(x, e)| *x + *e).collect();
        let got = yaw_rate_cost(&q, &ctx).unwrap().value;
        let unit = |e: V| (e.x / e.xy_norm(), e.y / e.xy_norm());
        let free: Vec<usize> = ctx.free_range().collect();
        let expect: f64 = free
            .windows(2)
            .map(|w| {
                let (a, b) = (unit(offsets[w[0]]), unit(offsets[w[1]]));
                2.0 * (1.0 - (a.0 * b.0 + a.1 * b.1))
            })
            .sum();
        prop_assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn pinned_gradients_are_exactly_zero(
        offsets in prop::collection::vec(vec3(0.6), 11),
        guide in prop::collection::vec(vec3(1.0), 11),
    ) {
        let esdf = {
            let geom = GridGeometry::new(V::splat(-1.5), 0.1, [30, 30, 30]).unwrap();
            let mut occ = OccupancyGrid::new(geom);
            occ.set([15, 15, 15], true);
            Arc::new(build_esdf(&occ, 10.0))
        };
        let weights = CostWeights { smoothness: 1.0, workspace: 10.0, yaw: 0.5, obstacle: 50.0 };
        let knots = KnotVector::uniform(3, 11, 0.3, 0.0);
        let ctx = CostContext::new(weights, workspace(), 0.3, guide.clone(), knots, 3, Some(esdf)).unwrap();
        let q: Vec<V> = guide.iter().zip(&offsets).map(|(x, e)| *x + *e).collect();
        let g = total_cost(&q, &ctx).unwrap().gradient;
        for (i, gi) in g.iter().enumerate() {
            if !ctx.free_range().contains(&i) {
                prop_assert_eq!(*gi, V::zeros());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn esdf_center_queries_are_exact(cells in prop::collection::vec((0usize..8, 0usize..8, 0usize..8), 1..6)) {
        let geom = GridGeometry::new(V::new(-0.4, 0.1, 2.0), 0.1, [8, 8, 8]).unwrap();
        let mut occ = OccupancyGrid::new(geom);
        for (x, y, z) in &cells {
            occ.set([*x, *y, *z], true);
        }
        let esdf = build_esdf(&occ, 10.0);
        for idx in 0..geom.len() {
            let v = geom.unflat(idx);
            prop_assert_eq!(esdf.query(geom.center(v)).distance, esdf.voxel_distance(v));
        }
    }

    #[test]
    fn gradient_points_away_from_isolated_obstacle(cell in (3usize..9, 3usize..9, 3usize..9), p in vec3(0.6)) {
        let geom = GridGeometry::new(V::zeros(), 0.1, [12, 12, 12]).unwrap();
        let mut occ = OccupancyGrid::new(geom);
        let v = [cell.0, cell.1, cell.2];
        occ.set(v, true);
        let esdf = build_esdf(&occ, 10.0);
        let q = p + V::splat(0.6);
        let away = q - geom.center(v);
        prop_assert!(esdf.query(q).gradient.dot(&away) >= -1e-12);
    }
}
