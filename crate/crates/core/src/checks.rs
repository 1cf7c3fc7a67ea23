//! Self-checks run by the `check` subcommand.
//!
//! Each check compares an analytic quantity against an independent
//! computation on randomly generated inputs and reports the largest error.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arm::WorkspaceParams;
use crate::bspline::{BSplineCurve, KnotVector};
use crate::costs::{total_cost, CostContext, CostWeights};
use crate::esdf::{build_esdf, EsdfGrid, GridGeometry, OccupancyGrid};
use crate::geometry::Vec3;
use crate::hull::distance_to_hull;

const ORDER: usize = 3;

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub seed: u64,
    /// Random configurations per gradient check.
    pub configs: usize,
    pub fd_step: f64,
    /// Flip the sign of every analytic gradient before comparing. A correct
    /// harness must then report failures.
    pub perturb_gradient: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            configs: 200,
            fd_step: 1e-6,
            perturb_gradient: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckLine {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub passed: bool,
}

impl CheckLine {
    fn new(name: &'static str, max_error: f64, tolerance: f64, samples: usize) -> Self {
        Self {
            name,
            max_error,
            tolerance,
            samples,
            passed: max_error.is_finite() && max_error <= tolerance,
        }
    }
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<20} {} max_error={:.3e} tolerance={:.1e} samples={}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.max_error,
            self.tolerance,
            self.samples
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub lines: Vec<CheckLine>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Term {
    Smoothness,
    Workspace,
    Yaw,
    Obstacle,
}

impl Term {
    fn weights(self) -> CostWeights<f64> {
        let mut w = CostWeights {
            smoothness: 0.0,
            workspace: 0.0,
            yaw: 0.0,
            obstacle: 0.0,
        };
        match self {
            Term::Smoothness => w.smoothness = 1.0,
            Term::Workspace => w.workspace = 1.0,
            Term::Yaw => w.yaw = 1.0,
            Term::Obstacle => w.obstacle = 1.0,
        }
        w
    }
}

pub fn default_workspace() -> WorkspaceParams<f64> {
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

pub fn random_knots(rng: &mut impl Rng, n_control: usize, lo: f64, hi: f64) -> KnotVector<f64> {
    let mut t = 0.0;
    let mut k = Vec::with_capacity(n_control + ORDER + 1);
    for _ in 0..n_control + ORDER + 1 {
        k.push(t);
        t += rng.gen_range(lo..hi);
    }
    KnotVector::new(k).expect("increasing knots")
}

fn random_in_box(rng: &mut impl Rng, lo: Vec3<f64>, hi: Vec3<f64>) -> Vec3<f64> {
    Vec3::new(
        rng.gen_range(lo.x..hi.x),
        rng.gen_range(lo.y..hi.y),
        rng.gen_range(lo.z..hi.z),
    )
}

/// Uniform sample of the workspace by rejection from its bounding box.
pub fn random_in_workspace(rng: &mut impl Rng, ws: &WorkspaceParams<f64>) -> Vec3<f64> {
    let lo = Vec3::new(-ws.r_max, -ws.r_max, -ws.r_max);
    let hi = Vec3::new(ws.r_max, ws.r_max, -ws.r_min);
    loop {
        let p = random_in_box(rng, lo, hi);
        if ws.contains(p, 0.0) {
            return p;
        }
    }
}

fn random_esdf(rng: &mut impl Rng, dims: [usize; 3], res: f64, density: f64) -> EsdfGrid<f64> {
    let geom = GridGeometry::new(Vec3::zeros(), res, dims).expect("valid grid");
    let mut occ = OccupancyGrid::new(geom);
    for idx in 0..geom.len() {
        if rng.gen_bool(density) {
            occ.set(geom.unflat(idx), true);
        }
    }
    build_esdf(&occ, 10.0)
}

/// Whether a relative point sits far enough from every piece boundary of the
/// workspace shaping functions for central differences to be meaningful.
fn away_from_workspace_kinks(ws: &WorkspaceParams<f64>, e: Vec3<f64>, gap: f64) -> bool {
    let r = e.norm();
    [r - ws.r_d, r - ws.r_max]
        .iter()
        .chain(&[e.z + ws.r_max, e.z + ws.z_d, e.z + ws.r_min])
        .all(|d| d.abs() > gap)
}

/// Whether `p` is away from the center lattice planes, where the trilinear
/// interpolant switches cells, and from the hinge threshold.
fn away_from_esdf_kinks(esdf: &EsdfGrid<f64>, d_thr: f64, p: Vec3<f64>, gap: f64) -> bool {
    let g = esdf.geometry();
    for a in 0..3 {
        let u = (p[a] - g.origin[a]) / g.resolution - 0.5;
        if (u - u.round()).abs() < gap / g.resolution {
            return false;
        }
    }
    (esdf.query_signed(p).distance - d_thr).abs() > gap
}

struct GradientConfig {
    ctx: CostContext<f64>,
    q: Vec<Vec3<f64>>,
}

fn gradient_config(rng: &mut impl Rng, term: Term, gap: f64) -> GradientConfig {
    let n = rng.gen_range(2 * ORDER + 2..=2 * ORDER + 8);
    let knots = random_knots(rng, n, 0.2, 0.6);
    let ws = default_workspace();
    let (esdf, d_thr) = match term {
        Term::Obstacle => (
            Some(Arc::new(random_esdf(rng, [20, 20, 20], 0.1, 0.02))),
            0.25,
        ),
        _ => (None, 0.15),
    };
    loop {
        let mut guide = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        let mut p = Vec3::new(1.0, 1.0, 1.0);
        let mut ok = true;
        for _ in 0..n {
            p += random_in_box(rng, Vec3::splat(-0.1), Vec3::splat(0.1));
            guide.push(p);
            let qi = match term {
                Term::Obstacle => random_in_box(rng, Vec3::splat(0.15), Vec3::splat(1.85)),
                _ => {
                    let e =
                        random_in_box(rng, Vec3::new(-0.7, -0.7, -0.7), Vec3::new(0.7, 0.7, 0.05));
                    p + e
                }
            };
            q.push(qi);
        }
        let ctx = CostContext::new(
            term.weights(),
            ws,
            d_thr,
            guide,
            knots.clone(),
            ORDER,
            esdf.clone(),
        )
        .expect("valid cost context");
        for i in ctx.free_range() {
            let e = q[i] - ctx.guide[i];
            ok &= match term {
                Term::Smoothness => true,
                Term::Workspace => away_from_workspace_kinks(&ws, e, gap),
                Term::Yaw => e.xy_norm() > 1e-2,
                Term::Obstacle => {
                    away_from_esdf_kinks(ctx.esdf.as_ref().unwrap(), d_thr, q[i], gap)
                }
            };
        }
        if ok {
            return GradientConfig { ctx, q };
        }
    }
}

/// Largest relative error between the analytic gradient of the weighted
/// total cost and central differences over the free coordinates.
fn gradient_error(cfg: &GradientConfig, h: f64, perturb: bool) -> f64 {
    let ctx = &cfg.ctx;
    let mut analytic = total_cost(&cfg.q, ctx).expect("cost").gradient;
    if perturb {
        analytic.iter_mut().for_each(|g| *g = -*g);
    }
    let mut q = cfg.q.clone();
    let mut max_diff: f64 = 0.0;
    let mut max_ref: f64 = 0.0;
    for i in ctx.free_range() {
        for a in 0..3 {
            let orig = q[i][a];
            q[i][a] = orig + h;
            let fp = total_cost(&q, ctx).expect("cost").total;
            q[i][a] = orig - h;
            let fm = total_cost(&q, ctx).expect("cost").total;
            q[i][a] = orig;
            let fd = (fp - fm) / (2.0 * h);
            max_diff = max_diff.max((analytic[i][a] - fd).abs());
            max_ref = max_ref.max(fd.abs());
        }
    }
    max_diff / max_ref.max(1e-6)
}

fn gradient_check(name: &'static str, term: Term, tol: f64, opts: &CheckOptions) -> CheckLine {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ ((term as u64 + 1) * 0x9e37_79b9));
    // Keep kinks well beyond the difference stencil.
    let gap = 1e3 * opts.fd_step;
    let mut worst: f64 = 0.0;
    for _ in 0..opts.configs {
        let cfg = gradient_config(&mut rng, term, gap);
        let err = gradient_error(&cfg, opts.fd_step, opts.perturb_gradient);
        worst = if err.is_nan() {
            f64::NAN
        } else {
            worst.max(err)
        };
    }
    CheckLine::new(name, worst, tol, opts.configs)
}

/// Samples curves whose control points lie inside the workspace and reports
/// the largest workspace violation and distance from the segment hull.
fn hull_check(opts: &CheckOptions) -> CheckLine {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4855_4c4c);
    let ws = default_workspace();
    let curves = 50;
    let per_segment = 40;
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for _ in 0..curves {
        let n = rng.gen_range(ORDER + 1..=ORDER + 9);
        let knots = random_knots(&mut rng, n, 0.05, 1.0);
        let pts: Vec<_> = (0..n).map(|_| random_in_workspace(&mut rng, &ws)).collect();
        let curve = BSplineCurve::new(ORDER, pts, knots).expect("valid curve");
        for seg in 0..curve.segment_count() {
            let (a, b) = curve.segment_span(seg).expect("segment");
            let hull = curve.segment_hull(seg).expect("segment");
            for j in 0..=per_segment {
                let t = a + (b - a) * j as f64 / per_segment as f64;
                let p = curve.evaluate(t).expect("in domain");
                worst = worst.max(ws.violation(p)).max(distance_to_hull(hull, p));
                samples += 1;
            }
        }
    }
    CheckLine::new("hull_containment", worst, 1e-9, samples)
}

/// Distance from each voxel center to the nearest occupied center by
/// exhaustive search.
pub fn brute_force_distances(dims: [usize; 3], res: f64, occupied: &[bool]) -> Vec<f64> {
    let [nx, ny, _] = dims;
    let occ: Vec<[i64; 3]> = occupied
        .iter()
        .enumerate()
        .filter(|(_, o)| **o)
        .map(|(idx, _)| {
            [
                (idx % nx) as i64,
                ((idx / nx) % ny) as i64,
                (idx / (nx * ny)) as i64,
            ]
        })
        .collect();
    (0..occupied.len())
        .map(|idx| {
            let v = [
                (idx % nx) as i64,
                ((idx / nx) % ny) as i64,
                (idx / (nx * ny)) as i64,
            ];
            occ.iter()
                .map(|o| (0..3).map(|a| (v[a] - o[a]).pow(2)).sum::<i64>())
                .min()
                .map(|sq| res * (sq as f64).sqrt())
                .unwrap_or(f64::INFINITY)
        })
        .collect()
}

fn esdf_check(opts: &CheckOptions) -> CheckLine {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4553_4446);
    let grids = 10;
    let mut worst: f64 = 0.0;
    for _ in 0..grids {
        let dims = [
            rng.gen_range(4..14),
            rng.gen_range(4..14),
            rng.gen_range(4..14),
        ];
        let density = rng.gen_range(0.01..0.2);
        let esdf = random_esdf(&mut rng, dims, 0.1, density);
        let occupied: Vec<bool> = (0..esdf.geometry().len())
            .map(|i| esdf.is_occupied(esdf.geometry().unflat(i)))
            .collect();
        let oracle = brute_force_distances(dims, 0.1, &occupied);
        for (d, o) in esdf.distances().iter().zip(&oracle) {
            let err = if o.is_finite() {
                (d - o).abs()
            } else if *d == esdf.sentinel() {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(err);
        }
    }
    CheckLine::new("esdf_brute_force", worst, 0.0, grids)
}

pub fn run_checks(opts: &CheckOptions) -> CheckReport {
    let lines = vec![
        gradient_check("grad_smoothness", Term::Smoothness, 1e-5, opts),
        gradient_check("grad_workspace", Term::Workspace, 1e-5, opts),
        gradient_check("grad_yaw", Term::Yaw, 1e-5, opts),
        gradient_check("grad_obstacle", Term::Obstacle, 1e-4, opts),
        hull_check(opts),
        esdf_check(opts),
    ];
    CheckReport { lines }
}
