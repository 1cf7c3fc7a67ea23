//! Scenario runner.
//!
//! A scenario describes a map (explicit primitives, a seeded random forest,
//! or a point cloud), body and end-effector start/goal, and planner settings.
//! Each scenario runs in one of two modes: `proposed` plans the body with its
//! own radius and the end-effector on top of it, `baseline` inflates the body
//! by a sphere enclosing the arm held at its start pose and plans nothing
//! else. With a positive reveal radius the map is uncovered progressively
//! along the flight and the body replans from rest whenever the remaining
//! trajectory hits something newly seen.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::ArmGeometry;
use crate::bspline::SplineError;
use crate::ee_planner::{
    self, EePlanConfig, EePlanRequest, EePlanResult, JointSample, JointTrajectory,
};
use crate::esdf::{
    build_esdf, read_point_cloud, EsdfGrid, GridGeometry, MapError, Obstacle, OccupancyGrid,
};
use crate::export::{self, EeDiagnostics, ExportError};
use crate::geometry::{polyline_length, Vec3};
use crate::guide_planner::{plan_guide, GuidePlan, GuidePlanConfig, GuideTrajectory};

type V3 = Vec3<f64>;

/// Environment variable capping batch parallelism.
pub const THREADS_ENV: &str = "RINGO_THREADS";

/// Scenario files shipped with the crate, by name.
pub const SHIPPED: &[(&str, &str)] = &[
    ("ring", include_str!("../scenarios/ring.toml")),
    ("corridor", include_str!("../scenarios/corridor.toml")),
    ("narrow_gap", include_str!("../scenarios/narrow_gap.toml")),
    ("suite_a", include_str!("../scenarios/suite_a.toml")),
    ("suite_b", include_str!("../scenarios/suite_b.toml")),
    ("suite_c", include_str!("../scenarios/suite_c.toml")),
];

/// Scenarios of the default comparison suite.
pub const DEFAULT_SUITE: &[&str] = &["suite_a", "suite_b", "suite_c"];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown shipped scenario {0:?}")]
    UnknownBuiltin(String),
    #[error("map generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("thread pool: {0}")]
    Threads(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Proposed,
    Baseline,
}

impl Mode {
    pub const BOTH: [Mode; 2] = [Mode::Proposed, Mode::Baseline];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Proposed => "proposed",
            Mode::Baseline => "baseline",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(Mode::Proposed),
            "baseline" => Ok(Mode::Baseline),
            other => Err(format!(
                "unknown mode {other:?}, expected proposed or baseline"
            )),
        }
    }
}

fn default_resolution() -> f64 {
    0.1
}

fn default_sentinel() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestSpec {
    /// Number of vertical cylinders; zero gives an empty forest.
    pub count: usize,
    /// Radius range (m).
    pub radius: [f64; 2],
    /// Extra clearance around start and goal beyond the largest inflation (m).
    #[serde(default = "ForestSpec::default_keep_out")]
    pub keep_out: f64,
    #[serde(default = "ForestSpec::default_attempts")]
    pub max_attempts: usize,
}

impl ForestSpec {
    fn default_keep_out() -> f64 {
        0.3
    }

    fn default_attempts() -> usize {
        10_000
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    /// Distance reported in obstacle-free grids (m).
    #[serde(default = "default_sentinel")]
    pub sentinel: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub forest: Option<ForestSpec>,
    /// "x y z" text file, relative to the scenario file.
    #[serde(default)]
    pub point_cloud: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub start: [f64; 3],
    pub goal: [f64; 3],
    /// Body clearance radius (m).
    pub radius: f64,
}

fn default_limits() -> [[f64; 2]; 2] {
    let pi = std::f64::consts::PI;
    [[-pi, pi], [-pi, pi]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub l1: f64,
    pub l2: f64,
    #[serde(default = "default_limits")]
    pub theta_limits: [[f64; 2]; 2],
    #[serde(default)]
    pub mount_offset: [f64; 3],
    /// End-effector start and goal in the virtual body frame (m).
    pub start: [f64; 3],
    pub goal: [f64; 3],
    /// End-effector clearance radius (m).
    pub radius: f64,
    /// Baseline bounding-sphere radius; defaults to the farthest point of the
    /// arm at its start pose plus `radius`.
    #[serde(default)]
    pub baseline_radius: Option<f64>,
}

impl ArmSpec {
    pub fn geometry(&self) -> ArmGeometry<f64> {
        ArmGeometry {
            l1: self.l1,
            l2: self.l2,
            theta_limits: self.theta_limits,
            mount_offset: Vec3::from(self.mount_offset),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaybackSpec {
    /// Playback time step (s).
    pub step: f64,
    pub max_replans: usize,
    /// Samples per knot span for executed-path metrics and clearance checks.
    pub samples_per_span: usize,
}

impl Default for PlaybackSpec {
    fn default() -> Self {
        Self {
            step: 0.05,
            max_replans: 300,
            samples_per_span: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    /// Map reveal radius around the body (m); 0 means the map is fully known.
    #[serde(default)]
    pub reveal_radius: f64,
    pub map: MapSpec,
    pub body: BodySpec,
    pub arm: ArmSpec,
    /// `inflation_radius` is replaced by the mode's radius.
    #[serde(default)]
    pub guide: GuidePlanConfig,
    #[serde(default)]
    pub ee: EePlanConfig,
    #[serde(default)]
    pub playback: PlaybackSpec,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut sc = Self::from_toml_str(&text)?;
        sc.base_dir = path.parent().map(Path::to_path_buf);
        Ok(sc)
    }

    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        let text = SHIPPED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| ScenarioError::UnknownBuiltin(name.to_string()))?;
        Self::from_toml_str(text)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let m = &self.map;
        if (0..3).any(|a| !(m.max[a] > m.min[a])) {
            return bad("map.max must exceed map.min on every axis".into());
        }
        if !(m.resolution > 0.0) {
            return bad("map.resolution must be positive".into());
        }
        for o in &m.obstacles {
            o.validate()?;
        }
        if let Some(f) = &m.forest {
            if !(f.radius[0] > 0.0 && f.radius[1] >= f.radius[0]) {
                return bad("map.forest.radius must be an increasing positive range".into());
            }
        }
        for (name, p) in [
            ("body.start", self.body.start),
            ("body.goal", self.body.goal),
        ] {
            if (0..3).any(|a| !(p[a] >= m.min[a] && p[a] <= m.max[a])) {
                return bad(format!("{name} {p:?} lies outside the map"));
            }
        }
        if !(self.body.radius > 0.0) || !(self.arm.radius >= 0.0) {
            return bad("body.radius must be positive and arm.radius non-negative".into());
        }
        if !(self.reveal_radius >= 0.0) {
            return bad("reveal_radius must be non-negative".into());
        }
        if !(self.playback.step > 0.0) {
            return bad("playback.step must be positive".into());
        }
        let arm = self.arm.geometry();
        arm.validate()
            .map_err(|e| ScenarioError::Invalid(format!("arm: {e}")))?;
        let ws = &self.ee.workspace;
        ws.validate()
            .map_err(|e| ScenarioError::Invalid(format!("ee.workspace: {e}")))?;
        if ws.r_max > arm.max_reach() {
            return bad(format!(
                "ee.workspace.r_max {} exceeds arm reach {}",
                ws.r_max,
                arm.max_reach()
            ));
        }
        for (name, p) in [("arm.start", self.arm.start), ("arm.goal", self.arm.goal)] {
            if !ws.contains(Vec3::from(p), 0.0) {
                return bad(format!("{name} {p:?} lies outside the workspace"));
            }
        }
        let mut g = self.guide.clone();
        g.inflation_radius = self.body.radius;
        g.validate()
            .map_err(|e| ScenarioError::Invalid(format!("guide: {e}")))?;
        Ok(())
    }

    /// Baseline bounding-sphere radius.
    pub fn baseline_radius(&self) -> f64 {
        self.arm.baseline_radius.unwrap_or_else(|| {
            let reach = Vec3::from(self.arm.start).norm();
            self.body.radius.max(reach + self.arm.radius)
        })
    }

    /// Body inflation used by the guide search in `mode`.
    pub fn inflation(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Proposed => self.body.radius,
            Mode::Baseline => self.baseline_radius(),
        }
    }

    /// Rasterizes the scenario map.
    pub fn build_map(&self) -> Result<OccupancyGrid<f64>, ScenarioError> {
        let keep = self.baseline_radius().max(self.body.radius);
        let keep_out = [
            (Vec3::from(self.body.start), keep),
            (Vec3::from(self.body.goal), keep),
        ];
        generate_map(&self.map, self.seed, &keep_out, self.base_dir.as_deref())
    }
}

/// Seeded map generation. Forest cylinders keep `radius + keep_out` (plus the
/// forest's own margin) away from every keep-out center in the x-y plane.
pub fn generate_map(
    spec: &MapSpec,
    seed: u64,
    keep_out: &[(V3, f64)],
    base_dir: Option<&Path>,
) -> Result<OccupancyGrid<f64>, ScenarioError> {
    let geo = GridGeometry::covering(Vec3::from(spec.min), Vec3::from(spec.max), spec.resolution)?;
    let mut grid = OccupancyGrid::new(geo);
    for o in &spec.obstacles {
        grid.add_obstacle(o)?;
    }
    if let Some(path) = &spec.point_cloud {
        let full = match base_dir {
            Some(d) if path.is_relative() => d.join(path),
            _ => path.clone(),
        };
        let file = fs::File::open(&full).map_err(|source| ScenarioError::Read {
            path: full.clone(),
            source,
        })?;
        let pts = read_point_cloud::<f64, _>(std::io::BufReader::new(file))?;
        grid.add_points(&pts);
    }
    if let Some(f) = &spec.forest {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < f.count {
            if attempts >= f.max_attempts {
                return Err(ScenarioError::Generation(format!(
                    "placed {placed} of {} cylinders after {attempts} attempts",
                    f.count
                )));
            }
            attempts += 1;
            let r = if f.radius[1] > f.radius[0] {
                rng.gen_range(f.radius[0]..f.radius[1])
            } else {
                f.radius[0]
            };
            let cx = rng.gen_range(spec.min[0]..spec.max[0]);
            let cy = rng.gen_range(spec.min[1]..spec.max[1]);
            let blocked = keep_out.iter().any(|(p, rad)| {
                let d = ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt();
                d < r + rad + f.keep_out
            });
            if blocked {
                continue;
            }
            grid.add_obstacle(&Obstacle::Cylinder {
                center: [cx, cy],
                radius: r,
                z_min: spec.min[2] - 1.0,
                z_max: spec.max[2] + 1.0,
            })?;
            placed += 1;
        }
    }
    Ok(grid)
}

/// Per-run metrics in the layout of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub success: bool,
    pub failure: Option<String>,
    pub length_m: f64,
    pub travel_time_s: f64,
    /// Mean wall time per planning event (ms).
    pub comp_multi_ms: f64,
    /// Absent in baseline mode.
    pub comp_arm_ms: Option<f64>,
    pub comp_total_ms: f64,
    pub replans: usize,
    pub planning_events: usize,
    pub workspace_ok: Option<bool>,
    pub collision_ok: bool,
    pub min_body_clearance: f64,
    pub min_ee_clearance: f64,
    pub max_yaw_step: Option<f64>,
    /// End-effector planning time of every event (ms).
    pub arm_times_ms: Vec<f64>,
}

/// One planning event and how much of it was flown.
#[derive(Clone, Debug)]
pub struct PlanEvent {
    /// Global time at which this trajectory starts (s).
    pub start_time: f64,
    pub guide: GuideTrajectory,
    pub ee: Option<EePlanResult>,
    /// Local trajectory time at which execution stopped.
    pub executed_until: f64,
    pub guide_ms: f64,
    pub arm_ms: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub events: Vec<PlanEvent>,
    /// Executed body and end-effector positions with global times.
    pub body_path: Vec<(f64, V3)>,
    pub ee_path: Vec<(f64, V3)>,
    /// Joint angles along the executed path.
    pub joints: Option<JointTrajectory>,
    /// End-effector offset held during baseline flights.
    pub fixed_arm: Option<V3>,
    pub true_esdf: Arc<EsdfGrid<f64>>,
}

/// Marks voxels within `radius` of `p` as revealed; true when an occupied
/// voxel was newly revealed.
fn reveal_sphere(grid: &OccupancyGrid<f64>, revealed: &mut [bool], p: V3, radius: f64) -> bool {
    let geo = grid.geometry();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let l = ((p[a] - radius - geo.origin[a]) / geo.resolution).floor();
        let h = ((p[a] + radius - geo.origin[a]) / geo.resolution).floor();
        let top = (geo.dims[a] - 1) as f64;
        if h < 0.0 || l > top {
            return false;
        }
        lo[a] = l.max(0.0) as usize;
        hi[a] = h.min(top) as usize;
    }
    let mut hit = false;
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let v = [x, y, z];
                let idx = geo.flat(v);
                if revealed[idx] || geo.center(v).distance(&p) > radius {
                    continue;
                }
                revealed[idx] = true;
                hit |= grid.is_occupied(v);
            }
        }
    }
    hit
}

fn known_esdf(grid: &OccupancyGrid<f64>, revealed: &[bool], sentinel: f64) -> Arc<EsdfGrid<f64>> {
    let geo = *grid.geometry();
    Arc::new(build_esdf(
        &grid.masked(|v| revealed[geo.flat(v)]),
        sentinel,
    ))
}

fn sample_range(
    curve: &crate::bspline::BSplineCurve<f64>,
    t0: f64,
    t1: f64,
    count: usize,
) -> Vec<(f64, V3)> {
    let count = count.max(2);
    (0..count)
        .map(|i| {
            let t = if i + 1 == count {
                t1
            } else {
                t0 + (t1 - t0) * i as f64 / (count - 1) as f64
            };
            (t, curve.evaluate(t).expect("inside domain"))
        })
        .collect()
}

/// Clearance of the not-yet-flown part of a plan on the current map.
#[allow(clippy::too_many_arguments)]
fn remainder_clear(
    esdf: &EsdfGrid<f64>,
    guide: &GuideTrajectory,
    ee: Option<&EePlanResult>,
    arm_offset: V3,
    t: f64,
    rho: f64,
    rho_e: f64,
    per_span: usize,
) -> bool {
    let (t0, t1) = guide.curve.domain();
    let frac = (t1 - t) / (t1 - t0);
    let count = ((guide.curve.segment_count() * per_span) as f64 * frac).ceil() as usize + 2;
    let body = sample_range(&guide.curve, t, t1, count);
    if body.iter().any(|(_, p)| esdf.query(*p).distance <= rho) {
        return false;
    }
    let arm: Vec<V3> = match ee {
        Some(r) => sample_range(&r.ee_curve, t, t1, count)
            .into_iter()
            .map(|(_, p)| p)
            .collect(),
        None => body.iter().map(|(_, p)| *p + arm_offset).collect(),
    };
    esdf.min_clearance(arm.iter()) > rho_e
}

/// Runs one scenario in one mode. Planning failures produce a failed
/// [`RunMetrics`], not an error.
pub fn run_scenario(sc: &Scenario, mode: Mode) -> Result<RunOutcome, ScenarioError> {
    sc.validate()?;
    let rho = sc.inflation(mode);
    let rho_e = sc.arm.radius;
    let grid = sc.build_map()?;
    let true_esdf = Arc::new(build_esdf(&grid, sc.map.sentinel));
    let arm = sc.arm.geometry();
    let mut guide_cfg = sc.guide.clone();
    guide_cfg.inflation_radius = rho;
    let per_span = sc.playback.samples_per_span.max(1);
    let goal = Vec3::from(sc.body.goal);
    let arm_start = Vec3::from(sc.arm.start);
    let arm_goal = Vec3::from(sc.arm.goal);

    let reveal = sc.reveal_radius;
    let mut revealed = vec![reveal <= 0.0; grid.geometry().len()];
    let mut known = if reveal > 0.0 {
        reveal_sphere(&grid, &mut revealed, Vec3::from(sc.body.start), reveal);
        known_esdf(&grid, &revealed, sc.map.sentinel)
    } else {
        true_esdf.clone()
    };

    let mut pos = Vec3::from(sc.body.start);
    let mut xve = arm_start;
    let mut clock = 0.0;
    let mut events: Vec<PlanEvent> = Vec::new();
    let mut failure: Option<String> = None;
    let mut guide_times = Vec::new();
    let mut arm_times = Vec::new();

    loop {
        if events.len() > sc.playback.max_replans {
            failure = Some(format!("exceeded {} replans", sc.playback.max_replans));
            break;
        }
        let t_guide = Instant::now();
        let planned = plan_guide(&known, pos, goal, &guide_cfg);
        let guide_ms = t_guide.elapsed().as_secs_f64() * 1e3;
        guide_times.push(guide_ms);
        let guide = match planned {
            Ok(GuidePlan::Feasible(r)) => r.trajectory,
            Ok(GuidePlan::Infeasible { reason, .. }) => {
                failure = Some(format!("multi-rotor planning infeasible: {reason}"));
                break;
            }
            Err(e) => {
                failure = Some(format!("multi-rotor planning failed: {e}"));
                break;
            }
        };
        let mut arm_ms = None;
        let ee = match mode {
            Mode::Baseline => None,
            Mode::Proposed => {
                let req = EePlanRequest {
                    guide: &guide,
                    xve_start: xve,
                    xve_goal: arm_goal,
                    config: &sc.ee,
                    esdf: Some(known.clone()),
                    body_radius: sc.body.radius,
                    ee_radius: rho_e,
                };
                match ee_planner::plan(&req, &arm) {
                    Ok(r) => {
                        let ms = r.planning_us / 1e3;
                        arm_ms = Some(ms);
                        arm_times.push(ms);
                        if !r.flags.feasible() {
                            failure =
                                Some(format!("end-effector verification failed: {:?}", r.flags));
                            events.push(PlanEvent {
                                start_time: clock,
                                executed_until: guide.curve.domain().0,
                                guide,
                                ee: Some(r),
                                guide_ms,
                                arm_ms,
                            });
                            break;
                        }
                        Some(r)
                    }
                    Err(e) => {
                        failure = Some(format!("end-effector planning failed: {e}"));
                        break;
                    }
                }
            }
        };

        let (t_lo, t_hi) = guide.curve.domain();
        let mut replan_at = None;
        if reveal > 0.0 {
            let mut t = t_lo;
            while t < t_hi {
                t = (t + sc.playback.step).min(t_hi);
                let p = guide.curve.evaluate(t)?;
                if reveal_sphere(&grid, &mut revealed, p, reveal) {
                    known = known_esdf(&grid, &revealed, sc.map.sentinel);
                    if t < t_hi
                        && !remainder_clear(
                            &known,
                            &guide,
                            ee.as_ref(),
                            arm_start,
                            t,
                            rho,
                            rho_e,
                            per_span,
                        )
                    {
                        replan_at = Some(t);
                        break;
                    }
                }
            }
        }
        let executed_until = replan_at.unwrap_or(t_hi);
        if let Some(t) = replan_at {
            pos = guide.curve.evaluate(t)?;
            if let Some(r) = &ee {
                xve = r.relative_curve.evaluate(t)?;
            }
        }
        events.push(PlanEvent {
            start_time: clock,
            guide,
            ee,
            executed_until,
            guide_ms,
            arm_ms,
        });
        clock += executed_until - t_lo;
        if replan_at.is_none() {
            break;
        }
        log::info!("{}: replanning at t = {clock:.2} s", sc.name);
    }

    // Executed path.
    let mut body_path = Vec::new();
    let mut ee_path = Vec::new();
    let mut joint_samples: Vec<JointSample> = Vec::new();
    let mut branch = sc.ee.elbow;
    let fixed_joint = arm.inverse_kinematics(arm_start, sc.ee.elbow, None).ok();
    for ev in &events {
        let (t_lo, t_hi) = ev.guide.curve.domain();
        let t_end = ev.executed_until;
        if t_end <= t_lo {
            continue;
        }
        let frac = (t_end - t_lo) / (t_hi - t_lo);
        let count = ((ev.guide.curve.segment_count() * per_span) as f64 * frac).ceil() as usize + 1;
        let offset = ev.start_time - t_lo;
        for (t, p) in sample_range(&ev.guide.curve, t_lo, t_end, count) {
            if !body_path.is_empty() && t == t_lo {
                continue;
            }
            body_path.push((t + offset, p));
            let e = match &ev.ee {
                Some(r) => r.ee_curve.evaluate(t)?,
                None => p + arm_start,
            };
            ee_path.push((t + offset, e));
        }
        match ev.ee.as_ref().and_then(|r| r.joint_trajectory.as_ref()) {
            Some(j) => {
                branch = j.branch;
                joint_samples.extend(j.samples.iter().filter(|s| s.t <= t_end + 1e-12).map(|s| {
                    JointSample {
                        t: s.t + offset,
                        joint: s.joint,
                    }
                }));
            }
            None => {
                if let (Mode::Baseline, Some((j, b))) = (mode, fixed_joint) {
                    branch = b;
                    let rate = sc.ee.joint_sample_rate;
                    let steps = ((t_end - t_lo) * rate).ceil() as usize;
                    for i in 0..=steps {
                        let t = (t_lo + i as f64 / rate).min(t_end);
                        joint_samples.push(JointSample {
                            t: t + offset,
                            joint: j,
                        });
                    }
                }
            }
        }
    }
    let body_points: Vec<V3> = body_path.iter().map(|(_, p)| *p).collect();
    let ee_points: Vec<V3> = ee_path.iter().map(|(_, p)| *p).collect();
    let length_m = polyline_length(&body_points);
    let travel_time_s = clock;
    let (min_body_clearance, min_ee_clearance) = if body_points.is_empty() {
        (0.0, 0.0)
    } else {
        (
            true_esdf.min_clearance(body_points.iter()),
            true_esdf.min_clearance(ee_points.iter()),
        )
    };
    let collision_ok =
        !body_points.is_empty() && min_body_clearance > sc.body.radius && min_ee_clearance > rho_e;
    let workspace_ok = match mode {
        Mode::Proposed => Some(
            !events.is_empty()
                && events
                    .iter()
                    .all(|e| e.ee.as_ref().is_some_and(|r| r.flags.workspace_ok)),
        ),
        Mode::Baseline => None,
    };
    if failure.is_none() && !collision_ok {
        failure = Some(format!(
            "executed path clearance body {min_body_clearance:.3} m / end-effector {min_ee_clearance:.3} m"
        ));
    }
    let joints = (!joint_samples.is_empty()).then_some(JointTrajectory {
        branch,
        samples: joint_samples,
    });
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let comp_multi_ms = mean(&guide_times);
    let comp_arm_ms = match mode {
        Mode::Proposed => Some(mean(&arm_times)),
        Mode::Baseline => None,
    };
    let metrics = RunMetrics {
        scenario: sc.name.clone(),
        mode,
        seed: sc.seed,
        success: failure.is_none(),
        failure,
        length_m,
        travel_time_s,
        comp_multi_ms,
        comp_arm_ms,
        comp_total_ms: comp_multi_ms + comp_arm_ms.unwrap_or(0.0),
        replans: events.len().saturating_sub(1),
        planning_events: guide_times.len(),
        workspace_ok,
        collision_ok,
        min_body_clearance,
        min_ee_clearance,
        max_yaw_step: joints.as_ref().map(|j| j.max_yaw_step()),
        arm_times_ms: arm_times,
    };
    Ok(RunOutcome {
        metrics,
        events,
        body_path,
        ee_path,
        joints,
        fixed_arm: (mode == Mode::Baseline).then_some(arm_start),
        true_esdf,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmTimeSample {
    pub scenario: String,
    pub ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub runs: usize,
    pub failed: usize,
    pub mean_arm_ms: Option<f64>,
    pub max_arm_ms: Option<f64>,
    pub mean_multi_ms: f64,
    pub max_multi_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<RunMetrics>,
    pub arm_times: Vec<ArmTimeSample>,
    pub summary: ComparisonSummary,
}

impl Comparison {
    pub fn all_succeeded(&self) -> bool {
        self.rows.iter().all(|r| r.success)
    }
}

/// `RINGO_THREADS` as a positive thread count.
pub fn thread_limit_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
}

fn failed_row(sc: &Scenario, mode: Mode, msg: String) -> RunMetrics {
    RunMetrics {
        scenario: sc.name.clone(),
        mode,
        seed: sc.seed,
        success: false,
        failure: Some(msg),
        length_m: 0.0,
        travel_time_s: 0.0,
        comp_multi_ms: 0.0,
        comp_arm_ms: None,
        comp_total_ms: 0.0,
        replans: 0,
        planning_events: 0,
        workspace_ok: None,
        collision_ok: false,
        min_body_clearance: 0.0,
        min_ee_clearance: 0.0,
        max_yaw_step: None,
        arm_times_ms: Vec::new(),
    }
}

/// Runs every scenario in every mode, one run per worker. Rows follow the
/// input order (scenario-major).
pub fn compare(
    scenarios: &[Scenario],
    modes: &[Mode],
    threads: Option<usize>,
) -> Result<Comparison, ScenarioError> {
    let jobs: Vec<(&Scenario, Mode)> = scenarios
        .iter()
        .flat_map(|s| modes.iter().map(move |m| (s, *m)))
        .collect();
    let run = |(sc, mode): &(&Scenario, Mode)| match run_scenario(sc, *mode) {
        Ok(o) => o.metrics,
        Err(e) => failed_row(sc, *mode, e.to_string()),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| ScenarioError::Threads(e.to_string()))?;
    let rows: Vec<RunMetrics> = pool.install(|| jobs.par_iter().map(run).collect());
    Ok(summarize(rows))
}

pub fn summarize(rows: Vec<RunMetrics>) -> Comparison {
    let arm_times: Vec<ArmTimeSample> = rows
        .iter()
        .flat_map(|r| {
            r.arm_times_ms.iter().map(|ms| ArmTimeSample {
                scenario: r.scenario.clone(),
                ms: *ms,
            })
        })
        .collect();
    let arm: Vec<f64> = arm_times.iter().map(|s| s.ms).collect();
    let multi: Vec<f64> = rows.iter().map(|r| r.comp_multi_ms).collect();
    let summary = ComparisonSummary {
        runs: rows.len(),
        failed: rows.iter().filter(|r| !r.success).count(),
        mean_arm_ms: (!arm.is_empty()).then(|| arm.iter().sum::<f64>() / arm.len() as f64),
        max_arm_ms: arm.iter().copied().reduce(f64::max),
        mean_multi_ms: if multi.is_empty() {
            0.0
        } else {
            multi.iter().sum::<f64>() / multi.len() as f64
        },
        max_multi_ms: multi.iter().copied().fold(0.0, f64::max),
    };
    Comparison {
        rows,
        arm_times,
        summary,
    }
}

/// Suite file: scenario names (shipped) or `.toml` paths relative to the
/// suite file, and the modes to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    pub scenarios: Vec<String>,
    #[serde(default = "SuiteSpec::default_modes")]
    pub modes: Vec<Mode>,
}

impl SuiteSpec {
    fn default_modes() -> Vec<Mode> {
        Mode::BOTH.to_vec()
    }

    pub fn default_suite() -> Self {
        Self {
            scenarios: DEFAULT_SUITE.iter().map(|s| s.to_string()).collect(),
            modes: Self::default_modes(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(toml::from_str(&text)?)
    }

    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<Vec<Scenario>, ScenarioError> {
        self.scenarios
            .iter()
            .map(|entry| {
                if entry.ends_with(".toml") {
                    let p = Path::new(entry);
                    let full = match base_dir {
                        Some(d) if p.is_relative() => d.join(p),
                        _ => p.to_path_buf(),
                    };
                    Scenario::load(&full)
                } else {
                    Scenario::builtin(entry)
                }
            })
            .collect()
    }
}

const METRICS_HEADER: [&str; 12] = [
    "scenario",
    "mode",
    "success",
    "length_m",
    "travel_time_s",
    "comp_multi_ms",
    "comp_arm_ms",
    "comp_total_ms",
    "replans",
    "workspace_ok",
    "collision_ok",
    "failure",
];

/// Metrics table; absent arm compute is written as `-`.
pub fn write_metrics_csv<W: Write>(rows: &[RunMetrics], w: W) -> Result<(), ScenarioError> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| ScenarioError::Export(ExportError::Csv(e));
    out.write_record(METRICS_HEADER).map_err(err)?;
    for r in rows {
        out.write_record([
            r.scenario.clone(),
            r.mode.to_string(),
            r.success.to_string(),
            format!("{:.4}", r.length_m),
            format!("{:.4}", r.travel_time_s),
            format!("{:.4}", r.comp_multi_ms),
            r.comp_arm_ms
                .map_or_else(|| "-".to_string(), |v| format!("{v:.4}")),
            format!("{:.4}", r.comp_total_ms),
            r.replans.to_string(),
            r.workspace_ok
                .map_or_else(|| "-".to_string(), |v| v.to_string()),
            r.collision_ok.to_string(),
            r.failure.clone().unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    out.flush()
        .map_err(|e| ScenarioError::Export(ExportError::Io(e)))?;
    Ok(())
}

pub fn write_arm_times_csv<W: Write>(samples: &[ArmTimeSample], w: W) -> Result<(), ScenarioError> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| ScenarioError::Export(ExportError::Csv(e));
    out.write_record(["scenario", "arm_ms"]).map_err(err)?;
    for s in samples {
        out.write_record([s.scenario.clone(), format!("{:.6}", s.ms)])
            .map_err(err)?;
    }
    out.flush()
        .map_err(|e| ScenarioError::Export(ExportError::Io(e)))?;
    Ok(())
}

fn write_path_csv<W: Write>(path: &[(f64, V3)], w: W) -> Result<(), ScenarioError> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| ScenarioError::Export(ExportError::Csv(e));
    out.write_record(["t", "x", "y", "z"]).map_err(err)?;
    for (t, p) in path {
        out.serialize((t, p.x, p.y, p.z)).map_err(err)?;
    }
    out.flush()
        .map_err(|e| ScenarioError::Export(ExportError::Io(e)))?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<fs::File>, ScenarioError> {
    let path = dir.join(name);
    fs::File::create(&path)
        .map(std::io::BufWriter::new)
        .map_err(|source| ScenarioError::Read { path, source })
}

/// Writes the artifact bundle of one run into `dir`.
pub fn write_run_artifacts(outcome: &RunOutcome, dir: &Path) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(|source| ScenarioError::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    write_path_csv(&outcome.body_path, create(dir, "body_path.csv")?)?;
    write_path_csv(&outcome.ee_path, create(dir, "ee_path.csv")?)?;
    if let Some(j) = &outcome.joints {
        export::write_joints_csv(j, create(dir, "joints.csv")?)?;
    }
    write_trajectory_bundle(outcome, create(dir, "trajectory.csv")?)?;
    export::write_json(&outcome.metrics, create(dir, "metrics.json")?)?;
    write_metrics_csv(
        std::slice::from_ref(&outcome.metrics),
        create(dir, "metrics.csv")?,
    )?;
    for (k, ev) in outcome.events.iter().enumerate() {
        export::write_curve_json(
            &ev.guide.curve,
            create(dir, &format!("guide_curve_{k}.json"))?,
        )?;
        if let Some(r) = &ev.ee {
            export::write_curve_json(&r.ee_curve, create(dir, &format!("ee_curve_{k}.json"))?)?;
            export::write_curve_json(
                &r.relative_curve,
                create(dir, &format!("relative_curve_{k}.json"))?,
            )?;
            export::write_json(
                &EeDiagnostics::from_result(r),
                create(dir, &format!("ee_diagnostics_{k}.json"))?,
            )?;
        }
    }
    Ok(())
}

/// `t, x, y, z, xe_x, xe_y, xe_z, psi, theta1, theta2` along the executed
/// path at the joint sample times.
pub fn write_trajectory_bundle<W: Write>(outcome: &RunOutcome, w: W) -> Result<(), ScenarioError> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| ScenarioError::Export(ExportError::Csv(e));
    out.write_record([
        "t", "x", "y", "z", "xe_x", "xe_y", "xe_z", "psi", "theta1", "theta2",
    ])
    .map_err(err)?;
    if let Some(j) = &outcome.joints {
        for s in &j.samples {
            let Some((body, ee)) = locate(outcome, s.t)? else {
                continue;
            };
            out.serialize((
                s.t,
                body.x,
                body.y,
                body.z,
                ee.x,
                ee.y,
                ee.z,
                s.joint.psi,
                s.joint.theta1,
                s.joint.theta2,
            ))
            .map_err(err)?;
        }
    }
    out.flush()
        .map_err(|e| ScenarioError::Export(ExportError::Io(e)))?;
    Ok(())
}

/// Body and end-effector positions at global time `t` of the executed path.
fn locate(outcome: &RunOutcome, t: f64) -> Result<Option<(V3, V3)>, ScenarioError> {
    for ev in &outcome.events {
        let (t_lo, _) = ev.guide.curve.domain();
        let local = t - ev.start_time + t_lo;
        if local >= t_lo - 1e-9 && local <= ev.executed_until + 1e-9 {
            let local = local.clamp(t_lo, ev.executed_until);
            let body = ev.guide.curve.evaluate(local)?;
            let ee = match &ev.ee {
                Some(r) => r.ee_curve.evaluate(local)?,
                None => body + outcome.fixed_arm.unwrap_or_else(Vec3::zeros),
            };
            return Ok(Some((body, ee)));
        }
    }
    Ok(None)
}
