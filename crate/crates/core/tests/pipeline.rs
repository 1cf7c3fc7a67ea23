use std::sync::Arc;

use armguide::arm::ArmGeometry;
use armguide::ee_planner::{plan, EePlanConfig, EePlanRequest};
use armguide::esdf::build_esdf;
use armguide::geometry::Vec3;
use armguide::guide_planner::{plan_guide, GuidePlan};
use armguide::sim_harness::{
    compare, run_scenario, Mode, RunMetrics, Scenario, DEFAULT_SUITE, SHIPPED,
};

fn strip_timing(mut m: RunMetrics) -> RunMetrics {
    m.comp_multi_ms = 0.0;
    m.comp_arm_ms = m.comp_arm_ms.map(|_| 0.0);
    m.comp_total_ms = 0.0;
    m.arm_times_ms.iter_mut().for_each(|t| *t = 0.0);
    m
}

#[test]
fn scenario_runs_are_deterministic() {
    for name in ["ring", "suite_b"] {
        let sc = Scenario::builtin(name).unwrap();
        let a = run_scenario(&sc, Mode::Proposed).unwrap();
        let b = run_scenario(&sc, Mode::Proposed).unwrap();
        assert_eq!(strip_timing(a.metrics), strip_timing(b.metrics));
        assert_eq!(a.body_path, b.body_path);
        assert_eq!(a.ee_path, b.ee_path);
    }
}

#[test]
fn seed_changes_forest() {
    let mut sc = Scenario::builtin("suite_a").unwrap();
    let a = sc.build_map().unwrap();
    sc.seed += 1;
    let b = sc.build_map().unwrap();
    assert_ne!(a.occupancy(), b.occupancy());
}

/// Runs the planner stages directly on a shipped scenario and checks the
/// structural invariants of the end-effector result.
#[test]
fn end_effector_pipeline_invariants() {
    for (name, _) in SHIPPED {
        let sc = Scenario::builtin(name).unwrap();
        let esdf = Arc::new(build_esdf(&sc.build_map().unwrap(), sc.map.sentinel));
        let mut gcfg = sc.guide.clone();
        gcfg.inflation_radius = sc.body.radius;
        let start = Vec3::from(sc.body.start);
        let goal = Vec3::from(sc.body.goal);
        let guide = match plan_guide(&esdf, start, goal, &gcfg).unwrap() {
            GuidePlan::Feasible(o) => o.trajectory,
            GuidePlan::Infeasible { reason, .. } => panic!("{name}: {reason}"),
        };
        let cfg: &EePlanConfig = &sc.ee;
        let req = EePlanRequest {
            guide: &guide,
            xve_start: Vec3::from(sc.arm.start),
            xve_goal: Vec3::from(sc.arm.goal),
            config: cfg,
            esdf: Some(esdf.clone()),
            body_radius: sc.body.radius,
            ee_radius: sc.arm.radius,
        };
        let arm: ArmGeometry<f64> = sc.arm.geometry();
        let r = plan(&req, &arm).unwrap();
        assert!(r.flags.feasible(), "{name}: {:?}", r.flags);
        // Shared knots, by identity.
        assert!(
            r.ee_curve.knots().same_handle(guide.curve.knots()),
            "{name}"
        );
        assert!(
            r.relative_curve.knots().same_handle(guide.curve.knots()),
            "{name}"
        );
        let d = &r.diagnostics;
        assert!(d.last.total <= d.initial.total, "{name}");
        assert!(d.trace.windows(2).all(|w| w[1] <= w[0]), "{name}");
        let (t0, t1) = r.ee_curve.domain();
        for (t, want) in [
            (t0, start + Vec3::from(sc.arm.start)),
            (t1, goal + Vec3::from(sc.arm.goal)),
        ] {
            let before = r.initial_curve.evaluate(t).unwrap();
            let after = r.ee_curve.evaluate(t).unwrap();
            assert!((before - want).max_abs() < 1e-9, "{name}");
            assert!((after - want).max_abs() < 1e-9, "{name}");
        }
    }
}

#[test]
fn proposed_is_never_longer_on_the_suite() {
    let scenarios: Vec<Scenario> = DEFAULT_SUITE
        .iter()
        .map(|n| Scenario::builtin(n).unwrap())
        .collect();
    let cmp = compare(&scenarios, &Mode::BOTH, Some(2)).unwrap();
    assert_eq!(cmp.rows.len(), 6);
    for pair in cmp.rows.chunks(2) {
        let (p, b) = (&pair[0], &pair[1]);
        assert_eq!((p.mode, b.mode), (Mode::Proposed, Mode::Baseline));
        assert!(p.success && b.success);
        assert!(
            p.length_m <= b.length_m + 1e-9,
            "{}: {} > {}",
            p.scenario,
            p.length_m,
            b.length_m
        );
        assert!(p.comp_arm_ms.is_some() && b.comp_arm_ms.is_none());
    }
    assert!(cmp.summary.max_arm_ms.unwrap() >= cmp.summary.mean_arm_ms.unwrap());
}

fn assert_clear_flight(sc: &Scenario, mode: Mode) -> RunMetrics {
    let out = run_scenario(sc, mode).unwrap();
    let m = out.metrics.clone();
    assert!(m.success, "{}/{mode}: {:?}", sc.name, m.failure);
    assert_eq!(m.planning_events, m.replans + 1);
    let rho = sc.inflation(mode);
    for (_, p) in &out.body_path {
        assert!(out.true_esdf.query(*p).distance > rho.min(sc.body.radius));
    }
    for (_, p) in &out.ee_path {
        assert!(out.true_esdf.query(*p).distance > sc.arm.radius);
    }
    let end = out.body_path.last().unwrap().1;
    assert!(end.distance(&Vec3::from(sc.body.goal)) < 1e-6);
    m
}

#[test]
fn reveal_playback_replans_and_stays_clear() {
    let mut sc = Scenario::builtin("corridor").unwrap();
    sc.reveal_radius = 3.0;
    // The slot only admits the proposed radius, so the baseline's first
    // straight plan is invalidated once the wall comes into view.
    let m = assert_clear_flight(&sc, Mode::Baseline);
    assert!(m.replans >= 1);
    let known = run_scenario(&Scenario::builtin("corridor").unwrap(), Mode::Baseline).unwrap();
    assert!(m.length_m >= known.metrics.length_m - 1e-9);

    let mut forest = Scenario::builtin("suite_c").unwrap();
    forest.reveal_radius = 2.0;
    let m = assert_clear_flight(&forest, Mode::Proposed);
    assert!(m.replans >= 1);
}

#[test]
fn baseline_keeps_arm_fixed() {
    let sc = Scenario::builtin("corridor").unwrap();
    let out = run_scenario(&sc, Mode::Baseline).unwrap();
    let offset = out.fixed_arm.unwrap();
    for ((_, x), (_, e)) in out.body_path.iter().zip(&out.ee_path) {
        assert!((*e - *x - offset).max_abs() < 1e-12);
    }
    assert!(out.events.iter().all(|e| e.ee.is_none()));
}
