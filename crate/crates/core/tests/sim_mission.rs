use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::OnceLock;

use coverplan::sim::{self, EventKind, MissionOutcome, OutputToggles};
use coverplan::world::{CellState, Scenario};
use coverplan::{scenarios, Error, Vec3};

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn corridor() -> &'static (Scenario, MissionOutcome) {
    static RUN: OnceLock<(Scenario, MissionOutcome)> = OnceLock::new();
    RUN.get_or_init(|| {
        let s = Scenario::load(shipped("corridor_static")).unwrap();
        let o = sim::run_mission(&s).unwrap();
        (s, o)
    })
}

#[test]
fn shipped_files_match_builders() {
    for name in scenarios::NAMES {
        let file = Scenario::load(shipped(name)).unwrap();
        let built = scenarios::by_name(name).unwrap().unwrap();
        assert_eq!(file, built, "{name}");
    }
}

#[test]
fn report_coverage_is_recomputable_from_scan_log() {
    let (_, o) = corridor();
    let r = &o.report;
    assert_eq!(sim::coverage_from_log(&o.scan_log, r.inspectable_cells), r.coverage_rate);
    let unique: BTreeSet<usize> = o.scan_log.iter().map(|e| e.cell).collect();
    assert_eq!(unique.len(), o.scan_log.len(), "a cell is logged once");
    assert!((0.0..=1.0).contains(&r.coverage_rate));
}

#[test]
fn coverage_is_monotone_in_time() {
    let (_, o) = corridor();
    assert!(o.scan_log.windows(2).all(|w| w[0].time_s <= w[1].time_s));
    assert!(o.telemetry.windows(2).all(|w| w[0].scanned <= w[1].scanned && w[0].time_s < w[1].time_s));
}

#[test]
fn clock_advances_by_fixed_step() {
    let (s, o) = corridor();
    let dt = s.params.mpc_dt_s;
    for (k, row) in o.telemetry.iter().enumerate() {
        assert_eq!(row.time_s, (k + 1) as f64 * dt);
    }
}

#[test]
fn static_mission_keeps_clearance_and_covers() {
    let (s, o) = corridor();
    let r = &o.report;
    assert_eq!(r.collisions, 0);
    assert!(r.min_clearance_m >= s.params.robot_radius_m);
    assert!(r.coverage_rate >= 0.99, "{}", r.coverage_rate);
    assert!(o.telemetry.iter().all(|t| t.true_clearance_m >= s.params.robot_radius_m));
}

#[test]
fn arrivals_are_plan_minus_abandoned() {
    let (_, o) = corridor();
    let arrivals: Vec<usize> = o
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Arrived { viewpoint } => Some(viewpoint),
            _ => None,
        })
        .collect();
    assert_eq!(arrivals, o.report.arrival_sequence);
    let abandoned: BTreeSet<usize> = o.report.abandoned.iter().map(|a| a.id).collect();
    let expected: Vec<usize> = o.report.planned_sequence.iter().copied().filter(|v| !abandoned.contains(v)).collect();
    assert_eq!(arrivals, expected);
}

#[test]
fn online_map_keeps_reference_walls_near_the_path() {
    let (s, o) = corridor();
    let geo = s.geometry();
    let range = s.params.sensor_range_m;
    let path: Vec<Vec3> = o.telemetry.iter().step_by(10).map(|t| t.p).collect();
    for i in s.reference.occupied_indices() {
        let c = geo.center_linear(i);
        if path.iter().any(|p| (p - c).norm() <= range) {
            assert_eq!(o.online_map.state_linear(i), CellState::Occupied);
        }
    }
    // Without unforeseen content the sensor never disagrees with the prior.
    assert_eq!(o.online_map, s.reference);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let (s, a) = corridor();
    let b = sim::run_mission(s).unwrap();
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    assert_eq!(sim::telemetry_csv(&a.telemetry), sim::telemetry_csv(&b.telemetry));
    assert_eq!(sim::events_jsonl(&a.events).unwrap(), sim::events_jsonl(&b.events).unwrap());
    assert_eq!(sim::coverage_ply(a), sim::coverage_ply(&b));
}

#[test]
fn outputs_are_written_and_reproducible() {
    let (s, o) = corridor();
    let d1 = tempdir("out1");
    let d2 = tempdir("out2");
    sim::write_outputs(s, o, &d1, OutputToggles::default()).unwrap();
    sim::write_outputs(s, o, &d2, OutputToggles::default()).unwrap();
    for f in ["report.json", "events.jsonl", "plan.json", "telemetry.csv", "coverage.ply", "mission.svg"] {
        let a = std::fs::read(d1.join(f)).unwrap();
        let b = std::fs::read(d2.join(f)).unwrap();
        assert!(!a.is_empty(), "{f}");
        assert_eq!(a, b, "{f}");
    }
    let csv = std::fs::read_to_string(d1.join("telemetry.csv")).unwrap();
    assert_eq!(csv.lines().count(), o.telemetry.len() + 1);
    let only = tempdir("out3");
    sim::write_outputs(s, o, &only, OutputToggles { svg: false, ply: false, csv: true }).unwrap();
    assert!(only.join("telemetry.csv").exists());
    assert!(!only.join("mission.svg").exists() && !only.join("coverage.ply").exists());
    for d in [d1, d2, only] {
        std::fs::remove_dir_all(d).unwrap();
    }
}

fn tempdir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("coverplan-sim-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn empty_surfaces_fail_before_flight() {
    let mut s = scenarios::corridor(false).unwrap();
    s.surfaces.clear();
    match sim::run_mission(&s) {
        Err(Error::Mission(m)) => assert!(m.contains("no inspectable surface")),
        other => panic!("expected a mission error, got {:?}", other.map(|o| o.report)),
    }
}

#[test]
fn blocked_viewpoints_are_adapted_or_reported() {
    let s = Scenario::load(shipped("corridor_obstacles")).unwrap();
    let o = sim::run_mission(&s).unwrap();
    let r = &o.report;
    assert_eq!(r.collisions, 0);
    assert!(r.adaptation_events >= 1);
    let adapted: BTreeSet<usize> = o
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Adapted(a) => Some(a.blocked_viewpoints.clone()),
            _ => None,
        })
        .flatten()
        .collect();
    assert_eq!(adapted.len(), r.adapted);
    for a in &r.abandoned {
        assert!(!r.arrival_sequence.contains(&a.id));
        assert!(!a.reason.is_empty());
    }
    assert_eq!(r.visited + r.abandoned.len(), r.planned_sequence.len());
}
