use std::collections::BTreeMap;

use mcswarm::batch::{self, BatchJob, RunRecord};
use mcswarm::coordination::Anomaly;
use mcswarm::export;
use mcswarm::scenario::{generate_scenario, AgentSpec, BoxSpec, ParamOverrides, ScenarioFile, ScenarioKind};
use mcswarm::sim::{run, SimConfig, SimOutput, TraceEvent};
use mcswarm::Mode;

/// Planar strip `[0, 3] x [0, 1]` at z = 1 with the given vertices blocked.
fn strip(name: &str, blocked: &[(f64, f64)], agents: &[((f64, f64), (f64, f64))]) -> ScenarioFile {
    let d = 0.5;
    ScenarioFile {
        name: name.into(),
        bounds_min_m: [0.0, 0.0, 1.0],
        bounds_max_m: [3.0, 1.0, 1.2],
        d_m: d,
        obstacles: blocked
            .iter()
            .map(|&(x, y)| BoxSpec { min_m: [x - d / 2.0, y - d / 2.0, 0.5], max_m: [x + d / 2.0, y + d / 2.0, 1.7] })
            .collect(),
        agents: agents
            .iter()
            .map(|&((sx, sy), (gx, gy))| AgentSpec { start_m: [sx, sy, 1.0], goal_m: [gx, gy, 1.0] })
            .collect(),
        mode: Mode::NoComm,
        params: ParamOverrides::default(),
    }
}

fn simulate(file: &ScenarioFile, cfg: &SimConfig, seed: u64) -> SimOutput {
    let r = file.resolve(cfg, seed).unwrap();
    run(&r.workspace, &r.mission, &r.config).unwrap()
}

fn small_empty(seed: u64) -> ScenarioFile {
    generate_scenario(ScenarioKind::Empty, 4, seed).unwrap()
}

#[test]
fn same_seed_same_trace() {
    let file = small_empty(3);
    let cfg = SimConfig { failure_injection_rate: 0.2, ..Default::default() };
    let a = simulate(&file, &cfg, 7);
    let b = simulate(&file, &cfg, 7);
    assert!(a.metrics.success);
    assert_eq!(a.trace, b.trace);
    assert!(a.metrics.same_outcome(&b.metrics));
    assert_eq!(a.trace.to_jsonl(), b.trace.to_jsonl());
    // A different seed changes the replan schedule.
    let c = simulate(&file, &cfg, 8);
    assert_ne!(a.trace, c.trace);
}

#[test]
fn replicas_agree_in_both_modes() {
    let file = small_empty(4);
    for mode in [Mode::NoComm, Mode::Comm] {
        let mut f = file.clone();
        f.mode = mode;
        let cfg = SimConfig { replicate: true, ..Default::default() };
        let out = simulate(&f, &cfg, 0);
        assert!(out.metrics.success, "{mode}");
        let mismatches = out.trace.anomalies().filter(|a| matches!(a, Anomaly::ReplicaMismatch { .. })).count();
        assert_eq!(mismatches, 0, "{mode}");
    }
}

#[test]
fn corridor_swap_completes() {
    // Two-lane corridor: every edge lies on a cycle, the class where PIBT
    // reaches all goals. A dead-end pocket can exceed the step horizon.
    let walls: Vec<(f64, f64)> = (0..7).map(|k| (0.5 * k as f64, 0.0)).collect();
    let file = strip("swap", &walls, &[((0.0, 0.5), (3.0, 0.5)), ((3.0, 0.5), (0.0, 0.5))]);
    for (mode, seed) in [Mode::NoComm, Mode::Comm].into_iter().flat_map(|m| (0..4).map(move |s| (m, s))) {
        let cfg = SimConfig { mode, time_budget: 120.0, ..Default::default() };
        let mut f = file.clone();
        f.mode = mode;
        let out = simulate(&f, &cfg, seed);
        let m = &out.metrics;
        assert!(m.success, "{mode} seed {seed}: {:?} {:?}", m.arrival_times, out.trace.anomalies().next());
        assert_eq!(m.safety_violations, 0);
        assert!(m.min_separation >= cfg.r_eff() * 2.0 - 1e-6);
        assert!(m.min_clearance >= -1e-9);
        assert!(m.deadlocked_agents.is_empty());
        // Someone must have left the lane to pass.
        let passed = out.trace.events.iter().any(|e| match e {
            TraceEvent::Coord { waypoints, .. } => waypoints.iter().any(|w| (w.y - 1.0).abs() < 1e-9),
            _ => false,
        });
        assert!(passed, "{mode}");
    }
}

#[test]
fn walled_off_goal_is_a_failed_run() {
    let wall: Vec<(f64, f64)> = (0..3).map(|k| (1.5, 0.5 * k as f64)).collect();
    let file = strip("walled", &wall, &[((0.0, 0.5), (3.0, 0.5))]);
    let jobs = vec![BatchJob { label: "walled".into(), scenario: file, seed: 0, mode: None }];
    let base = SimConfig { time_budget: 5.0, ..Default::default() };
    let report = batch::run_batch(&jobs, &base, None).unwrap();
    assert!(!report.all_succeeded());
    assert_eq!(report.records.len(), 1);
    assert!(!report.records[0].success);
    assert_eq!(report.summary[0].successes, 0);
}

fn parse_summary(bytes: &[u8]) -> Vec<BTreeMap<String, String>> {
    let mut rd = csv::Reader::from_reader(bytes);
    let head = rd.headers().unwrap().clone();
    rd.records()
        .map(|r| head.iter().zip(r.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

#[test]
fn summary_matches_per_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let files = vec![("a".to_string(), small_empty(1)), ("b".to_string(), small_empty(2))];
    let jobs = batch::jobs_for(&files, &[0, 1], Some(Mode::NoComm));
    let report = batch::run_batch(&jobs, &SimConfig::default(), Some(dir.path())).unwrap();
    let records = batch::load_records(dir.path()).unwrap();
    assert_eq!(records.len(), 4);
    for r in &report.records {
        assert!(records.contains(r));
        assert!(dir.path().join(r.file_name()).exists());
    }
    let table = parse_summary(&std::fs::read(dir.path().join("summary.csv")).unwrap());
    assert_eq!(table.len(), 2);
    for row in &table {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.scenario == row["scenario"]).collect();
        assert_eq!(row["runs"].parse::<usize>().unwrap(), runs.len());
        let ok: Vec<&&RunRecord> = runs.iter().filter(|r| r.success).collect();
        assert_eq!(row["successes"].parse::<usize>().unwrap(), ok.len());
        let rate: f64 = row["success_rate"].parse().unwrap();
        assert!((rate - ok.len() as f64 / runs.len() as f64).abs() < 1e-12);
        let ft = ok.iter().map(|r| r.flight_time_s.unwrap()).sum::<f64>() / ok.len() as f64;
        assert!((row["mean_flight_time_s"].parse::<f64>().unwrap() - ft).abs() < 1e-9);
        let rp = runs.iter().filter_map(|r| r.mean_replan_ms).sum::<f64>() / runs.len() as f64;
        assert!((row["mean_replan_ms"].parse::<f64>().unwrap() - rp).abs() < 1e-9);
        let v: usize = runs.iter().map(|r| r.safety_violations).sum();
        assert_eq!(row["safety_violations"].parse::<usize>().unwrap(), v);
    }
}

#[test]
fn position_export_has_one_row_per_sample() {
    let file = strip("solo", &[], &[((0.0, 0.0), (3.0, 1.0))]);
    let cfg = SimConfig::default();
    let out = simulate(&file, &cfg, 0);
    assert!(out.metrics.success);
    let h = out.trace.header().unwrap();
    let duration = out.trace.t_end().unwrap() - h.t0;
    let k = duration / h.audit_dt;
    let expected = if (k - k.round()).abs() < 1e-9 { k.round() } else { k.ceil() } as usize + 1;
    let mut buf = Vec::new();
    let rows = export::write_positions(&out.trace, &mut buf).unwrap();
    assert_eq!(rows, expected);
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), expected + 1);
    // The last sample is the goal.
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert!((last[2] - 3.0).abs() < 1e-3 && (last[3] - 1.0).abs() < 1e-3);
}
