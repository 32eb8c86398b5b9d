//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! `cargo test --release -p mcswarm --test acceptance` runs everything;
//! criterion numbers as arguments (`-- 04 09`) run a subset.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use mcswarm::coordination::Anomaly;
use mcswarm::geometry::{build_all_bvcs, closest_segment_points, ConvexRegion};
use mcswarm::qp::{solve_qp, QpSettings, QpStatus, QuadProgram};
use mcswarm::scenario::{generate_scenario, AgentSpec, BoxSpec, ParamOverrides, ScenarioFile, ScenarioKind};
use mcswarm::sim::{detect_deadlock, run, SimConfig, SimOutput};
use mcswarm::{Mode, Vec3};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SEP_TOL: f64 = 1e-6;
const BUDGET: f64 = 300.0;
const EMPTY_SIZES: [usize; 4] = [5, 10, 15, 20];
const MODES: [Mode; 2] = [Mode::NoComm, Mode::Comm];

/// What the criteria need from one simulated run.
#[derive(Debug, Clone)]
struct RunSummary {
    kind: ScenarioKind,
    mode: Mode,
    n: usize,
    seed: u64,
    success: bool,
    flight_time: Option<f64>,
    min_separation: f64,
    min_clearance: f64,
    violations: usize,
    r_eff: f64,
    /// Frozen off-goal over the trailing window at the end of the run.
    final_deadlocks: usize,
    /// Agents that sat still off-goal for a full window at some point.
    stalled: usize,
    lemma: LemmaCounts,
    replica_mismatches: usize,
    median_replan_ms: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct LemmaCounts {
    distinct_waypoints: usize,
    subgoal_edge: usize,
    shared_interior: usize,
    outside_regions: usize,
    regressed: usize,
}

impl LemmaCounts {
    fn add(&mut self, o: &LemmaCounts) {
        self.distinct_waypoints += o.distinct_waypoints;
        self.subgoal_edge += o.subgoal_edge;
        self.shared_interior += o.shared_interior;
        self.outside_regions += o.outside_regions;
        self.regressed += o.regressed;
    }

    fn core(&self) -> usize {
        self.distinct_waypoints + self.subgoal_edge + self.shared_interior
    }
}

fn summarize(kind: ScenarioKind, n: usize, seed: u64, cfg: &SimConfig, out: &SimOutput) -> RunSummary {
    let m = &out.metrics;
    let mut lemma = LemmaCounts::default();
    let mut replica_mismatches = 0;
    for a in out.trace.anomalies() {
        match a {
            Anomaly::DuplicateWaypoints { .. } => lemma.distinct_waypoints += 1,
            Anomaly::SubgoalOffEdge { .. } => lemma.subgoal_edge += 1,
            Anomaly::SharedEdgeInterior { .. } => lemma.shared_interior += 1,
            Anomaly::SubgoalOutsideRegions { .. } => lemma.outside_regions += 1,
            Anomaly::SubgoalRegressed { .. } => lemma.regressed += 1,
            Anomaly::ReplicaMismatch { .. } => replica_mismatches += 1,
            _ => {}
        }
    }
    RunSummary {
        kind,
        mode: cfg.mode,
        n,
        seed,
        success: m.success,
        flight_time: m.flight_time,
        min_separation: m.min_separation,
        min_clearance: m.min_clearance,
        violations: m.safety_violations,
        r_eff: cfg.r_eff(),
        final_deadlocks: detect_deadlock(&out.trace, cfg.deadlock_window).iter().filter(|v| v.deadlocked).count(),
        stalled: m.deadlocked_agents.len(),
        lemma,
        replica_mismatches,
        median_replan_ms: m.runtime.replan_ms.median,
    }
}

fn simulate(file: &ScenarioFile, base: &SimConfig, seed: u64, mode: Mode) -> (SimConfig, SimOutput) {
    let mut r = file.resolve(base, seed).expect("scenario resolves");
    r.config.mode = mode;
    let out = run(&r.workspace, &r.mission, &r.config).expect("simulation runs");
    (r.config, out)
}

fn run_generated(kind: ScenarioKind, n: usize, seed: u64, mode: Mode, base: &SimConfig) -> RunSummary {
    let file = generate_scenario(kind, n, seed).expect("generator");
    let (cfg, out) = simulate(&file, base, seed, mode);
    summarize(kind, n, seed, &cfg, &out)
}

fn base_config() -> SimConfig {
    SimConfig { time_budget: BUDGET, record_states: false, ..Default::default() }
}

fn run_all(jobs: Vec<(ScenarioKind, usize, u64, Mode)>, base: &SimConfig) -> Vec<RunSummary> {
    jobs.into_par_iter().map(|(k, n, s, m)| run_generated(k, n, s, m, base)).collect()
}

struct Suites {
    empty: Vec<RunSummary>,
    cluttered: Vec<RunSummary>,
}

impl Suites {
    fn build() -> Self {
        let t = Instant::now();
        let base = base_config();
        let mut jobs = Vec::new();
        for mode in MODES {
            for n in EMPTY_SIZES {
                jobs.extend((0..30).map(|s| (ScenarioKind::Empty, n, s, mode)));
            }
        }
        let empty = run_all(jobs, &base);
        let mut jobs = Vec::new();
        for mode in MODES {
            for (kind, n) in [
                (ScenarioKind::Forest, 10),
                (ScenarioKind::Forest2d, 10),
                (ScenarioKind::Maze, 8),
                (ScenarioKind::Maze2d, 8),
            ] {
                jobs.extend((0..10).map(|s| (kind, n, s, mode)));
            }
        }
        let cluttered = run_all(jobs, &base);
        eprintln!("      (suites of criteria 01-02 simulated in {:.0} s)", t.elapsed().as_secs_f64());
        Self { empty, cluttered }
    }

    fn all(&self) -> impl Iterator<Item = &RunSummary> {
        self.empty.iter().chain(&self.cluttered)
    }
}

fn describe(r: &RunSummary) -> String {
    format!("{}-n{}-s{}-{}", r.kind.name(), r.n, r.seed, r.mode)
}

fn list(runs: &[&RunSummary]) -> String {
    let names: Vec<String> = runs.iter().take(6).map(|r| describe(r)).collect();
    let more = if runs.len() > 6 { format!(" +{}", runs.len() - 6) } else { String::new() };
    format!("[{}{more}]", names.join(", "))
}

fn safe(r: &RunSummary) -> bool {
    r.violations == 0 && r.min_separation >= 2.0 * r.r_eff - SEP_TOL && r.min_clearance >= -SEP_TOL
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

type Verdict = (bool, String);

fn success_line(runs: &[RunSummary]) -> Verdict {
    let mut by_mode = BTreeMap::new();
    for r in runs {
        let e = by_mode.entry(r.mode.to_string()).or_insert((0, 0));
        e.0 += r.success as usize;
        e.1 += 1;
    }
    let failed: Vec<&RunSummary> = runs.iter().filter(|r| !r.success).collect();
    let counts: Vec<String> = by_mode.iter().map(|(m, (ok, all))| format!("{m} {ok}/{all}")).collect();
    let mut msg = counts.join(", ");
    if !failed.is_empty() {
        msg.push_str(&format!("; failed {}", list(&failed)));
    }
    (failed.is_empty(), msg)
}

fn c01(s: &Suites) -> Verdict {
    success_line(&s.empty)
}

fn c02(s: &Suites) -> Verdict {
    success_line(&s.cluttered)
}

fn c03(s: &Suites) -> Verdict {
    let runs: Vec<&RunSummary> = s.all().collect();
    let bad: Vec<&RunSummary> = runs.iter().copied().filter(|r| !safe(r)).collect();
    let min_sep = runs.iter().map(|r| r.min_separation).fold(f64::INFINITY, f64::min);
    let min_clr = runs.iter().map(|r| r.min_clearance).fold(f64::INFINITY, f64::min);
    let mut msg = format!(
        "{} runs, min separation {min_sep:.4} m (need >= {:.4}), min clearance {min_clr:.4} m",
        runs.len(),
        2.0 * runs[0].r_eff - SEP_TOL
    );
    if !bad.is_empty() {
        let v: usize = bad.iter().map(|r| r.violations).sum();
        msg.push_str(&format!("; {v} violation samples in {}", list(&bad)));
    }
    (bad.is_empty(), msg)
}

fn c04() -> Verdict {
    let mut base = base_config();
    base.failure_injection_rate = 0.3;
    base.steps = 3;
    base.dt = 0.05;
    base.tr = 0.2;
    assert!(base.dynamics().horizon() < base.tr);
    let runs = run_all((0..30).map(|s| (ScenarioKind::Empty, 10, s, Mode::NoComm)).collect(), &base);
    let bad: Vec<&RunSummary> = runs.iter().filter(|r| !safe(r)).collect();
    let min_sep = runs.iter().map(|r| r.min_separation).fold(f64::INFINITY, f64::min);
    let ok = runs.iter().filter(|r| r.success).count();
    let mut msg = format!("T = 0.15 s < Tr = 0.2 s, 30 runs, min separation {min_sep:.4} m, {ok}/30 finished");
    if !bad.is_empty() {
        msg.push_str(&format!("; unsafe {}", list(&bad)));
    }
    (bad.is_empty(), msg)
}

/// Planar strip `[0, 3] x [0, 1]` at z = 1 with the given vertices blocked.
fn strip(blocked: &[(f64, f64)], agents: &[((f64, f64), (f64, f64))]) -> ScenarioFile {
    let d = 0.5;
    ScenarioFile {
        name: "corridor-swap".into(),
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

fn c05(s: &Suites) -> Verdict {
    let runs: Vec<&RunSummary> = s.all().collect();
    let frozen: Vec<&RunSummary> = runs.iter().copied().filter(|r| r.final_deadlocks > 0).collect();
    let stalls: usize = runs.iter().map(|r| r.stalled).sum();
    // Two agents swap the ends of a two-lane corridor.
    let walls: Vec<(f64, f64)> = (0..7).map(|k| (0.5 * k as f64, 0.0)).collect();
    let file = strip(&walls, &[((0.0, 0.5), (3.0, 0.5)), ((3.0, 0.5), (0.0, 0.5))]);
    let mut swaps = 0;
    let mut swap_ok = 0;
    for mode in MODES {
        for seed in 0..5 {
            let (cfg, out) = simulate(&file, &base_config(), seed, mode);
            swaps += 1;
            let sum = summarize(ScenarioKind::Empty, 2, seed, &cfg, &out);
            if sum.success && sum.final_deadlocks == 0 && safe(&sum) {
                swap_ok += 1;
            }
        }
    }
    let mut msg = format!(
        "{} runs, {} frozen at the end of the budget; corridor swap {swap_ok}/{swaps}; {stalls} agent(s) paused >= 10 s mid-run",
        runs.len(),
        frozen.iter().map(|r| r.final_deadlocks).sum::<usize>()
    );
    if !frozen.is_empty() {
        msg.push_str(&format!("; frozen in {}", list(&frozen)));
    }
    (frozen.is_empty() && swap_ok == swaps, msg)
}

fn rand_point(rng: &mut ChaCha8Rng, half: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-half..half), rng.gen_range(-half..half), rng.gen_range(-half..half))
}

/// Random point of `cell`, by rejection around `near`.
fn sample_in(cell: &ConvexRegion, near: &Vec3, rng: &mut ChaCha8Rng) -> Option<Vec3> {
    (0..50).map(|_| near + rand_point(rng, 0.6)).find(|x| cell.contains(x, 0.0))
}

/// Sampled members of cells built from segments at least 2r apart stay 2r apart.
fn bvc_constructions(count: usize, r: f64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = 0;
    let mut closest = f64::INFINITY;
    let mut built = 0;
    while built < count {
        let n = rng.gen_range(2..=6);
        let p: Vec<Vec3> = (0..n).map(|_| rand_point(&mut rng, 1.5)).collect();
        let g: Vec<Vec3> = p.iter().map(|x| x + rand_point(&mut rng, 0.4)).collect();
        let apart = (0..n).all(|i| ((i + 1)..n).all(|j| closest_segment_points(&p[i], &g[i], &p[j], &g[j]).distance() >= 2.0 * r));
        if !apart {
            continue;
        }
        built += 1;
        let cells = build_all_bvcs(&p, &g, r).expect("cells");
        let samples: Vec<Vec<Vec3>> = (0..n)
            .map(|i| (0..20).filter_map(|_| sample_in(&cells[i], &p[i], &mut rng)).collect())
            .collect();
        for i in 0..n {
            for j in (i + 1)..n {
                for x in &samples[i] {
                    for y in &samples[j] {
                        let d = (x - y).norm();
                        closest = closest.min(d);
                        if d < 2.0 * r - 1e-9 {
                            failures += 1;
                        }
                    }
                }
            }
        }
    }
    (failures, closest)
}

fn c06(s: &Suites) -> Verdict {
    let mut total = LemmaCounts::default();
    let mut bad = Vec::new();
    for r in s.all() {
        total.add(&r.lemma);
        if r.lemma.core() > 0 {
            bad.push(r);
        }
    }
    let r = base_config().r_eff();
    let (bvc_failures, closest) = bvc_constructions(1000, r);
    let mut msg = format!(
        "distinct waypoints {} / subgoal edge {} / shared interior {} failures; 1000 cells, {bvc_failures} pairs under 2r (closest {closest:.4} m)",
        total.distinct_waypoints, total.subgoal_edge, total.shared_interior
    );
    if total.outside_regions + total.regressed > 0 {
        msg.push_str(&format!(
            "; note: {} subgoal-outside-region and {} regression events",
            total.outside_regions, total.regressed
        ));
    }
    if !bad.is_empty() {
        msg.push_str(&format!("; in {}", list(&bad)));
    }
    (total.core() == 0 && bvc_failures == 0, msg)
}

fn c07(s: &Suites) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [15, 20] {
        let ft = |mode: Mode| {
            mean(s.empty.iter().filter(|r| r.n == n && r.mode == mode).map(|r| r.flight_time.unwrap_or(f64::INFINITY)))
        };
        let (c, nc) = (ft(Mode::Comm), ft(Mode::NoComm));
        ok &= c <= nc;
        parts.push(format!("N={n}: comm {c:.2} s vs nocomm {nc:.2} s"));
    }
    (ok, parts.join(", "))
}

fn c08() -> Verdict {
    let picks = [
        (ScenarioKind::Empty, 10, 0, Mode::NoComm),
        (ScenarioKind::Empty, 10, 1, Mode::Comm),
        (ScenarioKind::Empty, 20, 2, Mode::Comm),
        (ScenarioKind::Forest, 10, 3, Mode::Comm),
        (ScenarioKind::Forest2d, 10, 4, Mode::NoComm),
    ];
    let results: Vec<(usize, bool)> = picks
        .par_iter()
        .map(|&(kind, n, seed, mode)| {
            let file = generate_scenario(kind, n, seed).expect("generator");
            let replicated = SimConfig { replicate: true, ..base_config() };
            let (cfg, out) = simulate(&file, &replicated, seed, mode);
            let mismatches = summarize(kind, n, seed, &cfg, &out).replica_mismatches;
            let a = simulate(&file, &base_config(), seed, mode).1;
            let b = simulate(&file, &base_config(), seed, mode).1;
            (mismatches, a.trace == b.trace && a.trace.to_jsonl() == b.trace.to_jsonl())
        })
        .collect();
    let mismatches: usize = results.iter().map(|r| r.0).sum();
    let identical = results.iter().filter(|r| r.1).count();
    (
        mismatches == 0 && identical == picks.len(),
        format!("{} runs, {mismatches} replica mismatches, {identical}/{} same-seed traces identical", picks.len(), picks.len()),
    )
}

fn c09() -> Verdict {
    use common::oracle::*;
    let settings = QpSettings::default();
    let mut worst = 0.0f64;
    let mut wrong = 0;
    for seed in 0..25 {
        let (p, lo, hi) = random_box_qp(1000 + seed);
        match solve_qp(&p, &settings) {
            Ok(s) if s.status == QpStatus::Optimal => worst = worst.max(rel_gap(s.objective, box_oracle(&p, &lo, &hi))),
            _ => wrong += 1,
        }
        let p = random_general_qp(2000 + seed);
        match solve_qp(&p, &settings) {
            Ok(s) if s.status == QpStatus::Optimal => worst = worst.max(rel_gap(s.objective, dual_oracle(&p))),
            _ => wrong += 1,
        }
    }
    let infeasible = [
        QuadProgram::new(DMatrix::identity(3, 3), DVector::zeros(3)).with_inequalities(
            DMatrix::from_row_slice(2, 3, &[-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            DVector::from_vec(vec![-1.0, 0.0]),
        ),
        QuadProgram::new(DMatrix::identity(2, 2), DVector::zeros(2)).with_inequalities(
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            DVector::from_vec(vec![-1.0, 0.0, 0.0]),
        ),
        QuadProgram::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DVector::from_vec(vec![2.0]))
            .with_inequalities(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DVector::from_vec(vec![1.0])),
    ];
    let flagged = infeasible
        .iter()
        .filter(|p| solve_qp(p, &settings).is_ok_and(|s| s.status == QpStatus::Infeasible))
        .count();
    (
        wrong == 0 && worst <= 1e-4 && flagged == infeasible.len(),
        format!(
            "50 QPs, worst relative gap {worst:.2e}, {wrong} not solved; {flagged}/{} infeasible fixtures flagged",
            infeasible.len()
        ),
    )
}

fn c10(s: &Suites) -> Verdict {
    let medians: Vec<f64> = s.empty.iter().filter(|r| r.n == 20).map(|r| r.median_replan_ms).collect();
    let worst = medians.iter().copied().fold(0.0, f64::max);
    let mut sorted = medians.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted[sorted.len() / 2];
    (worst <= 50.0, format!("N=20, per-run median replan {mid:.2} ms typical, {worst:.2} ms worst (limit 50 ms)"))
}

const TITLES: [&str; 10] = [
    "success in empty space",
    "success in forest and maze",
    "separation and clearance",
    "safety under injected failures",
    "no deadlock",
    "coordination lemmas",
    "communication shortens flights",
    "replicas and traces agree",
    "solver matches oracle",
    "replan time",
];

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let pick = |k: usize| wanted.is_empty() || wanted.contains(&k);
    let needs_suites = [1, 2, 3, 5, 6, 7, 10].iter().any(|&k| pick(k));
    let suites = needs_suites.then(Suites::build);
    let mut failed = 0;
    for k in 1..=10 {
        if !pick(k) {
            continue;
        }
        let s = suites.as_ref();
        let (ok, detail) = match k {
            1 => c01(s.unwrap()),
            2 => c02(s.unwrap()),
            3 => c03(s.unwrap()),
            4 => c04(),
            5 => c05(s.unwrap()),
            6 => c06(s.unwrap()),
            7 => c07(s.unwrap()),
            8 => c08(),
            9 => c09(),
            _ => c10(s.unwrap()),
        };
        failed += !ok as usize;
        println!("{} {k:02} {}: {detail}", if ok { "PASS" } else { "FAIL" }, TITLES[k - 1]);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
