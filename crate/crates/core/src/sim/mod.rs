//! Deterministic discrete-event simulation of the whole swarm.
//!
//! Coordination steps fire at `t0 + h·Ts` for all agents at once; every agent
//! also replans its own trajectory at randomized times at most `Tr` apart.
//! Agents follow their nominal trajectories exactly.

pub mod audit;
pub mod trace;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use audit::{audit_safety, detect_deadlock, AuditReport, DeadlockVerdict, Violation};
pub use trace::{SimTrace, TraceEvent, TraceHeader};

use crate::coordination::{
    reach_set, Anomaly, CoordinationError, CoordinationState, Coordinator, MissionError, MissionSpec, Mode, ReachSet,
};
use crate::geometry::{Aabb, ObstacleMap};
use crate::grid::{build_grid, GridError, GridSpace};
use crate::trajectory::{
    replan, ConstraintWindow, DynamicsModel, ReplanStatus, Trajectory, TrajectoryConfig, WindowEntry,
};
use crate::Vec3;

/// Arrival: within 1 mm of the goal and slower than 1 cm/s.
pub const ARRIVAL_POS_TOL: f64 = 1e-3;
pub const ARRIVAL_SPEED_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplanJitter {
    /// Gaps are drawn uniformly from `[min_frac·Tr, Tr]`.
    pub min_frac: f64,
}

impl Default for ReplanJitter {
    fn default() -> Self {
        Self { min_frac: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub ts: f64,
    pub tr: f64,
    pub replan_jitter: ReplanJitter,
    pub time_budget: f64,
    pub failure_injection_rate: f64,
    /// Overrides the mission's mode.
    pub mode: Mode,
    pub audit_dt: f64,
    /// Physical radius; planning uses `radius + safety_margin`.
    pub radius: f64,
    pub safety_margin: f64,
    pub v_max: f64,
    pub u_max: f64,
    pub steps: usize,
    pub dt: f64,
    pub trajectory: TrajectoryConfig,
    /// Every agent computes its own coordination replica and the results are
    /// compared.
    pub replicate: bool,
    /// Store corridors and Voronoi cells in the trace.
    pub record_regions: bool,
    /// Store per-step agent states in the trace.
    pub record_states: bool,
    pub deadlock_window: f64,
    /// Extra clearance used by the planner only; the audit still checks
    /// `r_eff`.
    pub planning_buffer: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            ts: 0.02,
            tr: 0.2,
            replan_jitter: ReplanJitter::default(),
            time_budget: 60.0,
            failure_injection_rate: 0.0,
            mode: Mode::NoComm,
            audit_dt: 1e-3,
            radius: 0.075,
            safety_margin: 0.075,
            v_max: 1.0,
            u_max: 5.0,
            steps: 5,
            dt: 0.2,
            trajectory: TrajectoryConfig::default(),
            replicate: false,
            record_regions: false,
            record_states: true,
            deadlock_window: 10.0,
            planning_buffer: 0.01,
        }
    }
}

impl SimConfig {
    pub fn r_eff(&self) -> f64 {
        self.radius + self.safety_margin
    }

    pub fn r_plan(&self) -> f64 {
        self.r_eff() + self.planning_buffer
    }

    pub fn dynamics(&self) -> DynamicsModel {
        DynamicsModel::new(self.dt, self.steps, self.v_max, self.u_max)
    }
}

/// Static environment shared by every run of a scenario.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub bounds: Aabb,
    pub obstacles: ObstacleMap,
    pub grid: GridSpace,
}

impl Workspace {
    pub fn new(bounds: Aabb, d: f64, obstacles: ObstacleMap, r: f64) -> Result<Self, GridError> {
        let grid = build_grid(&bounds, d, &obstacles, r)?;
        Ok(Self { bounds, obstacles, grid })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl Stats {
    pub fn from_samples(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Self {
            count: n,
            mean: v.iter().sum::<f64>() / n as f64,
            median,
            max: v[n - 1],
        }
    }
}

/// Wall-clock measurements; not reproducible and kept apart from outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub replan_ms: Stats,
    pub coordination_ms: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub success: bool,
    /// Last arrival minus `t0`, when every agent arrived.
    pub flight_time: Option<f64>,
    pub arrival_times: Vec<Option<f64>>,
    pub sim_end: f64,
    pub coordination_steps: u64,
    pub replans: usize,
    pub replan_failures: usize,
    pub injected_failures: usize,
    pub min_separation: f64,
    pub min_clearance: f64,
    pub safety_violations: usize,
    pub anomalies: usize,
    pub deadlocked_agents: Vec<usize>,
    pub runtime: RuntimeStats,
}

impl Metrics {
    /// Equality ignoring wall-clock measurements.
    pub fn same_outcome(&self, other: &Metrics) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.runtime = RuntimeStats::default();
        b.runtime = RuntimeStats::default();
        serde_json::to_string(&a).ok() == serde_json::to_string(&b).ok()
    }
}

#[derive(thiserror::Error, Debug)]
pub enum SimError {
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: SimTrace,
    pub metrics: Metrics,
    pub audit: AuditReport,
}

struct CoordRecord {
    t: f64,
    state: CoordinationState,
}

fn validate_cfg(cfg: &SimConfig) -> Result<(), SimError> {
    let bad = |m: &str| Err(SimError::Config(m.to_string()));
    if !(cfg.ts > 0.0) || !(cfg.tr > 0.0) {
        return bad("periods must be positive");
    }
    if cfg.ts > cfg.tr {
        return bad("Ts must not exceed Tr");
    }
    if !(cfg.audit_dt > 0.0) {
        return bad("audit_dt must be positive");
    }
    if !(0.0..=1.0).contains(&cfg.failure_injection_rate) {
        return bad("failure_injection_rate must lie in [0, 1]");
    }
    if !(0.0..=1.0).contains(&cfg.replan_jitter.min_frac) {
        return bad("replan jitter fraction must lie in [0, 1]");
    }
    if !(cfg.dt > 0.0) || cfg.steps == 0 {
        return bad("dt must be positive and steps at least 1");
    }
    Ok(())
}

/// Runs a mission to completion or until the time budget expires.
pub fn run(ws: &Workspace, mission: &MissionSpec, cfg: &SimConfig) -> Result<SimOutput, SimError> {
    validate_cfg(cfg)?;
    let mut mission = mission.clone();
    mission.mode = cfg.mode;
    mission.ts = cfg.ts;
    mission.validate(&ws.grid)?;
    let n = mission.n_agents();
    let r_eff = cfg.r_eff();
    let t0 = mission.t0;
    let starts: Vec<Vec3> = mission.starts.iter().map(|&v| ws.grid.position(v)).collect();
    let goals: Vec<Vec3> = mission.goals.iter().map(|&v| ws.grid.position(v)).collect();

    let mut trace = SimTrace::default();
    if n == 0 {
        let metrics = Metrics {
            success: true,
            flight_time: Some(0.0),
            arrival_times: vec![],
            sim_end: t0,
            coordination_steps: 0,
            replans: 0,
            replan_failures: 0,
            injected_failures: 0,
            min_separation: f64::INFINITY,
            min_clearance: f64::INFINITY,
            safety_violations: 0,
            anomalies: 0,
            deadlocked_agents: vec![],
            runtime: RuntimeStats::default(),
        };
        let audit = audit_safety(&trace, r_eff, &ws.obstacles);
        return Ok(SimOutput { trace, metrics, audit });
    }

    trace.events.push(TraceEvent::Header(TraceHeader {
        version: trace::TRACE_VERSION,
        n_agents: n,
        t0,
        audit_dt: cfg.audit_dt,
        r_eff,
        bounds: ws.bounds,
        obstacles: ws.obstacles.clone(),
        starts: starts.clone(),
        goals: goals.clone(),
    }));

    let coordinator =
        Coordinator::new(&ws.grid, &ws.obstacles, ws.bounds, cfg.r_plan(), mission.clone())?.with_fallback_radius(r_eff);
    let dynm = cfg.dynamics();
    let t_limit = t0 + cfg.time_budget.max(0.0);

    let mut trajs: Vec<Trajectory> = starts.iter().map(|&p| Trajectory::hold(t0, p, cfg.dt, cfg.steps)).collect();
    for (i, t) in trajs.iter().enumerate() {
        trace.events.push(TraceEvent::Segment { agent: i, trajectory: t.clone() });
    }

    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(i as u64 + 1);
            r
        })
        .collect();
    let mut next_replan: Vec<f64> = rngs.iter_mut().map(|r| t0 + r.gen_range(0.0..cfg.tr)).collect();
    let gap_lo = cfg.replan_jitter.min_frac * cfg.tr;

    let mut history: std::collections::VecDeque<CoordRecord> = Default::default();
    let mut replicas: Vec<Option<CoordinationState>> = vec![None; if cfg.replicate { n } else { 0 }];
    let mut h: u64 = 0;
    let mut replan_ms = Vec::new();
    let mut coord_ms = Vec::new();
    let mut replans = 0usize;
    let mut failures = 0usize;
    let mut injected = 0usize;
    let mut anomaly_count = 0usize;
    let mut arrival: Vec<Option<f64>> = vec![None; n];
    let mut still_anchor: Vec<(Vec3, f64)> = starts.iter().map(|&p| (p, t0)).collect();
    let mut deadlocked: Vec<bool> = vec![false; n];
    let mut success = false;
    let mut t_now = t0;

    let mut log_anomaly = |trace: &mut SimTrace, t: f64, a: Anomaly| {
        anomaly_count += 1;
        trace.events.push(TraceEvent::Anomaly { t, anomaly: a });
    };

    loop {
        let t_coord = t0 + h as f64 * cfg.ts;
        let (ri, t_rep) = next_replan
            .iter()
            .enumerate()
            .fold((usize::MAX, f64::INFINITY), |(bi, bt), (i, &t)| if t < bt { (i, t) } else { (bi, bt) });
        let coord_first = t_coord <= t_rep;
        let t_event = if coord_first { t_coord } else { t_rep };
        if t_event > t_limit + 1e-12 {
            break;
        }
        t_now = t_event;

        if coord_first {
            let states: Vec<_> = trajs.iter().map(|tr| tr.sample(t_coord).expect("active plan")).collect();
            let positions: Vec<Vec3> = states.iter().map(|s| s.p).collect();
            let prev = history.back().map(|r| &r.state);
            let reach: Option<Vec<ReachSet>> = match (cfg.mode, prev) {
                (Mode::Comm, Some(_)) if cfg.replicate => {
                    Some(replicas.iter().map(|s| reach_set(s.as_ref().expect("replica"))).collect())
                }
                (Mode::Comm, Some(p)) => Some(vec![reach_set(p); n]),
                _ => None,
            };
            let started = Instant::now();
            let out = match coordinator.step(prev, &positions, reach.as_deref()) {
                Ok(o) => o,
                Err(e) => {
                    log_anomaly(&mut trace, t_coord, Anomaly::MapfFailed { h, error: e.to_string() });
                    break;
                }
            };
            coord_ms.push(started.elapsed().as_secs_f64() * 1e3);
            if cfg.replicate {
                let reference = serde_json::to_string(&out.state).expect("serializable");
                for i in 0..n {
                    let own = match coordinator.step(replicas[i].as_ref(), &positions, reach.as_deref()) {
                        Ok(o) => o.state,
                        Err(_) => {
                            log_anomaly(&mut trace, t_coord, Anomaly::ReplicaMismatch { h, agent: i });
                            continue;
                        }
                    };
                    if serde_json::to_string(&own).expect("serializable") != reference {
                        log_anomaly(&mut trace, t_coord, Anomaly::ReplicaMismatch { h, agent: i });
                    }
                    replicas[i] = Some(own);
                }
            }
            for a in out.anomalies {
                log_anomaly(&mut trace, t_coord, a);
            }
            trace.events.push(TraceEvent::Coord {
                h,
                t: t_coord,
                waypoints: out.state.waypoints.clone(),
                subgoals: out.state.subgoals.clone(),
                sfc: cfg.record_regions.then(|| out.state.sfc.clone()),
                bvc: cfg.record_regions.then(|| out.state.bvc.clone()),
            });
            if cfg.record_states {
                trace.events.push(TraceEvent::State { t: t_coord, states: states.clone() });
            }

            let mut all_home = true;
            for i in 0..n {
                let home = (positions[i] - goals[i]).norm() <= ARRIVAL_POS_TOL && states[i].v.norm() <= ARRIVAL_SPEED_TOL;
                if home {
                    if arrival[i].is_none() {
                        arrival[i] = Some(t_coord);
                        trace.events.push(TraceEvent::Arrival { t: t_coord, agent: i });
                    }
                    still_anchor[i] = (positions[i], t_coord);
                } else {
                    all_home = false;
                    arrival[i] = None;
                    if (positions[i] - still_anchor[i].0).norm() > audit::DEADLOCK_MOTION_TOL {
                        still_anchor[i] = (positions[i], t_coord);
                    } else if t_coord - still_anchor[i].1 >= cfg.deadlock_window {
                        deadlocked[i] = true;
                    }
                }
            }

            history.push_back(CoordRecord { t: t_coord, state: out.state });
            while history.len() > 1 && history.front().is_some_and(|r| r.t < t_coord - cfg.tr - 2.0 * cfg.ts) {
                history.pop_front();
            }
            h += 1;
            if all_home {
                success = true;
                break;
            }
        } else {
            let i = ri;
            let t = t_rep;
            let lo = t - cfg.tr - cfg.ts - 1e-12;
            let window = ConstraintWindow {
                entries: history
                    .iter()
                    .filter(|r| r.t >= lo && r.t <= t + 1e-12)
                    .map(|r| WindowEntry { h: r.state.h, sfc: r.state.sfc[i].clone(), bvc: r.state.bvc[i].clone() })
                    .collect(),
            };
            let g = history.back().expect("coordination precedes replanning").state.subgoals[i];
            replans += 1;
            let inject = cfg.failure_injection_rate > 0.0 && rngs[i].gen::<f64>() < cfg.failure_injection_rate;
            let status = if inject {
                injected += 1;
                ReplanStatus::Injected
            } else {
                let started = Instant::now();
                let out = replan(t, &trajs[i], &window, &g, &dynm, &cfg.trajectory);
                replan_ms.push(started.elapsed().as_secs_f64() * 1e3);
                if out.status.replaces_trajectory() {
                    trajs[i] = out.trajectory;
                    trace.events.push(TraceEvent::Segment { agent: i, trajectory: trajs[i].clone() });
                }
                if !out.status.is_success() {
                    failures += 1;
                }
                out.status
            };
            trace.events.push(TraceEvent::Replan { t, agent: i, status });
            let gap = rngs[i].gen_range(gap_lo..=cfg.tr);
            next_replan[i] = t + gap;
        }
    }

    trace.events.push(TraceEvent::End { t: t_now, success });
    let audit = audit_safety(&trace, r_eff, &ws.obstacles);
    let flight_time = if success {
        arrival.iter().map(|a| a.unwrap_or(t_now)).fold(t0, f64::max).into()
    } else {
        None
    }
    .map(|t: f64| t - t0);
    let metrics = Metrics {
        success,
        flight_time,
        arrival_times: arrival.iter().map(|a| a.map(|t| t - t0)).collect(),
        sim_end: t_now - t0,
        coordination_steps: h,
        replans,
        replan_failures: failures,
        injected_failures: injected,
        min_separation: audit.min_separation,
        min_clearance: audit.min_clearance,
        safety_violations: audit.violation_count,
        anomalies: anomaly_count,
        deadlocked_agents: (0..n).filter(|&i| deadlocked[i]).collect(),
        runtime: RuntimeStats {
            replan_ms: Stats::from_samples(&replan_ms),
            coordination_ms: Stats::from_samples(&coord_ms),
        },
    };
    Ok(SimOutput { trace, metrics, audit })
}
