//! Post-hoc safety and deadlock checks over a trace.

use serde::{Deserialize, Serialize};

use super::trace::{sample_timeline, SimTrace};
use crate::geometry::ObstacleMap;
use crate::Vec3;

pub const SAFETY_TOL: f64 = 1e-6;
const MAX_LISTED: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Separation { t: f64, a: usize, b: usize, distance: f64 },
    Obstacle { t: f64, agent: usize, clearance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub min_separation: f64,
    pub min_clearance: f64,
    pub samples: usize,
    pub violation_count: usize,
    /// First violations found (capped).
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_safe(&self) -> bool {
        self.violation_count == 0
    }
}

/// Sample times: a regular `audit_dt` grid over the trace plus every knot.
fn sample_times(trace: &SimTrace, audit_dt: f64) -> Vec<f64> {
    let (Some(h), Some(t_end)) = (trace.header(), trace.t_end()) else {
        return Vec::new();
    };
    let t0 = h.t0;
    let k_max = ((t_end - t0) / audit_dt - 1e-9).ceil().max(0.0) as usize;
    let mut ts: Vec<f64> = (0..=k_max).map(|k| (t0 + k as f64 * audit_dt).min(t_end)).collect();
    for segs in trace.timelines() {
        for s in segs {
            for k in 0..=s.steps() {
                let t = s.knot_time(k);
                if t >= t0 && t <= t_end {
                    ts.push(t);
                }
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// Positions of every agent at `t`; agents without a plan yet are skipped.
pub fn positions_at(timelines: &[Vec<crate::trajectory::Trajectory>], t: f64) -> Vec<Option<Vec3>> {
    timelines.iter().map(|s| sample_timeline(s, t).map(|x| x.p)).collect()
}

pub fn audit_safety(trace: &SimTrace, r_eff: f64, obstacles: &ObstacleMap) -> AuditReport {
    let audit_dt = trace.header().map_or(1e-3, |h| h.audit_dt);
    audit_safety_at(trace, r_eff, obstacles, audit_dt)
}

pub fn audit_safety_at(trace: &SimTrace, r_eff: f64, obstacles: &ObstacleMap, audit_dt: f64) -> AuditReport {
    let timelines = trace.timelines();
    let times = sample_times(trace, audit_dt);
    let mut rep = AuditReport {
        min_separation: f64::INFINITY,
        min_clearance: f64::INFINITY,
        samples: times.len(),
        violation_count: 0,
        violations: Vec::new(),
    };
    let push = |rep: &mut AuditReport, v: Violation| {
        rep.violation_count += 1;
        if rep.violations.len() < MAX_LISTED {
            rep.violations.push(v);
        }
    };
    for &t in &times {
        let pos = positions_at(&timelines, t);
        for i in 0..pos.len() {
            let Some(pi) = pos[i] else { continue };
            let c = obstacles.distance(&pi) - r_eff;
            rep.min_clearance = rep.min_clearance.min(c);
            if c < -SAFETY_TOL {
                push(&mut rep, Violation::Obstacle { t, agent: i, clearance: c });
            }
            for j in (i + 1)..pos.len() {
                let Some(pj) = pos[j] else { continue };
                let d = (pi - pj).norm();
                rep.min_separation = rep.min_separation.min(d);
                if d < 2.0 * r_eff - SAFETY_TOL {
                    push(&mut rep, Violation::Separation { t, a: i, b: j, distance: d });
                }
            }
        }
    }
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadlockVerdict {
    pub agent: usize,
    pub deadlocked: bool,
    /// Largest displacement from the window start inside the window.
    pub motion: f64,
    pub goal_distance: f64,
}

pub const DEADLOCK_MOTION_TOL: f64 = 1e-3;
pub const GOAL_TOL: f64 = 1e-3;

/// Flags agents that stay within 1 mm over the trailing `window` seconds
/// while away from their goal.
pub fn detect_deadlock(trace: &SimTrace, window: f64) -> Vec<DeadlockVerdict> {
    let (Some(h), Some(t_end)) = (trace.header(), trace.t_end()) else {
        return Vec::new();
    };
    let timelines = trace.timelines();
    let t_start = (t_end - window).max(h.t0);
    let step = 0.01;
    let k_max = ((t_end - t_start) / step).ceil() as usize;
    (0..h.n_agents)
        .map(|i| {
            let segs = &timelines[i];
            let Some(anchor) = sample_timeline(segs, t_start) else {
                return DeadlockVerdict { agent: i, deadlocked: false, motion: 0.0, goal_distance: f64::NAN };
            };
            let mut motion = 0.0f64;
            for k in 0..=k_max {
                let t = (t_start + k as f64 * step).min(t_end);
                if let Some(x) = sample_timeline(segs, t) {
                    motion = motion.max((x.p - anchor.p).norm());
                }
            }
            let last = sample_timeline(segs, t_end).map_or(anchor.p, |x| x.p);
            let goal_distance = (last - h.goals[i]).norm();
            DeadlockVerdict {
                agent: i,
                deadlocked: motion < DEADLOCK_MOTION_TOL && goal_distance > GOAL_TOL,
                motion,
                goal_distance,
            }
        })
        .collect()
}
