//! Run traces and their JSONL encoding.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::coordination::Anomaly;
use crate::geometry::{Aabb, ConvexRegion, ObstacleMap};
use crate::trajectory::{ReplanStatus, State, Trajectory};
use crate::Vec3;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub n_agents: usize,
    pub t0: f64,
    pub audit_dt: f64,
    pub r_eff: f64,
    pub bounds: Aabb,
    pub obstacles: ObstacleMap,
    pub starts: Vec<Vec3>,
    pub goals: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Header(TraceHeader),
    /// A trajectory becomes the agent's active plan from `trajectory.t_start`.
    Segment { agent: usize, trajectory: Trajectory },
    Coord {
        h: u64,
        t: f64,
        waypoints: Vec<Vec3>,
        subgoals: Vec<Vec3>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sfc: Option<Vec<ConvexRegion>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bvc: Option<Vec<ConvexRegion>>,
    },
    State { t: f64, states: Vec<State> },
    Replan { t: f64, agent: usize, status: ReplanStatus },
    Anomaly { t: f64, anomaly: Anomaly },
    Arrival { t: f64, agent: usize },
    End { t: f64, success: bool },
}

impl TraceEvent {
    pub fn time(&self) -> Option<f64> {
        match self {
            TraceEvent::Header(h) => Some(h.t0),
            TraceEvent::Segment { trajectory, .. } => Some(trajectory.t_start),
            TraceEvent::Coord { t, .. }
            | TraceEvent::State { t, .. }
            | TraceEvent::Replan { t, .. }
            | TraceEvent::Anomaly { t, .. }
            | TraceEvent::Arrival { t, .. }
            | TraceEvent::End { t, .. } => Some(*t),
        }
    }
}

#[derive(thiserror::Error, Debug)]
pub enum TraceError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("trace has no header")]
    MissingHeader,
}

/// Chronological event log of one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimTrace {
    pub events: Vec<TraceEvent>,
}

impl SimTrace {
    pub fn header(&self) -> Option<&TraceHeader> {
        self.events.iter().find_map(|e| match e {
            TraceEvent::Header(h) => Some(h),
            _ => None,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Last event time.
    pub fn t_end(&self) -> Option<f64> {
        self.events.iter().filter_map(|e| e.time()).fold(None, |m, t| Some(m.map_or(t, |m: f64| m.max(t))))
    }

    /// Active-plan history of each agent, ordered by activation time.
    pub fn timelines(&self) -> Vec<Vec<Trajectory>> {
        let n = self.header().map_or(0, |h| h.n_agents);
        let mut out = vec![Vec::new(); n];
        for e in &self.events {
            if let TraceEvent::Segment { agent, trajectory } = e {
                if *agent < n {
                    out[*agent].push(trajectory.clone());
                }
            }
        }
        out
    }

    pub fn anomalies(&self) -> impl Iterator<Item = &Anomaly> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Anomaly { anomaly, .. } => Some(anomaly),
            _ => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e).map_err(|source| TraceError::Parse { line: 0, source })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: k + 1, source })?;
            events.push(e);
        }
        Ok(Self { events })
    }
}

/// Position of an agent at `t` given its plan history.
pub fn sample_timeline(segments: &[Trajectory], t: f64) -> Option<State> {
    let idx = segments.partition_point(|s| s.t_start <= t);
    if idx == 0 {
        return None;
    }
    segments[idx - 1].sample(t).ok()
}
