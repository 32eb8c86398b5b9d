//! Plot data from traces.
//!
//! `positions.csv` columns: `t` (s), `agent`, `x`, `y`, `z` (m), sampled
//! every `audit_dt` from `t0` to the last event.
//! `coordination.csv` columns: `h`, `t` (s), `agent`, waypoint `wx wy wz` and
//! subgoal `gx gy gz` (m), one row per agent and coordination step.

use std::io::Write;

use crate::sim::{trace::sample_timeline, SimTrace, TraceEvent};

pub const POSITION_COLUMNS: [&str; 5] = ["t", "agent", "x", "y", "z"];
pub const COORDINATION_COLUMNS: [&str; 9] = ["h", "t", "agent", "wx", "wy", "wz", "gx", "gy", "gz"];

#[derive(thiserror::Error, Debug)]
pub enum ExportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("audit_dt must be positive, got {0}")]
    Step(f64),
}

/// Number of samples per agent for a run of `duration` seconds.
pub fn sample_count(duration: f64, dt: f64) -> usize {
    // Guard against 0.1/0.001 = 100.00000000000001 style rounding.
    let k = duration / dt;
    let r = k.round();
    let steps = if (k - r).abs() < 1e-9 { r } else { k.ceil() };
    steps.max(0.0) as usize + 1
}

pub fn write_positions<W: Write>(trace: &SimTrace, w: W) -> Result<usize, ExportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(POSITION_COLUMNS)?;
    let Some(header) = trace.header() else {
        out.flush()?;
        return Ok(0);
    };
    let dt = header.audit_dt;
    if !(dt > 0.0) {
        return Err(ExportError::Step(dt));
    }
    let t0 = header.t0;
    let t1 = trace.t_end().unwrap_or(t0).max(t0);
    let count = sample_count(t1 - t0, dt);
    let mut rows = 0;
    for (agent, segs) in trace.timelines().iter().enumerate() {
        for k in 0..count {
            let t = t0 + k as f64 * dt;
            let Some(s) = sample_timeline(segs, t) else { continue };
            out.write_record(&[
                format!("{t:.6}"),
                agent.to_string(),
                s.p.x.to_string(),
                s.p.y.to_string(),
                s.p.z.to_string(),
            ])?;
            rows += 1;
        }
    }
    out.flush()?;
    Ok(rows)
}

pub fn write_coordination<W: Write>(trace: &SimTrace, w: W) -> Result<usize, ExportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(COORDINATION_COLUMNS)?;
    let mut rows = 0;
    for e in &trace.events {
        if let TraceEvent::Coord { h, t, waypoints, subgoals, .. } = e {
            for (agent, (wp, g)) in waypoints.iter().zip(subgoals).enumerate() {
                let mut rec = vec![h.to_string(), t.to_string(), agent.to_string()];
                rec.extend(wp.iter().chain(g.iter()).map(|v| v.to_string()));
                out.write_record(&rec)?;
                rows += 1;
            }
        }
    }
    out.flush()?;
    Ok(rows)
}
