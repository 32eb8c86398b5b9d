//! Replicated coordination-state update: waypoints, corridors, Voronoi cells
//! and subgoals for every agent.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::{
    build_all_bvcs, build_sfc_box, select_sfc_points, Aabb, ConvexRegion, GeometryError, ObstacleMap,
};
use crate::grid::{GridSpace, VertexId};
use crate::mapf::{find_conflict, GridPath, MapfError, Pibt};
use crate::Vec3;

/// Distance below which a subgoal counts as having reached its waypoint.
pub const REACH_TOL: f64 = 1e-9;
/// Tolerance of the per-step lemma checks.
pub const LEMMA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    NoComm,
    Comm,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nocomm" | "n" => Ok(Mode::NoComm),
            "comm" | "c" => Ok(Mode::Comm),
            other => Err(format!("unknown mode `{other}` (expected nocomm or comm)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::NoComm => "nocomm",
            Mode::Comm => "comm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSpec {
    pub starts: Vec<VertexId>,
    pub goals: Vec<VertexId>,
    pub t0: f64,
    pub ts: f64,
    pub mode: Mode,
    /// Tie-break key shared by every replica.
    #[serde(default)]
    pub mapf_seed: u64,
}

impl MissionSpec {
    pub fn n_agents(&self) -> usize {
        self.starts.len()
    }

    pub fn validate(&self, grid: &GridSpace) -> Result<(), MissionError> {
        let mut v = Vec::new();
        if self.starts.len() != self.goals.len() {
            v.push(MissionViolation::CountMismatch {
                starts: self.starts.len(),
                goals: self.goals.len(),
            });
        }
        if !(self.ts > 0.0) {
            v.push(MissionViolation::BadPeriod(self.ts));
        }
        for (i, &s) in self.starts.iter().enumerate() {
            if grid.is_blocked(s) {
                v.push(MissionViolation::StartBlocked { agent: i });
            }
        }
        for (i, &g) in self.goals.iter().enumerate() {
            if grid.is_blocked(g) {
                v.push(MissionViolation::GoalBlocked { agent: i });
            }
        }
        for (a, b) in duplicate_pairs(&self.starts) {
            v.push(MissionViolation::DuplicateStart { a, b });
        }
        for (a, b) in duplicate_pairs(&self.goals) {
            v.push(MissionViolation::DuplicateGoal { a, b });
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(MissionError(v))
        }
    }
}

fn duplicate_pairs(vs: &[VertexId]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..vs.len() {
        for j in (i + 1)..vs.len() {
            if vs[i] == vs[j] {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum MissionViolation {
    CountMismatch { starts: usize, goals: usize },
    BadPeriod(f64),
    StartNotOnVertex { agent: usize },
    GoalNotOnVertex { agent: usize },
    StartBlocked { agent: usize },
    GoalBlocked { agent: usize },
    DuplicateStart { a: usize, b: usize },
    DuplicateGoal { a: usize, b: usize },
    GridTooCoarse { d: f64, r: f64 },
    GoalUnreachable { agent: usize },
}

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
#[error("invalid mission: {0:?}")]
pub struct MissionError(pub Vec<MissionViolation>);

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum CoordinationError {
    #[error("initial pathfinding failed: {0}")]
    InitialMapf(MapfError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("expected {expected} positions, got {got}")]
    AgentCount { expected: usize, got: usize },
    #[error(transparent)]
    Mission(#[from] MissionError),
}

/// Indices of agents observed to have reached their waypoints.
pub type ReachSet = BTreeSet<usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationState {
    pub h: u64,
    pub waypoint_ids: Vec<VertexId>,
    pub waypoints: Vec<Vec3>,
    pub subgoals: Vec<Vec3>,
    pub sfc: Vec<ConvexRegion>,
    pub bvc: Vec<ConvexRegion>,
    /// Remaining path of each agent; the head is its current waypoint.
    pub paths: Vec<GridPath>,
}

impl CoordinationState {
    pub fn n_agents(&self) -> usize {
        self.waypoints.len()
    }

    /// True when every subgoal sits on its waypoint.
    pub fn all_reached(&self) -> bool {
        (0..self.n_agents()).all(|i| self.reached(i))
    }

    pub fn reached(&self, i: usize) -> bool {
        (self.subgoals[i] - self.waypoints[i]).norm() <= REACH_TOL
    }
}

/// Reach set an agent derives from its own replica of the previous state.
pub fn reach_set(prev: &CoordinationState) -> ReachSet {
    (0..prev.n_agents()).filter(|&j| prev.reached(j)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "anomaly", rename_all = "snake_case")]
pub enum Anomaly {
    MapfFailed { h: u64, error: String },
    SfcFallback { h: u64, agent: usize, points: usize },
    SfcDegenerate { h: u64, agent: usize },
    SubgoalInfeasible { h: u64, agent: usize },
    DuplicateWaypoints { h: u64, a: usize, b: usize },
    SubgoalOffEdge { h: u64, agent: usize },
    SharedEdgeInterior { h: u64, a: usize, b: usize },
    SubgoalOutsideRegions { h: u64, agent: usize },
    SubgoalRegressed { h: u64, agent: usize },
    ReplicaMismatch { h: u64, agent: usize },
    ReplanNearMiss { t: f64, agent: usize },
}

/// Output of a waypoint update.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointUpdate {
    pub waypoints: Vec<VertexId>,
    pub paths: Vec<GridPath>,
    pub mapf_failed: Option<MapfError>,
}

/// Previous waypoint/subgoal data a waypoint update needs.
#[derive(Debug, Clone, Copy)]
pub struct PrevStep<'a> {
    pub h: u64,
    pub waypoints: &'a [VertexId],
    pub reached: &'a [bool],
    pub paths: &'a [GridPath],
}

fn choose_paths(pibt: &Pibt<'_>, prev: &PrevStep<'_>, seed: u64) -> (Vec<GridPath>, Option<MapfError>) {
    match pibt.solve(prev.waypoints, seed) {
        Ok(fresh) => {
            // Partial advancement can leave the old set out of step; only a
            // still-valid joint plan may be reused.
            let valid = prev.paths.iter().zip(prev.waypoints).all(|(p, &w)| p.first() == w)
                && find_conflict(prev.paths).is_none();
            let keep = valid
                && prev
                    .paths
                    .iter()
                    .zip(&fresh)
                    .all(|(old, new)| old.makespan() <= new.makespan());
            if keep {
                (prev.paths.to_vec(), None)
            } else {
                (fresh, None)
            }
        }
        Err(e) => (prev.paths.to_vec(), Some(e)),
    }
}

/// Reverts agents until no two share a waypoint and no two swap waypoints.
/// Returns the final waypoints and which proposals survived.
pub fn resolve_conflicts(proposed: &[VertexId], prev: &[VertexId]) -> (Vec<VertexId>, Vec<bool>) {
    let n = proposed.len();
    let mut w = proposed.to_vec();
    let mut kept: Vec<bool> = (0..n).map(|i| proposed[i] != prev[i]).collect();
    'scan: loop {
        for i in 0..n {
            for j in (i + 1)..n {
                let dup = w[i] == w[j];
                let swap = w[i] == prev[j] && w[j] == prev[i] && w[i] != prev[i];
                if !(dup || swap) {
                    continue;
                }
                let revert = if w[j] != prev[j] { j } else { i };
                if w[revert] == prev[revert] {
                    // Neither moved: an input conflict that cannot be undone.
                    continue;
                }
                w[revert] = prev[revert];
                kept[revert] = false;
                continue 'scan;
            }
        }
        break;
    }
    (w, kept)
}

fn apply_advance(paths: &mut [GridPath], proposed: &[bool], kept: &[bool], moved: &[bool]) {
    for i in 0..paths.len() {
        // Agents whose proposal was their current vertex (a wait or goal)
        // still consume the step; reverted movers keep their path.
        if proposed[i] && (kept[i] || !moved[i]) {
            paths[i].advance();
        }
    }
}

fn advance_set(pibt: &Pibt<'_>, prev: &PrevStep<'_>, seed: u64, advance: &[bool]) -> WaypointUpdate {
    let (mut paths, mapf_failed) = choose_paths(pibt, prev, seed);
    let n = prev.waypoints.len();
    let proposed: Vec<VertexId> = (0..n)
        .map(|i| if advance[i] { paths[i].second() } else { prev.waypoints[i] })
        .collect();
    let moved: Vec<bool> = (0..n).map(|i| proposed[i] != prev.waypoints[i]).collect();
    let (waypoints, kept) = resolve_conflicts(&proposed, prev.waypoints);
    apply_advance(&mut paths, advance, &kept, &moved);
    WaypointUpdate {
        waypoints,
        paths,
        mapf_failed,
    }
}

/// Initial waypoints: the second vertex of fresh paths from the starts.
pub fn initial_waypoints(pibt: &Pibt<'_>, starts: &[VertexId], seed: u64) -> Result<WaypointUpdate, MapfError> {
    let mut paths = pibt.solve(starts, seed)?;
    let waypoints = paths.iter().map(|p| p.second()).collect();
    for p in &mut paths {
        p.advance();
    }
    Ok(WaypointUpdate {
        waypoints,
        paths,
        mapf_failed: None,
    })
}

/// Waypoints advance only once every agent's subgoal has reached its waypoint.
pub fn update_waypoints_nocomm(pibt: &Pibt<'_>, prev: &PrevStep<'_>, seed: u64) -> WaypointUpdate {
    let all = prev.reached.iter().all(|&r| r);
    advance_set(pibt, prev, seed, &vec![all; prev.waypoints.len()])
}

/// Agents in the intersection of all reach sets advance.
pub fn update_waypoints_comm(pibt: &Pibt<'_>, prev: &PrevStep<'_>, seed: u64, reach: &[ReachSet]) -> WaypointUpdate {
    let n = prev.waypoints.len();
    let shared = intersect_reach(reach, n);
    let advance: Vec<bool> = (0..n).map(|i| shared.contains(&i)).collect();
    advance_set(pibt, prev, seed, &advance)
}

pub fn intersect_reach(reach: &[ReachSet], n: usize) -> ReachSet {
    let mut it = reach.iter();
    match it.next() {
        None => (0..n).collect(),
        Some(first) => it.fold(first.clone(), |acc, e| acc.intersection(e).copied().collect()),
    }
}

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
#[error("no point on the segment satisfies every halfspace")]
pub struct SubgoalInfeasible;

/// Point of `[a, w]` closest to `w` inside every region.
pub fn compute_subgoal(w: &Vec3, a: &Vec3, regions: &[&ConvexRegion]) -> Result<Vec3, SubgoalInfeasible> {
    let dir = a - w;
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for region in regions {
        for hs in &region.halfspaces {
            let alpha = hs.eval(w);
            let beta = hs.normal.dot(&dir);
            if beta > 0.0 {
                lo = lo.max(-alpha / beta);
            } else if beta < 0.0 {
                hi = hi.min(-alpha / beta);
            } else if alpha < -LEMMA_TOL {
                return Err(SubgoalInfeasible);
            }
        }
    }
    if lo > hi + 1e-12 || lo > 1.0 + 1e-12 {
        return Err(SubgoalInfeasible);
    }
    if lo <= 0.0 {
        Ok(*w)
    } else if lo >= 1.0 - 1e-12 {
        Ok(*a)
    } else {
        Ok(w + dir * lo)
    }
}

/// Stateless update engine shared by all replicas.
pub struct Coordinator<'a> {
    pub grid: &'a GridSpace,
    pub obstacles: &'a ObstacleMap,
    pub bounds: Aabb,
    pub r: f64,
    /// Smaller radius for corridors when none can be built at `r`, as when
    /// an agent has drifted into the planning buffer. Defaults to `r`.
    pub r_fallback: f64,
    pub mission: MissionSpec,
    pibt: Pibt<'a>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state: CoordinationState,
    pub anomalies: Vec<Anomaly>,
}

impl<'a> Coordinator<'a> {
    pub fn new(
        grid: &'a GridSpace,
        obstacles: &'a ObstacleMap,
        bounds: Aabb,
        r: f64,
        mission: MissionSpec,
    ) -> Result<Self, CoordinationError> {
        mission.validate(grid)?;
        let pibt = Pibt::new(grid, &mission.goals).map_err(CoordinationError::InitialMapf)?;
        Ok(Self {
            grid,
            obstacles,
            bounds,
            r,
            r_fallback: r,
            mission,
            pibt,
        })
    }

    pub fn with_fallback_radius(mut self, r: f64) -> Self {
        self.r_fallback = r.min(self.r);
        self
    }

    pub fn pibt(&self) -> &Pibt<'a> {
        &self.pibt
    }

    /// Corridor for one agent, degrading the seed set when the preferred one
    /// cannot be boxed.
    fn corridor(&self, h: u64, i: usize, p: &Vec3, g_prev: &Vec3, w: &Vec3, out: &mut Vec<Anomaly>) -> ConvexRegion {
        let first = select_sfc_points(h, p, g_prev, w, self.r, self.obstacles);
        let shrink = self.r_fallback < self.r;
        // Sets holding the position come first, at either radius.
        let mut tries: Vec<(Vec<Vec3>, f64)> = vec![(first.clone(), self.r)];
        if first.len() == 3 || h == 0 {
            tries.push((vec![*p, *g_prev], self.r));
        }
        if shrink {
            tries.push((first.clone(), self.r_fallback));
            if first.len() == 3 || h == 0 {
                tries.push((vec![*p, *g_prev], self.r_fallback));
            }
        }
        tries.push((vec![*p], self.r));
        if shrink {
            tries.push((vec![*p], self.r_fallback));
        }
        tries.push((vec![*g_prev], self.r));
        for (k, (pts, r)) in tries.iter().enumerate() {
            if let Ok(b) = build_sfc_box(pts, *r, self.obstacles, &self.bounds) {
                if k > 0 {
                    out.push(Anomaly::SfcFallback { h, agent: i, points: pts.len() });
                }
                return ConvexRegion::from_aabb(&b);
            }
        }
        out.push(Anomaly::SfcDegenerate { h, agent: i });
        ConvexRegion::from_aabb(&Aabb::around(&[*g_prev]).unwrap())
    }

    /// One full update. `prev` is `None` at the first step; `reach` carries
    /// each agent's reach set in communication mode.
    pub fn step(
        &self,
        prev: Option<&CoordinationState>,
        positions: &[Vec3],
        reach: Option<&[ReachSet]>,
    ) -> Result<StepOutput, CoordinationError> {
        let n = self.mission.n_agents();
        if positions.len() != n {
            return Err(CoordinationError::AgentCount { expected: n, got: positions.len() });
        }
        let mut anomalies = Vec::new();
        let h = prev.map_or(0, |s| s.h + 1);
        let seed = self.mission.mapf_seed;

        let (update, anchors): (WaypointUpdate, Vec<Vec3>) = match prev {
            None => {
                let u = initial_waypoints(&self.pibt, &self.mission.starts, seed).map_err(CoordinationError::InitialMapf)?;
                let a = self.mission.starts.iter().map(|&s| self.grid.position(s)).collect();
                (u, a)
            }
            Some(ps) => {
                let reached: Vec<bool> = (0..n).map(|i| ps.reached(i)).collect();
                let pstep = PrevStep {
                    h: ps.h,
                    waypoints: &ps.waypoint_ids,
                    reached: &reached,
                    paths: &ps.paths,
                };
                let u = match (self.mission.mode, reach) {
                    (Mode::Comm, Some(e)) => update_waypoints_comm(&self.pibt, &pstep, seed, e),
                    (Mode::Comm, None) => {
                        let own = reach_set(ps);
                        update_waypoints_comm(&self.pibt, &pstep, seed, std::slice::from_ref(&own))
                    }
                    (Mode::NoComm, _) => update_waypoints_nocomm(&self.pibt, &pstep, seed),
                };
                (u, ps.subgoals.clone())
            }
        };
        if let Some(e) = &update.mapf_failed {
            anomalies.push(Anomaly::MapfFailed { h, error: e.to_string() });
        }
        let waypoints: Vec<Vec3> = update.waypoints.iter().map(|&v| self.grid.position(v)).collect();

        let sfc: Vec<ConvexRegion> = (0..n)
            .map(|i| self.corridor(h, i, &positions[i], &anchors[i], &waypoints[i], &mut anomalies))
            .collect();
        let bvc = build_all_bvcs(positions, &anchors, self.r)?;

        let subgoals: Vec<Vec3> = (0..n)
            .map(|i| match compute_subgoal(&waypoints[i], &anchors[i], &[&sfc[i], &bvc[i]]) {
                Ok(g) => g,
                Err(_) => {
                    anomalies.push(Anomaly::SubgoalInfeasible { h, agent: i });
                    anchors[i]
                }
            })
            .collect();

        let state = CoordinationState {
            h,
            waypoint_ids: update.waypoints,
            waypoints,
            subgoals,
            sfc,
            bvc,
            paths: update.paths,
        };
        anomalies.extend(check_invariants(prev, &state, &anchors, self.grid));
        Ok(StepOutput { state, anomalies })
    }
}

/// Per-step lemma checks: distinct waypoints, subgoal and previous subgoal on
/// one edge incident to the waypoint, at most one subgoal strictly inside
/// any edge, subgoals inside their regions and monotone progress.
pub fn check_invariants(
    prev: Option<&CoordinationState>,
    state: &CoordinationState,
    anchors: &[Vec3],
    grid: &GridSpace,
) -> Vec<Anomaly> {
    let h = state.h;
    let n = state.n_agents();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if state.waypoint_ids[i] == state.waypoint_ids[j] {
                out.push(Anomaly::DuplicateWaypoints { h, a: i, b: j });
            }
        }
    }
    for i in 0..n {
        let w = &state.waypoints[i];
        let g = &state.subgoals[i];
        let a = &anchors[i];
        if !same_edge(grid, w, g, a) {
            out.push(Anomaly::SubgoalOffEdge { h, agent: i });
        }
        if !state.sfc[i].contains(g, LEMMA_TOL) || !state.bvc[i].contains(g, LEMMA_TOL) {
            out.push(Anomaly::SubgoalOutsideRegions { h, agent: i });
        }
        if let Some(p) = prev {
            if p.waypoint_ids[i] == state.waypoint_ids[i] && (g - w).norm() > (p.subgoals[i] - w).norm() + LEMMA_TOL {
                out.push(Anomaly::SubgoalRegressed { h, agent: i });
            }
        }
    }
    let interior: Vec<Option<(VertexId, VertexId)>> = state.subgoals.iter().map(|g| interior_edge(grid, g)).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if let (Some(a), Some(b)) = (interior[i], interior[j]) {
                if a == b {
                    out.push(Anomaly::SharedEdgeInterior { h, a: i, b: j });
                }
            }
        }
    }
    out
}

fn same_edge(grid: &GridSpace, w: &Vec3, g: &Vec3, a: &Vec3) -> bool {
    if !grid.on_edge_from(w, g, LEMMA_TOL) || !grid.on_edge_from(w, a, LEMMA_TOL) {
        return false;
    }
    let (dg, da) = (g - w, a - w);
    if dg.norm() <= LEMMA_TOL || da.norm() <= LEMMA_TOL {
        return true;
    }
    dg.normalize().dot(&da.normalize()) > 1.0 - 1e-9
}

/// Edge whose open interior contains `p` (farther than the tolerance from
/// both ends).
fn interior_edge(grid: &GridSpace, p: &Vec3) -> Option<(VertexId, VertexId)> {
    let rel = (p - grid.origin) / grid.d;
    let mut axis = None;
    let mut base = [0usize; 3];
    for k in 0..3 {
        let r = rel[k].round();
        if (rel[k] - r).abs() * grid.d <= LEMMA_TOL {
            if r < 0.0 {
                return None;
            }
            base[k] = r as usize;
        } else {
            if axis.is_some() {
                return None;
            }
            let f = rel[k].floor();
            if f < 0.0 {
                return None;
            }
            base[k] = f as usize;
            axis = Some(k);
        }
    }
    let k = axis?;
    let mut up = base;
    up[k] += 1;
    if (0..3).any(|j| up[j] >= grid.dims[j]) {
        return None;
    }
    Some((grid.index(base), grid.index(up)))
}
