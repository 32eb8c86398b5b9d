//! Double-integrator trajectories and the windowed trajectory QP.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, Matrix6, Matrix6x3};
use serde::{Deserialize, Serialize};

use crate::geometry::{ConvexRegion, RegionKind};
use crate::qp::{solve_qp, QpSettings, QpStatus, QuadProgram};
use crate::Vec3;

/// Tightening applied to the open velocity and input bounds.
pub const BOUND_SHRINK: f64 = 1e-9;
/// Tolerance of the independent knot re-check after a solve.
pub const KNOT_TOL: f64 = 1e-7;
/// Penalty on the shared slack of the least-violation fallback.
pub const SOFT_WEIGHT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub p: Vec3,
    pub v: Vec3,
}

impl State {
    pub fn at_rest(p: Vec3) -> Self {
        Self { p, v: Vec3::zeros() }
    }

    fn step(&self, u: &Vec3, dt: f64) -> Self {
        Self {
            p: self.p + self.v * dt + u * (0.5 * dt * dt),
            v: self.v + u * dt,
        }
    }
}

/// Zero-order-hold transition `x+ = A x + B u` for state `(p, v)`.
pub fn discretize(dt: f64) -> (Matrix6<f64>, Matrix6x3<f64>) {
    let mut a = Matrix6::identity();
    let mut b = Matrix6x3::zeros();
    for k in 0..3 {
        a[(k, k + 3)] = dt;
        b[(k, k)] = 0.5 * dt * dt;
        b[(k + 3, k)] = dt;
    }
    (a, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub a: Matrix6<f64>,
    pub b: Matrix6x3<f64>,
    pub dt: f64,
    pub m: usize,
    pub v_max: f64,
    pub u_max: f64,
}

impl DynamicsModel {
    pub fn new(dt: f64, m: usize, v_max: f64, u_max: f64) -> Self {
        assert!(dt > 0.0 && m > 0, "dt > 0 and at least one step");
        let (a, b) = discretize(dt);
        Self { a, b, dt, m, v_max, u_max }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.m as f64
    }

    pub fn propagate(&self, x: &State, u: &Vec3) -> State {
        let s = self.a * nalgebra::Vector6::new(x.p.x, x.p.y, x.p.z, x.v.x, x.v.y, x.v.z) + self.b * u;
        State {
            p: Vec3::new(s[0], s[1], s[2]),
            v: Vec3::new(s[3], s[4], s[5]),
        }
    }
}

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("sample time {t} precedes trajectory start {t_start}")]
    BeforeStart { t: f64, t_start: f64 },
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRepr {
    t_start: f64,
    dt: f64,
    x0: State,
    u: Vec<Vec3>,
}

/// Piecewise-constant-input trajectory held at its last knot afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TrajectoryRepr", into = "TrajectoryRepr")]
pub struct Trajectory {
    pub t_start: f64,
    pub dt: f64,
    pub x0: State,
    pub u: Vec<Vec3>,
    knots: Vec<State>,
}

impl From<TrajectoryRepr> for Trajectory {
    fn from(r: TrajectoryRepr) -> Self {
        Trajectory::new(r.t_start, r.dt, r.x0, r.u)
    }
}

impl From<Trajectory> for TrajectoryRepr {
    fn from(t: Trajectory) -> Self {
        TrajectoryRepr {
            t_start: t.t_start,
            dt: t.dt,
            x0: t.x0,
            u: t.u,
        }
    }
}

impl Trajectory {
    pub fn new(t_start: f64, dt: f64, x0: State, u: Vec<Vec3>) -> Self {
        let mut knots = Vec::with_capacity(u.len() + 1);
        knots.push(x0);
        for uk in &u {
            let last = *knots.last().unwrap();
            knots.push(last.step(uk, dt));
        }
        Self { t_start, dt, x0, u, knots }
    }

    /// Stationary trajectory at `p`.
    pub fn hold(t_start: f64, p: Vec3, dt: f64, m: usize) -> Self {
        Self::new(t_start, dt, State::at_rest(p), vec![Vec3::zeros(); m])
    }

    pub fn steps(&self) -> usize {
        self.u.len()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.u.len() as f64
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.horizon()
    }

    pub fn knots(&self) -> &[State] {
        &self.knots
    }

    pub fn knot_time(&self, k: usize) -> f64 {
        self.t_start + self.dt * k as f64
    }

    pub fn final_position(&self) -> Vec3 {
        self.knots.last().unwrap().p
    }

    pub fn sample(&self, t: f64) -> Result<State, TrajectoryError> {
        if t < self.t_start {
            return Err(TrajectoryError::BeforeStart { t, t_start: self.t_start });
        }
        let m = self.u.len();
        let tau_all = t - self.t_start;
        if tau_all >= self.horizon() || m == 0 {
            return Ok(State::at_rest(self.final_position()));
        }
        let k = ((tau_all / self.dt).floor() as usize).min(m - 1);
        let tau = tau_all - self.dt * k as f64;
        let x = &self.knots[k];
        let u = &self.u[k];
        Ok(State {
            p: x.p + x.v * tau + u * (0.5 * tau * tau),
            v: x.v + u * tau,
        })
    }

    /// Quadratic Bezier middle control point of step `k`.
    pub fn control_point(&self, k: usize) -> Vec3 {
        let x = &self.knots[k];
        x.p + x.v * (0.5 * self.dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub h: u64,
    pub sfc: ConvexRegion,
    pub bvc: ConvexRegion,
}

/// Regions from every coordination step in `[t - Tr - Ts, t]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintWindow {
    pub entries: Vec<WindowEntry>,
}

impl ConstraintWindow {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn regions(&self) -> impl Iterator<Item = &ConvexRegion> {
        self.entries.iter().flat_map(|e| [&e.sfc, &e.bvc])
    }

    pub fn contains(&self, x: &Vec3, tol: f64) -> bool {
        self.regions().all(|r| r.contains(x, tol))
    }
}

/// Which points of each step are constrained to the window regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SafetyPoints {
    /// Knots only.
    KnotsOnly,
    /// Knots plus the Bezier middle control points, so every step's convex
    /// hull (and therefore the continuous path) stays inside.
    Hull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub w_e: f64,
    pub w_a: f64,
    pub safety_points: SafetyPoints,
    /// Drop rows that cannot bind given the velocity bound.
    pub prune_rows: bool,
    /// Drop bitwise-identical rows.
    pub dedupe_rows: bool,
    /// On infeasibility, retry with the oldest window entries dropped before
    /// falling back to the previous trajectory.
    pub relax_window: bool,
    /// When no window is feasible, fly the least-violation plan rather than
    /// the previous trajectory.
    pub soft_fallback: bool,
    pub qp: QpSettings,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            w_e: 100.0,
            w_a: 0.1,
            safety_points: SafetyPoints::Hull,
            prune_rows: true,
            dedupe_rows: true,
            relax_window: true,
            soft_fallback: true,
            qp: QpSettings::default(),
        }
    }
}

/// Affine map `point = c + G u` for every constrained point.
struct Condensed {
    /// (constant, 3 x 3M gain, time offset from start in units of dt)
    points: Vec<(Vec3, DMatrix<f64>, f64)>,
    terminal_c: Vec3,
    terminal_g: DMatrix<f64>,
}

fn condense(x0: &State, dynm: &DynamicsModel, safety: SafetyPoints) -> Condensed {
    let m = dynm.m;
    let dt = dynm.dt;
    let n = 3 * m;
    let pos = |k: usize| -> (Vec3, DMatrix<f64>) {
        let c = x0.p + x0.v * (dt * k as f64);
        let mut g = DMatrix::zeros(3, n);
        for j in 0..k {
            let gain = dt * dt * (k as f64 - j as f64 - 0.5);
            for a in 0..3 {
                g[(a, 3 * j + a)] = gain;
            }
        }
        (c, g)
    };
    let vel = |k: usize| -> (Vec3, DMatrix<f64>) {
        let mut g = DMatrix::zeros(3, n);
        for j in 0..k {
            for a in 0..3 {
                g[(a, 3 * j + a)] = dt;
            }
        }
        (x0.v, g)
    };
    let mut points = Vec::new();
    for k in 0..=m {
        let (c, g) = pos(k);
        points.push((c, g, k as f64));
    }
    if safety == SafetyPoints::Hull {
        for k in 1..m {
            let (cp, gp) = pos(k);
            let (cv, gv) = vel(k);
            points.push((cp + cv * (0.5 * dt), gp + gv * (0.5 * dt), k as f64 + 0.5));
        }
    }
    let (terminal_c, terminal_g) = pos(m);
    Condensed { points, terminal_c, terminal_g }
}

/// Trajectory QP over the inputs `u_0..u_{M-1}` (stacked, 3M variables).
pub fn build_trajectory_qp(
    x0: &State,
    window: &ConstraintWindow,
    g: &Vec3,
    dynm: &DynamicsModel,
    cfg: &TrajectoryConfig,
) -> QuadProgram {
    let regions: Vec<(&ConvexRegion, bool)> = window.regions().map(|r| (r, false)).collect();
    assemble(x0, &regions, g, dynm, cfg, None)
}

/// Least-violation program: the single `corridor` is hard, every Voronoi
/// cell of the window is relaxed by one shared slack `s >= 0` penalised by
/// `rho s²`.
pub fn build_soft_trajectory_qp(
    x0: &State,
    window: &ConstraintWindow,
    corridor: &ConvexRegion,
    g: &Vec3,
    dynm: &DynamicsModel,
    cfg: &TrajectoryConfig,
    rho: f64,
) -> QuadProgram {
    let mut regions = vec![(corridor, false)];
    regions.extend(window.entries.iter().map(|e| (&e.bvc, true)));
    assemble(x0, &regions, g, dynm, cfg, Some(rho))
}

fn assemble(
    x0: &State,
    regions: &[(&ConvexRegion, bool)],
    g: &Vec3,
    dynm: &DynamicsModel,
    cfg: &TrajectoryConfig,
    soft: Option<f64>,
) -> QuadProgram {
    let m = dynm.m;
    let nu = 3 * m;
    let n = nu + soft.is_some() as usize;
    let dt = dynm.dt;
    let cd = condense(x0, dynm, cfg.safety_points);

    let gt = &cd.terminal_g;
    let hu = (gt.transpose() * gt * cfg.w_e + DMatrix::identity(nu, nu) * cfg.w_a) * 2.0;
    let resid = DVector::from_column_slice((cd.terminal_c - g).as_slice());
    let fu = gt.transpose() * resid * (2.0 * cfg.w_e);
    let mut h = DMatrix::zeros(n, n);
    h.view_mut((0, 0), (nu, nu)).copy_from(&((&hu + hu.transpose()) * 0.5));
    let mut f = DVector::zeros(n);
    f.rows_mut(0, nu).copy_from(&fu);
    if let Some(rho) = soft {
        h[(nu, nu)] = 2.0 * rho;
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let reach = cfg_reach(x0, dynm);

    for &(region, relax) in regions {
        for hs in &region.halfspaces {
            let l1 = hs.normal.abs().sum();
            let base = hs.eval(&x0.p);
            for (c, gk, tk) in &cd.points {
                let slack0 = hs.eval(c);
                let constant = gk.iter().all(|&v| v == 0.0);
                if constant {
                    if slack0 >= -KNOT_TOL * 1e-2 && !relax || slack0 >= 0.0 {
                        continue;
                    }
                } else if cfg.prune_rows && base - l1 * reach * tk * dt > 1e-9 {
                    continue;
                }
                // -(nᵀ G) u <= nᵀ c - o
                let nrow = DMatrix::from_row_slice(1, 3, hs.normal.as_slice());
                let a = -(nrow * gk);
                let mut row: Vec<f64> = a.iter().copied().collect();
                if soft.is_some() {
                    row.push(if relax { -1.0 } else { 0.0 });
                }
                if cfg.dedupe_rows {
                    let mut key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
                    key.push(slack0.to_bits());
                    if !seen.insert(key) {
                        continue;
                    }
                }
                rows.push(row);
                rhs.push(slack0);
            }
            if cfg.safety_points == SafetyPoints::Hull && !relax {
                if let Some(gamma) = first_interval_bound(base, hs.normal.dot(&x0.v), dt) {
                    // n·u_0 >= gamma
                    let mut row = vec![0.0; n];
                    for a in 0..3 {
                        row[a] = -hs.normal[a];
                    }
                    rows.push(row);
                    rhs.push(-gamma);
                }
            }
        }
    }

    let vb = dynm.v_max - BOUND_SHRINK;
    let ub = dynm.u_max - BOUND_SHRINK;
    // |v_k| <= v_max for k = 1..M-1 (v_M is pinned to zero).
    for k in 1..m {
        for a in 0..3 {
            let mut row = vec![0.0; n];
            for j in 0..k {
                row[3 * j + a] = dt;
            }
            let neg: Vec<f64> = row.iter().map(|v| -v).collect();
            rows.push(row);
            rhs.push(vb - x0.v[a]);
            rows.push(neg);
            rhs.push(vb + x0.v[a]);
        }
    }
    for i in 0..nu {
        let mut row = vec![0.0; n];
        row[i] = 1.0;
        rows.push(row.clone());
        rhs.push(ub);
        row[i] = -1.0;
        rows.push(row);
        rhs.push(ub);
    }

    if soft.is_some() {
        let mut row = vec![0.0; n];
        row[nu] = -1.0;
        rows.push(row);
        rhs.push(0.0);
    }

    let a_in = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
    let b_in = DVector::from_vec(rhs);

    let mut a_eq = DMatrix::zeros(3, n);
    for j in 0..m {
        for a in 0..3 {
            a_eq[(a, 3 * j + a)] = dt;
        }
    }
    let b_eq = DVector::from_column_slice((-x0.v).as_slice());

    QuadProgram::new(h, f)
        .with_inequalities(a_in, b_in)
        .with_equalities(a_eq, b_eq)
}

/// Along the first interval `n·p(s) - o = a + b s + (n·u_0) s²/2`. Returns
/// the smallest `n·u_0` keeping this nonnegative on `[0, dt]` when the knot
/// at `dt` alone does not already imply it.
const OUTWARD_EPS: f64 = 1e-9;

fn first_interval_bound(a: f64, b: f64, dt: f64) -> Option<f64> {
    // Rounding-level outward speeds are left to the knot tolerance.
    if b >= -OUTWARD_EPS || a < 0.0 || a + 0.5 * b * dt > 0.0 {
        return None;
    }
    // Leaving the boundary outward: no bounded input saves it.
    const UNREACHABLE: f64 = 1e6;
    if a <= 0.0 {
        return Some(UNREACHABLE);
    }
    Some((b * b / (2.0 * a)).min(UNREACHABLE))
}

/// Minimum of `a + b s + c s²/2` over `[0, len]`.
fn quadratic_min(a: f64, b: f64, c: f64, len: f64) -> f64 {
    let mut lo = a.min(a + b * len + 0.5 * c * len * len);
    if c > 0.0 {
        let s = -b / c;
        if s > 0.0 && s < len {
            lo = lo.min(a + b * s + 0.5 * c * s * s);
        }
    }
    lo
}

fn cfg_reach(x0: &State, dynm: &DynamicsModel) -> f64 {
    dynm.v_max.max(x0.v.amax())
}

/// Number of collision rows (window halfspaces times constrained points)
/// before pruning.
pub fn collision_row_count(window: &ConstraintWindow, dynm: &DynamicsModel, safety: SafetyPoints) -> usize {
    let per = match safety {
        SafetyPoints::KnotsOnly => dynm.m + 1,
        SafetyPoints::Hull => 2 * dynm.m + 1,
    };
    window.regions().map(|r| r.halfspaces.len()).sum::<usize>() * per
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplanStatus {
    Optimal,
    Infeasible,
    MaxIter,
    SolverError,
    /// Solver reported success but the independent knot check failed.
    KnotCheckFailed,
    /// Failure forced by the simulator.
    Injected,
    /// The full window was infeasible; solved after dropping the `dropped`
    /// oldest entries.
    Relaxed { dropped: usize },
    /// Every window was infeasible; the trajectory keeps the corridors and
    /// minimises the largest Voronoi-cell violation. Counted as a failure.
    Softened,
}

impl ReplanStatus {
    pub fn is_success(self) -> bool {
        matches!(self, ReplanStatus::Optimal | ReplanStatus::Relaxed { .. })
    }

    /// The outcome carries a new trajectory.
    pub fn replaces_trajectory(self) -> bool {
        self.is_success() || self == ReplanStatus::Softened
    }
}

fn plan_soft(
    t_now: f64,
    x0: &State,
    window: &ConstraintWindow,
    g: &Vec3,
    dynm: &DynamicsModel,
    cfg: &TrajectoryConfig,
) -> Option<Trajectory> {
    // Any one corridor keeps the plan clear of obstacles; prefer the newest
    // that still holds the current position.
    for e in window.entries.iter().rev() {
        if !e.sfc.contains(&x0.p, KNOT_TOL) {
            continue;
        }
        let qp = build_soft_trajectory_qp(x0, window, &e.sfc, g, dynm, cfg, SOFT_WEIGHT);
        let Ok(sol) = solve_qp(&qp, &cfg.qp) else { continue };
        if sol.status != QpStatus::Optimal {
            continue;
        }
        let u: Vec<Vec3> = (0..dynm.m)
            .map(|k| Vec3::new(sol.x[3 * k], sol.x[3 * k + 1], sol.x[3 * k + 2]))
            .collect();
        let traj = Trajectory::new(t_now, dynm.dt, *x0, u);
        let single = ConstraintWindow {
            entries: vec![WindowEntry { h: e.h, sfc: e.sfc.clone(), bvc: ConvexRegion::new(RegionKind::Bvc, vec![]) }],
        };
        if check_knots(&traj, &single, cfg.safety_points, KNOT_TOL) {
            return Some(traj);
        }
    }
    None
}

fn plan_in(
    t_now: f64,
    x0: &State,
    window: &ConstraintWindow,
    g: &Vec3,
    dynm: &DynamicsModel,
    cfg: &TrajectoryConfig,
) -> Result<Trajectory, ReplanStatus> {
    let qp = build_trajectory_qp(x0, window, g, dynm, cfg);
    let sol = solve_qp(&qp, &cfg.qp).map_err(|_| ReplanStatus::SolverError)?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(ReplanStatus::Infeasible),
        QpStatus::MaxIter => return Err(ReplanStatus::MaxIter),
    }
    let u: Vec<Vec3> = (0..dynm.m)
        .map(|k| Vec3::new(sol.x[3 * k], sol.x[3 * k + 1], sol.x[3 * k + 2]))
        .collect();
    let traj = Trajectory::new(t_now, dynm.dt, *x0, u);
    if !check_knots(&traj, window, cfg.safety_points, KNOT_TOL) {
        return Err(ReplanStatus::KnotCheckFailed);
    }
    Ok(traj)
}

#[derive(Debug, Clone)]
pub struct ReplanOutcome {
    pub trajectory: Trajectory,
    pub status: ReplanStatus,
    pub objective: Option<f64>,
}

/// True when every constrained point of `traj` lies in every window region.
pub fn check_knots(traj: &Trajectory, window: &ConstraintWindow, safety: SafetyPoints, tol: f64) -> bool {
    let knots = traj.knots();
    if safety == SafetyPoints::KnotsOnly {
        return knots.iter().all(|k| window.contains(&k.p, tol));
    }
    (0..traj.steps()).all(|k| {
        let x = &knots[k];
        let u = &traj.u[k];
        window.regions().all(|r| {
            r.halfspaces
                .iter()
                .all(|hs| quadratic_min(hs.eval(&x.p), hs.normal.dot(&x.v), hs.normal.dot(u), traj.dt) >= -tol)
        })
    })
}

/// Replans from the state of `prev` at `t_now`.
///
/// An infeasible window is retried without its oldest entries, then as a
/// least-violation problem that keeps one corridor hard (see `relax_window`
/// and `soft_fallback`). Any other failure returns `prev` unchanged.
pub fn replan(
    t_now: f64,
    prev: &Trajectory,
    window: &ConstraintWindow,
    g: &Vec3,
    dynm: &DynamicsModel,
    cfg: &TrajectoryConfig,
) -> ReplanOutcome {
    let x0 = match prev.sample(t_now) {
        Ok(x) => x,
        Err(_) => {
            return ReplanOutcome {
                trajectory: prev.clone(),
                status: ReplanStatus::SolverError,
                objective: None,
            }
        }
    };
    let fallback = |status| ReplanOutcome {
        trajectory: prev.clone(),
        status,
        objective: None,
    };
    let result = plan_in(t_now, &x0, window, g, dynm, cfg);
    if cfg.relax_window && result == Err(ReplanStatus::Infeasible) {
        for drop in 1..window.entries.len() {
            let sub = ConstraintWindow { entries: window.entries[drop..].to_vec() };
            if let Ok(traj) = plan_in(t_now, &x0, &sub, g, dynm, cfg) {
                let objective = trajectory_cost(&traj, g, cfg);
                return ReplanOutcome {
                    trajectory: traj,
                    status: ReplanStatus::Relaxed { dropped: drop },
                    objective: Some(objective),
                };
            }
        }
    }
    let traj = match result {
        Ok(t) => t,
        Err(ReplanStatus::Infeasible) if cfg.soft_fallback => {
            return match plan_soft(t_now, &x0, window, g, dynm, cfg) {
                Some(traj) => ReplanOutcome {
                    objective: Some(trajectory_cost(&traj, g, cfg)),
                    trajectory: traj,
                    status: ReplanStatus::Softened,
                },
                None => fallback(ReplanStatus::Infeasible),
            }
        }
        Err(status) => return fallback(status),
    };
    let objective = trajectory_cost(&traj, g, cfg);
    ReplanOutcome {
        trajectory: traj,
        status: ReplanStatus::Optimal,
        objective: Some(objective),
    }
}

/// `w_e |p_M - g|^2 + w_a sum |u_k|^2`.
pub fn trajectory_cost(traj: &Trajectory, g: &Vec3, cfg: &TrajectoryConfig) -> f64 {
    cfg.w_e * (traj.final_position() - g).norm_squared() + cfg.w_a * traj.u.iter().map(|u| u.norm_squared()).sum::<f64>()
}
