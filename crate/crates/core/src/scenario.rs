//! Scenario files and random instance generators.
//!
//! Every physical quantity carries its unit in the field name.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coordination::{MissionSpec, Mode};
use crate::geometry::{Aabb, ObstacleMap};
use crate::grid::{build_grid, GridError, GridSpace, VertexId};
use crate::sim::{SimConfig, Workspace};
use crate::Vec3;

const VERTEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub min_m: [f64; 3],
    pub max_m: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub start_m: [f64; 3],
    pub goal_m: [f64; 3],
}

/// Optional overrides on top of [`SimConfig::default`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max_mps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_max_mps2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tr_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_injection_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0_s: Option<f64>,
}

impl ParamOverrides {
    pub fn apply(&self, cfg: &mut SimConfig) {
        macro_rules! set {
            ($field:ident => $($target:tt)+) => {
                if let Some(v) = self.$field {
                    cfg.$($target)+ = v;
                }
            };
        }
        set!(radius_m => radius);
        set!(margin_m => safety_margin);
        set!(v_max_mps => v_max);
        set!(u_max_mps2 => u_max);
        set!(ts_s => ts);
        set!(tr_s => tr);
        set!(steps => steps);
        set!(dt_s => dt);
        set!(w_e => trajectory.w_e);
        set!(w_a => trajectory.w_a);
        set!(time_budget_s => time_budget);
        set!(failure_injection_rate => failure_injection_rate);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub bounds_min_m: [f64; 3],
    pub bounds_max_m: [f64; 3],
    pub d_m: f64,
    #[serde(default)]
    pub obstacles: Vec<BoxSpec>,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub params: ParamOverrides,
}

#[derive(thiserror::Error, Debug)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("workspace bounds: {0}")]
    Bounds(String),
    #[error("obstacle {index}: {message}")]
    Obstacle { index: usize, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("agent {agent}: {which} {p:?} is not on a grid vertex")]
    OffGrid { agent: usize, which: &'static str, p: [f64; 3] },
    #[error("cannot place {wanted} agents: only {available} usable vertices")]
    Placement { wanted: usize, available: usize },
    #[error("no valid {kind:?} instance after {attempts} attempts")]
    Generation { kind: ScenarioKind, attempts: usize },
}

/// Scenario fully resolved against a seed.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub workspace: Workspace,
    pub mission: MissionSpec,
    pub config: SimConfig,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl ScenarioFile {
    pub fn from_json(s: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(s).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn bounds(&self) -> Result<Aabb, ScenarioError> {
        Aabb::new(v3(self.bounds_min_m), v3(self.bounds_max_m)).map_err(|e| ScenarioError::Bounds(e.to_string()))
    }

    pub fn obstacle_map(&self) -> Result<ObstacleMap, ScenarioError> {
        let boxes = self
            .obstacles
            .iter()
            .enumerate()
            .map(|(index, b)| {
                Aabb::new(v3(b.min_m), v3(b.max_m)).map_err(|e| ScenarioError::Obstacle {
                    index,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ObstacleMap::new(boxes))
    }

    /// Configuration with this file's overrides applied to `base`.
    pub fn config(&self, base: &SimConfig, seed: u64) -> SimConfig {
        let mut cfg = base.clone();
        self.params.apply(&mut cfg);
        cfg.seed = seed;
        cfg.mode = self.mode;
        cfg
    }

    pub fn workspace(&self, r: f64) -> Result<Workspace, ScenarioError> {
        Ok(Workspace::new(self.bounds()?, self.d_m, self.obstacle_map()?, r)?)
    }

    /// Builds the workspace, mission and configuration for one seed.
    pub fn resolve(&self, base: &SimConfig, seed: u64) -> Result<Resolved, ScenarioError> {
        let config = self.config(base, seed);
        let workspace = self.workspace(config.r_plan())?;
        let locate = |agent: usize, which: &'static str, p: [f64; 3]| {
            workspace
                .grid
                .vertex_at(&v3(p), VERTEX_TOL)
                .ok_or(ScenarioError::OffGrid { agent, which, p })
        };
        let mut starts = Vec::with_capacity(self.agents.len());
        let mut goals = Vec::with_capacity(self.agents.len());
        for (i, a) in self.agents.iter().enumerate() {
            starts.push(locate(i, "start", a.start_m)?);
            goals.push(locate(i, "goal", a.goal_m)?);
        }
        let mission = MissionSpec {
            starts,
            goals,
            t0: self.params.t0_s.unwrap_or(0.0),
            ts: config.ts,
            mode: config.mode,
            mapf_seed: seed,
        };
        Ok(Resolved { workspace, mission, config })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Empty,
    Forest,
    Forest2d,
    Maze,
    Maze2d,
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "empty" => Ok(Self::Empty),
            "forest" | "forest3d" => Ok(Self::Forest),
            "forest2d" => Ok(Self::Forest2d),
            "maze" | "maze3d" => Ok(Self::Maze),
            "maze2d" => Ok(Self::Maze2d),
            other => Err(format!("unknown scenario kind '{other}'")),
        }
    }
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Empty => "empty",
            Self::Forest => "forest",
            Self::Forest2d => "forest2d",
            Self::Maze => "maze",
            Self::Maze2d => "maze2d",
        }
    }

    fn planar(self) -> bool {
        matches!(self, Self::Forest2d | Self::Maze2d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmptyParams {
    pub size_m: [f64; 3],
    pub d_m: f64,
}

impl Default for EmptyParams {
    fn default() -> Self {
        Self { size_m: [3.0, 3.0, 1.0], d_m: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub half_width_m: f64,
    pub height_m: f64,
    /// Flight altitude of planar instances and of the start circle.
    pub altitude_m: f64,
    pub d_m: f64,
    pub obstacle_count: usize,
    pub obstacle_min_m: f64,
    pub obstacle_max_m: f64,
    /// Obstacles are centered within this radius of the origin.
    pub obstacle_area_radius_m: f64,
    pub circle_radius_m: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            half_width_m: 5.0,
            height_m: 2.0,
            altitude_m: 1.0,
            d_m: 0.5,
            obstacle_count: 40,
            obstacle_min_m: 0.2,
            obstacle_max_m: 0.5,
            obstacle_area_radius_m: 3.5,
            circle_radius_m: 4.0,
        }
    }
}

/// `#` is a wall cell, `.` a corridor cell. Rows run from +y down to -y and
/// columns from -x to +x, one grid step apart and centered on the origin.
pub const MAZE_TEMPLATE: &[&str] = &[
    "#########",
    "#########",
    "#########",
    "#.......#",
    "#.#####.#",
    "#.#####.#",
    "..#####..",
    "#########",
    "#########",
    "#########",
    "#########",
    "#########",
    "#########",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeParams {
    pub template: Vec<String>,
    pub half_width_m: f64,
    pub height_m: f64,
    pub altitude_m: f64,
    pub d_m: f64,
}

impl Default for MazeParams {
    fn default() -> Self {
        Self {
            template: MAZE_TEMPLATE.iter().map(|s| s.to_string()).collect(),
            half_width_m: 5.0,
            height_m: 2.0,
            altitude_m: 1.0,
            d_m: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub empty: EmptyParams,
    pub forest: ForestParams,
    pub maze: MazeParams,
    pub max_attempts: usize,
    /// Planning radius used to check generated instances.
    pub r_eff_m: f64,
}

impl GeneratorParams {
    pub fn standard() -> Self {
        let cfg = SimConfig::default();
        Self {
            max_attempts: 200,
            r_eff_m: cfg.r_plan(),
            ..Default::default()
        }
    }
}

pub fn generate_scenario(kind: ScenarioKind, n_agents: usize, seed: u64) -> Result<ScenarioFile, ScenarioError> {
    generate_with(kind, n_agents, seed, &GeneratorParams::standard())
}

pub fn generate_with(
    kind: ScenarioKind,
    n_agents: usize,
    seed: u64,
    params: &GeneratorParams,
) -> Result<ScenarioFile, ScenarioError> {
    if n_agents == 0 {
        return Err(ScenarioError::Placement { wanted: 0, available: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut file = match kind {
        ScenarioKind::Empty => gen_empty(n_agents, &mut rng, params)?,
        ScenarioKind::Forest | ScenarioKind::Forest2d => gen_forest(kind, n_agents, &mut rng, params)?,
        ScenarioKind::Maze | ScenarioKind::Maze2d => gen_maze(kind, n_agents, &mut rng, params)?,
    };
    file.name = format!("{}-n{}-s{}", kind.name(), n_agents, seed);
    Ok(file)
}

fn free_vertices(grid: &GridSpace) -> Vec<VertexId> {
    (0..grid.num_vertices()).filter(|&v| !grid.is_blocked(v)).collect()
}

fn agent_specs(grid: &GridSpace, starts: &[VertexId], goals: &[VertexId]) -> Vec<AgentSpec> {
    starts
        .iter()
        .zip(goals)
        .map(|(&s, &g)| AgentSpec {
            start_m: arr(&grid.position(s)),
            goal_m: arr(&grid.position(g)),
        })
        .collect()
}

fn all_reachable(grid: &GridSpace, starts: &[VertexId], goals: &[VertexId]) -> bool {
    goals.iter().zip(starts).all(|(&g, &s)| grid.bfs_distances(g)[s] != u32::MAX)
}

fn pick_distinct(pool: &[VertexId], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<VertexId>, ScenarioError> {
    if pool.len() < n {
        return Err(ScenarioError::Placement { wanted: n, available: pool.len() });
    }
    Ok(pool.choose_multiple(rng, n).copied().collect())
}

fn gen_empty(n: usize, rng: &mut ChaCha8Rng, params: &GeneratorParams) -> Result<ScenarioFile, ScenarioError> {
    let p = &params.empty;
    let half = Vec3::new(p.size_m[0], p.size_m[1], 0.0) * 0.5;
    let min = -half;
    let max = Vec3::new(half.x, half.y, p.size_m[2]);
    let bounds = Aabb::new(min, max).map_err(|e| ScenarioError::Bounds(e.to_string()))?;
    let grid = build_grid(&bounds, p.d_m, &ObstacleMap::empty(), params.r_eff_m)?;
    let pool = free_vertices(&grid);
    let starts = pick_distinct(&pool, n, rng)?;
    let goals = pick_distinct(&pool, n, rng)?;
    Ok(ScenarioFile {
        name: String::new(),
        bounds_min_m: arr(&min),
        bounds_max_m: arr(&max),
        d_m: p.d_m,
        obstacles: vec![],
        agents: agent_specs(&grid, &starts, &goals),
        mode: Mode::NoComm,
        params: ParamOverrides::default(),
    })
}

/// Planar instances keep the bounds thinner than one grid step, which leaves
/// a single layer of vertices.
fn layer_bounds(half_xy: f64, height: f64, altitude: f64, d: f64, planar: bool) -> (Vec3, Vec3) {
    if planar {
        (
            Vec3::new(-half_xy, -half_xy, altitude),
            Vec3::new(half_xy, half_xy, altitude + 0.4 * d),
        )
    } else {
        (Vec3::new(-half_xy, -half_xy, 0.0), Vec3::new(half_xy, half_xy, height))
    }
}

/// Generated coordinates are kept to 0.1 mm so files stay readable.
fn tidy(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn gen_forest(
    kind: ScenarioKind,
    n: usize,
    rng: &mut ChaCha8Rng,
    params: &GeneratorParams,
) -> Result<ScenarioFile, ScenarioError> {
    let p = &params.forest;
    let (min, max) = layer_bounds(p.half_width_m, p.height_m, p.altitude_m, p.d_m, kind.planar());
    let bounds = Aabb::new(min, max).map_err(|e| ScenarioError::Bounds(e.to_string()))?;
    let open = build_grid(&bounds, p.d_m, &ObstacleMap::empty(), params.r_eff_m)?;
    let z = if kind.planar() { min.z } else { p.altitude_m };

    let mut starts = Vec::with_capacity(n);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    for i in 0..n {
        let a = phase + std::f64::consts::TAU * i as f64 / n as f64;
        let q = Vec3::new(p.circle_radius_m * a.cos(), p.circle_radius_m * a.sin(), z);
        let snapped = (q / p.d_m).map(f64::round) * p.d_m;
        let v = open
            .vertex_at(&Vec3::new(snapped.x, snapped.y, z), VERTEX_TOL)
            .ok_or(ScenarioError::Placement { wanted: n, available: i })?;
        starts.push(v);
    }
    let goals: Vec<VertexId> = starts
        .iter()
        .map(|&s| {
            let q = open.position(s);
            open.vertex_at(&Vec3::new(-q.x, -q.y, q.z), VERTEX_TOL).expect("symmetric grid")
        })
        .collect();
    let mut uniq = starts.clone();
    uniq.sort_unstable();
    uniq.dedup();
    if uniq.len() != n {
        return Err(ScenarioError::Placement { wanted: n, available: uniq.len() });
    }

    for _ in 0..params.max_attempts.max(1) {
        let mut boxes = Vec::with_capacity(p.obstacle_count);
        for _ in 0..p.obstacle_count {
            let rho = p.obstacle_area_radius_m * rng.gen::<f64>().sqrt();
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let sx = rng.gen_range(p.obstacle_min_m..=p.obstacle_max_m);
            let sy = rng.gen_range(p.obstacle_min_m..=p.obstacle_max_m);
            let c = Vec3::new(rho * theta.cos(), rho * theta.sin(), 0.0);
            boxes.push(BoxSpec {
                min_m: [tidy(c.x - 0.5 * sx), tidy(c.y - 0.5 * sy), 0.0],
                max_m: [tidy(c.x + 0.5 * sx), tidy(c.y + 0.5 * sy), p.height_m],
            });
        }
        let file = ScenarioFile {
            name: String::new(),
            bounds_min_m: arr(&min),
            bounds_max_m: arr(&max),
            d_m: p.d_m,
            obstacles: boxes,
            agents: agent_specs(&open, &starts, &goals),
            mode: Mode::NoComm,
            params: ParamOverrides::default(),
        };
        if instance_ok(&file, params.r_eff_m) {
            return Ok(file);
        }
    }
    Err(ScenarioError::Generation { kind, attempts: params.max_attempts })
}

/// Starts and goals free and every goal reachable.
fn instance_ok(file: &ScenarioFile, r_eff: f64) -> bool {
    let Ok(ws) = file.workspace(r_eff) else { return false };
    let mut starts = Vec::new();
    let mut goals = Vec::new();
    for a in &file.agents {
        match (
            ws.grid.vertex_at(&v3(a.start_m), VERTEX_TOL),
            ws.grid.vertex_at(&v3(a.goal_m), VERTEX_TOL),
        ) {
            (Some(s), Some(g)) if !ws.grid.is_blocked(s) && !ws.grid.is_blocked(g) => {
                starts.push(s);
                goals.push(g);
            }
            _ => return false,
        }
    }
    all_reachable(&ws.grid, &starts, &goals)
}

fn gen_maze(
    kind: ScenarioKind,
    n: usize,
    rng: &mut ChaCha8Rng,
    params: &GeneratorParams,
) -> Result<ScenarioFile, ScenarioError> {
    let p = &params.maze;
    let half_y = 0.5 * (p.template.len().saturating_sub(1)) as f64 * p.d_m;
    let cols = p.template.iter().map(|r| r.len()).max().unwrap_or(0);
    let half_x = 0.5 * (cols.saturating_sub(1)) as f64 * p.d_m;
    let mut min = Vec3::new(-p.half_width_m, -half_y, 0.0);
    let mut max = Vec3::new(p.half_width_m, half_y, p.height_m);
    if kind.planar() {
        min.z = p.altitude_m;
        max.z = p.altitude_m + 0.4 * p.d_m;
    }
    let z_lo = min.z.min(p.altitude_m - 0.5 * p.d_m) - p.d_m;
    let z_hi = max.z.max(p.altitude_m + 0.5 * p.d_m) + p.d_m;
    let h = 0.5 * p.d_m;
    let mut boxes = Vec::new();
    for (ri, row) in p.template.iter().enumerate() {
        let y = half_y - ri as f64 * p.d_m;
        for (ci, ch) in row.chars().enumerate() {
            let x = -half_x + ci as f64 * p.d_m;
            if ch == '#' {
                boxes.push(BoxSpec { min_m: [x - h, y - h, z_lo], max_m: [x + h, y + h, z_hi] });
            } else if !kind.planar() {
                boxes.push(BoxSpec { min_m: [x - h, y - h, z_lo], max_m: [x + h, y + h, p.altitude_m - h] });
                boxes.push(BoxSpec { min_m: [x - h, y - h, p.altitude_m + h], max_m: [x + h, y + h, z_hi] });
            }
        }
    }
    let bounds = Aabb::new(min, max).map_err(|e| ScenarioError::Bounds(e.to_string()))?;
    let obstacles = ObstacleMap::new(
        boxes.iter().map(|b| Aabb::new(v3(b.min_m), v3(b.max_m)).expect("finite box")).collect(),
    );
    let grid = build_grid(&bounds, p.d_m, &obstacles, params.r_eff_m)?;
    let margin = half_x + p.d_m;
    let left: Vec<VertexId> = free_vertices(&grid).into_iter().filter(|&v| grid.position(v).x < -margin).collect();
    let right: Vec<VertexId> = free_vertices(&grid).into_iter().filter(|&v| grid.position(v).x > margin).collect();
    let n_left = n.div_ceil(2);
    let n_right = n - n_left;
    let l_start = pick_distinct(&left, n_left, rng)?;
    let r_goal = pick_distinct(&right, n_left, rng)?;
    let r_start = pick_distinct(&right, n_right, rng)?;
    let l_goal = pick_distinct(&left, n_right, rng)?;
    let starts: Vec<VertexId> = l_start.into_iter().chain(r_start).collect();
    let goals: Vec<VertexId> = r_goal.into_iter().chain(l_goal).collect();
    if !all_reachable(&grid, &starts, &goals) {
        return Err(ScenarioError::Generation { kind, attempts: 1 });
    }
    Ok(ScenarioFile {
        name: String::new(),
        bounds_min_m: arr(&min),
        bounds_max_m: arr(&max),
        d_m: p.d_m,
        obstacles: boxes,
        agents: agent_specs(&grid, &starts, &goals),
        mode: Mode::NoComm,
        params: ParamOverrides::default(),
    })
}
