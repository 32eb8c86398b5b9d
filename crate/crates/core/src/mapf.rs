//! Priority inheritance with backtracking (PIBT) on the shared grid.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{GridSpace, VertexId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPath {
    pub vertices: Vec<VertexId>,
}

impl GridPath {
    pub fn new(vertices: Vec<VertexId>) -> Self {
        Self { vertices }
    }

    /// Steps from the first to the last vertex.
    pub fn makespan(&self) -> usize {
        makespan(self)
    }

    /// Vertex after the first one, or the only vertex.
    pub fn second(&self) -> VertexId {
        self.vertices[1.min(self.vertices.len() - 1)]
    }

    pub fn first(&self) -> VertexId {
        self.vertices[0]
    }

    pub fn last(&self) -> VertexId {
        *self.vertices.last().expect("nonempty path")
    }

    /// Drops the head; a single-vertex path stays as is.
    pub fn advance(&mut self) {
        if self.vertices.len() > 1 {
            self.vertices.remove(0);
        }
    }

    /// Vertex occupied at step `k` (the last vertex after arrival).
    pub fn at(&self, k: usize) -> VertexId {
        self.vertices[k.min(self.vertices.len() - 1)]
    }
}

pub fn makespan(path: &GridPath) -> usize {
    path.vertices.len().saturating_sub(1)
}

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum MapfError {
    #[error("{starts} starts but {goals} goals")]
    CountMismatch { starts: usize, goals: usize },
    #[error("agent {agent} uses blocked or out-of-range vertex {vertex}")]
    InvalidVertex { agent: usize, vertex: VertexId },
    #[error("agents {0} and {1} share a start vertex")]
    DuplicateStart(usize, usize),
    #[error("agents {0} and {1} share a goal vertex")]
    DuplicateGoal(usize, usize),
    #[error("goal of agent {0} is unreachable from its start")]
    GoalUnreachable(usize),
    #[error("not all agents reached their goals within {0} steps")]
    HorizonExceeded(usize),
}

/// PIBT solver with cached distance fields for a fixed goal assignment.
#[derive(Debug, Clone)]
pub struct Pibt<'g> {
    grid: &'g GridSpace,
    goals: Vec<VertexId>,
    dist: Vec<Vec<u32>>,
}

impl<'g> Pibt<'g> {
    pub fn new(grid: &'g GridSpace, goals: &[VertexId]) -> Result<Self, MapfError> {
        for (i, &g) in goals.iter().enumerate() {
            if grid.is_blocked(g) {
                return Err(MapfError::InvalidVertex { agent: i, vertex: g });
            }
        }
        check_distinct(goals).map_err(|(a, b)| MapfError::DuplicateGoal(a, b))?;
        let dist = goals.iter().map(|&g| grid.bfs_distances(g)).collect();
        Ok(Self {
            grid,
            goals: goals.to_vec(),
            dist,
        })
    }

    pub fn goals(&self) -> &[VertexId] {
        &self.goals
    }

    /// Distance field toward the goal of agent `i`.
    pub fn distances(&self, i: usize) -> &[u32] {
        &self.dist[i]
    }

    pub fn solve(&self, starts: &[VertexId], seed: u64) -> Result<Vec<GridPath>, MapfError> {
        self.solve_within(starts, seed, self.grid.num_vertices().max(1))
    }

    /// As [`Self::solve`] with an explicit step limit.
    pub fn solve_within(
        &self,
        starts: &[VertexId],
        seed: u64,
        horizon: usize,
    ) -> Result<Vec<GridPath>, MapfError> {
        let n = self.goals.len();
        if starts.len() != n {
            return Err(MapfError::CountMismatch {
                starts: starts.len(),
                goals: n,
            });
        }
        for (i, &s) in starts.iter().enumerate() {
            if self.grid.is_blocked(s) {
                return Err(MapfError::InvalidVertex { agent: i, vertex: s });
            }
            if self.dist[i][s] == u32::MAX {
                return Err(MapfError::GoalUnreachable(i));
            }
        }
        check_distinct(starts).map_err(|(a, b)| MapfError::DuplicateStart(a, b))?;

        let mut rank: Vec<usize> = (0..n).collect();
        if seed != 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rank.shuffle(&mut rng);
        }

        let nv = self.grid.num_vertices();
        let mut cur: Vec<VertexId> = starts.to_vec();
        let mut hist: Vec<Vec<VertexId>> = starts.iter().map(|&s| vec![s]).collect();
        let mut elapsed = vec![0u64; n];
        let mut occ_now: Vec<Option<usize>> = vec![None; nv];
        let mut occ_next: Vec<Option<usize>> = vec![None; nv];
        let mut next: Vec<Option<VertexId>> = vec![None; n];
        let mut order: Vec<usize> = (0..n).collect();

        let mut steps = 0;
        while (0..n).any(|i| cur[i] != self.goals[i]) {
            if steps >= horizon {
                return Err(MapfError::HorizonExceeded(horizon));
            }
            steps += 1;
            order.sort_by(|&a, &b| elapsed[b].cmp(&elapsed[a]).then(rank[a].cmp(&rank[b])));
            for (i, &v) in cur.iter().enumerate() {
                occ_now[v] = Some(i);
            }
            for &i in &order {
                if next[i].is_none() {
                    self.step(i, None, &cur, &mut next, &occ_now, &mut occ_next);
                }
            }
            for i in 0..n {
                occ_now[cur[i]] = None;
                let v = next[i].take().expect("assigned");
                occ_next[v] = None;
                cur[i] = v;
                hist[i].push(v);
                elapsed[i] = if v == self.goals[i] { 0 } else { elapsed[i] + 1 };
            }
        }

        Ok(hist
            .into_iter()
            .enumerate()
            .map(|(i, mut h)| {
                while h.len() > 1 && h[h.len() - 2] == self.goals[i] {
                    h.pop();
                }
                GridPath::new(h)
            })
            .collect())
    }

    fn step(
        &self,
        i: usize,
        parent: Option<usize>,
        cur: &[VertexId],
        next: &mut [Option<VertexId>],
        occ_now: &[Option<usize>],
        occ_next: &mut [Option<usize>],
    ) -> bool {
        let here = cur[i];
        let mut cands: Vec<VertexId> = Vec::with_capacity(7);
        cands.extend_from_slice(self.grid.neighbors(here));
        cands.push(here);
        let dist = &self.dist[i];
        let away = |v: VertexId| parent.map_or(0, |j| u32::MAX - self.dist[j][v]);
        cands.sort_by_key(|&v| (dist[v], occ_now[v].is_some_and(|k| k != i), away(v), v));

        for v in cands {
            if occ_next[v].is_some() {
                continue;
            }
            if let Some(j) = parent {
                if cur[j] == v {
                    continue;
                }
            }
            next[i] = Some(v);
            occ_next[v] = Some(i);
            if let Some(k) = occ_now[v] {
                if k != i && next[k].is_none() && !self.step(k, Some(i), cur, next, occ_now, occ_next) {
                    continue;
                }
            }
            return true;
        }
        next[i] = Some(here);
        occ_next[here] = Some(i);
        false
    }
}

fn check_distinct(vs: &[VertexId]) -> Result<(), (usize, usize)> {
    let mut seen: Vec<(VertexId, usize)> = vs.iter().copied().zip(0..).collect();
    seen.sort_unstable();
    for w in seen.windows(2) {
        if w[0].0 == w[1].0 {
            let (a, b) = (w[0].1.min(w[1].1), w[0].1.max(w[1].1));
            return Err((a, b));
        }
    }
    Ok(())
}

/// One-shot solve. Seed 0 prioritises lower agent indices on ties; other
/// seeds permute the tie-break order deterministically.
pub fn run_mapf(
    starts: &[VertexId],
    goals: &[VertexId],
    grid: &GridSpace,
    seed: u64,
) -> Result<Vec<GridPath>, MapfError> {
    if starts.len() != goals.len() {
        return Err(MapfError::CountMismatch {
            starts: starts.len(),
            goals: goals.len(),
        });
    }
    Pibt::new(grid, goals)?.solve(starts, seed)
}

/// First vertex or edge conflict between two paths, as `(step, i, j)`.
pub fn find_conflict(paths: &[GridPath]) -> Option<(usize, usize, usize)> {
    let horizon = paths.iter().map(|p| p.vertices.len()).max().unwrap_or(0);
    for k in 0..horizon {
        for i in 0..paths.len() {
            for j in (i + 1)..paths.len() {
                let (a, b) = (&paths[i], &paths[j]);
                if a.at(k) == b.at(k) {
                    return Some((k, i, j));
                }
                if k > 0 && a.at(k) == b.at(k - 1) && b.at(k) == a.at(k - 1) && a.at(k) != a.at(k - 1) {
                    return Some((k, i, j));
                }
            }
        }
    }
    None
}
