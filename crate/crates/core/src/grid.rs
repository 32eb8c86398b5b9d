//! Shared lattice of waypoints.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::geometry::{check_hull_free, Aabb, ObstacleMap};
use crate::Vec3;

pub type VertexId = usize;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum GridError {
    #[error("grid size {d} must exceed 2*sqrt(2)*r = {limit} (r = {r})")]
    TooCoarse { d: f64, r: f64, limit: f64 },
    #[error("workspace bounds are empty or not finite")]
    EmptyBounds,
    #[error("grid size must be positive and finite, got {0}")]
    BadSpacing(f64),
}

/// Regular axis-aligned lattice with spacing `d` anchored at `origin`.
#[derive(Debug, Clone, Serialize)]
pub struct GridSpace {
    pub origin: Vec3,
    pub dims: [usize; 3],
    pub d: f64,
    pub r: f64,
    pub blocked: BTreeSet<VertexId>,
    /// Axis-adjacent pairs `(a, b)` with `a < b` whose inflated segment hits an
    /// obstacle although both ends are free.
    pub blocked_edges: BTreeSet<(VertexId, VertexId)>,
    #[serde(skip)]
    adjacency: Vec<Vec<VertexId>>,
}

pub fn grid_size_ok(d: f64, r: f64) -> bool {
    d > 2.0 * 2f64.sqrt() * r
}

pub fn build_grid(bounds: &Aabb, d: f64, obstacles: &ObstacleMap, r: f64) -> Result<GridSpace, GridError> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(GridError::BadSpacing(d));
    }
    if !grid_size_ok(d, r) {
        return Err(GridError::TooCoarse {
            d,
            r,
            limit: 2.0 * 2f64.sqrt() * r,
        });
    }
    let ext = bounds.extent();
    if (0..3).any(|k| !(ext[k] >= 0.0) || !ext[k].is_finite()) {
        return Err(GridError::EmptyBounds);
    }
    let mut dims = [0usize; 3];
    for k in 0..3 {
        dims[k] = (ext[k] / d + 1e-9).floor() as usize + 1;
    }
    let mut g = GridSpace {
        origin: bounds.min,
        dims,
        d,
        r,
        blocked: BTreeSet::new(),
        blocked_edges: BTreeSet::new(),
        adjacency: Vec::new(),
    };
    let n = g.num_vertices();
    for v in 0..n {
        if !obstacles.point_free(&g.position(v), r) {
            g.blocked.insert(v);
        }
    }
    let mut adjacency = vec![Vec::new(); n];
    for v in 0..n {
        if g.blocked.contains(&v) {
            continue;
        }
        let c = g.coords(v);
        for k in 0..3 {
            if c[k] + 1 >= dims[k] {
                continue;
            }
            let mut cn = c;
            cn[k] += 1;
            let u = g.index(cn);
            if g.blocked.contains(&u) {
                continue;
            }
            if check_hull_free(&[g.position(v), g.position(u)], r, obstacles) {
                adjacency[v].push(u);
                adjacency[u].push(v);
            } else {
                g.blocked_edges.insert((v, u));
            }
        }
    }
    for a in &mut adjacency {
        a.sort_unstable();
    }
    g.adjacency = adjacency;
    Ok(g)
}

impl GridSpace {
    pub fn num_vertices(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn index(&self, c: [usize; 3]) -> VertexId {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    pub fn coords(&self, v: VertexId) -> [usize; 3] {
        let x = v % self.dims[0];
        let y = (v / self.dims[0]) % self.dims[1];
        let z = v / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn position(&self, v: VertexId) -> Vec3 {
        let c = self.coords(v);
        self.origin + Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * self.d
    }

    /// Vertex within `tol` of `p`, if any.
    pub fn vertex_at(&self, p: &Vec3, tol: f64) -> Option<VertexId> {
        let rel = (p - self.origin) / self.d;
        let mut c = [0usize; 3];
        for k in 0..3 {
            let f = rel[k].round();
            if f < 0.0 || f >= self.dims[k] as f64 {
                return None;
            }
            c[k] = f as usize;
        }
        let v = self.index(c);
        ((self.position(v) - p).norm() <= tol).then_some(v)
    }

    pub fn is_blocked(&self, v: VertexId) -> bool {
        v >= self.num_vertices() || self.blocked.contains(&v)
    }

    /// Free neighbours of `v` in ascending index order.
    pub fn neighbors(&self, v: VertexId) -> &[VertexId] {
        &self.adjacency[v]
    }

    pub fn is_edge(&self, a: VertexId, b: VertexId) -> bool {
        a < self.num_vertices() && self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn bounds(&self) -> Aabb {
        let max = self.origin
            + Vec3::new(
                (self.dims[0] - 1) as f64,
                (self.dims[1] - 1) as f64,
                (self.dims[2] - 1) as f64,
            ) * self.d;
        Aabb {
            min: self.origin,
            max,
        }
    }

    /// True if `p` lies on some grid edge or vertex incident to `w` (within
    /// `tol`), and within the edge's extent.
    pub fn on_edge_from(&self, w: &Vec3, p: &Vec3, tol: f64) -> bool {
        let diff = p - w;
        let mut axis = None;
        for k in 0..3 {
            if diff[k].abs() > tol {
                if axis.is_some() {
                    return false;
                }
                axis = Some(k);
            }
        }
        match axis {
            None => true,
            Some(k) => diff[k].abs() <= self.d + tol,
        }
    }

    /// Breadth-first distances to `goal` over free edges (`u32::MAX` when
    /// unreachable).
    pub fn bfs_distances(&self, goal: VertexId) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.num_vertices()];
        if self.is_blocked(goal) {
            return dist;
        }
        let mut queue = std::collections::VecDeque::new();
        dist[goal] = 0;
        queue.push_back(goal);
        while let Some(v) = queue.pop_front() {
            for &u in self.neighbors(v) {
                if dist[u] == u32::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }
}
