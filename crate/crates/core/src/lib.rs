//! Communication-free coordination and asynchronous trajectory planning for
//! quadrotor swarms.
//!
//! Every agent replicates the same coordination state (grid waypoints,
//! subgoals, safe flight corridors and buffered Voronoi cells) from observed
//! positions alone, then plans its own trajectory with a small QP at
//! randomized times. The crate is organised bottom-up:
//!
//! * [`grid`] and [`mapf`]: the shared discretization and a deterministic PIBT
//!   pathfinder that produces waypoints.
//! * [`geometry`]: obstacle maps, convex regions, corridor and Voronoi-cell
//!   construction.
//! * [`coordination`]: the replicated per-step update of waypoints and subgoals.
//! * [`qp`] and [`trajectory`]: a dense dual active-set QP solver and the
//!   time-windowed trajectory problem built on top of it.
//! * [`sim`]: a deterministic event loop with safety and deadlock auditing.
//! * [`scenario`], [`batch`] and [`export`]: scenario files, generators, batch
//!   execution and plot-data export used by the command-line front end.

pub mod batch;
pub mod coordination;
pub mod export;
pub mod geometry;
pub mod grid;
pub mod mapf;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod trajectory;

/// Points and vectors in world coordinates (metres).
pub type Vec3 = nalgebra::Vector3<f64>;

pub use coordination::{CoordinationState, MissionSpec, Mode};
pub use geometry::{Aabb, ConvexRegion, ObstacleMap};
pub use grid::{GridSpace, VertexId};
pub use mapf::GridPath;
pub use sim::{Metrics, SimConfig, SimTrace};



