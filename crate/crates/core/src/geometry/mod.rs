//! Boxes, obstacle maps, convex regions and the two constraint builders
//! (corridors and Voronoi cells).

mod bvc;
mod hull;
mod region;
mod segment;
mod sfc;

pub use bvc::{build_all_bvcs, build_bvc};
pub use hull::{check_hull_free, hull_box_distance, point_triangle_closest};
pub use region::{region_contains, ConvexRegion, Halfspace, RegionKind};
pub use segment::{closest_segment_points, SegmentPair};
pub use sfc::{build_sfc, build_sfc_box, select_sfc_points};

use serde::{Deserialize, Serialize};

use crate::Vec3;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box has non-positive extent: min {min:?}, max {max:?}")]
    DegenerateBox { min: [f64; 3], max: [f64; 3] },
    #[error("expected 1 to 3 points, got {0}")]
    PointCount(usize),
    #[error("inflated hull of corridor seed points intersects an obstacle")]
    HullBlocked,
    #[error("bounding box of corridor seed points intersects an obstacle")]
    BoxBlocked,
    #[error("agents {0} and {1} share a position")]
    CoincidentAgents(usize, usize),
    #[error("agent index {index} out of range for {count} agents")]
    AgentIndex { index: usize, count: usize },
}

/// Closed axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    /// Box from corners; zero extent along an axis is allowed.
    pub fn new(min: Vec3, max: Vec3) -> Result<Self, GeometryError> {
        if (0..3).any(|k| !(min[k] <= max[k]) || !min[k].is_finite() || !max[k].is_finite()) {
            return Err(GeometryError::DegenerateBox {
                min: min.into(),
                max: max.into(),
            });
        }
        Ok(Self { min, max })
    }

    /// Obstacle box: every axis must have positive extent.
    pub fn solid(min: Vec3, max: Vec3) -> Result<Self, GeometryError> {
        let b = Self::new(min, max)?;
        if (0..3).any(|k| b.max[k] - b.min[k] <= 0.0) {
            return Err(GeometryError::DegenerateBox {
                min: min.into(),
                max: max.into(),
            });
        }
        Ok(b)
    }

    pub fn from_center(center: Vec3, size: Vec3) -> Result<Self, GeometryError> {
        Self::solid(center - size / 2.0, center + size / 2.0)
    }

    pub fn around(points: &[Vec3]) -> Option<Self> {
        let first = points.first()?;
        let (mut min, mut max) = (*first, *first);
        for p in &points[1..] {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(Self { min, max })
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - tol && p[k] <= self.max[k] + tol)
    }

    pub fn contains_box(&self, other: &Aabb, tol: f64) -> bool {
        self.contains(&other.min, tol) && self.contains(&other.max, tol)
    }

    pub fn closest_point(&self, p: &Vec3) -> Vec3 {
        p.sup(&self.min).inf(&self.max)
    }

    pub fn distance_to_point(&self, p: &Vec3) -> f64 {
        (p - self.closest_point(p)).norm()
    }

    /// Euclidean distance between two boxes (0 when they touch or overlap).
    pub fn distance_to_box(&self, other: &Aabb) -> f64 {
        self.gap_sq(other).sqrt()
    }

    fn gap_sq(&self, other: &Aabb) -> f64 {
        (0..3)
            .map(|k| {
                let g = (other.min[k] - self.max[k]).max(self.min[k] - other.max[k]).max(0.0);
                g * g
            })
            .sum()
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    pub fn edges(&self) -> [(Vec3, Vec3); 12] {
        let c = self.corners();
        [
            (c[0], c[1]),
            (c[2], c[3]),
            (c[4], c[5]),
            (c[6], c[7]),
            (c[0], c[2]),
            (c[1], c[3]),
            (c[4], c[6]),
            (c[5], c[7]),
            (c[0], c[4]),
            (c[1], c[5]),
            (c[2], c[6]),
            (c[3], c[7]),
        ]
    }

    pub fn inflate(&self, r: f64) -> Aabb {
        let e = Vec3::repeat(r);
        Aabb {
            min: self.min - e,
            max: self.max + e,
        }
    }
}

/// Static obstacle set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleMap {
    pub boxes: Vec<Aabb>,
}

impl ObstacleMap {
    pub fn new(boxes: Vec<Aabb>) -> Self {
        Self { boxes }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Distance from `p` to the nearest obstacle, infinite if there are none.
    pub fn distance(&self, p: &Vec3) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.distance_to_point(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// A sphere of radius `r` at `p` is strictly clear of every box.
    pub fn point_free(&self, p: &Vec3, r: f64) -> bool {
        self.distance(p) > r
    }

    /// The box inflated by `r` is strictly clear of every obstacle.
    pub fn box_free(&self, b: &Aabb, r: f64) -> bool {
        let r2 = r * r;
        self.boxes.iter().all(|o| o.gap_sq(b) > r2)
    }
}
