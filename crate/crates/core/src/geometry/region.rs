use serde::{Deserialize, Serialize};

use super::Aabb;
use crate::Vec3;

/// `normal · x - offset >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec3,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vec3, offset: f64) -> Self {
        Self { normal, offset }
    }

    /// Signed slack; non-negative inside.
    pub fn eval(&self, x: &Vec3) -> f64 {
        self.normal.dot(x) - self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionKind {
    Sfc,
    Bvc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexRegion {
    pub kind: RegionKind,
    pub halfspaces: Vec<Halfspace>,
}

impl ConvexRegion {
    pub fn new(kind: RegionKind, halfspaces: Vec<Halfspace>) -> Self {
        Self { kind, halfspaces }
    }

    /// Six axis-aligned halfspaces in the order +x, -x, +y, -y, +z, -z faces.
    pub fn from_aabb(b: &Aabb) -> Self {
        let mut hs = Vec::with_capacity(6);
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = 1.0;
            hs.push(Halfspace::new(-e, -b.max[k]));
            hs.push(Halfspace::new(e, b.min[k]));
        }
        Self::new(RegionKind::Sfc, hs)
    }

    /// Recovers the box of an axis-aligned region built by [`Self::from_aabb`].
    pub fn as_aabb(&self) -> Option<Aabb> {
        let mut min = Vec3::repeat(f64::NEG_INFINITY);
        let mut max = Vec3::repeat(f64::INFINITY);
        for h in &self.halfspaces {
            let k = (0..3).find(|&k| h.normal[k].abs() == 1.0)?;
            if (0..3).any(|j| j != k && h.normal[j] != 0.0) {
                return None;
            }
            if h.normal[k] > 0.0 {
                min[k] = min[k].max(h.offset);
            } else {
                max[k] = max[k].min(-h.offset);
            }
        }
        Aabb::new(min, max).ok()
    }

    pub fn contains(&self, x: &Vec3, tol: f64) -> bool {
        region_contains(self, x, tol)
    }

    /// Smallest slack over all halfspaces (positive deep inside).
    pub fn min_slack(&self, x: &Vec3) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| h.eval(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn normals_unit(&self, tol: f64) -> bool {
        self.halfspaces
            .iter()
            .all(|h| (h.normal.norm() - 1.0).abs() <= tol)
    }
}

pub fn region_contains(region: &ConvexRegion, x: &Vec3, tol: f64) -> bool {
    region.halfspaces.iter().all(|h| h.eval(x) >= -tol)
}
