use super::{check_hull_free, Aabb, ConvexRegion, GeometryError, ObstacleMap};
use crate::Vec3;

const FACE_EPS: f64 = 1e-9;
const MAX_PASSES: usize = 16;

/// Corridor seed points for step `h`.
pub fn select_sfc_points(
    h: u64,
    p_hat: &Vec3,
    g_prev: &Vec3,
    w: &Vec3,
    r: f64,
    obstacles: &ObstacleMap,
) -> Vec<Vec3> {
    if h == 0 {
        return vec![*p_hat, *w];
    }
    let all = vec![*p_hat, *g_prev, *w];
    if check_hull_free(&all, r, obstacles) {
        all
    } else {
        vec![*p_hat, *g_prev]
    }
}

/// Axis-aligned corridor containing `points`, grown face by face in the order
/// +x, -x, +y, -y, +z, -z until no face can move. The inflated result never
/// touches an obstacle and never leaves `bounds` (beyond the points' own box).
pub fn build_sfc_box(
    points: &[Vec3],
    r: f64,
    obstacles: &ObstacleMap,
    bounds: &Aabb,
) -> Result<Aabb, GeometryError> {
    if points.is_empty() || points.len() > 3 {
        return Err(GeometryError::PointCount(points.len()));
    }
    if !check_hull_free(points, r, obstacles) {
        return Err(GeometryError::HullBlocked);
    }
    let mut b = Aabb::around(points).expect("nonempty");
    if !obstacles.box_free(&b, r) {
        return Err(GeometryError::BoxBlocked);
    }
    let limit_lo = bounds.min.inf(&b.min);
    let limit_hi = bounds.max.sup(&b.max);
    let r2 = r * r;

    for _ in 0..MAX_PASSES {
        let mut moved = false;
        for k in 0..3 {
            for positive in [true, false] {
                let mut target = if positive { limit_hi[k] } else { limit_lo[k] };
                for o in &obstacles.boxes {
                    let ahead = if positive {
                        o.min[k] >= b.max[k]
                    } else {
                        o.max[k] <= b.min[k]
                    };
                    if !ahead {
                        continue;
                    }
                    let perp: f64 = (0..3)
                        .filter(|&j| j != k)
                        .map(|j| {
                            let g = (o.min[j] - b.max[j]).max(b.min[j] - o.max[j]).max(0.0);
                            g * g
                        })
                        .sum();
                    if perp >= r2 {
                        continue;
                    }
                    let reach = (r2 - perp).sqrt() + FACE_EPS;
                    if positive {
                        target = target.min(o.min[k] - reach);
                    } else {
                        target = target.max(o.max[k] + reach);
                    }
                }
                if positive && target > b.max[k] {
                    b.max[k] = target;
                    moved = true;
                } else if !positive && target < b.min[k] {
                    b.min[k] = target;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    debug_assert!(obstacles.box_free(&b, r));
    Ok(b)
}

pub fn build_sfc(
    points: &[Vec3],
    r: f64,
    obstacles: &ObstacleMap,
    bounds: &Aabb,
) -> Result<ConvexRegion, GeometryError> {
    build_sfc_box(points, r, obstacles, bounds).map(|b| ConvexRegion::from_aabb(&b))
}
