//! Exact distances between convex hulls of up to three points and boxes.

use super::{closest_segment_points, Aabb, ObstacleMap};
use crate::Vec3;

/// True iff `Conv(points)` inflated by `r` misses every obstacle. Touching at
/// exactly `r` counts as a collision. Invalid point counts (0 or > 3) are
/// reported as not free.
pub fn check_hull_free(points: &[Vec3], r: f64, obstacles: &ObstacleMap) -> bool {
    if points.is_empty() || points.len() > 3 {
        return false;
    }
    obstacles
        .boxes
        .iter()
        .all(|b| hull_box_distance(points, b) > r)
}

/// Euclidean distance between `Conv(points)` (1 to 3 points) and a box.
pub fn hull_box_distance(points: &[Vec3], b: &Aabb) -> f64 {
    match points {
        [p] => b.distance_to_point(p),
        [p, q] => segment_box_distance(p, q, b),
        [p, q, s] => triangle_box_distance(p, q, s, b),
        _ => panic!("hull_box_distance expects 1 to 3 points, got {}", points.len()),
    }
}

fn segment_hits_box(p: &Vec3, q: &Vec3, b: &Aabb) -> bool {
    let d = q - p;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..3 {
        if d[k].abs() < 1e-300 {
            if p[k] < b.min[k] || p[k] > b.max[k] {
                return false;
            }
        } else {
            let inv = 1.0 / d[k];
            let mut ta = (b.min[k] - p[k]) * inv;
            let mut tb = (b.max[k] - p[k]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

fn segment_box_distance(p: &Vec3, q: &Vec3, b: &Aabb) -> f64 {
    if segment_hits_box(p, q, b) {
        return 0.0;
    }
    let mut best = b.distance_to_point(p).min(b.distance_to_point(q));
    for (e0, e1) in b.edges() {
        best = best.min(closest_segment_points(p, q, &e0, &e1).distance());
    }
    best
}

/// Closest point to `p` on triangle `abc`.
pub fn point_triangle_closest(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

fn project(axis: &Vec3, pts: &[Vec3]) -> (f64, f64) {
    pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let v = axis.dot(p);
        (lo.min(v), hi.max(v))
    })
}

/// Separating-axis overlap test between a triangle and a box (closed sets).
fn triangle_hits_box(tri: &[Vec3; 3], b: &Aabb) -> bool {
    let corners = b.corners();
    let edges = [tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2]];
    let mut axes: Vec<Vec3> = vec![Vec3::x(), Vec3::y(), Vec3::z(), edges[0].cross(&edges[1])];
    for e in &edges {
        for k in 0..3 {
            let mut u = Vec3::zeros();
            u[k] = 1.0;
            axes.push(e.cross(&u));
        }
    }
    let scale = edges.iter().map(|e| e.norm_squared()).fold(0.0, f64::max);
    for axis in axes {
        if axis.norm_squared() <= 1e-24 * scale.max(1e-300) {
            continue;
        }
        let (t0, t1) = project(&axis, tri);
        let (b0, b1) = project(&axis, &corners);
        if t1 < b0 || b1 < t0 {
            return false;
        }
    }
    true
}

fn triangle_box_distance(p: &Vec3, q: &Vec3, s: &Vec3, b: &Aabb) -> f64 {
    let tri = [*p, *q, *s];
    let n = (q - p).cross(&(s - p));
    let scale = (q - p).norm_squared().max((s - p).norm_squared()).max((s - q).norm_squared());
    if n.norm_squared() <= 1e-24 * scale * scale || scale == 0.0 {
        // Collinear: the hull is the segment between the farthest pair.
        let pairs = [(p, q), (p, s), (q, s)];
        let (a, c) = pairs
            .iter()
            .max_by(|x, y| {
                (x.0 - x.1)
                    .norm_squared()
                    .partial_cmp(&(y.0 - y.1).norm_squared())
                    .unwrap()
            })
            .unwrap();
        return segment_box_distance(a, c, b);
    }
    if triangle_hits_box(&tri, b) {
        return 0.0;
    }
    let mut best = tri.iter().map(|v| b.distance_to_point(v)).fold(f64::INFINITY, f64::min);
    let tri_edges = [(p, q), (q, s), (s, p)];
    for (e0, e1) in b.edges() {
        for (t0, t1) in &tri_edges {
            best = best.min(closest_segment_points(t0, t1, &e0, &e1).distance());
        }
    }
    for c in b.corners() {
        best = best.min((c - point_triangle_closest(&c, p, q, s)).norm());
    }
    best
}
