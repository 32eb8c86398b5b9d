use serde::{Deserialize, Serialize};

use crate::Vec3;

/// Closest points between segment `a` (`c_ij`, parameter `s`) and segment `b`
/// (`c_ji`, parameter `t`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentPair {
    pub c_ij: Vec3,
    pub c_ji: Vec3,
    pub s: f64,
    pub t: f64,
}

impl SegmentPair {
    pub fn distance(&self) -> f64 {
        (self.c_ij - self.c_ji).norm()
    }
}

const EPS: f64 = 1e-18;

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Closest pair between `[a0, a1]` and `[b0, b1]`. Ties (parallel overlap)
/// resolve to the smallest `s`, then the smallest `t`.
pub fn closest_segment_points(a0: &Vec3, a1: &Vec3, b0: &Vec3, b1: &Vec3) -> SegmentPair {
    let d1 = a1 - a0;
    let d2 = b1 - b0;
    let w = a0 - b0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&w);

    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, clamp01(f / e))
    } else {
        let c = d1.dot(&w);
        if e <= EPS {
            (clamp01(-c / a), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            if denom > 1e-12 * a * e {
                let mut s = clamp01((b * f - c * e) / denom);
                let mut t = (b * s + f) / e;
                if t < 0.0 {
                    t = 0.0;
                    s = clamp01(-c / a);
                } else if t > 1.0 {
                    t = 1.0;
                    s = clamp01((b - c) / a);
                }
                (s, t)
            } else {
                // Parallel: b's endpoints project onto a at s0 and s1.
                let s0 = -c / a;
                let s1 = (b - c) / a;
                let lo = s0.min(s1);
                let hi = s0.max(s1);
                let s = if hi < 0.0 {
                    0.0
                } else if lo > 1.0 {
                    1.0
                } else {
                    lo.max(0.0)
                };
                let p = a0 + d1 * s;
                let t = clamp01((p - b0).dot(&d2) / e);
                (s, t)
            }
        }
    };

    SegmentPair {
        c_ij: a0 + d1 * s,
        c_ji: b0 + d2 * t,
        s,
        t,
    }
}
