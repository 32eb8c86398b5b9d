use super::{closest_segment_points, ConvexRegion, GeometryError, Halfspace, RegionKind};
use crate::Vec3;

const TOUCH_EPS: f64 = 1e-12;

/// Halfspace for the lower-indexed agent `i` against `j` (`i < j`), and the
/// mirrored one for `j`. Both come from the same closest-point pair so the two
/// cells are exactly consistent.
fn pair_halfspaces(
    i: usize,
    j: usize,
    p: &[Vec3],
    g: &[Vec3],
    r: f64,
) -> Result<(Halfspace, Halfspace), GeometryError> {
    debug_assert!(i < j);
    let sp = closest_segment_points(&p[i], &g[i], &p[j], &g[j]);
    let diff = sp.c_ij - sp.c_ji;
    let sep = diff.norm();
    if sep > TOUCH_EPS {
        let n = diff / sep;
        // Pairs already closer than 2r get a plane through each closest point.
        let d = r.min(0.5 * sep) + 0.5 * sep;
        let hi = Halfspace::new(n, n.dot(&sp.c_ji) + d);
        let hj = Halfspace::new(-n, -n.dot(&sp.c_ij) + d);
        Ok((hi, hj))
    } else {
        let dp = p[i] - p[j];
        let dn = dp.norm();
        if dn <= TOUCH_EPS {
            return Err(GeometryError::CoincidentAgents(i, j));
        }
        let n = dp / dn;
        let m = (p[i] + p[j]) / 2.0;
        let off = r.min(0.5 * dn);
        let hi = Halfspace::new(n, n.dot(&m) + off);
        let hj = Halfspace::new(-n, -n.dot(&m) + off);
        Ok((hi, hj))
    }
}

fn check_lengths(i: usize, p: &[Vec3], g: &[Vec3]) -> Result<(), GeometryError> {
    let count = p.len().min(g.len());
    if i >= count || p.len() != g.len() {
        return Err(GeometryError::AgentIndex { index: i, count });
    }
    Ok(())
}

/// Modified buffered Voronoi cell of agent `i`: one halfspace per neighbor,
/// computed from the closest points between the position-to-previous-subgoal
/// segments.
pub fn build_bvc(
    i: usize,
    positions: &[Vec3],
    g_prev: &[Vec3],
    r: f64,
) -> Result<ConvexRegion, GeometryError> {
    check_lengths(i, positions, g_prev)?;
    let mut hs = Vec::with_capacity(positions.len().saturating_sub(1));
    for j in 0..positions.len() {
        if j == i {
            continue;
        }
        let h = if i < j {
            pair_halfspaces(i, j, positions, g_prev, r)?.0
        } else {
            pair_halfspaces(j, i, positions, g_prev, r)?.1
        };
        hs.push(h);
    }
    Ok(ConvexRegion::new(RegionKind::Bvc, hs))
}

/// All cells at once; each pair is evaluated a single time.
pub fn build_all_bvcs(
    positions: &[Vec3],
    g_prev: &[Vec3],
    r: f64,
) -> Result<Vec<ConvexRegion>, GeometryError> {
    let n = positions.len();
    if n > 0 {
        check_lengths(n - 1, positions, g_prev)?;
    }
    let mut cells: Vec<Vec<Halfspace>> = vec![Vec::with_capacity(n.saturating_sub(1)); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (hi, hj) = pair_halfspaces(i, j, positions, g_prev, r)?;
            cells[i].push(hi);
            cells[j].push(hj);
        }
    }
    Ok(cells
        .into_iter()
        .map(|hs| ConvexRegion::new(RegionKind::Bvc, hs))
        .collect())
}
