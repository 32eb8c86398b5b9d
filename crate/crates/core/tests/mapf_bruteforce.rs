use std::collections::{HashMap, VecDeque};

use mcswarm::geometry::{Aabb, ObstacleMap};
use mcswarm::grid::{build_grid, GridSpace, VertexId};
use mcswarm::mapf::{find_conflict, run_mapf, GridPath};
use mcswarm::Vec3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(nx: usize, ny: usize, nz: usize, blocked: &[[f64; 3]]) -> GridSpace {
    let d = 0.5;
    let b = Aabb::new(Vec3::zeros(), Vec3::new(d * (nx - 1) as f64, d * (ny - 1) as f64, d * (nz - 1) as f64)).unwrap();
    let boxes = blocked
        .iter()
        .map(|c| Aabb::from_center(Vec3::new(c[0], c[1], c[2]), Vec3::new(0.1, 0.1, 0.1)).unwrap())
        .collect();
    build_grid(&b, d, &ObstacleMap::new(boxes), 0.15).unwrap()
}

fn free(g: &GridSpace) -> Vec<VertexId> {
    (0..g.num_vertices()).filter(|&v| !g.is_blocked(v)).collect()
}

/// Optimal makespan by breadth-first search over joint configurations.
fn joint_bfs(g: &GridSpace, starts: &[VertexId], goals: &[VertexId]) -> Option<usize> {
    let mut seen: HashMap<Vec<VertexId>, usize> = HashMap::new();
    let mut q = VecDeque::new();
    seen.insert(starts.to_vec(), 0);
    q.push_back(starts.to_vec());
    while let Some(s) = q.pop_front() {
        let depth = seen[&s];
        if s == goals {
            return Some(depth);
        }
        let mut next = Vec::new();
        expand(g, &s, 0, &mut Vec::new(), &mut next);
        for t in next {
            if !seen.contains_key(&t) {
                seen.insert(t.clone(), depth + 1);
                q.push_back(t);
            }
        }
    }
    None
}

fn expand(g: &GridSpace, s: &[VertexId], i: usize, cur: &mut Vec<VertexId>, out: &mut Vec<Vec<VertexId>>) {
    if i == s.len() {
        out.push(cur.clone());
        return;
    }
    let mut moves = vec![s[i]];
    moves.extend_from_slice(g.neighbors(s[i]));
    for m in moves {
        let clash = (0..i).any(|j| cur[j] == m || (cur[j] == s[i] && m == s[j]));
        if clash {
            continue;
        }
        cur.push(m);
        expand(g, s, i + 1, cur, out);
        cur.pop();
    }
}

fn assert_valid(g: &GridSpace, paths: &[GridPath], starts: &[VertexId], goals: &[VertexId]) {
    for (i, p) in paths.iter().enumerate() {
        assert_eq!(p.first(), starts[i]);
        assert_eq!(p.last(), goals[i]);
        for w in p.vertices.windows(2) {
            assert!(w[0] == w[1] || g.is_edge(w[0], w[1]), "agent {i} jumps {w:?}");
        }
    }
    assert_eq!(find_conflict(paths), None);
}

fn random_instance(rng: &mut ChaCha8Rng, g: &GridSpace, k: usize) -> (Vec<VertexId>, Vec<VertexId>) {
    let f = free(g);
    let starts: Vec<VertexId> = f.choose_multiple(rng, k).copied().collect();
    let goals: Vec<VertexId> = f.choose_multiple(rng, k).copied().collect();
    (starts, goals)
}

#[test]
fn single_agent_is_shortest_path() {
    let g = grid(4, 3, 2, &[[0.5, 0.5, 0.0], [1.0, 0.5, 0.0]]);
    let f = free(&g);
    for &s in &f {
        for &z in &f {
            let p = run_mapf(&[s], &[z], &g, 0).unwrap();
            assert_valid(&g, &p, &[s], &[z]);
            let dist = g.bfs_distances(z)[s] as usize;
            assert_eq!(p[0].makespan(), dist, "{s} -> {z}");
        }
    }
}

#[test]
fn small_instances_against_joint_search() {
    let grids = [grid(3, 3, 1, &[]), grid(4, 2, 1, &[]), grid(3, 2, 2, &[]), grid(4, 3, 1, &[[0.5, 0.5, 0.0]])];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut solved = 0;
    for (gi, g) in grids.iter().enumerate() {
        for _ in 0..40 {
            let k = rng.gen_range(2..=3);
            let (starts, goals) = random_instance(&mut rng, g, k);
            let best = joint_bfs(g, &starts, &goals);
            let seed = rng.gen();
            match run_mapf(&starts, &goals, g, seed) {
                Ok(paths) => {
                    assert_valid(g, &paths, &starts, &goals);
                    let opt = best.expect("a valid plan implies a solvable instance");
                    let span = paths.iter().map(|p| p.makespan()).max().unwrap();
                    assert!(span >= opt, "grid {gi}: makespan {span} beats optimum {opt}");
                    solved += 1;
                }
                Err(e) => assert!(best.is_none(), "grid {gi}: solvable in {best:?} but {e}"),
            }
        }
    }
    assert!(solved >= 150, "{solved}");
}

#[test]
fn identical_inputs_give_identical_paths() {
    let g = grid(4, 4, 2, &[]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let (starts, goals) = random_instance(&mut rng, &g, 6);
        let seed = rng.gen();
        let a = run_mapf(&starts, &goals, &g, seed).unwrap();
        let b = run_mapf(&starts, &goals, &g, seed).unwrap();
        assert_eq!(a, b);
    }
}
