mod common;

use common::oracle::*;
use mcswarm::qp::{solve_qp, QpSettings, QpStatus, QuadProgram};
use nalgebra::{DMatrix, DVector};

#[test]
fn box_problems_match_projected_gradient() {
    for seed in 0..25 {
        let (p, lo, hi) = random_box_qp(seed);
        let s = solve_qp(&p, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal, "seed {seed}");
        assert!(p.max_violation(&s.x) <= 1e-7);
        let o = box_oracle(&p, &lo, &hi);
        assert!(rel_gap(s.objective, o) <= 1e-4, "seed {seed}: {} vs {o}", s.objective);
    }
}

#[test]
fn general_problems_match_dual_gradient() {
    for seed in 100..125 {
        let p = random_general_qp(seed);
        let s = solve_qp(&p, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal, "seed {seed}");
        assert!(p.max_violation(&s.x) <= 1e-7);
        let o = dual_oracle(&p);
        assert!(rel_gap(s.objective, o) <= 1e-4, "seed {seed}: {} vs {o}", s.objective);
    }
}

#[test]
fn infeasible_fixtures() {
    // x1 >= 1 and x1 <= 0
    let p = QuadProgram::new(DMatrix::identity(3, 3), DVector::zeros(3)).with_inequalities(
        DMatrix::from_row_slice(2, 3, &[-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        DVector::from_vec(vec![-1.0, 0.0]),
    );
    assert_eq!(solve_qp(&p, &QpSettings::default()).unwrap().status, QpStatus::Infeasible);
    // x + y <= -1, x >= 0, y >= 0
    let p = QuadProgram::new(DMatrix::identity(2, 2), DVector::zeros(2)).with_inequalities(
        DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
        DVector::from_vec(vec![-1.0, 0.0, 0.0]),
    );
    assert_eq!(solve_qp(&p, &QpSettings::default()).unwrap().status, QpStatus::Infeasible);
    // equality outside a box
    let p = QuadProgram::new(DMatrix::identity(2, 2), DVector::zeros(2))
        .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DVector::from_vec(vec![2.0]))
        .with_inequalities(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DVector::from_vec(vec![1.0]));
    assert_eq!(solve_qp(&p, &QpSettings::default()).unwrap().status, QpStatus::Infeasible);
}

#[test]
fn no_feasible_sample_beats_solution() {
    use rand::{Rng, SeedableRng};
    for seed in 200..220 {
        let p = random_general_qp(seed);
        let s = solve_qp(&p, &QpSettings::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let d = DVector::from_fn(p.dim(), |_, _| rng.gen_range(-0.05..0.05));
            let y = &s.x + d;
            if p.max_violation(&y) <= 0.0 {
                assert!(p.objective(&y) >= s.objective - 1e-9);
            }
        }
    }
}
