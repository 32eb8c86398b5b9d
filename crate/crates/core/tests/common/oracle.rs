//! Projected-gradient reference solutions for random convex QPs.

use mcswarm::qp::QuadProgram;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MAX_ITERS: usize = 1_000_000;

fn lipschitz(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.max()
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = m.transpose() * &m / n as f64 + DMatrix::identity(n, n) * 0.5;
    (&h + h.transpose()) / 2.0
}

/// Box-constrained problem `lo <= x <= hi`.
pub fn random_box_qp(seed: u64) -> (QuadProgram, DVector<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=36);
    let h = random_spd(&mut rng, n);
    let f = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let lo = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..0.0));
    let hi = DVector::from_fn(n, |i, _| lo[i] + rng.gen_range(0.1..1.5));
    let mut a = DMatrix::zeros(2 * n, n);
    let mut b = DVector::zeros(2 * n);
    for i in 0..n {
        a[(2 * i, i)] = 1.0;
        b[2 * i] = hi[i];
        a[(2 * i + 1, i)] = -1.0;
        b[2 * i + 1] = -lo[i];
    }
    (QuadProgram::new(h, f).with_inequalities(a, b), lo, hi)
}

/// General inequalities `A x <= b` built around a known feasible point.
pub fn random_general_qp(seed: u64) -> QuadProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=36);
    let m = rng.gen_range(1..=n);
    let h = random_spd(&mut rng, n);
    let f = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
    let b = &a * &x0 + DVector::from_fn(m, |_, _| rng.gen_range(0.0..0.5));
    QuadProgram::new(h, f).with_inequalities(a, b)
}

/// Primal projected gradient with step `1/L` for box constraints.
pub fn box_oracle(p: &QuadProgram, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    let step = 1.0 / lipschitz(&p.h);
    let mut x = DVector::zeros(p.dim());
    for _ in 0..MAX_ITERS {
        let g = &p.h * &x + &p.f;
        let nx = (&x - g * step).zip_zip_map(lo, hi, |v, l, u| v.clamp(l, u));
        let delta = (&nx - &x).amax();
        x = nx;
        if delta < 1e-15 {
            break;
        }
    }
    p.objective(&x)
}

/// Projected gradient ascent on the dual with step `1/L`.
pub fn dual_oracle(p: &QuadProgram) -> f64 {
    let hinv = p.h.clone().try_inverse().expect("spd");
    let ahat = &p.a_in * &hinv * p.a_in.transpose();
    let step = 1.0 / lipschitz(&ahat).max(1e-12);
    let mut lam = DVector::zeros(p.a_in.nrows());
    let primal = |lam: &DVector<f64>| -(&hinv * (&p.f + p.a_in.transpose() * lam));
    for _ in 0..MAX_ITERS {
        let x = primal(&lam);
        let g = &p.a_in * &x - &p.b_in;
        let nl = (&lam + g * step).map(|v| v.max(0.0));
        let delta = (&nl - &lam).amax();
        lam = nl;
        if delta < 1e-15 {
            break;
        }
    }
    p.objective(&primal(&lam))
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
