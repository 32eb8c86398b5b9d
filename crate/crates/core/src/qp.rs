//! Dense strictly convex QP solver (Goldfarb-Idnani dual active set).
//!
//! Solves `min ½xᵀHx + fᵀx` s.t. `A_in x <= b_in`, `A_eq x = b_eq`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadProgram {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl QuadProgram {
    /// Unconstrained problem of size `n`.
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        Self {
            h,
            f,
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
        }
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    /// Largest violation over all rows (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let vin = (&self.a_in * x - &self.b_in).iter().fold(0.0f64, |m, &v| m.max(v));
        let veq = (&self.a_eq * x - &self.b_eq).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        vin.max(veq)
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        let ok = self.h.nrows() == n
            && self.h.ncols() == n
            && self.a_in.ncols() == n
            && self.a_in.nrows() == self.b_in.len()
            && self.a_eq.ncols() == n
            && self.a_eq.nrows() == self.b_eq.len();
        if !ok {
            return Err(QpError::DimensionMismatch);
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-12 * (1.0f64).max(self.h.amax()) {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum QpError {
    #[error("inconsistent problem dimensions")]
    DimensionMismatch,
    #[error("cost matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("cost matrix is not positive definite")]
    NotPositiveDefinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub tol_feas: f64,
    pub tol_opt: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-7,
            tol_opt: 1e-6,
            max_iter: 1000,
        }
    }
}

const ADD_TOL: f64 = 1e-10;
const DEP_TOL: f64 = 1e-20;

struct Row {
    n: DVector<f64>,
    b: f64,
    eq: bool,
}

struct Active {
    idx: Vec<usize>,
    eq: Vec<bool>,
    /// `L⁻¹ n` for each active normal (sign already applied).
    ly: Vec<DVector<f64>>,
    u: Vec<f64>,
}

impl Active {
    fn remove(&mut self, c: usize) {
        self.idx.remove(c);
        self.eq.remove(c);
        self.ly.remove(c);
        self.u.remove(c);
    }
}

pub fn solve_qp(p: &QuadProgram, settings: &QpSettings) -> Result<QpSolution, QpError> {
    p.validate()?;
    let n = p.dim();
    let chol = match p.h.clone().cholesky() {
        Some(c) => c,
        None => (&p.h + DMatrix::identity(n, n) * 1e-10)
            .cholesky()
            .ok_or(QpError::NotPositiveDefinite)?,
    };
    let l = chol.l();
    let lt = l.transpose();
    let l_solve = |v: &DVector<f64>| l.solve_lower_triangular(v).expect("nonsingular factor");
    let lt_solve = |v: &DVector<f64>| lt.solve_upper_triangular(v).expect("nonsingular factor");

    // Rows in the form nᵀx >= b, scaled to unit normals.
    let mut rows = Vec::with_capacity(p.a_eq.nrows() + p.a_in.nrows());
    for k in 0..p.a_eq.nrows() {
        let a = p.a_eq.row(k).transpose();
        let s = a.norm();
        if s == 0.0 {
            if p.b_eq[k].abs() > settings.tol_feas {
                return Ok(infeasible(p, DVector::zeros(n), 0));
            }
            continue;
        }
        rows.push(Row { n: a / s, b: p.b_eq[k] / s, eq: true });
    }
    let n_eq_rows = rows.len();
    for k in 0..p.a_in.nrows() {
        let a = p.a_in.row(k).transpose();
        let s = a.norm();
        if s == 0.0 {
            if p.b_in[k] < -settings.tol_feas {
                return Ok(infeasible(p, DVector::zeros(n), 0));
            }
            continue;
        }
        rows.push(Row { n: -a / s, b: -p.b_in[k] / s, eq: false });
    }

    let mut x = -chol.solve(&p.f);
    let mut act = Active { idx: Vec::new(), eq: Vec::new(), ly: Vec::new(), u: Vec::new() };
    let mut is_active = vec![false; rows.len()];
    let mut iterations = 0;
    let mut next_eq = 0;

    loop {
        let pick = if next_eq < n_eq_rows {
            next_eq += 1;
            Some(next_eq - 1)
        } else {
            let mut best: Option<(usize, f64)> = None;
            for k in n_eq_rows..rows.len() {
                if is_active[k] {
                    continue;
                }
                let s = rows[k].n.dot(&x) - rows[k].b;
                if s < -ADD_TOL && best.is_none_or(|(_, bs)| s < bs) {
                    best = Some((k, s));
                }
            }
            best.map(|(k, _)| k)
        };
        let Some(kp) = pick else { break };

        let is_eq = rows[kp].eq;
        let mut np = rows[kp].n.clone();
        let mut bp = rows[kp].b;
        if is_eq && np.dot(&x) - bp > 0.0 {
            np = -np;
            bp = -bp;
        }
        let y = l_solve(&np);
        let mut up = 0.0;

        loop {
            iterations += 1;
            if iterations > settings.max_iter {
                return Ok(QpSolution {
                    objective: p.objective(&x),
                    x,
                    status: QpStatus::MaxIter,
                    iterations,
                });
            }
            let sp = np.dot(&x) - bp;
            let q = act.idx.len();
            let (w, r) = if q == 0 {
                (y.clone(), DVector::zeros(0))
            } else {
                let b = DMatrix::from_columns(&act.ly);
                let qr = b.qr();
                let qm = qr.q();
                let rm = qr.r();
                let qty = qm.transpose() * &y;
                let w = &y - &qm * &qty;
                let r = rm
                    .solve_upper_triangular(&qty)
                    .unwrap_or_else(|| DVector::zeros(q));
                (w, r)
            };
            let dependent = w.norm_squared() <= DEP_TOL * y.norm_squared();
            let z = if dependent { DVector::zeros(n) } else { lt_solve(&w) };

            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for c in 0..q {
                if act.eq[c] || r[c] <= 0.0 {
                    continue;
                }
                let t = act.u[c] / r[c];
                if t < t1 {
                    t1 = t;
                    drop = Some(c);
                }
            }
            let zn = z.dot(&np);
            let t2 = if dependent || zn <= 0.0 { f64::INFINITY } else { (-sp / zn).max(0.0) };

            if dependent && is_eq && sp.abs() <= ADD_TOL {
                // Redundant with the active equalities.
                break;
            }
            let t = t1.min(t2);
            if !t.is_finite() {
                return Ok(infeasible(p, x, iterations));
            }
            if t2.is_finite() {
                x += &z * t;
            }
            for c in 0..q {
                act.u[c] -= t * r[c];
            }
            up += t;
            if t2 <= t1 {
                act.idx.push(kp);
                act.eq.push(is_eq);
                act.ly.push(y.clone());
                act.u.push(up);
                is_active[kp] = true;
                break;
            }
            let c = drop.expect("finite t1 has an index");
            is_active[act.idx[c]] = false;
            act.remove(c);
        }
    }

    let status = if p.max_violation(&x) <= settings.tol_feas {
        QpStatus::Optimal
    } else {
        QpStatus::Infeasible
    };
    Ok(QpSolution { objective: p.objective(&x), x, status, iterations })
}

fn infeasible(p: &QuadProgram, x: DVector<f64>, iterations: usize) -> QpSolution {
    QpSolution { objective: p.objective(&x), x, status: QpStatus::Infeasible, iterations }
}
