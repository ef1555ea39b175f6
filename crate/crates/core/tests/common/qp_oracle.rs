//! Dense reference solvers for small QPs, independent of the sparse IPM.

use hvac_dfl::qp::QpProblem;
use hvac_dfl::CscMatrix;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub struct DenseQp {
    pub q_mat: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

pub struct OracleSolution {
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub active: Vec<bool>,
    pub objective: f64,
}

fn to_dense(m: &CscMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, j, v) in m.iter() {
        d[(i, j)] += v;
    }
    d
}

fn to_csc(m: &DMatrix<f64>) -> CscMatrix {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    CscMatrix::from_dense_full(&rows, m.ncols())
}

impl DenseQp {
    pub fn from_problem(p: &QpProblem) -> Self {
        Self {
            q_mat: to_dense(&p.q_mat),
            q: DVector::from_column_slice(&p.q),
            a: to_dense(&p.a),
            b: DVector::from_column_slice(&p.b),
            g: to_dense(&p.g),
            h: DVector::from_column_slice(&p.h),
        }
    }

    /// Keeps every entry in the pattern, zeros included, so gradients exist
    /// for all of them.
    pub fn to_problem(&self) -> QpProblem {
        QpProblem::new(
            to_csc(&self.q_mat),
            self.q.iter().copied().collect(),
            to_csc(&self.a),
            self.b.iter().copied().collect(),
            to_csc(&self.g),
            self.h.iter().copied().collect(),
        )
        .unwrap()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.q_mat * u)) + self.q.dot(u)
    }

    /// Solves the equality-constrained subproblem with the rows in `active`
    /// held tight. Returns `None` if the subproblem is singular.
    pub fn solve_active(&self, active: &[bool]) -> Option<OracleSolution> {
        let n = self.q.len();
        let me = self.b.len();
        let rows: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
        let ma = rows.len();
        let dim = n + me + ma;
        let mut k = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        k.view_mut((0, 0), (n, n)).copy_from(&self.q_mat);
        for i in 0..me {
            for j in 0..n {
                k[(n + i, j)] = self.a[(i, j)];
                k[(j, n + i)] = self.a[(i, j)];
            }
            rhs[n + i] = self.b[i];
        }
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..n {
                k[(n + me + r, j)] = self.g[(i, j)];
                k[(j, n + me + r)] = self.g[(i, j)];
            }
            rhs[n + me + r] = self.h[i];
        }
        for j in 0..n {
            rhs[j] = -self.q[j];
        }
        let x = k.clone().lu().solve(&rhs)?;
        let scale = 1.0 + rhs.amax() + k.amax() * x.amax();
        if !x.iter().all(|v| v.is_finite()) || (&k * &x - &rhs).amax() > 1e-12 * scale {
            return None;
        }
        let u = x.rows(0, n).into_owned();
        let y = x.rows(n, me).into_owned();
        let mut z = DVector::zeros(active.len());
        for (r, &i) in rows.iter().enumerate() {
            z[i] = x[n + me + r];
        }
        Some(OracleSolution {
            objective: self.objective(&u),
            u,
            y,
            z,
            active: active.to_vec(),
        })
    }

    fn is_kkt_point(&self, s: &OracleSolution, tol: f64) -> bool {
        let slack = &self.h - &self.g * &s.u;
        let eq = (&self.a * &s.u - &self.b).amax();
        let stat = (&self.q_mat * &s.u + &self.q + self.a.transpose() * &s.y + self.g.transpose() * &s.z).amax();
        eq <= 1e-9
            && stat <= 1e-9
            && slack.iter().all(|&v| v >= -tol)
            && s.z.iter().all(|&v| v >= -tol)
    }

    /// Enumerates every active set and keeps the best KKT point.
    pub fn enumerate(&self) -> Option<OracleSolution> {
        let mi = self.h.len();
        assert!(mi <= 16, "enumeration over {mi} rows is too large");
        let mut best: Option<OracleSolution> = None;
        for mask in 0u32..(1 << mi) {
            let active: Vec<bool> = (0..mi).map(|i| mask & (1 << i) != 0).collect();
            let Some(s) = self.solve_active(&active) else { continue };
            if !self.is_kkt_point(&s, 1e-9) {
                continue;
            }
            if best.as_ref().is_none_or(|b| s.objective < b.objective) {
                best = Some(s);
            }
        }
        best
    }

    /// Re-solves with a guessed active set, falling back to enumeration when
    /// the guess is not a KKT point of this (perturbed) problem.
    pub fn resolve(&self, hint: &[bool]) -> OracleSolution {
        if let Some(s) = self.solve_active(hint) {
            if self.is_kkt_point(&s, 0.0) {
                return s;
            }
        }
        self.enumerate().expect("perturbed problem lost feasibility")
    }
}

/// Random strictly convex QP with a planted optimum whose complementarity
/// margin is at least `margin`: Q = MᵀM + I, every inactive row has slack
/// and every active row has dual in [margin, 1 + margin]. Requires me ≤ n.
pub fn random_qp<R: Rng>(rng: &mut R, n: usize, me: usize, mi: usize, margin: f64) -> DenseQp {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q_mat = m.transpose() * &m + DMatrix::identity(n, n);
    let a = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
    let g = DMatrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
    let u = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(me, |_, _| rng.random_range(-1.0..1.0));
    let mut z = DVector::zeros(mi);
    let mut slack = DVector::zeros(mi);
    // at most n − me active rows, so the active constraints stay linearly
    // independent and the duals are unique
    let mut free = n.saturating_sub(me);
    for i in 0..mi {
        if free > 0 && rng.random_bool(0.5) {
            free -= 1;
            z[i] = margin + rng.random_range(0.0..1.0);
        } else {
            slack[i] = margin + rng.random_range(0.0..1.0);
        }
    }
    let q = -(&q_mat * &u + a.transpose() * &y + g.transpose() * &z);
    let b = &a * &u;
    let h = &g * &u + slack;
    DenseQp {
        q_mat,
        q,
        a,
        b,
        g,
        h,
    }
}

/// Central-difference gradients of L(u*) = cᵀu* over every data entry.
pub struct FdGradients {
    pub q_mat: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

pub fn finite_differences(base: &DenseQp, c: &DVector<f64>, step: f64) -> FdGradients {
    let hint = base.enumerate().expect("base problem infeasible").active;
    let loss = |p: &DenseQp| c.dot(&p.resolve(&hint).u);
    let n = base.q.len();
    let me = base.b.len();
    let mi = base.h.len();
    let mut work = DenseQp {
        q_mat: base.q_mat.clone(),
        q: base.q.clone(),
        a: base.a.clone(),
        b: base.b.clone(),
        g: base.g.clone(),
        h: base.h.clone(),
    };
    let central = |work: &mut DenseQp, set: &dyn Fn(&mut DenseQp, f64)| {
        set(work, step);
        let up = loss(work);
        set(work, -2.0 * step);
        let down = loss(work);
        set(work, step);
        (up - down) / (2.0 * step)
    };

    // Q perturbed symmetrically; the symmetrized gradient then satisfies
    // dL = grad[i][j] + grad[j][i] for i ≠ j.
    let mut q_mat = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let d = central(&mut work, &|p, s| {
                p.q_mat[(i, j)] += s;
                if i != j {
                    p.q_mat[(j, i)] += s;
                }
            });
            if i == j {
                q_mat[(i, i)] = d;
            } else {
                q_mat[(i, j)] = 0.5 * d;
                q_mat[(j, i)] = 0.5 * d;
            }
        }
    }
    let q = DVector::from_fn(n, |j, _| central(&mut work, &|p, s| p.q[j] += s));
    let a = DMatrix::from_fn(me, n, |i, j| central(&mut work, &|p, s| p.a[(i, j)] += s));
    let b = DVector::from_fn(me, |i, _| central(&mut work, &|p, s| p.b[i] += s));
    let g = DMatrix::from_fn(mi, n, |i, j| central(&mut work, &|p, s| p.g[(i, j)] += s));
    let h = DVector::from_fn(mi, |i, _| central(&mut work, &|p, s| p.h[i] += s));
    FdGradients {
        q_mat,
        q,
        a,
        b,
        g,
        h,
    }
}

/// max |x − y| / max(max |y|, floor) over a block.
pub fn block_rel_error(x: &[f64], y: &[f64], floor: f64) -> f64 {
    assert_eq!(x.len(), y.len());
    let scale = y.iter().fold(floor, |m, v| m.max(v.abs()));
    x.iter().zip(y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

pub fn dense_of(m: &CscMatrix) -> Vec<f64> {
    let d = to_dense(m);
    d.iter().copied().collect()
}

pub fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    m.iter().copied().collect()
}
