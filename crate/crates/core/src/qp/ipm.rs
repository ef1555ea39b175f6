//! Primal-dual interior-point method with Mehrotra predictor-corrector.
//!
//! Works on the presolved problem in slack form `G u + s = h, s ≥ 0`. Every
//! Newton step solves the quasi-definite system
//!
//! ```text
//! [ Q + δI   Aᵀ     Gᵀ       ] [du]   [r1]
//! [ A        −δI    0        ] [dy] = [r2]
//! [ G        0      −(W + δI)] [dz]   [r3]
//! ```
//!
//! with `W = diag(s / z)`, refined against the unregularized matrix.

use super::presolve::{presolve, Presolve};
use super::problem::{kkt_parts, QpProblem, QpSolution, QpStatus};
use super::{QpError, SolverSettings};
use crate::linalg::ldl::{LdlFactor, LdlSymbolic};
use crate::linalg::sparse::{dot, norm_inf, CscMatrix};

/// Solves `problem` to the KKT tolerance `tolerance` (infinity norm of the
/// residual defined by [`super::kkt_residual`]).
pub fn solve(problem: &QpProblem, tolerance: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    solve_with(
        problem,
        &SolverSettings {
            tolerance,
            max_iter,
            ..SolverSettings::default()
        },
    )
}

pub fn solve_with(problem: &QpProblem, settings: &SolverSettings) -> Result<QpSolution, QpError> {
    if !(settings.tolerance > 0.0) {
        return Err(QpError::InvalidSettings("tolerance must be positive".into()));
    }
    problem.validate()?;
    let ps = match presolve(problem) {
        Presolve::Reduced(ps) => ps,
        Presolve::Infeasible(msg) => {
            log::debug!("presolve: {msg}");
            return Ok(failed(problem, QpStatus::Infeasible, 0));
        }
    };
    let inner = Ipm::new(&ps.reduced, settings)?.run();
    let (u, y, z) = ps.postsolve(problem, &inner.u, &inner.y, &inner.z);
    let residual = kkt_parts(problem, &u, &y, &z).max();
    let status = match inner.status {
        QpStatus::Optimal if residual > settings.tolerance => QpStatus::MaxIter,
        s => s,
    };
    Ok(QpSolution {
        objective_value: problem.objective(&u),
        primal: u,
        dual_eq: y,
        dual_in: z,
        status,
        kkt_residual: residual,
        iterations: inner.iterations,
    })
}

fn failed(problem: &QpProblem, status: QpStatus, iterations: usize) -> QpSolution {
    let u = vec![0.0; problem.num_vars()];
    QpSolution {
        objective_value: f64::NAN,
        primal: u,
        dual_eq: vec![0.0; problem.num_eq()],
        dual_in: vec![0.0; problem.num_ineq()],
        status,
        kkt_residual: f64::INFINITY,
        iterations,
    }
}

struct IpmResult {
    u: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    status: QpStatus,
    iterations: usize,
}

struct Ipm<'a> {
    p: &'a QpProblem,
    settings: &'a SolverSettings,
    n: usize,
    me: usize,
    mi: usize,
    /// KKT matrix (upper triangle) with W = 0 and no regularization
    kkt: CscMatrix,
    symbolic: LdlSymbolic,
    /// storage position of each diagonal entry of `kkt`
    diag_pos: Vec<usize>,
    signs: Vec<f64>,
}

impl<'a> Ipm<'a> {
    fn new(p: &'a QpProblem, settings: &'a SolverSettings) -> Result<Self, QpError> {
        let (n, me, mi) = (p.num_vars(), p.num_eq(), p.num_ineq());
        let dim = n + me + mi;
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(p.q_mat.nnz() + p.a.nnz() + p.g.nnz() + dim);
        trip.extend(p.q_mat.iter().filter(|&(i, j, _)| i <= j));
        trip.extend(p.a.iter().map(|(i, j, v)| (j, n + i, v)));
        trip.extend(p.g.iter().map(|(i, j, v)| (j, n + me + i, v)));
        trip.extend((0..dim).map(|k| (k, k, 0.0)));
        let kkt = CscMatrix::from_triplets(dim, dim, &trip);
        let diag_pos = (0..dim).map(|k| kkt.position(k, k).unwrap()).collect();
        let symbolic = LdlSymbolic::new(&kkt).map_err(|e| QpError::SingularKkt(e.to_string()))?;
        let signs = (0..dim).map(|k| if k < n { 1.0 } else { -1.0 }).collect();
        Ok(Self {
            p,
            settings,
            n,
            me,
            mi,
            kkt,
            symbolic,
            diag_pos,
            signs,
        })
    }

    /// Factorizes the system for scaling `w`; returns the factor and the
    /// unregularized matrix used for refinement.
    fn factor(&self, w: &[f64]) -> Result<(LdlFactor, CscMatrix), QpError> {
        let (n, me) = (self.n, self.me);
        let mut exact = self.kkt.values().to_vec();
        for (i, wi) in w.iter().enumerate() {
            exact[self.diag_pos[n + me + i]] -= wi;
        }
        let delta = self.settings.static_reg;
        let mut reg = exact.clone();
        for (k, &pos) in self.diag_pos.iter().enumerate() {
            reg[pos] += self.signs[k] * delta;
        }
        let f = self
            .symbolic
            .factor(&reg, &self.signs, self.settings.dynamic_eps, self.settings.dynamic_delta)
            .map_err(|e| QpError::SingularKkt(e.to_string()))?;
        Ok((f, self.kkt.with_values(exact)))
    }

    fn solve_system(&self, f: &LdlFactor, k: &CscMatrix, rhs: &[f64]) -> Vec<f64> {
        let tol = 1e-14 * (1.0 + norm_inf(rhs));
        f.solve_refined(k, rhs, self.settings.refine_steps, tol).0
    }

    fn residuals(&self, u: &[f64], y: &[f64], z: &[f64], s: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let p = self.p;
        let mut rd = p.q_mat.mul_vec(u);
        for (r, q) in rd.iter_mut().zip(&p.q) {
            *r += q;
        }
        p.a.tr_mul_vec_add(1.0, y, &mut rd);
        p.g.tr_mul_vec_add(1.0, z, &mut rd);
        let mut rp = p.a.mul_vec(u);
        for (r, b) in rp.iter_mut().zip(&p.b) {
            *r -= b;
        }
        let mut rg = p.g.mul_vec(u);
        for ((r, si), h) in rg.iter_mut().zip(s).zip(&p.h) {
            *r += si - h;
        }
        (rd, rp, rg)
    }

    fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, me) = (self.n, self.me);
        (x[..n].to_vec(), x[n..n + me].to_vec(), x[n + me..].to_vec())
    }

    fn run(&self) -> IpmResult {
        match self.run_inner() {
            Ok(r) => r,
            Err(e) => {
                log::warn!("interior point aborted: {e}");
                IpmResult {
                    u: vec![0.0; self.n],
                    y: vec![0.0; self.me],
                    z: vec![0.0; self.mi],
                    status: QpStatus::MaxIter,
                    iterations: 0,
                }
            }
        }
    }

    fn run_inner(&self) -> Result<IpmResult, QpError> {
        let (n, me, mi) = (self.n, self.me, self.mi);
        let p = self.p;
        let tol = self.settings.tolerance * self.settings.inner_tolerance_factor;

        // initial point: minimize ½uᵀQu + qᵀu + ½‖Gu − h‖² subject to Au = b
        let (f0, k0) = self.factor(&vec![1.0; mi])?;
        let mut rhs = Vec::with_capacity(n + me + mi);
        rhs.extend(p.q.iter().map(|v| -v));
        rhs.extend_from_slice(&p.b);
        rhs.extend_from_slice(&p.h);
        let x0 = self.solve_system(&f0, &k0, &rhs);
        let (mut u, mut y, z0) = self.split(&x0);
        let mut s: Vec<f64> = z0.iter().map(|v| -v).collect();
        let mut z = z0;
        shift_positive(&mut s);
        shift_positive(&mut z);

        if mi == 0 {
            let status = if kkt_parts(p, &u, &y, &z).max() <= tol {
                QpStatus::Optimal
            } else {
                self.classify_without_inequalities(&u)
            };
            return Ok(IpmResult {
                u,
                y,
                z,
                status,
                iterations: 1,
            });
        }

        for iter in 0..self.settings.max_iter {
            let parts = kkt_parts(p, &u, &y, &z);
            if parts.max() <= tol {
                return Ok(IpmResult {
                    u,
                    y,
                    z,
                    status: QpStatus::Optimal,
                    iterations: iter,
                });
            }
            if let Some(status) = self.certificate(&u, &y, &z) {
                return Ok(IpmResult {
                    u,
                    y,
                    z,
                    status,
                    iterations: iter,
                });
            }

            let (rd, rp, rg) = self.residuals(&u, &y, &z, &s);
            let mu = dot(&s, &z) / mi as f64;
            let w: Vec<f64> = s.iter().zip(&z).map(|(si, zi)| si / zi).collect();
            let (f, k) = self.factor(&w)?;

            // affine scaling direction
            let mut rhs = Vec::with_capacity(n + me + mi);
            rhs.extend(rd.iter().map(|v| -v));
            rhs.extend(rp.iter().map(|v| -v));
            rhs.extend(rg.iter().zip(&s).map(|(r, si)| -r + si));
            let (_, _, dz_a) = self.split(&self.solve_system(&f, &k, &rhs));
            let ds_a: Vec<f64> = (0..mi).map(|i| -s[i] - w[i] * dz_a[i]).collect();
            let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a)).min(1.0);
            let mu_aff = (0..mi)
                .map(|i| (s[i] + alpha_aff * ds_a[i]) * (z[i] + alpha_aff * dz_a[i]))
                .sum::<f64>()
                / mi as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // combined predictor-corrector direction
            let rc: Vec<f64> = (0..mi)
                .map(|i| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu)
                .collect();
            let mut rhs = Vec::with_capacity(n + me + mi);
            rhs.extend(rd.iter().map(|v| -v));
            rhs.extend(rp.iter().map(|v| -v));
            rhs.extend((0..mi).map(|i| -rg[i] + rc[i] / z[i]));
            let (du, dy, dz) = self.split(&self.solve_system(&f, &k, &rhs));
            let ds: Vec<f64> = (0..mi).map(|i| -(rc[i] + s[i] * dz[i]) / z[i]).collect();
            let alpha = (self.settings.step_fraction * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);

            axpy(alpha, &du, &mut u);
            axpy(alpha, &dy, &mut y);
            axpy(alpha, &dz, &mut z);
            axpy(alpha, &ds, &mut s);
            if !(u.iter().chain(&y).chain(&z).chain(&s).all(|v| v.is_finite())) {
                return Err(QpError::NonFinite);
            }
        }
        let status = self.certificate(&u, &y, &z).unwrap_or(QpStatus::MaxIter);
        Ok(IpmResult {
            u,
            y,
            z,
            status,
            iterations: self.settings.max_iter,
        })
    }

    /// Infeasibility / unboundedness certificates from diverging iterates.
    fn certificate(&self, u: &[f64], y: &[f64], z: &[f64]) -> Option<QpStatus> {
        let p = self.p;
        let big = self.settings.divergence_threshold;
        let dual_norm = norm_inf(y).max(norm_inf(z));
        if dual_norm > big {
            let yh: Vec<f64> = y.iter().map(|v| v / dual_norm).collect();
            let zh: Vec<f64> = z.iter().map(|v| v / dual_norm).collect();
            let mut r = p.a.tr_mul_vec(&yh);
            p.g.tr_mul_vec_add(1.0, &zh, &mut r);
            let gap = dot(&p.b, &yh) + dot(&p.h, &zh);
            if norm_inf(&r) < 1e-6 && gap < -1e-8 {
                return Some(QpStatus::Infeasible);
            }
        }
        let primal_norm = norm_inf(u);
        if primal_norm > big {
            let d: Vec<f64> = u.iter().map(|v| v / primal_norm).collect();
            if self.is_descent_ray(&d) {
                return Some(QpStatus::Unbounded);
            }
        }
        None
    }

    fn is_descent_ray(&self, d: &[f64]) -> bool {
        let p = self.p;
        let qd = p.q_mat.mul_vec(d);
        let ad = p.a.mul_vec(d);
        let gd = p.g.mul_vec(d);
        norm_inf(&qd) < 1e-6
            && norm_inf(&ad) < 1e-6
            && gd.iter().all(|&v| v < 1e-6)
            && dot(&p.q, d) < -1e-8
    }

    fn classify_without_inequalities(&self, u: &[f64]) -> QpStatus {
        // singular KKT: look for a descent direction in the null space by
        // re-solving with a unit shift of the linear term
        if !u.iter().all(|v| v.is_finite()) {
            return QpStatus::Unbounded;
        }
        let norm = norm_inf(u);
        if norm > 0.0 {
            let d: Vec<f64> = u.iter().map(|v| v / norm).collect();
            if self.is_descent_ray(&d) {
                return QpStatus::Unbounded;
            }
        }
        let neg: Vec<f64> = self.p.q.iter().map(|v| -v).collect();
        let norm_q = norm_inf(&neg);
        if norm_q > 0.0 {
            let d: Vec<f64> = neg.iter().map(|v| v / norm_q).collect();
            if self.is_descent_ray(&d) {
                return QpStatus::Unbounded;
            }
        }
        QpStatus::MaxIter
    }
}

fn shift_positive(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        let shift = 1.0 - min;
        for x in v.iter_mut() {
            *x += shift;
        }
    }
}

/// Largest `a ≤ ∞` with `x + a·dx ≥ 0`.
fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
