use serde::{Deserialize, Serialize};

use super::QpError;
use crate::linalg::ldl::LdlSymbolic;
use crate::linalg::sparse::{dot, norm_inf, CscMatrix};

/// Convex quadratic program
///
/// ```text
/// minimize   ½ uᵀ Q u + qᵀ u
/// subject to A u = b
///            G u ≤ h
/// ```
///
/// `q_mat` stores the full symmetric matrix (both triangles).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub q_mat: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub b: Vec<f64>,
    pub g: CscMatrix,
    pub h: Vec<f64>,
}

impl QpProblem {
    pub fn new(
        q_mat: CscMatrix,
        q: Vec<f64>,
        a: CscMatrix,
        b: Vec<f64>,
        g: CscMatrix,
        h: Vec<f64>,
    ) -> Result<Self, QpError> {
        let p = Self {
            q_mat,
            q,
            a,
            b,
            g,
            h,
        };
        p.check_dimensions()?;
        Ok(p)
    }

    /// Unconstrained problem with the given objective.
    pub fn unconstrained(q_mat: CscMatrix, q: Vec<f64>) -> Result<Self, QpError> {
        let n = q.len();
        Self::new(
            q_mat,
            q,
            CscMatrix::zeros(0, n),
            Vec::new(),
            CscMatrix::zeros(0, n),
            Vec::new(),
        )
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.h.len()
    }

    pub fn check_dimensions(&self) -> Result<(), QpError> {
        let n = self.q.len();
        let mismatch = |what: &str, got: String| {
            Err(QpError::DimensionMismatch(format!("{what}: {got} (num_vars = {n})")))
        };
        if self.q_mat.nrows() != n || self.q_mat.ncols() != n {
            return mismatch("Q", format!("{}x{}", self.q_mat.nrows(), self.q_mat.ncols()));
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return mismatch(
                "A/b",
                format!("{}x{} vs {}", self.a.nrows(), self.a.ncols(), self.b.len()),
            );
        }
        if self.g.ncols() != n || self.g.nrows() != self.h.len() {
            return mismatch(
                "G/h",
                format!("{}x{} vs {}", self.g.nrows(), self.g.ncols(), self.h.len()),
            );
        }
        Ok(())
    }

    /// Checks dimensions, finiteness, symmetry of Q (1e-12 relative) and
    /// positive semidefiniteness (no eigenvalue below −1e-10·‖Q‖).
    pub fn validate(&self) -> Result<(), QpError> {
        self.check_dimensions()?;
        let finite = self.q_mat.is_finite()
            && self.a.is_finite()
            && self.g.is_finite()
            && self.q.iter().chain(&self.b).chain(&self.h).all(|v| v.is_finite());
        if !finite {
            return Err(QpError::NonFinite);
        }
        let scale = self.q_mat.max_abs();
        for (i, j, v) in self.q_mat.iter() {
            if i < j {
                let w = self.q_mat.get(j, i);
                if (v - w).abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                    return Err(QpError::NotSymmetric(i, j));
                }
            }
        }
        if scale > 0.0 && !self.is_psd(scale) {
            return Err(QpError::NotPsd);
        }
        Ok(())
    }

    fn is_psd(&self, scale: f64) -> bool {
        let n = self.num_vars();
        let shift = 1e-10 * scale;
        let mut trip: Vec<_> = self.q_mat.iter().filter(|&(i, j, _)| i <= j).collect();
        trip.extend((0..n).map(|i| (i, i, shift)));
        let upper = CscMatrix::from_triplets(n, n, &trip);
        let Ok(sym) = LdlSymbolic::new(&upper) else {
            return false;
        };
        sym.factor(upper.values(), &vec![1.0; n], 0.0, 0.0).is_ok()
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        let qu = self.q_mat.mul_vec(u);
        0.5 * dot(u, &qu) + dot(&self.q, u)
    }

    /// Multiplies (Q, q) by `c`.
    pub fn scale_objective(&mut self, c: f64) {
        self.q_mat.scale(c);
        for v in &mut self.q {
            *v *= c;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub primal: Vec<f64>,
    pub dual_eq: Vec<f64>,
    pub dual_in: Vec<f64>,
    pub objective_value: f64,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl QpSolution {
    /// Turns a non-optimal status into the matching error.
    pub fn into_optimal(self) -> Result<Self, QpError> {
        match self.status {
            QpStatus::Optimal => Ok(self),
            QpStatus::Infeasible => Err(QpError::Infeasible),
            QpStatus::Unbounded => Err(QpError::Unbounded),
            QpStatus::MaxIter => Err(QpError::MaxIter {
                iterations: self.iterations,
                residual: self.kkt_residual,
            }),
        }
    }
}

/// Components of the KKT residual, each in the infinity norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktParts {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub dual_sign: f64,
    pub complementarity: f64,
}

impl KktParts {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.dual_sign)
            .max(self.complementarity)
    }
}

pub fn kkt_parts(problem: &QpProblem, u: &[f64], y: &[f64], z: &[f64]) -> KktParts {
    let mut stat = problem.q_mat.mul_vec(u);
    for (s, q) in stat.iter_mut().zip(&problem.q) {
        *s += q;
    }
    problem.a.tr_mul_vec_add(1.0, y, &mut stat);
    problem.g.tr_mul_vec_add(1.0, z, &mut stat);

    let mut eq = problem.a.mul_vec(u);
    for (e, b) in eq.iter_mut().zip(&problem.b) {
        *e -= b;
    }
    let mut slack = problem.g.mul_vec(u);
    for (s, h) in slack.iter_mut().zip(&problem.h) {
        *s -= h;
    }
    let primal_ineq = slack.iter().fold(0.0f64, |m, &s| m.max(s.max(0.0)));
    let dual_sign = z.iter().fold(0.0f64, |m, &v| m.max((-v).max(0.0)));
    let complementarity = z
        .iter()
        .zip(&slack)
        .fold(0.0f64, |m, (zi, si)| m.max((zi * si).abs()));
    KktParts {
        stationarity: norm_inf(&stat),
        primal_eq: norm_inf(&eq),
        primal_ineq,
        dual_sign,
        complementarity,
    }
}

/// Infinity norm of the KKT residual: stationarity, equality violation,
/// inequality violation clipped at zero, dual sign violation and
/// complementarity `|μ ∘ (G u − h)|`.
pub fn kkt_residual(problem: &QpProblem, solution: &QpSolution) -> f64 {
    kkt_parts(problem, &solution.primal, &solution.dual_eq, &solution.dual_in).max()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_var() -> QpProblem {
        QpProblem::new(
            CscMatrix::identity(1),
            vec![0.0],
            CscMatrix::zeros(0, 1),
            vec![],
            CscMatrix::from_triplets(1, 1, &[(0, 0, -1.0)]),
            vec![-1.0],
        )
        .unwrap()
    }

    fn sol(u: f64, mu: f64) -> QpSolution {
        QpSolution {
            primal: vec![u],
            dual_eq: vec![],
            dual_in: vec![mu],
            objective_value: 0.5 * u * u,
            status: QpStatus::Optimal,
            kkt_residual: 0.0,
            iterations: 0,
        }
    }

    #[test]
    fn analytic_solution_has_zero_residual() {
        assert!(kkt_residual(&one_var(), &sol(1.0, 1.0)) <= 1e-12);
    }

    #[test]
    fn perturbed_primal_is_detected() {
        // stationarity u - mu = 0.1 after the shift
        let r = kkt_residual(&one_var(), &sol(1.1, 1.0));
        assert!(r >= 0.05, "{r}");
    }

    #[test]
    fn vacuous_problem_has_zero_residual() {
        let p = QpProblem::unconstrained(CscMatrix::zeros(3, 3), vec![0.0; 3]).unwrap();
        let s = QpSolution {
            primal: vec![4.0, -2.0, 7.0],
            dual_eq: vec![],
            dual_in: vec![],
            objective_value: 0.0,
            status: QpStatus::Optimal,
            kkt_residual: 0.0,
            iterations: 0,
        };
        assert_eq!(kkt_residual(&p, &s), 0.0);
    }

    #[test]
    fn validation_rejects_asymmetry_and_indefiniteness() {
        let asym = CscMatrix::from_dense(&[vec![1.0, 2.0], vec![0.0, 1.0]], 2);
        let p = QpProblem::unconstrained(asym, vec![0.0; 2]).unwrap();
        assert!(matches!(p.validate(), Err(QpError::NotSymmetric(..))));

        let indef = CscMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, -1.0]], 2);
        let p = QpProblem::unconstrained(indef, vec![0.0; 2]).unwrap();
        assert!(matches!(p.validate(), Err(QpError::NotPsd)));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let r = QpProblem::new(
            CscMatrix::identity(2),
            vec![0.0; 2],
            CscMatrix::zeros(1, 3),
            vec![0.0],
            CscMatrix::zeros(0, 2),
            vec![],
        );
        assert!(matches!(r, Err(QpError::DimensionMismatch(_))));
    }
}
