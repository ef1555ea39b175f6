//! Vector-Jacobian products of the QP solution map.
//!
//! At an optimum with active inequality set 𝒜 the KKT conditions read
//!
//! ```text
//! Q u + q + Aᵀ y + G𝒜ᵀ μ𝒜 = 0,   A u = b,   G𝒜 u = h𝒜
//! ```
//!
//! Differentiating them gives `K [du; dy; dμ] = −[dQ u + dq + dAᵀ y + dG𝒜ᵀ μ;
//! dA u − db; dG𝒜 u − dh𝒜]` with the symmetric matrix
//! `K = [Q Aᵀ G𝒜ᵀ; A 0 0; G𝒜 0 0]`. For a loss gradient `g = ∂L/∂u` one
//! adjoint solve `K d = −[g; 0; 0]` yields every data-block gradient.

use serde::{Deserialize, Serialize};

use super::problem::{QpProblem, QpSolution, QpStatus};
use super::QpError;
use crate::linalg::ldl::LdlSymbolic;
use crate::linalg::sparse::{norm_inf, CscMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSettings {
    /// inequalities with dual at or below this are not active
    pub dual_threshold: f64,
    /// inactive inequalities with slack at or below this are reported as
    /// degenerate
    pub slack_threshold: f64,
    pub static_reg: f64,
    /// larger static regularizations tried in turn when the first
    /// factorization breaks down; refinement is always against the exact
    /// matrix, so an accepted solve is not perturbed
    pub fallback_reg: Vec<f64>,
    /// pivot replacement when the factorization meets a near-zero pivot
    pub singular_reg: f64,
    pub refine_steps: usize,
}

impl Default for BackwardSettings {
    fn default() -> Self {
        Self {
            dual_threshold: 1e-6,
            slack_threshold: 1e-6,
            static_reg: 1e-9,
            fallback_reg: vec![1e-7, 1e-5, 1e-3],
            singular_reg: 1e-10,
            refine_steps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SensitivityWarning {
    /// Inequalities that are tight with a vanishing dual. They are treated as
    /// inactive; the solution map is not differentiable there.
    DegenerateActiveSet { rows: Vec<usize> },
    /// The adjoint system needed pivot regularization.
    RegularizedKkt { pivots: usize },
    /// The solve succeeded only with this larger static regularization.
    EscalatedRegularization { delta: f64 },
}

/// Gradients of a scalar loss with respect to each data block. Matrix
/// gradients share the sparsity pattern of the corresponding problem matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSensitivity {
    pub grad_q_mat: CscMatrix,
    pub grad_q: Vec<f64>,
    pub grad_a: CscMatrix,
    pub grad_b: Vec<f64>,
    pub grad_g: CscMatrix,
    pub grad_h: Vec<f64>,
    pub active: Vec<bool>,
    pub warnings: Vec<SensitivityWarning>,
}

pub fn backward(
    problem: &QpProblem,
    solution: &QpSolution,
    grad_primal: &[f64],
) -> Result<SolutionSensitivity, QpError> {
    backward_with(problem, solution, grad_primal, &BackwardSettings::default())
}

pub fn backward_with(
    problem: &QpProblem,
    solution: &QpSolution,
    grad_primal: &[f64],
    settings: &BackwardSettings,
) -> Result<SolutionSensitivity, QpError> {
    if solution.status != QpStatus::Optimal {
        return Err(QpError::NotOptimal);
    }
    problem.check_dimensions()?;
    let (n, me, mi) = (problem.num_vars(), problem.num_eq(), problem.num_ineq());
    if grad_primal.len() != n
        || solution.primal.len() != n
        || solution.dual_eq.len() != me
        || solution.dual_in.len() != mi
    {
        return Err(QpError::DimensionMismatch(format!(
            "gradient/solution do not match a problem with {n} variables"
        )));
    }
    let u = &solution.primal;
    let y = &solution.dual_eq;
    let z = &solution.dual_in;

    let gu = problem.g.mul_vec(u);
    let mut active = vec![false; mi];
    let mut degenerate = Vec::new();
    for i in 0..mi {
        let slack = problem.h[i] - gu[i];
        if z[i] > settings.dual_threshold {
            active[i] = true;
        } else if slack <= settings.slack_threshold {
            degenerate.push(i);
        }
    }
    let act_rows: Vec<usize> = (0..mi).filter(|&i| active[i]).collect();
    let mut act_index = vec![usize::MAX; mi];
    for (k, &i) in act_rows.iter().enumerate() {
        act_index[i] = k;
    }
    let ma = act_rows.len();
    let dim = n + me + ma;

    let mut trip: Vec<(usize, usize, f64)> = Vec::new();
    trip.extend(problem.q_mat.iter().filter(|&(i, j, _)| i <= j));
    trip.extend(problem.a.iter().map(|(i, j, v)| (j, n + i, v)));
    trip.extend(
        problem
            .g
            .iter()
            .filter(|&(i, _, _)| active[i])
            .map(|(i, j, v)| (j, n + me + act_index[i], v)),
    );
    trip.extend((0..dim).map(|k| (k, k, 0.0)));
    let kkt = CscMatrix::from_triplets(dim, dim, &trip);
    let signs: Vec<f64> = (0..dim).map(|k| if k < n { 1.0 } else { -1.0 }).collect();
    let symbolic = LdlSymbolic::new(&kkt).map_err(|e| QpError::SingularKkt(e.to_string()))?;

    let mut rhs = vec![0.0; dim];
    for (r, g) in rhs.iter_mut().zip(grad_primal) {
        *r = -g;
    }
    let scale = 1.0 + norm_inf(grad_primal);
    let attempt = |delta: f64| -> Result<(Vec<f64>, usize), String> {
        let mut reg = kkt.values().to_vec();
        for k in 0..dim {
            reg[kkt.position(k, k).unwrap()] += signs[k] * delta;
        }
        let factor = symbolic
            .factor(&reg, &signs, settings.singular_reg * 1e-3, settings.singular_reg)
            .map_err(|e| e.to_string())?;
        let (d, res) = factor.solve_refined(&kkt, &rhs, settings.refine_steps, 1e-14 * scale);
        if !(res <= 1e-7 * scale) {
            return Err(format!("adjoint residual {res:.3e} after refinement"));
        }
        Ok((d, factor.regularized_pivots()))
    };
    let mut escalated = None;
    let (d, pivots) = match attempt(settings.static_reg) {
        Ok(v) => v,
        Err(first) => settings
            .fallback_reg
            .iter()
            .find_map(|&delta| {
                let v = attempt(delta).ok()?;
                escalated = Some(delta);
                Some(v)
            })
            .ok_or(QpError::SingularKkt(first))?,
    };
    let du = &d[..n];
    let dy = &d[n..n + me];
    let dz = &d[n + me..];

    let grad_q_mat = problem.q_mat.with_values(
        problem
            .q_mat
            .iter()
            .map(|(i, j, _)| 0.5 * (du[i] * u[j] + u[i] * du[j]))
            .collect(),
    );
    let grad_a = problem
        .a
        .with_values(problem.a.iter().map(|(i, j, _)| y[i] * du[j] + dy[i] * u[j]).collect());
    let grad_g = problem.g.with_values(
        problem
            .g
            .iter()
            .map(|(i, j, _)| {
                if active[i] {
                    z[i] * du[j] + dz[act_index[i]] * u[j]
                } else {
                    0.0
                }
            })
            .collect(),
    );
    let grad_h = (0..mi)
        .map(|i| if active[i] { -dz[act_index[i]] } else { 0.0 })
        .collect();

    let mut warnings = Vec::new();
    if !degenerate.is_empty() {
        warnings.push(SensitivityWarning::DegenerateActiveSet { rows: degenerate });
    }
    if pivots > 0 {
        warnings.push(SensitivityWarning::RegularizedKkt { pivots });
    }
    if let Some(delta) = escalated {
        warnings.push(SensitivityWarning::EscalatedRegularization { delta });
    }
    Ok(SolutionSensitivity {
        grad_q_mat,
        grad_q: du.to_vec(),
        grad_a,
        grad_b: dy.iter().map(|v| -v).collect(),
        grad_g,
        grad_h,
        active,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataBlock {
    QMat,
    QVec,
    A,
    B,
    G,
    H,
}

/// One scalar of the problem data. `col` is ignored for vector blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataEntry {
    pub block: DataBlock,
    pub row: usize,
    pub col: usize,
}

impl DataEntry {
    pub fn matrix(block: DataBlock, row: usize, col: usize) -> Self {
        Self { block, row, col }
    }

    pub fn vector(block: DataBlock, row: usize) -> Self {
        Self { block, row, col: 0 }
    }
}

/// Sparse Jacobian of problem data with respect to raw parameters: each
/// triplet is `∂ data[entry] / ∂ param`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseLinearMap {
    pub num_params: usize,
    pub entries: Vec<(DataEntry, usize, f64)>,
}

impl SparseLinearMap {
    pub fn new(num_params: usize) -> Self {
        Self {
            num_params,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, entry: DataEntry, param: usize, value: f64) {
        self.entries.push((entry, param, value));
    }
}

impl SolutionSensitivity {
    /// Gradient for one data scalar; `None` when the entry is outside the
    /// stored pattern or the block dimensions.
    pub fn value(&self, e: &DataEntry) -> Option<f64> {
        let mat = |m: &CscMatrix| m.position(e.row, e.col).map(|p| m.values()[p]);
        match e.block {
            DataBlock::QMat => mat(&self.grad_q_mat),
            DataBlock::A => mat(&self.grad_a),
            DataBlock::G => mat(&self.grad_g),
            DataBlock::QVec => self.grad_q.get(e.row).copied(),
            DataBlock::B => self.grad_b.get(e.row).copied(),
            DataBlock::H => self.grad_h.get(e.row).copied(),
        }
    }
}

/// Pulls data-block gradients back to raw parameters: `Jᵀ vec(sensitivity)`.
pub fn backward_through_map(
    sensitivity: &SolutionSensitivity,
    map: &SparseLinearMap,
) -> Result<Vec<f64>, QpError> {
    let mut out = vec![0.0; map.num_params];
    for (entry, param, value) in &map.entries {
        let g = sensitivity.value(entry).ok_or_else(|| {
            QpError::DimensionMismatch(format!("{entry:?} is not part of the problem pattern"))
        })?;
        let slot = out.get_mut(*param).ok_or_else(|| {
            QpError::DimensionMismatch(format!("parameter {param} >= {}", map.num_params))
        })?;
        *slot += g * value;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::solve;

    #[test]
    fn equality_pins_the_solution() {
        // min ½u² s.t. u = b, L = u
        let p = QpProblem::new(
            CscMatrix::identity(1),
            vec![0.0],
            CscMatrix::from_dense(&[vec![1.0]], 1),
            vec![0.7],
            CscMatrix::zeros(0, 1),
            vec![],
        )
        .unwrap();
        let s = solve(&p, 1e-10, 50).unwrap();
        let sens = backward(&p, &s, &[1.0]).unwrap();
        assert!((sens.grad_b[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn linear_term_of_unconstrained_problem() {
        // u* = q0 with q = −q0
        let p = QpProblem::unconstrained(CscMatrix::identity(1), vec![-2.0]).unwrap();
        let s = solve(&p, 1e-10, 50).unwrap();
        let sens = backward(&p, &s, &[1.0]).unwrap();
        assert!((sens.grad_q[0] + 1.0).abs() < 1e-9);
        // du*/dQ = −u*/Q = −2
        assert!((sens.grad_q_mat.get(0, 0) + 2.0).abs() < 1e-8);
    }

    #[test]
    fn inactive_rows_get_zero_gradient_and_degeneracy_warns() {
        // min ½(u − 1)² with u ≤ 5 (slack) and u ≤ 1 (tight with zero dual)
        let p = QpProblem::new(
            CscMatrix::identity(1),
            vec![-1.0],
            CscMatrix::zeros(0, 1),
            vec![],
            CscMatrix::from_dense(&[vec![1.0], vec![1.0]], 1),
            vec![5.0, 1.0],
        )
        .unwrap();
        let mut s = solve(&p, 1e-10, 50).unwrap();
        s.primal = vec![1.0];
        s.dual_in = vec![0.0, 0.0];
        let sens = backward(&p, &s, &[1.0]).unwrap();
        assert_eq!(sens.active, vec![false, false]);
        assert_eq!(sens.grad_h, vec![0.0, 0.0]);
        assert_eq!(
            sens.warnings,
            vec![SensitivityWarning::DegenerateActiveSet { rows: vec![1] }]
        );
    }

    #[test]
    fn grad_q_mat_is_exactly_symmetric() {
        let q = CscMatrix::from_dense(&[vec![2.0, 0.3], vec![0.3, 1.0]], 2);
        let p = QpProblem::unconstrained(q, vec![-1.0, 0.5]).unwrap();
        let s = solve(&p, 1e-10, 50).unwrap();
        let sens = backward(&p, &s, &[0.3, -1.7]).unwrap();
        assert_eq!(sens.grad_q_mat.get(0, 1), sens.grad_q_mat.get(1, 0));
    }

    #[test]
    fn rejects_non_optimal_solutions() {
        let p = QpProblem::unconstrained(CscMatrix::identity(1), vec![0.0]).unwrap();
        let mut s = solve(&p, 1e-10, 50).unwrap();
        s.status = QpStatus::MaxIter;
        assert_eq!(backward(&p, &s, &[1.0]), Err(QpError::NotOptimal));
    }

    #[test]
    fn zero_curvature_pivot_escalates_and_stays_exact() {
        // min u0 + ½u1² − u1 s.t. −u0 ≤ 0: u = (0, 1), bound dual 1
        let p = QpProblem::new(
            CscMatrix::from_dense(&[vec![0.0, 0.0], vec![0.0, 1.0]], 2),
            vec![1.0, -1.0],
            CscMatrix::zeros(0, 2),
            vec![],
            CscMatrix::from_dense(&[vec![-1.0, 0.0]], 2),
            vec![0.0],
        )
        .unwrap();
        let s = solve(&p, 1e-10, 50).unwrap();
        let settings = BackwardSettings {
            static_reg: 0.0,
            singular_reg: 0.0,
            ..BackwardSettings::default()
        };
        let sens = backward_with(&p, &s, &[1.0, 1.0], &settings).unwrap();
        assert!(sens
            .warnings
            .contains(&SensitivityWarning::EscalatedRegularization { delta: 1e-7 }));
        assert!(sens.grad_q[0].abs() < 1e-9 && (sens.grad_q[1] + 1.0).abs() < 1e-9);
        assert!((sens.grad_h[0] + 1.0).abs() < 1e-9);
        let strict = BackwardSettings {
            fallback_reg: vec![],
            ..settings
        };
        assert!(matches!(backward_with(&p, &s, &[1.0, 1.0], &strict), Err(QpError::SingularKkt(_))));
    }

    fn sens_with_b(grad_b: Vec<f64>) -> SolutionSensitivity {
        SolutionSensitivity {
            grad_q_mat: CscMatrix::zeros(1, 1),
            grad_q: vec![0.0],
            grad_a: CscMatrix::zeros(grad_b.len(), 1),
            grad_b,
            grad_g: CscMatrix::zeros(0, 1),
            grad_h: vec![],
            active: vec![],
            warnings: vec![],
        }
    }

    #[test]
    fn identity_map_over_b() {
        let sens = sens_with_b(vec![1.5, -2.0, 0.25]);
        let mut map = SparseLinearMap::new(3);
        for r in 0..3 {
            map.push(DataEntry::vector(DataBlock::B, r), r, 1.0);
        }
        assert_eq!(backward_through_map(&sens, &map).unwrap(), sens.grad_b);
    }

    #[test]
    fn reciprocal_coefficient_chain_rule() {
        // b = 1/C with dL/db = g gives dL/dC = −g/C²
        let (c, g) = (4.0, 3.0);
        let sens = sens_with_b(vec![g]);
        let mut map = SparseLinearMap::new(1);
        map.push(DataEntry::vector(DataBlock::B, 0), 0, -1.0 / (c * c));
        let out = backward_through_map(&sens, &map).unwrap();
        assert!((out[0] + g / (c * c)).abs() < 1e-15);
    }

    #[test]
    fn map_outside_pattern_is_a_dimension_error() {
        let sens = sens_with_b(vec![1.0]);
        let mut map = SparseLinearMap::new(1);
        map.push(DataEntry::vector(DataBlock::B, 4), 0, 1.0);
        assert!(matches!(
            backward_through_map(&sens, &map),
            Err(QpError::DimensionMismatch(_))
        ));
        let mut map = SparseLinearMap::new(1);
        map.push(DataEntry::vector(DataBlock::B, 0), 3, 1.0);
        assert!(backward_through_map(&sens, &map).is_err());
    }
}
