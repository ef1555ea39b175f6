//! Presolve: fixed variables from singleton equality rows, empty rows, and
//! linearly dependent equality rows.

use std::collections::VecDeque;

use super::problem::QpProblem;
use crate::linalg::sparse::CscMatrix;

const ZERO: f64 = 1e-14;

#[derive(Debug, Clone)]
struct FixedVar {
    var: usize,
    row: usize,
    coef: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Presolved {
    pub reduced: QpProblem,
    num_vars: usize,
    num_eq: usize,
    num_ineq: usize,
    /// original variable -> reduced index
    var_map: Vec<Option<usize>>,
    values: Vec<f64>,
    fixed: Vec<FixedVar>,
    eq_keep: Vec<usize>,
    ineq_keep: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) enum Presolve {
    Reduced(Box<Presolved>),
    Infeasible(String),
}

fn feas_tol(rhs: f64) -> f64 {
    1e-9 * (1.0 + rhs.abs())
}

pub(crate) fn presolve(p: &QpProblem) -> Presolve {
    let n = p.num_vars();
    let eq_rows = p.a.rows();
    let in_rows = p.g.rows();
    let mut is_fixed = vec![false; n];
    let mut values = vec![0.0; n];
    let mut fixed = Vec::new();
    let mut eq_alive = vec![true; p.num_eq()];

    // singleton and empty equality rows, to a fixed point
    loop {
        let mut changed = false;
        for (r, row) in eq_rows.iter().enumerate() {
            if !eq_alive[r] {
                continue;
            }
            let mut rhs = p.b[r];
            let mut free = None;
            let mut count = 0;
            for &(j, v) in row {
                if v.abs() <= ZERO {
                    continue;
                }
                if is_fixed[j] {
                    rhs -= v * values[j];
                } else {
                    count += 1;
                    free = Some((j, v));
                }
            }
            match count {
                0 => {
                    if rhs.abs() > feas_tol(p.b[r]) {
                        return Presolve::Infeasible(format!("equality row {r} is inconsistent"));
                    }
                    eq_alive[r] = false;
                    changed = true;
                }
                1 => {
                    let (j, v) = free.unwrap();
                    is_fixed[j] = true;
                    values[j] = rhs / v;
                    fixed.push(FixedVar {
                        var: j,
                        row: r,
                        coef: v,
                    });
                    eq_alive[r] = false;
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }

    // inequality rows with no free variable are constants
    let mut ineq_keep = Vec::new();
    for (r, row) in in_rows.iter().enumerate() {
        let mut rhs = p.h[r];
        let mut any_free = false;
        for &(j, v) in row {
            if is_fixed[j] {
                rhs -= v * values[j];
            } else if v.abs() > ZERO {
                any_free = true;
            }
        }
        if any_free {
            ineq_keep.push(r);
        } else if rhs < -feas_tol(p.h[r]) {
            return Presolve::Infeasible(format!("inequality row {r} violated by fixed variables"));
        }
    }

    let live: Vec<usize> = (0..p.num_eq()).filter(|&r| eq_alive[r]).collect();
    let eq_keep = match independent_rows(&eq_rows, &p.b, &live, &is_fixed, &values) {
        Ok(rows) => rows,
        Err(msg) => return Presolve::Infeasible(msg),
    };

    // reduced problem
    let mut var_map = vec![None; n];
    let mut nr = 0;
    for j in 0..n {
        if !is_fixed[j] {
            var_map[j] = Some(nr);
            nr += 1;
        }
    }
    let mut q_trip = Vec::new();
    let mut q_red = vec![0.0; nr];
    for j in 0..n {
        if let Some(rj) = var_map[j] {
            q_red[rj] = p.q[j];
        }
    }
    for (i, j, v) in p.q_mat.iter() {
        match (var_map[i], var_map[j]) {
            (Some(ri), Some(rj)) => q_trip.push((ri, rj, v)),
            (Some(ri), None) => q_red[ri] += v * values[j],
            _ => {}
        }
    }
    let reduce_rows = |rows: &[Vec<(usize, f64)>], rhs: &[f64], keep: &[usize]| {
        let mut trip = Vec::new();
        let mut out = Vec::with_capacity(keep.len());
        for (k, &r) in keep.iter().enumerate() {
            let mut v_rhs = rhs[r];
            for &(j, v) in &rows[r] {
                match var_map[j] {
                    Some(rj) => trip.push((k, rj, v)),
                    None => v_rhs -= v * values[j],
                }
            }
            out.push(v_rhs);
        }
        (CscMatrix::from_triplets(keep.len(), nr, &trip), out)
    };
    let (a_red, b_red) = reduce_rows(&eq_rows, &p.b, &eq_keep);
    let (g_red, h_red) = reduce_rows(&in_rows, &p.h, &ineq_keep);
    let reduced = QpProblem {
        q_mat: CscMatrix::from_triplets(nr, nr, &q_trip),
        q: q_red,
        a: a_red,
        b: b_red,
        g: g_red,
        h: h_red,
    };
    Presolve::Reduced(Box::new(Presolved {
        reduced,
        num_vars: n,
        num_eq: p.num_eq(),
        num_ineq: p.num_ineq(),
        var_map,
        values,
        fixed,
        eq_keep,
        ineq_keep,
    }))
}

/// Selects a maximal independent subset of the live equality rows, checking
/// that the dropped rows are consistent. Rows peeled off through singleton
/// columns are independent by construction; the rest go through dense
/// Gaussian elimination.
fn independent_rows(
    rows: &[Vec<(usize, f64)>],
    rhs: &[f64],
    live: &[usize],
    is_fixed: &[bool],
    values: &[f64],
) -> Result<Vec<usize>, String> {
    let free_entries = |r: usize| {
        rows[r]
            .iter()
            .copied()
            .filter(move |&(j, v)| !is_fixed[j] && v.abs() > ZERO)
    };
    let reduced_rhs = |r: usize| {
        rows[r]
            .iter()
            .filter(|&&(j, _)| is_fixed[j])
            .fold(rhs[r], |acc, &(j, v)| acc - v * values[j])
    };

    let ncols = is_fixed.len();
    let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); ncols];
    for &r in live {
        for (j, _) in free_entries(r) {
            col_rows[j].push(r);
        }
    }
    let mut col_count: Vec<usize> = col_rows.iter().map(Vec::len).collect();
    let mut row_alive = vec![false; rows.len()];
    for &r in live {
        row_alive[r] = true;
    }
    let mut queue: VecDeque<usize> = (0..ncols).filter(|&j| col_count[j] == 1).collect();
    while let Some(j) = queue.pop_front() {
        if col_count[j] != 1 {
            continue;
        }
        let Some(&r) = col_rows[j].iter().find(|&&r| row_alive[r]) else {
            continue;
        };
        let row_max = free_entries(r).fold(0.0f64, |m, (_, v)| m.max(v.abs()));
        let pivot = free_entries(r).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v);
        if pivot.abs() < 1e-8 * row_max {
            continue;
        }
        row_alive[r] = false;
        for (c, _) in free_entries(r) {
            col_count[c] -= 1;
            if col_count[c] == 1 {
                queue.push_back(c);
            }
        }
    }
    let rest: Vec<usize> = live.iter().copied().filter(|&r| row_alive[r]).collect();
    let mut dependent = vec![false; rows.len()];
    if !rest.is_empty() {
        let mut cols: Vec<usize> = rest.iter().flat_map(|&r| free_entries(r).map(|(j, _)| j)).collect();
        cols.sort_unstable();
        cols.dedup();
        let width = cols.len();
        let mut dense: Vec<Vec<f64>> = rest
            .iter()
            .map(|&r| {
                let mut row = vec![0.0; width + 1];
                for (j, v) in free_entries(r) {
                    let k = cols.binary_search(&j).unwrap();
                    row[k] += v;
                }
                row[width] = reduced_rhs(r);
                row
            })
            .collect();
        let norms: Vec<f64> = dense
            .iter()
            .map(|row| row[..width].iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect();
        // row-echelon with partial pivoting over the remaining rows
        let mut order: Vec<usize> = (0..rest.len()).collect();
        let mut rank = 0;
        for col in 0..width {
            if rank == order.len() {
                break;
            }
            let (best, best_val) = (rank..order.len())
                .map(|k| (k, dense[order[k]][col].abs() / norms[order[k]].max(ZERO)))
                .fold((rank, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best_val <= 1e-10 {
                continue;
            }
            order.swap(rank, best);
            let prow = dense[order[rank]].clone();
            for k in rank + 1..order.len() {
                let row = &mut dense[order[k]];
                let f = row[col] / prow[col];
                if f != 0.0 {
                    for c in col..=width {
                        row[c] -= f * prow[c];
                    }
                }
            }
            rank += 1;
        }
        for &k in &order[rank..] {
            let r = rest[k];
            let res = dense[k][width];
            if res.abs() > 1e-7 * (1.0 + reduced_rhs(r).abs()) {
                return Err(format!("equality row {r} is a dependent but inconsistent row"));
            }
            dependent[r] = true;
        }
    }
    Ok(live.iter().copied().filter(|&r| !dependent[r]).collect())
}

impl Presolved {
    #[cfg(test)]
    pub fn num_fixed(&self) -> usize {
        self.fixed.len()
    }

    /// Maps a reduced primal/dual triple back to the original problem.
    pub fn postsolve(
        &self,
        original: &QpProblem,
        u_red: &[f64],
        y_red: &[f64],
        z_red: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut u = self.values.clone();
        for (j, m) in self.var_map.iter().enumerate() {
            if let Some(rj) = m {
                u[j] = u_red[*rj];
            }
        }
        let mut y = vec![0.0; self.num_eq];
        for (k, &r) in self.eq_keep.iter().enumerate() {
            y[r] = y_red[k];
        }
        let mut z = vec![0.0; self.num_ineq];
        for (k, &r) in self.ineq_keep.iter().enumerate() {
            z[r] = z_red[k];
        }
        if !self.fixed.is_empty() {
            // stationarity of each fixed variable determines the dual of the
            // row that fixed it; later fixings first
            let mut grad = original.q_mat.mul_vec(&u);
            for (g, q) in grad.iter_mut().zip(&original.q) {
                *g += q;
            }
            original.g.tr_mul_vec_add(1.0, &z, &mut grad);
            let a = &original.a;
            for f in self.fixed.iter().rev() {
                let j = f.var;
                let mut s = grad[j];
                for p in a.colptr()[j]..a.colptr()[j + 1] {
                    let r = a.rowidx()[p];
                    if r != f.row {
                        s += a.values()[p] * y[r];
                    }
                }
                y[f.row] = -s / f.coef;
            }
        }
        debug_assert_eq!(u.len(), self.num_vars);
        (u, y, z)
    }
}
