//! Sparse LDLᵀ factorization for quasi-definite systems.
//!
//! Up-looking factorization driven by the elimination tree, no pivoting. Each
//! row carries an expected pivot sign (`+1` for primal rows, `-1` for dual
//! rows); pivots that come out with the wrong sign or below `dynamic_eps` in
//! magnitude are replaced by `sign * dynamic_delta`. Iterative refinement
//! against the unregularized matrix recovers the accuracy lost to
//! regularization.

use super::ordering::{invert, minimum_degree};
use super::sparse::CscMatrix;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LdlError {
    #[error("matrix is not square upper triangular ({0})")]
    NotUpper(String),
    #[error("zero pivot at permuted row {0}")]
    ZeroPivot(usize),
    #[error("non-finite value in factorization")]
    NonFinite,
}

/// Ordering, elimination tree and column counts for a fixed sparsity pattern.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    // permuted upper pattern
    cp: Vec<usize>,
    ci: Vec<usize>,
    // original value index -> permuted value index
    value_map: Vec<usize>,
}

impl LdlSymbolic {
    /// Analyses the pattern of `upper` (entries with row <= col). Every
    /// diagonal entry must be present in the pattern.
    pub fn new(upper: &CscMatrix) -> Result<Self, LdlError> {
        let n = upper.ncols();
        if upper.nrows() != n {
            return Err(LdlError::NotUpper(format!("{}x{}", upper.nrows(), n)));
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut has_diag = vec![false; n];
        for (i, j, _) in upper.iter() {
            if i > j {
                return Err(LdlError::NotUpper(format!("entry ({i}, {j}) below diagonal")));
            }
            if i == j {
                has_diag[i] = true;
            } else {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
        if let Some(k) = has_diag.iter().position(|d| !d) {
            return Err(LdlError::NotUpper(format!("missing diagonal at {k}")));
        }
        let perm = minimum_degree(&adjacency);
        let iperm = invert(&perm);

        // permuted upper pattern, remembering where every original entry lands
        let mut counts = vec![0usize; n + 1];
        let mut targets = Vec::with_capacity(upper.nnz());
        for (i, j, _) in upper.iter() {
            let (pi, pj) = (iperm[i], iperm[j]);
            let (r, c) = if pi <= pj { (pi, pj) } else { (pj, pi) };
            targets.push((r, c));
            counts[c + 1] += 1;
        }
        for c in 0..n {
            counts[c + 1] += counts[c];
        }
        let cp = counts.clone();
        let mut next = counts;
        let mut ci = vec![0; targets.len()];
        let mut value_map = vec![0; targets.len()];
        for (k, &(r, c)) in targets.iter().enumerate() {
            let p = next[c];
            ci[p] = r;
            value_map[k] = p;
            next[c] += 1;
        }

        // elimination tree and column counts of L
        let mut work = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut etree = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &i0 in &ci[cp[j]..cp[j + 1]] {
                let mut i = i0;
                while i != j && work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        Ok(Self {
            n,
            perm,
            iperm,
            etree,
            lp,
            cp,
            ci,
            value_map,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric factorization. `values` follows the storage order of the
    /// matrix passed to [`LdlSymbolic::new`]; `signs` is indexed by original
    /// row.
    pub fn factor(
        &self,
        values: &[f64],
        signs: &[f64],
        dynamic_eps: f64,
        dynamic_delta: f64,
    ) -> Result<LdlFactor, LdlError> {
        let n = self.n;
        assert_eq!(values.len(), self.value_map.len());
        assert_eq!(signs.len(), n);
        let mut cx = vec![0.0; values.len()];
        for (k, &p) in self.value_map.iter().enumerate() {
            cx[p] += values[k];
        }
        let psign: Vec<f64> = (0..n).map(|k| signs[self.perm[k]]).collect();

        let nnz_l = self.lp[n];
        let mut li = vec![0usize; nnz_l];
        let mut lx = vec![0.0; nnz_l];
        let mut d = vec![0.0; n];
        let mut dinv = vec![0.0; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        let mut y_vals = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = Vec::<usize>::with_capacity(n);
        let mut elim = Vec::with_capacity(n);
        let mut regularized = 0usize;

        for k in 0..n {
            y_idx.clear();
            for p in self.cp[k]..self.cp[k + 1] {
                let b = self.ci[p];
                if b == k {
                    d[k] += cx[p];
                    continue;
                }
                y_vals[b] += cx[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim.clear();
                    elim.push(b);
                    let mut nxt = self.etree[b];
                    while nxt != NONE && nxt < k {
                        if y_used[nxt] {
                            break;
                        }
                        y_used[nxt] = true;
                        elim.push(nxt);
                        nxt = self.etree[nxt];
                    }
                    y_idx.extend(elim.iter().rev());
                }
            }
            for t in (0..y_idx.len()).rev() {
                let c = y_idx[t];
                let end = next_space[c];
                let yc = y_vals[c];
                for j in self.lp[c]..end {
                    y_vals[li[j]] -= lx[j] * yc;
                }
                li[end] = k;
                lx[end] = yc * dinv[c];
                d[k] -= yc * lx[end];
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }
            if !d[k].is_finite() {
                return Err(LdlError::NonFinite);
            }
            if d[k] * psign[k] < dynamic_eps {
                if dynamic_delta <= 0.0 {
                    return Err(LdlError::ZeroPivot(k));
                }
                d[k] = psign[k] * dynamic_delta;
                regularized += 1;
            }
            dinv[k] = 1.0 / d[k];
        }
        Ok(LdlFactor {
            lp: self.lp.clone(),
            li,
            lx,
            dinv,
            perm: self.perm.clone(),
            iperm: self.iperm.clone(),
            regularized,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    dinv: Vec<f64>,
    perm: Vec<usize>,
    #[allow(dead_code)]
    iperm: Vec<usize>,
    regularized: usize,
}

impl LdlFactor {
    /// Number of pivots replaced by dynamic regularization.
    pub fn regularized_pivots(&self) -> usize {
        self.regularized
    }

    /// Solves in place, `rhs` in original ordering.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.dinv.len();
        let mut x: Vec<f64> = (0..n).map(|k| rhs[self.perm[k]]).collect();
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for j in self.lp[i]..self.lp[i + 1] {
                    x[self.li[j]] -= self.lx[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
        for k in 0..n {
            rhs[self.perm[k]] = x[k];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `K x = rhs` with iterative refinement against `k_upper`, the
    /// unregularized matrix stored as its upper triangle. Returns the solution
    /// and the final residual in the infinity norm.
    pub fn solve_refined(
        &self,
        k_upper: &CscMatrix,
        rhs: &[f64],
        max_steps: usize,
        tol: f64,
    ) -> (Vec<f64>, f64) {
        let mut x = self.solve(rhs);
        let mut res = residual(k_upper, &x, rhs);
        let mut res_norm = super::sparse::norm_inf(&res);
        for _ in 0..max_steps {
            if res_norm <= tol {
                break;
            }
            self.solve_in_place(&mut res);
            let candidate: Vec<f64> = x.iter().zip(&res).map(|(a, b)| a + b).collect();
            let cand_res = residual(k_upper, &candidate, rhs);
            let cand_norm = super::sparse::norm_inf(&cand_res);
            if !(cand_norm < res_norm) {
                break;
            }
            x = candidate;
            res = cand_res;
            res_norm = cand_norm;
        }
        (x, res_norm)
    }
}

/// `y = K x` for symmetric `K` stored as its upper triangle.
pub fn sym_mul(k_upper: &CscMatrix, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; k_upper.ncols()];
    for (i, j, v) in k_upper.iter() {
        y[i] += v * x[j];
        if i != j {
            y[j] += v * x[i];
        }
    }
    y
}

fn residual(k_upper: &CscMatrix, x: &[f64], rhs: &[f64]) -> Vec<f64> {
    let kx = sym_mul(k_upper, x);
    rhs.iter().zip(kx).map(|(b, k)| b - k).collect()
}
