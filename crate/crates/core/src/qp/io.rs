//! Plain-text problem dumps.
//!
//! ```text
//! qp 1
//! dims <n> <m_eq> <m_in>
//! Q
//! <n rows of n values>
//! q
//! <n values>
//! A
//! <m_eq rows of n values>
//! b
//! <m_eq values>
//! G
//! <m_in rows of n values>
//! h
//! <m_in values>
//! ```
//!
//! Values are written with `{:e}` (shortest round-trip representation), so a
//! dump/load cycle reproduces every value bit for bit. Zero entries are
//! dropped from the sparsity pattern on load.

use std::fmt::Write as _;
use std::io::{Read, Write};

use super::problem::QpProblem;
use super::QpError;
use crate::linalg::sparse::CscMatrix;

pub fn dump_problem(p: &QpProblem) -> String {
    let mut s = String::new();
    let (n, me, mi) = (p.num_vars(), p.num_eq(), p.num_ineq());
    let _ = writeln!(s, "qp 1");
    let _ = writeln!(s, "dims {n} {me} {mi}");
    let write_rows = |s: &mut String, m: &CscMatrix| {
        for row in m.to_dense() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
    };
    let write_vec = |s: &mut String, v: &[f64]| {
        let line: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    };
    let _ = writeln!(s, "Q");
    write_rows(&mut s, &p.q_mat);
    let _ = writeln!(s, "q");
    write_vec(&mut s, &p.q);
    let _ = writeln!(s, "A");
    write_rows(&mut s, &p.a);
    let _ = writeln!(s, "b");
    write_vec(&mut s, &p.b);
    let _ = writeln!(s, "G");
    write_rows(&mut s, &p.g);
    let _ = writeln!(s, "h");
    write_vec(&mut s, &p.h);
    s
}

pub fn load_problem(text: &str) -> Result<QpProblem, QpError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| QpError::Format(format!("unexpected end of file, expected {what}")))
    };
    if next("header")? != "qp 1" {
        return Err(QpError::Format("missing `qp 1` header".into()));
    }
    let dims: Vec<usize> = next("dims")?
        .strip_prefix("dims")
        .ok_or_else(|| QpError::Format("expected `dims`".into()))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| QpError::Format(format!("bad dimension `{t}`"))))
        .collect::<Result<_, _>>()?;
    let [n, me, mi] = dims[..] else {
        return Err(QpError::Format("dims needs three values".into()));
    };
    let parse_row = |line: &str, len: usize| -> Result<Vec<f64>, QpError> {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| QpError::Format(format!("bad number `{t}`"))))
            .collect::<Result<_, _>>()?;
        if v.len() != len {
            return Err(QpError::Format(format!("expected {len} values, found {}", v.len())));
        }
        Ok(v)
    };
    let mut read_block = |tag: &str, rows: usize, cols: usize, is_vec: bool| -> Result<Vec<Vec<f64>>, QpError> {
        let t = next(tag)?;
        if t != tag {
            return Err(QpError::Format(format!("expected block `{tag}`, found `{t}`")));
        }
        if is_vec {
            if rows == 0 {
                return Ok(vec![Vec::new()]);
            }
            return Ok(vec![parse_row(next(tag)?, rows)?]);
        }
        (0..rows).map(|_| parse_row(next(tag)?, cols)).collect()
    };
    let q_mat = read_block("Q", n, n, false)?;
    let q = read_block("q", n, 0, true)?.remove(0);
    let a = read_block("A", me, n, false)?;
    let b = read_block("b", me, 0, true)?.remove(0);
    let g = read_block("G", mi, n, false)?;
    let h = read_block("h", mi, 0, true)?.remove(0);
    QpProblem::new(
        CscMatrix::from_dense(&q_mat, n),
        q,
        CscMatrix::from_dense(&a, n),
        b,
        CscMatrix::from_dense(&g, n),
        h,
    )
}

pub fn write_problem<W: Write>(p: &QpProblem, mut w: W) -> std::io::Result<()> {
    w.write_all(dump_problem(p).as_bytes())
}

pub fn read_problem<R: Read>(mut r: R) -> Result<QpProblem, QpError> {
    let mut s = String::new();
    r.read_to_string(&mut s)
        .map_err(|e| QpError::Format(e.to_string()))?;
    load_problem(&s)
}
