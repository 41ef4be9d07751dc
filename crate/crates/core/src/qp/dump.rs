//! Plain-text problem dump for cross-checking with external solvers.
//!
//! ```text
//! %%QpProblem 1
//! dims <n> <meq>
//! block <name> <start> <len>        (zero or more)
//! P <nnz>                            then nnz lines "i j v", 1-based
//! q                                  then n values
//! A <nnz>                            then nnz lines "i j v", 1-based
//! b                                  then meq values
//! lower                              then n values, "-inf" allowed
//! upper                              then n values, "inf" allowed
//! ```
//!
//! Values use shortest round-trip formatting, so a dump reads back bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{QpProblem, VariableBlock};
use crate::error::{Error, Result};

const MAGIC: &str = "%%QpProblem 1";

pub fn write_problem(path: &Path, prob: &QpProblem) -> Result<()> {
    std::fs::write(path, to_text(prob)).map_err(|e| Error::io(path, e))
}

fn push_sparse(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let entries: Vec<(usize, usize, f64)> = (0..m.ncols())
        .flat_map(|j| (0..m.nrows()).map(move |i| (i, j)))
        .filter(|&(i, j)| m[(i, j)] != 0.0)
        .map(|(i, j)| (i, j, m[(i, j)]))
        .collect();
    let _ = writeln!(out, "{name} {}", entries.len());
    for (i, j, v) in entries {
        let _ = writeln!(out, "{} {} {v}", i + 1, j + 1);
    }
}

fn push_dense(out: &mut String, name: &str, v: &DVector<f64>) {
    let _ = writeln!(out, "{name}");
    for x in v.iter() {
        let _ = writeln!(out, "{x}");
    }
}

fn to_text(prob: &QpProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "dims {} {}", prob.num_vars(), prob.num_eq());
    for b in prob.blocks() {
        let _ = writeln!(out, "block {} {} {}", b.name, b.start, b.len);
    }
    push_sparse(&mut out, "P", prob.p());
    push_dense(&mut out, "q", prob.q());
    push_sparse(&mut out, "A", prob.a());
    push_dense(&mut out, "b", prob.b());
    push_dense(&mut out, "lower", prob.lower());
    push_dense(&mut out, "upper", prob.upper());
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Parse {
            path: self.path.display().to_string(),
            message: format!("line {}: {msg}", self.line),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.trim())
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of file"))
            }
        }
    }

    fn header(&mut self, name: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(name) {
            return Err(self.err(format!("expected section `{name}`")));
        }
        Ok(parts.collect())
    }

    fn number<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse()
            .map_err(|_| self.err(format!("invalid number {s:?}")))
    }

    fn sparse(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let head = self.header(name)?;
        let nnz: usize = match head.as_slice() {
            [k] => self.number(k)?,
            _ => return Err(self.err("expected entry count")),
        };
        let mut m = DMatrix::zeros(rows, cols);
        for _ in 0..nnz {
            let line = self.next_line()?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(self.err("expected `i j v`"));
            }
            let i: usize = self.number(parts[0])?;
            let j: usize = self.number(parts[1])?;
            if i == 0 || j == 0 || i > rows || j > cols {
                return Err(self.err(format!("index ({i}, {j}) out of range")));
            }
            m[(i - 1, j - 1)] = self.number(parts[2])?;
        }
        Ok(m)
    }

    fn dense(&mut self, name: &str, len: usize) -> Result<DVector<f64>> {
        self.header(name)?;
        let mut v = DVector::zeros(len);
        for i in 0..len {
            let line = self.next_line()?;
            v[i] = self.number(line)?;
        }
        Ok(v)
    }
}

pub fn read_problem(path: &Path) -> Result<QpProblem> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        path,
        line: 0,
    };
    if lines.next_line()? != MAGIC {
        return Err(lines.err("missing header"));
    }
    let dims = lines.header("dims")?;
    let (n, meq): (usize, usize) = match dims.as_slice() {
        [a, b] => (lines.number(a)?, lines.number(b)?),
        _ => return Err(lines.err("expected `dims n meq`")),
    };
    let mut blocks = Vec::new();
    let p = loop {
        let save = lines.inner.clone();
        let line = lines.next_line()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.first() == Some(&"block") && parts.len() == 4 {
            blocks.push(VariableBlock {
                name: parts[1].to_string(),
                start: lines.number(parts[2])?,
                len: lines.number(parts[3])?,
            });
        } else {
            lines.inner = save;
            break lines.sparse("P", n, n)?;
        }
    };
    let q = lines.dense("q", n)?;
    let a = lines.sparse("A", meq, n)?;
    let b = lines.dense("b", meq)?;
    let lower = lines.dense("lower", n)?;
    let upper = lines.dense("upper", n)?;
    Ok(QpProblem::new(p, q, a, b, lower, upper)?.with_blocks(blocks))
}
