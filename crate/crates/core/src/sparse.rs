//! Symmetric sparse matrices in compressed-row layout and a Jacobi
//! preconditioned conjugate-gradient solver with a hard cap on the number of
//! matrix-vector multiplications.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Default relative-residual tolerance for [`pcg_solve`].
pub const DEFAULT_PCG_TOL: f64 = 1e-8;
/// Default cap on matrix-vector multiplications for [`pcg_solve`].
pub const DEFAULT_PCG_MAX_MULTS: usize = 50;

const SYMMETRY_TOL: f64 = 1e-12;

/// A structurally and numerically symmetric sparse matrix stored as CSR.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

/// Assembles a CSR matrix from `(row, col, value)` triplets.
///
/// Duplicate entries are summed, explicit zeros are kept, and the result must
/// be symmetric.
pub fn csr_from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<SparseSym> {
    for &(r, c, _) in triplets {
        if r >= n || c >= n {
            return Err(Error::structural(format!(
                "triplet ({r}, {c}) out of range for a {n}x{n} matrix"
            )));
        }
    }
    let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
    // stable sort keeps the summation order of duplicates deterministic
    sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut row_offsets = vec![0usize; n + 1];
    let mut col_indices = Vec::with_capacity(sorted.len());
    let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
    let mut last: Option<(usize, usize)> = None;
    for (r, c, v) in sorted {
        if last == Some((r, c)) {
            *values.last_mut().expect("duplicate follows an entry") += v;
        } else {
            col_indices.push(c);
            values.push(v);
            row_offsets[r + 1] += 1;
            last = Some((r, c));
        }
    }
    for i in 0..n {
        row_offsets[i + 1] += row_offsets[i];
    }
    let m = SparseSym {
        n,
        row_offsets,
        col_indices,
        values,
    };
    m.check_symmetric()?;
    Ok(m)
}

impl SparseSym {
    pub fn identity(n: usize) -> Self {
        SparseSym {
            n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from raw CSR arrays, validating every invariant.
    pub fn from_csr(n: usize, row_offsets: Vec<usize>, col_indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if row_offsets.len() != n + 1 || row_offsets[0] != 0 {
            return Err(Error::structural("row_offsets must have n + 1 entries starting at 0"));
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::structural("row_offsets must be nondecreasing"));
        }
        if row_offsets[n] != values.len() || col_indices.len() != values.len() {
            return Err(Error::structural("final row offset must equal the number of values"));
        }
        for i in 0..n {
            let cols = &col_indices[row_offsets[i]..row_offsets[i + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::structural(format!(
                    "column indices of row {i} are not strictly increasing"
                )));
            }
            if cols.last().is_some_and(|&c| c >= n) {
                return Err(Error::structural(format!("column index out of range in row {i}")));
            }
        }
        let m = SparseSym {
            n,
            row_offsets,
            col_indices,
            values,
        };
        m.check_symmetric()?;
        Ok(m)
    }

    fn check_symmetric(&self) -> Result<()> {
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                match self.get(j, i) {
                    Some(w) if (v - w).abs() <= SYMMETRY_TOL * v.abs().max(w.abs()).max(1.0) => {}
                    Some(w) => {
                        return Err(Error::structural(format!(
                            "entries ({i}, {j}) = {v} and ({j}, {i}) = {w} differ"
                        )))
                    }
                    None => {
                        return Err(Error::structural(format!(
                            "entry ({i}, {j}) has no transposed counterpart"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates the stored `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| self.values[span.start + k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i).unwrap_or(0.0)).collect()
    }

    /// Same sparsity pattern, values mapped by `f(row, col, value)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> SparseSym {
        let mut values = self.values.clone();
        for i in 0..self.n {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                values[k] = f(i, self.col_indices[k], self.values[k]);
            }
        }
        SparseSym { values, ..self.clone() }
    }

    pub fn scaled(&self, s: f64) -> SparseSym {
        self.map_values(|_, _, v| v * s)
    }

    /// Returns `a * self + b * other` over the union of both patterns.
    pub fn linear_combination(&self, a: f64, other: &SparseSym, b: f64) -> Result<SparseSym> {
        if self.n != other.n {
            return Err(Error::structural(format!(
                "cannot combine {}x{} with {}x{}",
                self.n, self.n, other.n, other.n
            )));
        }
        let mut row_offsets = Vec::with_capacity(self.n + 1);
        let mut col_indices = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(self.nnz().max(other.nnz()));
        row_offsets.push(0);
        for i in 0..self.n {
            let mut left = self.row(i).peekable();
            let mut right = other.row(i).peekable();
            loop {
                let entry = match (left.peek(), right.peek()) {
                    (None, None) => break,
                    (Some(&(c, v)), None) => {
                        left.next();
                        (c, a * v)
                    }
                    (None, Some(&(c, w))) => {
                        right.next();
                        (c, b * w)
                    }
                    (Some(&(c, v)), Some(&(d, w))) => {
                        if c < d {
                            left.next();
                            (c, a * v)
                        } else if d < c {
                            right.next();
                            (d, b * w)
                        } else {
                            left.next();
                            right.next();
                            (c, a * v + b * w)
                        }
                    }
                };
                col_indices.push(entry.0);
                values.push(entry.1);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseSym {
            n: self.n,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Row-major dense copy, mostly for tests and small diagnostics.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                dense[i * self.n + j] += v;
            }
        }
        dense
    }

    /// Writes the matrix as `i j value` lines.
    pub fn write_triplets(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(text, "{i} {j} {v:e}").expect("writing to a String");
            }
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Computes `A x`.
pub fn spmv(a: &SparseSym, x: &[f64]) -> Result<Vec<f64>> {
    let mut y = vec![0.0; a.n];
    spmv_into(a, x, &mut y)?;
    Ok(y)
}

pub fn spmv_into(a: &SparseSym, x: &[f64], y: &mut [f64]) -> Result<()> {
    if x.len() != a.n || y.len() != a.n {
        return Err(Error::structural(format!(
            "spmv: matrix is {n}x{n} but x has length {} and y has length {}",
            x.len(),
            y.len(),
            n = a.n
        )));
    }
    for (i, yi) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in a.row_offsets[i]..a.row_offsets[i + 1] {
            acc += a.values[k] * x[a.col_indices[k]];
        }
        *yi = acc;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgReport {
    /// Matrix-vector multiplications spent, never more than the cap.
    pub iterations: usize,
    /// True relative residual `||A x - b|| / ||b||` of the returned iterate.
    pub final_residual_norm: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned CG bound to one matrix so several right-hand sides
/// share the preconditioner.
#[derive(Debug, Clone)]
pub struct Pcg<'a> {
    a: &'a SparseSym,
    inv_diag: Vec<f64>,
    tol: f64,
    max_mults: usize,
}

impl<'a> Pcg<'a> {
    pub fn new(a: &'a SparseSym, tol: f64, max_mults: usize) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::config(format!("PCG tolerance must be positive, got {tol}")));
        }
        let mut inv_diag = Vec::with_capacity(a.n);
        for (i, d) in a.diagonal().into_iter().enumerate() {
            if !d.is_finite() {
                return Err(Error::numeric(format!("non-finite diagonal entry at row {i}")));
            }
            if d < 0.0 {
                return Err(Error::Solver(format!(
                    "negative diagonal entry {d} at row {i}; matrix is not positive semidefinite"
                )));
            }
            // A zero diagonal on a PSD matrix means the whole row is zero; the
            // residual there can only be nonzero if b is, which `solve` rejects.
            inv_diag.push(if d > 0.0 { 1.0 / d } else { 0.0 });
        }
        Ok(Pcg {
            a,
            inv_diag,
            tol,
            max_mults,
        })
    }

    /// Solves `A x = b` starting from `x0` (zeros when `None`).
    pub fn solve(&self, b: &[f64], x0: Option<&[f64]>) -> Result<(Vec<f64>, PcgReport)> {
        let n = self.a.n;
        if b.len() != n {
            return Err(Error::structural(format!(
                "right-hand side has length {} for a {n}x{n} system",
                b.len()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite right-hand side"));
        }
        for (i, (&d, &bi)) in self.inv_diag.iter().zip(b).enumerate() {
            if d == 0.0 && bi != 0.0 {
                return Err(Error::Solver(format!(
                    "zero diagonal at row {i} with nonzero right-hand side"
                )));
            }
        }
        let b_norm = norm(b);
        if b_norm == 0.0 {
            let report = PcgReport {
                iterations: 0,
                final_residual_norm: 0.0,
                converged: true,
            };
            return Ok((vec![0.0; n], report));
        }

        let mut mults = 0usize;
        let mut x = match x0 {
            Some(x0) if x0.len() != n => return Err(Error::structural("initial guess has the wrong length")),
            Some(x0) => x0.to_vec(),
            None => vec![0.0; n],
        };
        let mut r = b.to_vec();
        let mut ap = vec![0.0; n];
        if x0.is_some() {
            spmv_into(self.a, &x, &mut ap)?;
            mults += 1;
            for (ri, api) in r.iter_mut().zip(&ap) {
                *ri -= api;
            }
        }

        let target = self.tol * b_norm;
        let mut best_x = x.clone();
        let mut best_res = norm(&r);
        let mut z: Vec<f64> = r.iter().zip(&self.inv_diag).map(|(ri, di)| ri * di).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);

        while best_res > target && mults < self.max_mults {
            spmv_into(self.a, &p, &mut ap)?;
            mults += 1;
            let pap = dot(&p, &ap);
            if !pap.is_finite() || !rz.is_finite() {
                return Err(Error::numeric("non-finite value during conjugate gradients"));
            }
            if pap <= 0.0 {
                // direction in the null space of a semidefinite matrix
                break;
            }
            let step = rz / pap;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            let res = norm(&r);
            if res < best_res {
                best_res = res;
                best_x.copy_from_slice(&x);
            }
            for i in 0..n {
                z[i] = r[i] * self.inv_diag[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }

        // the recursive residual drifts; report the true one
        spmv_into(self.a, &best_x, &mut ap)?;
        let true_res = b.iter().zip(&ap).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt();
        if !true_res.is_finite() {
            return Err(Error::numeric("non-finite residual"));
        }
        let rel = true_res / b_norm;
        Ok((
            best_x,
            PcgReport {
                iterations: mults,
                final_residual_norm: rel,
                converged: rel <= self.tol,
            },
        ))
    }
}

/// Solves `A x = b` from a zero initial guess.
pub fn pcg_solve(a: &SparseSym, b: &[f64], tol: f64, max_mults: usize) -> Result<(Vec<f64>, PcgReport)> {
    Pcg::new(a, tol, max_mults)?.solve(b, None)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
