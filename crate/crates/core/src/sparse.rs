//! Compressed-row sparse operators, ILU(0) preconditioning and restarted
//! GMRES.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{arg, Error, Result};

/// Square sparse matrix in compressed row form with sorted, unique columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    size: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// Builds from per-row `(col, value)` lists. Repeated columns are summed;
    /// entries that cancel to zero are kept only on the diagonal.
    pub fn from_rows(size: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != size {
            return arg(format!("expected {size} rows, got {}", rows.len()));
        }
        let mut row_ptr = Vec::with_capacity(size + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|e| e.0);
            let start = cols.len();
            for (c, v) in row {
                if c >= size {
                    return arg(format!("column {c} out of range in row {r}"));
                }
                if !v.is_finite() {
                    return Err(Error::Numerical(format!("non-finite entry at ({r}, {c})")));
                }
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            // drop cancelled off-diagonal entries
            let mut w = start;
            for q in start..cols.len() {
                if vals[q] != 0.0 || cols[q] == r {
                    cols[w] = cols[q];
                    vals[w] = vals[q];
                    w += 1;
                }
            }
            cols.truncate(w);
            vals.truncate(w);
            row_ptr.push(cols.len());
        }
        Ok(Self {
            size,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn from_triplets(size: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); size];
        for &(r, c, v) in triplets {
            if r >= size {
                return arg(format!("row {r} out of range"));
            }
            rows[r].push((c, v));
        }
        Self::from_rows(size, rows)
    }

    pub fn identity(size: usize) -> Self {
        Self {
            size,
            row_ptr: (0..=size).collect(),
            cols: (0..size).collect(),
            vals: vec![1.0; size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.size).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(q) => self.vals[span.start + q],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.size).map(|r| self.get(r, r)).collect()
    }

    /// `y = A x`, rows in parallel; each row is reduced sequentially.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(r, yr)| {
            let mut s = 0.0;
            for q in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[q] * x[self.cols[q]];
            }
            *yr = s;
        });
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.size];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.size];
        for (r, c, v) in self.triplets() {
            rows[c].push((r, v));
        }
        Self::from_rows(self.size, rows).expect("transpose of a valid operator")
    }

    /// `½(A + Aᵀ)`.
    pub fn symmetric_part(&self) -> Self {
        let mut rows = vec![Vec::new(); self.size];
        for (r, c, v) in self.triplets() {
            rows[r].push((c, 0.5 * v));
            rows[c].push((r, 0.5 * v));
        }
        Self::from_rows(self.size, rows).expect("symmetric part of a valid operator")
    }

    /// Principal submatrix on `keep` (in the given order).
    pub fn principal_block(&self, keep: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.size];
        for (new, &old) in keep.iter().enumerate() {
            pos[old] = new;
        }
        let rows = keep
            .iter()
            .map(|&old| {
                self.row(old)
                    .filter(|&(c, _)| pos[c] != usize::MAX)
                    .map(|(c, v)| (pos[c], v))
                    .collect()
            })
            .collect();
        Self::from_rows(keep.len(), rows).expect("principal block of a valid operator")
    }

    /// Triplet CSV with header `row,col,value`.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "row,col,value")?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r},{c},{v:e}")?;
        }
        Ok(())
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖b − A x‖₂ / ‖b‖₂`, or `‖A x‖₂` when `b = 0`.
pub fn relative_residual(a: &SparseOperator, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let nb = norm2(b);
    if nb > 0.0 {
        norm2(&r) / nb
    } else {
        norm2(&r)
    }
}

/// Incomplete LU factorization with the sparsity pattern of `A`.
#[derive(Clone, Debug)]
pub struct Ilu0 {
    lu: SparseOperator,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &SparseOperator) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.size;
        let mut diag = vec![usize::MAX; n];
        for (r, d) in diag.iter_mut().enumerate() {
            for q in lu.row_ptr[r]..lu.row_ptr[r + 1] {
                if lu.cols[q] == r {
                    *d = q;
                }
            }
            if *d == usize::MAX {
                return Err(Error::Numerical(format!("row {r} has no diagonal entry")));
            }
        }
        let mut where_in_row = vec![usize::MAX; n];
        for i in 0..n {
            let (lo, hi) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for q in lo..hi {
                where_in_row[lu.cols[q]] = q;
            }
            for q in lo..hi {
                let k = lu.cols[q];
                if k >= i {
                    break;
                }
                let pivot = lu.vals[diag[k]];
                let lik = lu.vals[q] / pivot;
                lu.vals[q] = lik;
                for p in diag[k] + 1..lu.row_ptr[k + 1] {
                    let w = where_in_row[lu.cols[p]];
                    if w != usize::MAX {
                        lu.vals[w] -= lik * lu.vals[p];
                    }
                }
            }
            for q in lo..hi {
                where_in_row[lu.cols[q]] = usize::MAX;
            }
            let d = lu.vals[diag[i]];
            if d == 0.0 || !d.is_finite() {
                return Err(Error::Numerical(format!("zero pivot in incomplete factorization at row {i}")));
            }
        }
        Ok(Self { lu, diag })
    }

    /// Solves `L U z = r` in place.
    pub fn apply(&self, z: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.size {
            let mut s = z[i];
            for q in lu.row_ptr[i]..self.diag[i] {
                s -= lu.vals[q] * z[lu.cols[q]];
            }
            z[i] = s;
        }
        for i in (0..lu.size).rev() {
            let mut s = z[i];
            for q in self.diag[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.vals[q] * z[lu.cols[q]];
            }
            z[i] = s / lu.vals[self.diag[i]];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmresConfig {
    pub tol: f64,
    /// Upper bound on inner iterations over all cycles.
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
            restart: 60,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmresOutcome {
    pub iterations: usize,
    /// Relative residual of the returned iterate, recomputed from `A`.
    pub residual: f64,
    pub converged: bool,
}

/// Right-preconditioned restarted GMRES for `A x = b` starting from `x`.
/// Returns the best iterate found in `x`.
pub fn gmres(a: &SparseOperator, b: &[f64], x: &mut [f64], m: &Ilu0, cfg: &GmresConfig) -> Result<GmresOutcome> {
    let n = a.size();
    if b.len() != n || x.len() != n {
        return arg("dimension mismatch in GMRES");
    }
    if !(cfg.tol > 0.0) || cfg.restart == 0 {
        return arg("GMRES needs tol > 0 and restart ≥ 1");
    }
    let nb = norm2(b);
    let scale = if nb > 0.0 { nb } else { 1.0 };
    let mut iterations = 0;
    let mut ax = vec![0.0; n];
    loop {
        a.matvec_into(x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        if !beta.is_finite() {
            return Err(Error::Numerical("non-finite residual in GMRES".into()));
        }
        let rel = beta / scale;
        if rel <= cfg.tol || iterations >= cfg.max_iter {
            return Ok(GmresOutcome {
                iterations,
                residual: rel,
                converged: rel <= cfg.tol,
            });
        }
        let mdim = cfg.restart.min(cfg.max_iter - iterations);
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(mdim + 1);
        v.push(r.iter().map(|ri| ri / beta).collect());
        let mut h = vec![vec![0.0; mdim]; mdim + 1];
        let (mut cs, mut sn) = (vec![0.0; mdim], vec![0.0; mdim]);
        let mut g = vec![0.0; mdim + 1];
        g[0] = beta;
        let mut z = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut used = 0;
        for j in 0..mdim {
            z.copy_from_slice(&v[j]);
            m.apply(&mut z);
            a.matvec_into(&z, &mut w);
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(&w, vi);
                h[i][j] = hij;
                w.iter_mut().zip(vi).for_each(|(wk, vk)| *wk -= hij * vk);
            }
            let hn = norm2(&w);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = h[j][j].hypot(h[j + 1][j]);
            if !denom.is_finite() {
                return Err(Error::Numerical("non-finite Hessenberg entry in GMRES".into()));
            }
            let (c, s) = if denom > 0.0 { (h[j][j] / denom, h[j + 1][j] / denom) } else { (1.0, 0.0) };
            cs[j] = c;
            sn[j] = s;
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -s * g[j];
            g[j] *= c;
            used = j + 1;
            iterations += 1;
            if g[j + 1].abs() / scale <= 0.5 * cfg.tol || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wk| wk / hn).collect());
        }
        // back substitution on the triangular system
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for k in i + 1..used {
                s -= h[i][k] * y[k];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        let mut update = vec![0.0; n];
        for (yi, vi) in y.iter().zip(&v) {
            update.iter_mut().zip(vi).for_each(|(u, vk)| *u += yi * vk);
        }
        m.apply(&mut update);
        x.iter_mut().zip(&update).for_each(|(xi, ui)| *xi += ui);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite iterate in GMRES".into()));
        }
    }
}
