//! Minimal sparse symmetric machinery: CSR storage, accumulation by
//! coordinate, and a Jacobi-scaled conjugate-gradient solver.

use nalgebra::DVector;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("conjugate gradient did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("matrix has a non-positive diagonal entry at row {0}")]
    IndefiniteDiagonal(usize),
}

/// Coordinate-format accumulator; duplicate entries sum.
#[derive(Debug, Clone, Default)]
pub struct CooBuilder {
    n_rows: usize,
    n_cols: usize,
    entries: HashMap<(u32, u32), f64>,
}

impl CooBuilder {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        CooBuilder {
            n_rows,
            n_cols,
            entries: HashMap::new(),
        }
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            *self.entries.entry((r as u32, c as u32)).or_insert(0.0) += v;
        }
    }

    pub fn build(&self) -> CsrMatrix {
        let mut keys: Vec<(&(u32, u32), &f64)> = self.entries.iter().collect();
        keys.sort_unstable_by_key(|(k, _)| **k);
        let mut row_ptr = vec![0usize; self.n_rows + 1];
        let mut col_idx = Vec::with_capacity(keys.len());
        let mut values = Vec::with_capacity(keys.len());
        for (&(r, c), &v) in keys {
            row_ptr[r as usize + 1] += 1;
            col_idx.push(c as usize);
            values.push(v);
        }
        for r in 0..self.n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// A fixed sparsity pattern with an indexed accumulator, for assembly loops
/// where the pattern is known from the element connectivity up front.
#[derive(Debug, Clone)]
pub struct PatternAccumulator {
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl PatternAccumulator {
    /// Builds the pattern from the union of per-row column sets.
    pub fn new(n_rows: usize, n_cols: usize, mut rows: Vec<Vec<usize>>) -> Self {
        assert_eq!(rows.len(), n_rows);
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::new();
        for (r, cols) in rows.iter_mut().enumerate() {
            cols.sort_unstable();
            cols.dedup();
            row_ptr[r + 1] = row_ptr[r] + cols.len();
            col_idx.extend_from_slice(cols);
        }
        let values = vec![0.0; col_idx.len()];
        PatternAccumulator {
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        let cols = &self.col_idx[range.clone()];
        let k = cols.binary_search(&c).expect("column in pattern");
        self.values[range.start + k] += v;
    }

    pub fn into_csr(self) -> CsrMatrix {
        CsrMatrix {
            n_rows: self.row_ptr.len() - 1,
            n_cols: self.n_cols,
            row_ptr: self.row_ptr,
            col_idx: self.col_idx,
            values: self.values,
        }
    }
}

impl CsrMatrix {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r)
            .find(|&(cc, _)| cc == c)
            .map(|(_, v)| v)
            .unwrap_or(0.0)
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n_rows);
        for r in 0..self.n_rows {
            let mut s = 0.0;
            for (c, v) in self.row(r) {
                s += v * x[c];
            }
            y[r] = s;
        }
        y
    }

    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.n_rows, |r, _| self.get(r, r))
    }

    /// Largest relative asymmetry `|a_ij - a_ji| / max|a|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self
            .values
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst / scale
    }

    /// Sum of two matrices with the second scaled: `self + alpha * other`.
    pub fn add_scaled(&self, other: &CsrMatrix, alpha: f64) -> CsrMatrix {
        let mut coo = CooBuilder::new(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                coo.add(r, c, v);
            }
            for (c, v) in other.row(r) {
                coo.add(r, c, alpha * v);
            }
        }
        coo.build()
    }
}

/// Conjugate gradient on a symmetrically Jacobi-scaled system.
///
/// Solves `A x = b` for symmetric positive definite `A` by running CG on
/// `D A D y = D b` with `D = diag(A)^-1/2`, which keeps the convergence test
/// meaningful when penalty terms make the raw rows differ by many orders of
/// magnitude. Converges when the scaled residual drops below `tol` relative
/// to the scaled right-hand side.
pub fn solve_spd(
    a: &CsrMatrix,
    b: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>, SolveError> {
    let n = a.n_rows();
    let diag = a.diagonal();
    let mut scale = DVector::zeros(n);
    for i in 0..n {
        if diag[i] <= 0.0 {
            return Err(SolveError::IndefiniteDiagonal(i));
        }
        scale[i] = 1.0 / diag[i].sqrt();
    }
    let sb = b.component_mul(&scale);
    let target = sb.norm() * tol;
    if sb.norm() == 0.0 {
        return Ok(DVector::zeros(n));
    }

    let apply = |x: &DVector<f64>| -> DVector<f64> {
        a.matvec(&x.component_mul(&scale)).component_mul(&scale)
    };

    let mut x = DVector::zeros(n);
    let mut r = sb.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    for _ in 0..max_iter {
        if rr.sqrt() <= target {
            return Ok(x.component_mul(&scale));
        }
        let ap = apply(&p);
        let alpha = rr / p.dot(&ap);
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_new = r.dot(&r);
        p = &r + (rr_new / rr) * p;
        rr = rr_new;
    }
    if rr.sqrt() <= target {
        Ok(x.component_mul(&scale))
    } else {
        Err(SolveError::NoConvergence(max_iter))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut coo = CooBuilder::new(n, n);
        for i in 0..n {
            coo.add(i, i, 2.0);
            if i > 0 {
                coo.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                coo.add(i, i + 1, -1.0);
            }
        }
        coo.build()
    }

    #[test]
    fn duplicate_entries_accumulate() {
        let mut coo = CooBuilder::new(2, 2);
        coo.add(0, 0, 1.0);
        coo.add(0, 0, 2.5);
        coo.add(1, 0, -1.0);
        let m = coo.build();
        assert_eq!(m.nnz(), 2);
        assert_abs_diff_eq!(m.get(0, 0), 3.5);
        assert_abs_diff_eq!(m.get(1, 0), -1.0);
    }

    #[test]
    fn cg_solves_laplacian() {
        let n = 50;
        let a = laplacian_1d(n);
        let x_true = DVector::from_fn(n, |i, _| (i as f64 * 0.3).sin());
        let b = a.matvec(&x_true);
        let x = solve_spd(&a, &b, 1e-13, 10 * n).unwrap();
        assert!((x - x_true).amax() < 1e-9);
    }

    #[test]
    fn cg_handles_badly_scaled_rows() {
        // Mimics a penalty system: one row scaled by 1e8.
        let n = 20;
        let mut coo = CooBuilder::new(n, n);
        for i in 0..n {
            let s = if i == 0 { 1e8 } else { 1.0 };
            coo.add(i, i, 2.0 * s);
            if i > 0 {
                coo.add(i, i - 1, -0.5);
                coo.add(i - 1, i, -0.5);
            }
        }
        let a = coo.build();
        let x_true = DVector::from_fn(n, |i, _| 1.0 + i as f64);
        let b = a.matvec(&x_true);
        let x = solve_spd(&a, &b, 1e-14, 100 * n).unwrap();
        assert!((x - x_true).amax() < 1e-6);
    }

    #[test]
    fn asymmetry_detects_mismatch() {
        let mut coo = CooBuilder::new(2, 2);
        coo.add(0, 0, 1.0);
        coo.add(0, 1, 0.5);
        coo.add(1, 0, 0.25);
        coo.add(1, 1, 1.0);
        let m = coo.build();
        assert!(m.asymmetry() > 0.2);
    }
}
