//! Compressed-sparse-row matrices and the two iterative solvers used by the
//! DG pipeline: forward Gauss-Seidel (warm-start studies) and BiCGStab
//! (label generation).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("zero diagonal entry in row {0}")]
    SingularDiagonal(usize),
    #[error("BiCGStab breakdown after {} iterations (relative residual {:e})", .0.iterations, .0.final_residual())]
    Breakdown(Box<SolveReport>),
    #[error("solver did not converge in {} iterations (relative residual {:e})", .0.iterations, .0.final_residual())]
    NotConverged(Box<SolveReport>),
    #[error("zero pivot in column {0} of the banded factorization")]
    SingularPivot(usize),
}

/// Sparse matrix in CSR layout. Column indices are sorted and unique per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SparseError> {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(SparseError::Dimension(format!(
                    "triplet ({r},{c}) outside {nrows}x{ncols}"
                )));
            }
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        // bucket by row, then sort and merge within each row
        let mut cursor = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            cols[cursor[r]] = c;
            vals[cursor[r]] = v;
            cursor[r] += 1;
        }
        let mut row_offsets = Vec::with_capacity(nrows + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|&(c, _)| c);
            for &(c, v) in &scratch {
                if col_indices.len() > row_offsets[r] && *col_indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let triplets: Vec<_> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(move |(j, v)| (i, j, *v))
            })
            .collect();
        Self::from_triplets(nrows, ncols, &triplets).expect("dense rows are in range")
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.row_offsets[self.nrows]
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

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (j, i, v)))
            .collect();
        Self::from_triplets(self.ncols, self.nrows, &triplets).expect("transpose stays in range")
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) -> Result<(), SparseError> {
        if x.len() != self.ncols || y.len() != self.nrows {
            return Err(SparseError::Dimension(format!(
                "spmv of {}x{} matrix with x of length {} into y of length {}",
                self.nrows,
                self.ncols,
                x.len(),
                y.len()
            )));
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *yi = acc;
        }
        Ok(())
    }

    /// `A^T x` without forming the transpose.
    pub fn spmv_transpose(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.nrows {
            return Err(SparseError::Dimension(format!(
                "transpose spmv of {}x{} matrix with x of length {}",
                self.nrows,
                self.ncols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                y[self.col_indices[k]] += self.values[k] * xi;
            }
        }
        Ok(y)
    }

    /// `x^T A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64, SparseError> {
        let ax = self.spmv(x)?;
        Ok(dot(x, &ax))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `||b - A x_k|| / ||b||` for the initial guess and every iterate.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }
}

fn check_square(a: &CsrMatrix, b: &[f64], x0: &[f64]) -> Result<(), SparseError> {
    if a.nrows != a.ncols || b.len() != a.nrows || x0.len() != a.ncols {
        return Err(SparseError::Dimension(format!(
            "system {}x{} with rhs {} and guess {}",
            a.nrows,
            a.ncols,
            b.len(),
            x0.len()
        )));
    }
    Ok(())
}

fn relative_residual(a: &CsrMatrix, b: &[f64], x: &[f64], bnorm: f64, scratch: &mut [f64]) -> f64 {
    a.spmv_into(x, scratch).expect("dimensions checked");
    let r: f64 = scratch
        .iter()
        .zip(b)
        .map(|(ax, bi)| (bi - ax) * (bi - ax))
        .sum::<f64>()
        .sqrt();
    // a zero right-hand side measures the absolute residual
    if bnorm > 0.0 {
        r / bnorm
    } else {
        r
    }
}

/// Forward Gauss-Seidel sweeps until the relative residual reaches `tol`.
pub fn gauss_seidel(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport, SparseError> {
    check_square(a, b, x0)?;
    let n = a.nrows;
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|&d| d == 0.0) {
        return Err(SparseError::SingularDiagonal(i));
    }
    let bnorm = norm2(b);
    let mut x = x0.to_vec();
    let mut scratch = vec![0.0; n];
    let mut history = vec![relative_residual(a, b, &x, bnorm, &mut scratch)];
    let mut iterations = 0;
    while history[iterations] > tol && iterations < max_iter {
        for i in 0..n {
            let mut acc = b[i];
            for k in a.row_offsets[i]..a.row_offsets[i + 1] {
                let j = a.col_indices[k];
                if j != i {
                    acc -= a.values[k] * x[j];
                }
            }
            x[i] = acc / diag[i];
        }
        iterations += 1;
        history.push(relative_residual(a, b, &x, bnorm, &mut scratch));
    }
    let converged = history[iterations] <= tol;
    Ok(SolveReport {
        solution: x,
        iterations,
        residual_history: history,
        converged,
    })
}

/// Preconditioner applied on the right in BiCGStab.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Jacobi,
}

/// Right-preconditioned BiCGStab. Returns the report with `converged` set;
/// a breakdown (`rho` or `omega` vanishing before convergence) is an error
/// carrying the iterate reached so far.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
    precond: Preconditioner,
) -> Result<SolveReport, SparseError> {
    check_square(a, b, x0)?;
    let n = a.nrows;
    let inv_diag: Vec<f64> = match precond {
        Preconditioner::None => vec![1.0; n],
        Preconditioner::Jacobi => a
            .diagonal()
            .iter()
            .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect(),
    };
    let apply_precond = |v: &[f64], out: &mut [f64]| {
        for ((o, vi), di) in out.iter_mut().zip(v).zip(&inv_diag) {
            *o = vi * di;
        }
    };

    let bnorm = norm2(b);
    let mut x = x0.to_vec();
    let mut scratch = vec![0.0; n];
    let mut history = vec![relative_residual(a, b, &x, bnorm, &mut scratch)];
    let report = |x: Vec<f64>, history: Vec<f64>, iterations: usize, converged: bool| SolveReport {
        solution: x,
        iterations,
        residual_history: history,
        converged,
    };
    if history[0] <= tol {
        return Ok(report(x, history, 0, true));
    }

    let mut r: Vec<f64> = b.iter().zip(&scratch).map(|(bi, ax)| bi - ax).collect();
    let mut r_hat = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let (mut rho_old, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let scale = bnorm.max(f64::MIN_POSITIVE);

    for it in 1..=max_iter {
        let rho = dot(&r_hat, &r);
        if rho.abs() < 1e-300 * scale * scale {
            // restart with a fresh shadow residual before declaring breakdown
            if norm2(&r) > 0.0 && it > 1 {
                r_hat.copy_from_slice(&r);
                p.iter_mut().for_each(|pi| *pi = 0.0);
                v.iter_mut().for_each(|vi| *vi = 0.0);
                rho_old = 1.0;
                alpha = 1.0;
                omega = 1.0;
                continue;
            }
            return Err(SparseError::Breakdown(Box::new(report(x, history, it - 1, false))));
        }
        let beta = (rho / rho_old) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        apply_precond(&p, &mut p_hat);
        a.spmv_into(&p_hat, &mut v)?;
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            return Err(SparseError::Breakdown(Box::new(report(x, history, it - 1, false))));
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) / scale <= tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            let res = relative_residual(a, b, &x, bnorm, &mut scratch);
            history.push(res);
            if res <= tol {
                return Ok(report(x, history, it, true));
            }
            // recursive residual drifted from the true one: restart
            for i in 0..n {
                r[i] = b[i] - scratch[i];
            }
            r_hat.copy_from_slice(&r);
            p.iter_mut().for_each(|pi| *pi = 0.0);
            v.iter_mut().for_each(|vi| *vi = 0.0);
            rho_old = 1.0;
            alpha = 1.0;
            omega = 1.0;
            continue;
        }
        apply_precond(&s, &mut s_hat);
        a.spmv_into(&s_hat, &mut t)?;
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(SparseError::Breakdown(Box::new(report(x, history, it - 1, false))));
        }
        omega = dot(&t, &s) / tt;
        if omega == 0.0 {
            return Err(SparseError::Breakdown(Box::new(report(x, history, it - 1, false))));
        }
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        rho_old = rho;
        let res = relative_residual(a, b, &x, bnorm, &mut scratch);
        history.push(res);
        if !res.is_finite() {
            return Err(SparseError::Breakdown(Box::new(report(x, history, it, false))));
        }
        if res <= tol {
            return Ok(report(x, history, it, true));
        }
    }
    let iterations = history.len() - 1;
    Ok(report(x, history, iterations, false))
}

/// LU factorization with partial pivoting of a banded matrix, for systems
/// where the iterative solvers fail (indefinite or badly scaled diagonals).
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    /// stored columns per row: `2 * lower + upper + 1`
    width: usize,
    /// row `i` holds columns `i - lower ..= i + upper + lower`
    band: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self, SparseError> {
        if a.nrows != a.ncols {
            return Err(SparseError::Dimension(format!("banded LU of a {}x{} matrix", a.nrows, a.ncols)));
        }
        let n = a.nrows;
        let (mut lower, mut upper) = (0usize, 0usize);
        for i in 0..n {
            for (j, _) in a.row(i) {
                if j < i {
                    lower = lower.max(i - j);
                } else {
                    upper = upper.max(j - i);
                }
            }
        }
        let width = 2 * lower + upper + 1;
        let mut lu = Self {
            n,
            lower,
            width,
            band: vec![0.0; n * width],
            pivots: vec![0; n],
        };
        for i in 0..n {
            for (j, v) in a.row(i) {
                *lu.at_mut(i, j) = v;
            }
        }
        let reach = lower + upper;
        for k in 0..n {
            let last_row = (k + lower).min(n - 1);
            let last_col = (k + reach).min(n - 1);
            let mut p = k;
            for r in k + 1..=last_row {
                if lu.at(r, k).abs() > lu.at(p, k).abs() {
                    p = r;
                }
            }
            lu.pivots[k] = p;
            if lu.at(p, k) == 0.0 {
                return Err(SparseError::SingularPivot(k));
            }
            if p != k {
                for c in k..=last_col {
                    let tmp = lu.at(k, c);
                    *lu.at_mut(k, c) = lu.at(p, c);
                    *lu.at_mut(p, c) = tmp;
                }
            }
            let pivot = lu.at(k, k);
            let span = last_col - k;
            let pivot_start = lu.index(k, k + 1);
            for r in k + 1..=last_row {
                let l = lu.at(r, k) / pivot;
                *lu.at_mut(r, k) = l;
                if l != 0.0 {
                    let row_start = lu.index(r, k + 1);
                    let (head, tail) = lu.band.split_at_mut(row_start);
                    let pivot_row = &head[pivot_start..pivot_start + span];
                    for (x, u) in tail[..span].iter_mut().zip(pivot_row) {
                        *x -= l * u;
                    }
                }
            }
        }
        Ok(lu)
    }

    fn index(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.lower - i)
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[self.index(i, j)]
    }

    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.index(i, j);
        &mut self.band[k]
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SparseError> {
        if b.len() != self.n {
            return Err(SparseError::Dimension(format!("rhs of length {} for order {}", b.len(), self.n)));
        }
        let n = self.n;
        let reach = self.width - 1 - self.lower;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            let xk = x[k];
            for r in k + 1..=(k + self.lower).min(n - 1) {
                x[r] -= self.at(r, k) * xk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = x[k];
            for c in k + 1..=(k + reach).min(n - 1) {
                acc -= self.at(k, c) * x[c];
            }
            x[k] = acc / self.at(k, k);
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(rng: &mut ChaCha8Rng, n: usize, m: usize, density: f64) -> CsrMatrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        if rng.random::<f64>() < density {
                            rng.random_range(-1.0..1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        CsrMatrix::from_dense(&rows)
    }

    fn dense_matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| {
                let mut acc = 0.0;
                for j in 0..row.len() {
                    acc += row[j] * x[j];
                }
                acc
            })
            .collect()
    }

    #[test]
    fn triplets_are_merged_and_sorted() {
        let a = CsrMatrix::from_triplets(2, 3, &[(1, 2, 1.0), (0, 1, 2.0), (1, 0, 3.0), (1, 2, 4.0)])
            .unwrap();
        assert_eq!(a.row_offsets(), &[0, 1, 3]);
        assert_eq!(a.col_indices(), &[1, 0, 2]);
        assert_eq!(a.values(), &[2.0, 3.0, 5.0]);
        assert_eq!(a.nnz(), 3);
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn spmv_small_cases() {
        let x = vec![1.0, -2.0, 3.5];
        assert_eq!(CsrMatrix::identity(3).spmv(&x).unwrap(), x);
        let a = CsrMatrix::from_dense(&[vec![2.0, 0.0], vec![0.0, 3.0]]);
        assert_eq!(a.spmv(&[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
        let n = CsrMatrix::from_dense(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(n.spmv_transpose(&[1.0, 0.0]).unwrap(), vec![0.0, 1.0]);
        assert!(a.spmv(&[1.0]).is_err());
        assert!(a.spmv_transpose(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn spmv_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_sparse(&mut rng, 8, 8, 0.5);
        let dense = a.to_dense();
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = a.spmv(&x).unwrap();
        let y_ref = dense_matvec(&dense, &x);
        let scale = norm2(&y_ref);
        for (p, q) in y.iter().zip(&y_ref) {
            assert!((p - q).abs() <= 1e-14 * scale);
        }
        let dense_t: Vec<Vec<f64>> = (0..8).map(|j| (0..8).map(|i| dense[i][j]).collect()).collect();
        let yt = a.spmv_transpose(&x).unwrap();
        let yt_ref = dense_matvec(&dense_t, &x);
        for (p, q) in yt.iter().zip(&yt_ref) {
            assert!((p - q).abs() <= 1e-14 * norm2(&yt_ref));
        }
        assert_eq!(a.transpose().to_dense(), dense_t);
    }

    #[test]
    fn symmetric_transpose_product_agrees() {
        let a = CsrMatrix::from_dense(&[vec![2.0, 1.0, 0.0], vec![1.0, 3.0, -1.0], vec![0.0, -1.0, 4.0]]);
        let x = [0.3, -0.2, 0.9];
        assert_eq!(a.spmv(&x).unwrap(), a.spmv_transpose(&x).unwrap());
    }

    proptest! {
        #[test]
        fn adjoint_identity(seed in 0u64..1000, n in 1usize..12, m in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_sparse(&mut rng, n, m, 0.4);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = dot(&a.spmv_transpose(&x).unwrap(), &y);
            let rhs = dot(&x, &a.spmv(&y).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn gauss_seidel_identity_and_warm_start() {
        let a = CsrMatrix::identity(4);
        let b = [1.0, 2.0, 3.0, 4.0];
        let rep = gauss_seidel(&a, &b, &[0.0; 4], 1e-12, 10).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        let rep = gauss_seidel(&a, &b, &b, 1e-12, 10).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.residual_history[0] <= 1e-12);
    }

    #[test]
    fn gauss_seidel_two_by_two() {
        let a = CsrMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let rep = gauss_seidel(&a, &[3.0, 3.0], &[0.0, 0.0], 1e-12, 200).unwrap();
        assert!(rep.converged);
        // direct solve: Cramer's rule gives (1, 1)
        assert!((rep.solution[0] - 1.0).abs() < 1e-11 && (rep.solution[1] - 1.0).abs() < 1e-11);
        for w in rep.residual_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn gauss_seidel_rejects_zero_diagonal() {
        let a = CsrMatrix::from_dense(&[vec![0.0, 1.0], vec![1.0, 2.0]]);
        assert_eq!(
            gauss_seidel(&a, &[1.0, 1.0], &[0.0, 0.0], 1e-8, 10),
            Err(SparseError::SingularDiagonal(0))
        );
    }

    #[test]
    fn gauss_seidel_energy_error_is_monotone_for_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let n = 6;
            let g: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            // G^T G + I is SPD
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            (0..n).map(|k| g[k][i] * g[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 }
                        })
                        .collect()
                })
                .collect();
            let a = CsrMatrix::from_dense(&rows);
            let x_star: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = a.spmv(&x_star).unwrap();
            let mut x = vec![0.0; n];
            let mut prev = f64::INFINITY;
            let floor = 1e-24 * a.quadratic_form(&x_star).unwrap();
            for _ in 0..30 {
                let rep = gauss_seidel(&a, &b, &x, 0.0, 1).unwrap();
                x = rep.solution;
                let e: Vec<f64> = x.iter().zip(&x_star).map(|(p, q)| p - q).collect();
                let energy = a.quadratic_form(&e).unwrap();
                assert!(energy <= prev * (1.0 + 1e-12) + floor);
                prev = energy;
            }
        }
    }

    #[test]
    fn bicgstab_diagonal() {
        let a = CsrMatrix::from_dense(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0, 0.0],
            vec![0.0, 0.0, 3.0, 0.0],
            vec![0.0, 0.0, 0.0, 4.0],
        ]);
        let b = [1.0, 1.0, 1.0, 1.0];
        for pc in [Preconditioner::None, Preconditioner::Jacobi] {
            let rep = bicgstab(&a, &b, &[0.0; 4], 1e-14, 50, pc).unwrap();
            assert!(rep.converged);
            for (i, xi) in rep.solution.iter().enumerate() {
                assert!((xi - 1.0 / (i + 1) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bicgstab_nonsymmetric_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 30;
        let mut a = random_sparse(&mut rng, n, n, 0.2).to_dense();
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += 6.0;
        }
        let a = CsrMatrix::from_dense(&a);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rep = bicgstab(&a, &b, &vec![0.0; n], 1e-12, 500, Preconditioner::Jacobi).unwrap();
        assert!(rep.converged);
        let r: Vec<f64> = a.spmv(&rep.solution).unwrap().iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm2(&r) / norm2(&b) <= 1e-12);
        assert_eq!(rep.residual_history.len(), rep.iterations + 1);
    }

    #[test]
    fn zero_rhs_converges_immediately() {
        let a = CsrMatrix::identity(3);
        let rep = bicgstab(&a, &[0.0; 3], &[0.0; 3], 1e-12, 10, Preconditioner::Jacobi).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn banded_lu_matches_dense_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n: usize = 40;
        let mut trip = Vec::new();
        for i in 0..n {
            for j in i.saturating_sub(3)..(i + 5).min(n) {
                trip.push((i, j, rng.random_range(-1.0..1.0)));
            }
        }
        // a zero diagonal forces pivoting
        trip.retain(|&(i, j, _)| !(i == j && i % 7 == 0));
        let a = CsrMatrix::from_triplets(n, n, &trip).unwrap();
        let x_star: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.spmv(&x_star).unwrap();
        let x = BandedLu::factor(&a).unwrap().solve(&b).unwrap();
        for (p, q) in x.iter().zip(&x_star) {
            assert!((p - q).abs() < 1e-9, "{p} vs {q}");
        }
        let singular = CsrMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(BandedLu::factor(&singular), Err(SparseError::SingularPivot(1))));
    }
}
