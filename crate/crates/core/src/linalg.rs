//! Dense complex matrices and LU factorization with partial pivoting.

use num_complex::Complex64;
use std::ops::{Index, IndexMut};

use crate::error::LinalgError;

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(ComplexMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Mutable row-major blocks of `block_rows` rows each.
    pub fn row_blocks_mut(&mut self, block_rows: usize) -> std::slice::ChunksMut<'_, Complex64> {
        self.data.chunks_mut(block_rows * self.cols)
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, a) in sums.iter_mut().zip(self.row(i)) {
                *s += a.norm();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `PA = LU` with unit-diagonal `L` stored below the diagonal of `lu`.
#[derive(Debug, Clone)]
pub struct LuFactorization {
    lu: ComplexMatrix,
    perm: Vec<usize>,
    norm_one: f64,
}

impl LuFactorization {
    pub fn factor(a: &ComplexMatrix) -> Result<Self, LinalgError> {
        if a.rows != a.cols {
            return Err(LinalgError::Dimension(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let norm_one = a.norm_one();
        // Column-relative: the scattering systems scale columns by wildly
        // different amounts.
        let mut col_max = vec![0.0_f64; n];
        for i in 0..n {
            for (c, v) in col_max.iter_mut().zip(a.row(i)) {
                *c = c.max(v.norm());
            }
        }
        let tol = f64::EPSILON * n.max(1) as f64;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();

        for k in 0..n {
            let (pivot_row, pivot_mag) =
                (k..n)
                    .map(|i| (i, lu[(i, k)].norm()))
                    .fold(
                        (k, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if !(pivot_mag > col_max[k] * tol) {
                return Err(LinalgError::Singular {
                    pivot: pivot_mag.max(0.0),
                    column: k,
                });
            }
            if pivot_row != k {
                perm.swap(k, pivot_row);
                let (head, tail) = lu.data.split_at_mut(pivot_row * n);
                head[k * n..(k + 1) * n].swap_with_slice(&mut tail[..n]);
            }
            let (upper, lower) = lu.data.split_at_mut((k + 1) * n);
            let pivot_slice = &upper[k * n..(k + 1) * n];
            let inv_pivot = pivot_slice[k].inv();
            for row in lower.chunks_mut(n) {
                let l = row[k] * inv_pivot;
                row[k] = l;
                if l.re == 0.0 && l.im == 0.0 {
                    continue;
                }
                for (r, p) in row[k + 1..].iter_mut().zip(&pivot_slice[k + 1..]) {
                    *r -= l * p;
                }
            }
        }
        Ok(LuFactorization { lu, perm, norm_one })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    /// Smallest pivot magnitude on the diagonal of `U`.
    pub fn min_pivot(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.lu[(i, i)].norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let s: Complex64 = row[..i].iter().zip(&x[..i]).map(|(l, v)| l * v).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s: Complex64 = row[i + 1..]
                .iter()
                .zip(&x[i + 1..])
                .map(|(u, v)| u * v)
                .sum();
            x[i] = (x[i] - s) / row[i];
        }
        x
    }

    /// Solve `A^H x = b`.
    pub fn solve_adjoint(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        // U^H z = b, forward
        let mut z = b.to_vec();
        for i in 0..n {
            let d = self.lu[(i, i)].conj();
            z[i] /= d;
            let zi = z[i];
            let row = self.lu.row(i);
            for (zk, u) in z[i + 1..].iter_mut().zip(&row[i + 1..]) {
                *zk -= u.conj() * zi;
            }
        }
        // L^H w = z, backward
        for i in (0..n).rev() {
            let wi = z[i];
            let row = self.lu.row(i);
            for (zk, l) in z[..i].iter_mut().zip(&row[..i]) {
                *zk -= l.conj() * wi;
            }
        }
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }

    /// 1-norm condition number estimate (Hager's method).
    pub fn condition_estimate(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 0.0;
        }
        let mut x = vec![Complex64::new(1.0 / n as f64, 0.0); n];
        let mut estimate = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            estimate = y.iter().map(|v| v.norm()).sum::<f64>();
            let sign: Vec<Complex64> = y
                .iter()
                .map(|v| {
                    let m = v.norm();
                    if m > 0.0 {
                        v / m
                    } else {
                        Complex64::new(1.0, 0.0)
                    }
                })
                .collect();
            let z = self.solve_adjoint(&sign);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.norm()))
                .fold((0, -1.0), |b, c| if c.1 > b.1 { c } else { b });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
            if zmax <= ztx {
                break;
            }
            x = vec![Complex64::new(0.0, 0.0); n];
            x[jmax] = Complex64::new(1.0, 0.0);
        }
        estimate * self.norm_one
    }
}

fn relative_residual(a: &ComplexMatrix, x: &[Complex64], b: &[Complex64]) -> (Vec<Complex64>, f64) {
    let ax = a.mul_vec(x);
    let r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let rn = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let bn = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    (r, if bn > 0.0 { rn / bn } else { rn })
}

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub x: Vec<Complex64>,
    /// `||b - Ax|| / ||b||` after any refinement.
    pub relative_residual: f64,
    pub condition_estimate: f64,
    pub refined: bool,
}

/// Relative residual above which one step of iterative refinement runs.
pub const REFINE_THRESHOLD: f64 = 1e-10;

/// Solve `Ax = b` by LU with partial pivoting, refining once if the residual
/// exceeds [`REFINE_THRESHOLD`].
pub fn solve_dense(a: &ComplexMatrix, b: &[Complex64]) -> Result<LinearSolution, LinalgError> {
    if b.len() != a.rows {
        return Err(LinalgError::Dimension(format!(
            "rhs of length {} for a {}-row matrix",
            b.len(),
            a.rows
        )));
    }
    let lu = LuFactorization::factor(a)?;
    let mut x = lu.solve(b);
    let (r, mut res) = relative_residual(a, &x, b);
    let mut refined = false;
    if res > REFINE_THRESHOLD {
        let dx = lu.solve(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        res = relative_residual(a, &x, b).1;
        refined = true;
    }
    Ok(LinearSolution {
        x,
        relative_residual: res,
        condition_estimate: lu.condition_estimate(),
        refined,
    })
}
