//! Row-major dense matrices and a thin SVD.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration run on whichever
//! orientation of the input has fewer columns. Jacobi gives singular values
//! with high relative accuracy, which matters here because rank selection
//! compares tail sums of squared singular values against a tight budget.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimMismatch(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimMismatch("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        crate::tensor::frobenius(&self.data)
    }

    /// First `k` columns as a new matrix.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        let k = k.min(self.cols);
        let mut out = Matrix::zeros(self.rows, k);
        for r in 0..self.rows {
            out.data[r * k..(r + 1) * k].copy_from_slice(&self.data[r * self.cols..r * self.cols + k]);
        }
        out
    }

    /// First `k` rows as a new matrix.
    pub fn leading_rows(&self, k: usize) -> Matrix {
        let k = k.min(self.rows);
        Matrix {
            rows: k,
            cols: self.cols,
            data: self.data[..k * self.cols].to_vec(),
        }
    }
}

/// Thin singular value decomposition `m = u · diag(singular_values) · vt`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `(m, p)` with orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative, length `p = min(m, n)`.
    pub singular_values: Vec<f64>,
    /// `(p, n)` with orthonormal rows.
    pub vt: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows {
            for (c, s) in self.singular_values.iter().enumerate() {
                us.data[r * us.cols + c] *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformant")
    }
}

const MAX_SWEEPS: usize = 80;

/// Thin SVD of an arbitrary finite matrix.
///
/// Signs are fixed so that the largest-magnitude entry of each left singular
/// vector is non-negative (first such entry on ties), which makes the result
/// a deterministic function of the input.
pub fn thin_svd(m: &Matrix) -> Result<Svd> {
    if let Some(pos) = m.data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "non-finite entry at ({}, {}) of {}x{} input",
            pos / m.cols.max(1),
            pos % m.cols.max(1),
            m.rows,
            m.cols
        )));
    }
    if m.rows >= m.cols {
        let (u, s, v) = jacobi_tall(m)?;
        finish(u, s, v)
    } else {
        // A^T = U' S V'^T  =>  A = V' S U'^T
        let (u, s, v) = jacobi_tall(&m.transpose())?;
        finish(v, s, u)
    }
}

/// Column-list factors `(u, sigma, v)`.
type ColumnSvd = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>);

/// One-sided Jacobi on a matrix with `rows >= cols`.
///
/// Returns `(u, sigma, v)` as column lists, unsorted, with `u` columns for
/// zero singular values left as zero vectors.
fn jacobi_tall(a: &Matrix) -> Result<ColumnSvd> {
    let (m, n) = (a.rows, a.cols);
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| (0..m).map(|r| a.get(r, c)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON * (m as f64).sqrt().max(1.0);
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();
    // Columns below this squared norm are rounding residue and count as zero.
    let total: f64 = norms.iter().sum();
    let floor = f64::EPSILON * f64::EPSILON * total;
    let mut converged = n < 2;
    let mut worst = 0.0f64;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        worst = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= floor || beta <= floor {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                let scale = (alpha * beta).sqrt();
                let ratio = gamma.abs() / scale;
                worst = worst.max(ratio);
                if ratio <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
                norms[p] = dot(&cols[p], &cols[p]);
                norms[q] = dot(&cols[q], &cols[q]);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        let s: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
        let smax = s.iter().cloned().fold(0.0, f64::max);
        let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::NumericalFailure(format!(
            "Jacobi SVD of {m}x{n} matrix did not converge in {MAX_SWEEPS} sweeps \
             (max off-diagonal cosine {worst:.3e}, sigma range [{smin:.3e}, {smax:.3e}])"
        )));
    }

    let mut sigma = Vec::with_capacity(n);
    for col in cols.iter_mut() {
        if dot(col, col) <= floor {
            col.iter_mut().for_each(|x| *x = 0.0);
        }
        let s = dot(col, col).sqrt();
        sigma.push(s);
        if s > 0.0 {
            let inv = 1.0 / s;
            if inv.is_finite() {
                col.iter_mut().for_each(|x| *x *= inv);
            } else {
                col.iter_mut().for_each(|x| *x /= s);
            }
        }
    }
    Ok((cols, sigma, v))
}

fn finish(mut u: Vec<Vec<f64>>, sigma: Vec<f64>, mut v: Vec<Vec<f64>>) -> Result<Svd> {
    let p = sigma.len();
    let m = u.first().map_or(0, Vec::len);
    let n = v.first().map_or(0, Vec::len);

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let mut u_sorted: Vec<Vec<f64>> = order.iter().map(|&i| std::mem::take(&mut u[i])).collect();
    let mut v_sorted: Vec<Vec<f64>> = order.iter().map(|&i| std::mem::take(&mut v[i])).collect();
    let s_sorted: Vec<f64> = order.iter().map(|&i| sigma[i]).collect();

    complete_basis(&mut u_sorted, &s_sorted);

    for (uc, vc) in u_sorted.iter_mut().zip(v_sorted.iter_mut()) {
        let mut pivot = 0;
        for (i, x) in uc.iter().enumerate() {
            if x.abs() > uc[pivot].abs() {
                pivot = i;
            }
        }
        if uc[pivot] < 0.0 {
            uc.iter_mut().for_each(|x| *x = -*x);
            vc.iter_mut().for_each(|x| *x = -*x);
        }
    }

    let mut um = Matrix::zeros(m, p);
    for (c, col) in u_sorted.iter().enumerate() {
        for (r, &x) in col.iter().enumerate() {
            um.data[r * p + c] = x;
        }
    }
    let mut vt = Matrix::zeros(p, n);
    for (r, row) in v_sorted.iter().enumerate() {
        vt.data[r * n..(r + 1) * n].copy_from_slice(row);
    }
    Ok(Svd {
        u: um,
        singular_values: s_sorted,
        vt,
    })
}

/// Replaces left vectors belonging to zero singular values with unit vectors
/// orthogonal to every other column (Gram-Schmidt against the standard basis).
fn complete_basis(u: &mut [Vec<f64>], sigma: &[f64]) {
    let m = u.first().map_or(0, Vec::len);
    for j in 0..u.len() {
        if sigma[j] > 0.0 {
            continue;
        }
        let mut best: Option<Vec<f64>> = None;
        let mut best_norm = 0.0;
        for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            for _ in 0..2 {
                for (k, other) in u.iter().enumerate() {
                    if k == j || (sigma[k] == 0.0 && k > j) {
                        continue;
                    }
                    let d = dot(&cand, other);
                    cand.iter_mut().zip(other).for_each(|(c, o)| *c -= d * o);
                }
            }
            let nrm = dot(&cand, &cand).sqrt();
            if nrm > best_norm + 1e-12 {
                best_norm = nrm;
                best = Some(cand);
                if nrm > 0.5 {
                    break;
                }
            }
        }
        if let Some(mut b) = best {
            b.iter_mut().for_each(|x| *x /= best_norm);
            u[j] = b;
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}
