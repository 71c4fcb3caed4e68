//! Error-bounded tensor-train decomposition.
//!
//! A tensor of shape `(W, d1, …, dN)` is split into `N + 1` cores by `N`
//! successive truncated SVDs. The squared error budget `ε²‖T‖²` is divided
//! evenly across the `N` truncations; at each one the smallest rank whose
//! discarded singular-value energy fits the per-step budget is kept. Because
//! every stored core except the last has orthonormal columns, the truncation
//! errors are orthogonal and add up, so the relative reconstruction error of
//! the whole chain never exceeds `ε`.
//!
//! Cores are stored uniformly as 3-way arrays `(left_rank, mode, right_rank)`.
//! The first core has `left_rank = 1` (it is the `(W, r1)` matrix) and the
//! last has `right_rank = 1`; it absorbs the final `Σ Vᵀ` factor.

use crate::error::{Error, Result};
use crate::linalg::{thin_svd, Matrix};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TtCore {
    left: usize,
    mode: usize,
    right: usize,
    data: Vec<f64>,
}

impl TtCore {
    pub fn new(left: usize, mode: usize, right: usize, data: Vec<f64>) -> Result<Self> {
        if left == 0 || mode == 0 || right == 0 {
            return Err(Error::DimMismatch(format!(
                "core shape ({left}, {mode}, {right}) has a zero extent"
            )));
        }
        if data.len() != left * mode * right {
            return Err(Error::DimMismatch(format!(
                "core ({left}, {mode}, {right}) needs {} values, got {}",
                left * mode * right,
                data.len()
            )));
        }
        Ok(Self {
            left,
            mode,
            right,
            data,
        })
    }

    /// `(left_rank, mode, right_rank)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.left, self.mode, self.right)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[(a * self.mode + i) * self.right + b]
    }

    /// Unfolding `(left_rank * mode, right_rank)`; row-major so this is free.
    pub fn left_unfolding(&self) -> Matrix {
        Matrix::from_vec(self.left * self.mode, self.right, self.data.clone())
            .expect("core data length checked at construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtDecomposition {
    cores: Vec<TtCore>,
    ranks: Vec<usize>,
    epsilon: f64,
    source_norm: f64,
}

impl TtDecomposition {
    /// Wraps a hand-built core chain. The chain is treated as an exact
    /// representation: `epsilon` is 0 and `source_norm` is the norm of the
    /// tensor it reconstructs to.
    pub fn from_cores(cores: Vec<TtCore>) -> Result<Self> {
        check_chain(&cores)?;
        let ranks = cores[..cores.len() - 1].iter().map(|c| c.right).collect();
        let mut d = Self {
            cores,
            ranks,
            epsilon: 0.0,
            source_norm: 0.0,
        };
        d.source_norm = tt_reconstruct(&d)?.frobenius_norm();
        Ok(d)
    }

    pub fn cores(&self) -> &[TtCore] {
        &self.cores
    }

    /// `[r1, …, rN]`.
    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn source_norm(&self) -> f64 {
        self.source_norm
    }

    pub fn dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.mode).collect()
    }
}

fn check_chain(cores: &[TtCore]) -> Result<()> {
    if cores.len() < 2 {
        return Err(Error::RankMismatch(format!(
            "a TT chain needs at least two cores, got {}",
            cores.len()
        )));
    }
    if cores[0].left != 1 {
        return Err(Error::RankMismatch(format!(
            "first core has left rank {}, expected 1",
            cores[0].left
        )));
    }
    let last = cores.last().expect("non-empty");
    if last.right != 1 {
        return Err(Error::RankMismatch(format!(
            "last core has right rank {}, expected 1",
            last.right
        )));
    }
    for (k, pair) in cores.windows(2).enumerate() {
        if pair[0].right != pair[1].left {
            return Err(Error::RankMismatch(format!(
                "core {k} right rank {} differs from core {} left rank {}",
                pair[0].right,
                k + 1,
                pair[1].left
            )));
        }
    }
    Ok(())
}

pub fn validate_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_finite() && epsilon > 0.0 && epsilon <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(epsilon))
    }
}

/// Smallest `r >= 1` with `Σ_{i>r} σ_i² <= budget`.
///
/// Tail sums are accumulated from the smallest singular value upward.
pub fn select_rank(singular_values: &[f64], budget: f64) -> usize {
    let p = singular_values.len();
    let mut tail = 0.0;
    let mut rank = p.max(1);
    // Walk r = p-1, p-2, …, 1 while the tail that would be discarded fits.
    for r in (1..p).rev() {
        tail += singular_values[r] * singular_values[r];
        if tail <= budget {
            rank = r;
        } else {
            break;
        }
    }
    rank
}

/// Error-bounded TT-SVD of a tensor with at least two modes.
pub fn tt_decompose(t: &Tensor, epsilon: f64) -> Result<TtDecomposition> {
    validate_epsilon(epsilon)?;
    let dims = t.dims();
    if dims.len() < 2 {
        return Err(Error::DimMismatch(format!(
            "TT decomposition needs at least 2 modes, got shape {dims:?}"
        )));
    }
    let steps = dims.len() - 1;
    let norm = t.frobenius_norm();
    let norm_sq = norm * norm;

    if norm_sq == 0.0 {
        let cores = dims
            .iter()
            .map(|&d| TtCore::new(1, d, 1, vec![0.0; d]))
            .collect::<Result<Vec<_>>>()?;
        return Ok(TtDecomposition {
            cores,
            ranks: vec![1; steps],
            epsilon,
            source_norm: 0.0,
        });
    }

    let budget = epsilon * epsilon * norm_sq / steps as f64;
    let mut cores = Vec::with_capacity(dims.len());
    let mut ranks = Vec::with_capacity(steps);
    let mut left_rank = 1usize;
    let mut remainder = t.data().to_vec();

    for k in 0..steps {
        let rows = left_rank * dims[k];
        let cols: usize = dims[k + 1..].iter().product();
        let unfolding = Matrix::from_vec(rows, cols, remainder)?;
        let svd = thin_svd(&unfolding)?;
        let r = select_rank(&svd.singular_values, budget);

        let u = svd.u.leading_columns(r);
        cores.push(TtCore::new(left_rank, dims[k], r, u.into_data())?);

        let mut next = svd.vt.leading_rows(r).into_data();
        for (row, s) in next.chunks_exact_mut(cols).zip(&svd.singular_values) {
            row.iter_mut().for_each(|x| *x *= s);
        }
        remainder = next;
        ranks.push(r);
        left_rank = r;
    }
    cores.push(TtCore::new(left_rank, dims[steps], 1, remainder)?);

    Ok(TtDecomposition {
        cores,
        ranks,
        epsilon,
        source_norm: norm,
    })
}

/// Contracts the core chain back into a dense tensor.
pub fn tt_reconstruct(d: &TtDecomposition) -> Result<Tensor> {
    let cores = &d.cores;
    check_chain(cores)?;
    // acc is (prod of modes so far, current right rank), row-major.
    let first = &cores[0];
    let mut acc = Matrix::from_vec(first.mode, first.right, first.data.clone())?;
    for core in &cores[1..] {
        let core_mat = Matrix::from_vec(core.left, core.mode * core.right, core.data.clone())?;
        let prod = acc.matmul(&core_mat)?;
        acc = Matrix::from_vec(prod.rows() * core.mode, core.right, prod.into_data())?;
    }
    let dims: Vec<usize> = cores.iter().map(|c| c.mode).collect();
    Tensor::from_vec(dims, acc.into_data())
}
