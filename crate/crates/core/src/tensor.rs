//! Dense row-major tensors.
//!
//! Storage is a flat `Vec<f64>` with the last index varying fastest, so
//! every matricization that splits the modes into a leading and a trailing
//! group is a reinterpretation of the same buffer.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(dims.to_vec(), data.to_vec())
    }

    /// Takes ownership of `data` without copying.
    pub fn from_vec(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = checked_numel(&dims)?;
        if data.len() != expected {
            return Err(Error::DimMismatch(format!(
                "shape {dims:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let n = checked_numel(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let n = checked_numel(dims)?;
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..n {
            data.push(f(&idx));
            for axis in (0..dims.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < dims[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndims(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major linear offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.dims.len() {
            return None;
        }
        let mut off = 0usize;
        for (&i, &d) in index.iter().zip(&self.dims) {
            if i >= d {
                return None;
            }
            off = off * d + i;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.data)
    }

    pub fn reshape(&self, new_dims: &[usize]) -> Result<Tensor> {
        let n = checked_numel(new_dims)?;
        if n != self.data.len() {
            return Err(Error::DimMismatch(format!(
                "cannot reshape {:?} ({} elements) into {new_dims:?} ({n} elements)",
                self.dims,
                self.data.len()
            )));
        }
        Ok(Tensor {
            dims: new_dims.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Matricization with the first `left_modes` modes as rows.
    pub fn unfold(&self, left_modes: usize) -> Result<Matrix> {
        if left_modes == 0 || left_modes >= self.dims.len() {
            return Err(Error::DimMismatch(format!(
                "unfold split {left_modes} outside 1..{} for shape {:?}",
                self.dims.len(),
                self.dims
            )));
        }
        let rows: usize = self.dims[..left_modes].iter().product();
        let cols: usize = self.dims[left_modes..].iter().product();
        Matrix::from_vec(rows, cols, self.data.clone())
    }
}

/// Sum-of-squares norm of a flat buffer.
pub(crate) fn frobenius(data: &[f64]) -> f64 {
    data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn checked_numel(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::EmptyShape);
    }
    let mut n = 1usize;
    for &d in dims {
        if d == 0 {
            return Err(Error::DimMismatch(format!(
                "zero-sized mode in shape {dims:?}"
            )));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::DimMismatch(format!("shape {dims:?} overflows usize")))?;
    }
    Ok(n)
}

/// Relative Frobenius distance `‖a − b‖ / ‖a‖` with `a` as the reference.
pub fn relative_error(reference: &Tensor, approx: &Tensor) -> Result<f64> {
    if reference.dims != approx.dims {
        return Err(Error::DimMismatch(format!(
            "relative error between {:?} and {:?}",
            reference.dims, approx.dims
        )));
    }
    let norm = reference.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::ZeroReference);
    }
    let diff = reference
        .data
        .iter()
        .zip(&approx.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_mismatch() {
        let t = Tensor::new(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(t.get(&[0, 0]), Some(1.0));
        assert_eq!(t.get(&[0, 1]), Some(0.0));
        assert_eq!(t.frobenius_norm(), 2f64.sqrt());
        assert!(matches!(
            Tensor::new(&[3], &[1.0, 2.0]),
            Err(Error::DimMismatch(_))
        ));
        assert!(matches!(Tensor::new(&[], &[]), Err(Error::EmptyShape)));
    }

    #[test]
    fn window_shape_for_1536_hidden() {
        let t = Tensor::from_vec(vec![10, 16, 16, 6], vec![0.5; 15360]).unwrap();
        assert_eq!(t.len(), 15360);
        assert_eq!(t.ndims(), 4);
    }

    #[test]
    fn zero_norm() {
        assert_eq!(Tensor::zeros(&[2, 2]).unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn norm_matches_nested_loop_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dims = [10, 16, 16, 6];
        let t = Tensor::from_fn(&dims, |_| rng.gen_range(-1.0..1.0)).unwrap();
        let mut acc = 0.0;
        for a in 0..10 {
            for b in 0..16 {
                for c in 0..16 {
                    for d in 0..6 {
                        let v = t.get(&[a, b, c, d]).unwrap();
                        acc += v * v;
                    }
                }
            }
        }
        let oracle = acc.sqrt();
        assert!((t.frobenius_norm() - oracle).abs() <= 1e-12 * oracle);
    }

    #[test]
    fn reshape_row_major() {
        let t = Tensor::new(&[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = t.reshape(&[2, 2]).unwrap();
        assert_eq!(m.get(&[0, 1]), Some(2.0));
        assert_eq!(m.get(&[1, 0]), Some(3.0));
        assert_eq!(m.reshape(&[4]).unwrap(), t);
        assert!(t.reshape(&[3]).is_err());

        let window = Tensor::from_vec(vec![10, 1536], (0..15360).map(f64::from).collect()).unwrap();
        let four = window.reshape(&[10, 16, 16, 6]).unwrap();
        assert_eq!(four.get(&[1, 0, 0, 0]), Some(1536.0));
        assert_eq!(four.get(&[0, 1, 0, 0]), Some(96.0));
    }

    #[test]
    fn unfold_shapes_and_entries() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64).unwrap();
        let m1 = t.unfold(1).unwrap();
        assert_eq!((m1.rows(), m1.cols()), (2, 12));
        let m2 = t.unfold(2).unwrap();
        assert_eq!((m2.rows(), m2.cols()), (6, 4));
        assert!(t.unfold(0).is_err());
        assert!(t.unfold(3).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let flat: Vec<f64> = (0..8).map(|_| rng.gen()).collect();
        let cube = Tensor::new(&[8], &flat).unwrap().reshape(&[2, 2, 2]).unwrap();
        let u = cube.unfold(1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(u.get(i, j * 2 + k), cube.get(&[i, j, k]).unwrap());
                }
            }
        }
    }

    #[test]
    fn relative_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Tensor::from_fn(&[3, 4], |_| rng.gen_range(-1.0..1.0)).unwrap();
        assert_eq!(relative_error(&a, &a).unwrap(), 0.0);
        let z = Tensor::zeros(&[3, 4]).unwrap();
        assert!((relative_error(&a, &z).unwrap() - 1.0).abs() < 1e-15);
        let b = Tensor::from_vec(vec![3, 4], a.data().iter().map(|x| x + 0.01 * x).collect()).unwrap();
        assert!((relative_error(&a, &b).unwrap() - 0.01).abs() < 1e-12);
        assert!(matches!(relative_error(&z, &a), Err(Error::ZeroReference)));
        let c = Tensor::zeros(&[4, 3]).unwrap();
        assert!(matches!(relative_error(&a, &c), Err(Error::DimMismatch(_))));
    }
}
