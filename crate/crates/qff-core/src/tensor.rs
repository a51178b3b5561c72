//! Dense row-major matrices and the parameter store.
//!
//! Everything that flows through the tape is a 2-D tensor (scalars are 1x1,
//! batches are `rows x width`). Learnable state lives in [`ParamTensor`]s
//! inside a [`Params`] store; higher-rank objects such as feature banks keep a
//! logical shape but are stored flat.

use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{QffError, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(QffError::Contract(format!(
                "tensor data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: F) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut F {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn view(&self) -> ArrayView2<'_, F> {
        ArrayView2::from_shape((self.rows, self.cols), &self.data).expect("consistent shape")
    }

    pub fn view_mut(&mut self) -> ArrayViewMut2<'_, F> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut self.data).expect("consistent shape")
    }

    /// `self @ other`, gemm-backed.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        if self.cols != other.rows {
            return Err(QffError::shape("matmul", &self.shape(), &other.shape()));
        }
        Ok(from_array(self.view().dot(&other.view())))
    }

    /// `self @ other.T`.
    pub fn matmul_nt(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        if self.cols != other.cols {
            return Err(QffError::shape("matmul_nt", &self.shape(), &other.shape()));
        }
        Ok(from_array(self.view().dot(&other.view().reversed_axes())))
    }

    /// `self.T @ other`.
    pub fn matmul_tn(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        if self.rows != other.rows {
            return Err(QffError::shape("matmul_tn", &self.shape(), &other.shape()));
        }
        Ok(from_array(self.view().reversed_axes().dot(&other.view())))
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<F>, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        if self.shape() != other.shape() {
            return Err(QffError::shape("zip_map", &self.shape(), &other.shape()));
        }
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor<F>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Copy an ndarray matrix into a row-major tensor. `dot` may hand back a
/// column-major buffer (e.g. for outer-product shapes), so the element order
/// must come from logical iteration, not the raw buffer.
fn from_array<F: Scalar>(arr: ndarray::Array2<F>) -> Tensor<F> {
    let (rows, cols) = arr.dim();
    if arr.is_standard_layout() {
        Tensor {
            rows,
            cols,
            data: arr.into_raw_vec_and_offset().0,
        }
    } else {
        Tensor {
            rows,
            cols,
            data: arr.iter().copied().collect(),
        }
    }
}

/// Handle for a tensor inside a [`Params`] store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A learnable dense array and its gradient accumulator.
#[derive(Clone, Debug)]
pub struct ParamTensor<F> {
    pub name: String,
    /// Logical shape; the data is stored flat in row-major order.
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
}

impl<F: Scalar> ParamTensor<F> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Owner of all learnable tensors of a model.
#[derive(Clone, Debug, Default)]
pub struct Params<F> {
    items: Vec<ParamTensor<F>>,
}

impl<F: Scalar> Params<F> {
    pub fn new() -> Self {
        Params { items: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<F>) -> ParamId {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, value.len(), "param data does not match its shape");
        let id = ParamId(self.items.len());
        self.items.push(ParamTensor {
            name: name.into(),
            shape,
            grad: vec![F::zero(); value.len()],
            value,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.items.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor<F> {
        &self.items[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor<F> {
        &mut self.items[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[F] {
        &self.items[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.items[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[F] {
        &self.items[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.items[id.0].grad
    }

    /// Reset every gradient accumulator to zero; values are untouched.
    pub fn zero_grads(&mut self) {
        for p in &mut self.items {
            for g in &mut p.grad {
                *g = F::zero();
            }
        }
    }

    /// Total number of learnable scalars.
    pub fn count_scalars(&self) -> usize {
        self.items.iter().map(|p| p.value.len()).sum()
    }

    pub fn max_abs_grad(&self) -> f64 {
        self.items
            .iter()
            .flat_map(|p| p.grad.iter())
            .fold(0.0f64, |acc, g| acc.max(g.as_f64().abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.items
            .iter()
            .all(|p| p.value.iter().all(|v| v.is_finite()) && p.grad.iter().all(|g| g.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::from_vec(1, 2, vec![1.0f64, 2.0]).unwrap();
        let b = Tensor::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), [1, 1]);
        assert_eq!(c.at(0, 0), 11.0);
    }

    #[test]
    fn transposed_matmuls_keep_row_major_order() {
        // Outer-product shapes make ndarray's dot return a column-major
        // buffer; the copy back into Tensor must follow logical order.
        let g = Tensor::from_vec(2, 1, vec![10.0f64, 20.0]).unwrap();
        let w = Tensor::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let got = g.matmul_nt(&w).unwrap();
        assert_eq!(got.as_slice(), &[10.0, 20.0, 30.0, 20.0, 40.0, 60.0]);

        let a = Tensor::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(2, 1, vec![5.0, 6.0]).unwrap();
        let got = a.matmul_tn(&b).unwrap();
        assert_eq!(got.as_slice(), &[23.0, 34.0]);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let a = Tensor::<f64>::zeros(2, 3);
        let b = Tensor::<f64>::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "got: {msg}");
    }

    #[test]
    fn zero_grads_resets_only_grads() {
        let mut params = Params::new();
        let id = params.insert("w", vec![2], vec![1.0f64, 2.0]);
        params.grad_mut(id).copy_from_slice(&[5.0, 6.0]);
        params.zero_grads();
        assert_eq!(params.grad(id), &[0.0, 0.0]);
        assert_eq!(params.value(id), &[1.0, 2.0]);
    }
}
