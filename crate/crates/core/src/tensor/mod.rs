//! Dense tensors and a define-by-run reverse-mode tape.
//!
//! Values are stored row-major in flat vectors. Differentiable computation
//! happens on a [`Tape`]: every op appends a node holding its output value
//! and a backward rule, and [`Tape::backward`] walks the nodes in exact
//! reverse order.

mod kernels;
mod ops;
mod tape;

pub use kernels::{broadcast_shape, gemm_nn, gemm_nt, gemm_tn};
pub use ops::{BinaryKind, UnaryKind};
pub use tape::{BackwardArgs, Function, Tape, Var};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// A dense real tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    pub requires_grad: bool,
    grad: Option<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| F::of(v)).collect())
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: F) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: F) -> Self {
        Self::full(Vec::new(), value)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<F>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape("set_grad", &self.shape, &[grad.len()]));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn item(&self) -> Result<F> {
        if self.data.len() != 1 {
            return Err(Error::contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type, e.g. an `f32` checkpoint loaded for `f64` checks.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::of(v.f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<F>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// A complex tensor stored as separate real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor<F> {
    shape: Vec<usize>,
    re: Vec<F>,
    im: Vec<F>,
}

impl<F: Scalar> ComplexTensor<F> {
    pub fn new(shape: impl Into<Vec<usize>>, re: Vec<F>, im: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        let n = numel(&shape);
        if re.len() != n || im.len() != n {
            return Err(Error::shape("complex tensor", &shape, &[re.len(), im.len()]));
        }
        Ok(ComplexTensor { shape, re, im })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        ComplexTensor {
            shape,
            re: vec![F::zero(); n],
            im: vec![F::zero(); n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn re(&self) -> &[F] {
        &self.re
    }

    pub fn im(&self) -> &[F] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [F] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [F] {
        &mut self.im
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<F>, Vec<F>) {
        (self.shape, self.re, self.im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert!(t.clone().reshape(vec![3, 2]).is_ok());
        assert!(t.reshape(vec![4]).is_err());
    }

    #[test]
    fn grad_shape_is_checked() {
        let mut t = Tensor::<f32>::zeros(vec![3]);
        assert!(t.set_grad(vec![0.0; 2]).is_err());
        t.set_grad(vec![1.0; 3]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn complex_planes_must_agree() {
        assert!(ComplexTensor::<f64>::new(vec![2], vec![0.0; 2], vec![0.0; 3]).is_err());
    }
}
