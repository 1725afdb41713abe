//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The engine is define-by-run: every forward operation appends a node to a
//! [`Graph`], and [`Graph::backward`] walks the tape in reverse. Values are
//! generic over [`Real`] so training can run in `f32` while gradient
//! verification runs the identical code in `f64`.

mod adam;
mod gradcheck;
mod graph;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{close, finite_diff_gradient, worst_gap};
pub use graph::{Graph, OpKind, Var};

use std::fmt::Debug;

use crate::error::{Error, Result};

/// Floating-point element type for tensors.
///
/// `gemm` delegates to `matrixmultiply`, which is single-threaded and
/// bit-deterministic for a given input.
pub trait Real: num_traits::Float + Debug + Send + Sync + 'static {
    /// C := alpha * A(m,k) * B(k,n) + beta * C(m,n), arbitrary strides.
    ///
    /// # Safety
    /// Pointers must cover the strided extents, as in `matrixmultiply`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    /// True when every element is finite. Runs on every op output, so the
    /// impls reduce over exponent bits instead of branching per element
    /// (a value is non-finite exactly when its exponent field is all ones).
    fn slice_all_finite(data: &[Self]) -> bool;
}

impl Real for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn slice_all_finite(data: &[Self]) -> bool {
        const EXP: u32 = 0x7f80_0000;
        let mut acc = 0u32;
        for v in data {
            acc = acc.max(v.to_bits() & EXP);
        }
        acc != EXP
    }
}

impl Real for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn slice_all_finite(data: &[Self]) -> bool {
        const EXP: u64 = 0x7ff0_0000_0000_0000;
        let mut acc = 0u64;
        for v in data {
            acc = acc.max(v.to_bits() & EXP);
        }
        acc != EXP
    }
}

/// Convert an `f64` literal to the active element type.
pub(crate) fn c<F: Real>(x: f64) -> F {
    F::from(x).expect("literal representable in element type")
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Dense row-major tensor. Rank 0 (empty shape) is a scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero dimension in shape {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} expects {} values, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); numel(shape)],
        }
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    /// Rank-2 convenience constructor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn size(&self) -> usize {
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<F> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::contract(format!(
                "expected scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn all_finite(&self) -> bool {
        F::slice_all_finite(&self.data)
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| G::from(v).unwrap_or_else(|| G::nan()))
                .collect(),
        }
    }

    /// Uniform values in `[lo, hi)` drawn in index order.
    pub fn uniform<R: rand::Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| c(rng.gen_range(lo..hi)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_agreement_enforced() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn scalar_is_rank_zero() {
        let s = Tensor::scalar(4.5f64);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.size(), 1);
        assert_eq!(s.scalar_value().unwrap(), 4.5);
    }

    #[test]
    fn cast_round_trip() {
        let t = Tensor::<f64>::new(vec![3], vec![1.0, -2.5, 0.125]).unwrap();
        let back = t.cast::<f32>().cast::<f64>();
        assert_eq!(t, back);
    }
}
