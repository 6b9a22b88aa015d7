//! Dense row-major tensors and the reverse-mode tape built on them.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

use crate::{Error, Result};

mod gradcheck;
mod graph;
pub(crate) mod kernels;
pub(crate) mod ops;
mod optim;
mod param;

pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub(crate) use graph::{Backward, BackwardCtx};
pub use optim::{adamw_step, cosine_lr, AdamWConfig, OptimState};
pub use param::{ParamBuilder, ParamId, ParamStore, Parameter};

/// Element type tag, stored as one byte in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating point element usable in tensors: `f32` for training and
/// inference, `f64` for gradient checks.
pub trait Element:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one element from the start of `bytes`, which must hold at least
    /// `DTYPE.size_of()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 4];
        b.copy_from_slice(&bytes[..4]);
        f32::from_le_bytes(b)
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(b)
    }
}

/// Dense N-dimensional array in row-major order.
///
/// Image-like tensors are laid out `[H, W, C]`. A rank-0 tensor holds one
/// scalar.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview = &self.data[..self.data.len().min(8)];
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if let Some(axis) = shape.iter().position(|&e| e == 0) {
            return Err(Error::shape("tensor", alloc::format!("axis {axis} has zero extent in {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                alloc::format!("shape {shape:?} needs {} elements, got {}", numel_of(shape), data.len()),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        Tensor { shape: shape.to_vec(), data: vec![value; numel_of(shape)] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        Tensor { shape: shape.to_vec(), data: (0..numel_of(shape)).map(&mut f).collect() }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != self.data.len() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                alloc::format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &e)| {
            assert!(i < e, "index {index:?} out of bounds for {:?}", self.shape);
            acc * e + i
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}
