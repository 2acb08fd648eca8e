//! Dense tensors, the primitive op catalog, and reverse-mode autodiff.
//!
//! Everything above this module is composition: kernels, blocks, and models
//! build their forward maps out of the primitives recorded here, and
//! [`Graph::backward`] replays the tape to produce gradients.

pub mod graph;
mod ops_conv;
mod ops_elem;
mod ops_matmul;
mod ops_misc;
mod ops_norm;
mod ops_reduce;
mod ops_resize;
mod ops_scan;
mod ops_shape;
mod par;
pub mod shape;

pub use graph::{Gradients, Graph, Var};

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use std::sync::atomic::{AtomicU64, Ordering};

/// Scalar element types supported by the tensor core. f32 is the training
/// and benchmark dtype; f64 backs oracles and gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            _ => Err(Error::CheckpointFormat(format!("unknown dtype code {code}"))),
        }
    }
}

pub trait Scalar:
    num_traits::Float
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn to_f64c(self) -> f64;
    fn erf(self) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    const BYTE_WIDTH: usize;

    /// Standard normal sample from `rng`, in this precision.
    fn sample_normal<R: Rng>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
    const BYTE_WIDTH: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64c(self) -> f64 {
        self as f64
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
    fn sample_normal<R: Rng>(rng: &mut R) -> Self {
        rng.sample::<f32, _>(StandardNormal)
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
    const BYTE_WIDTH: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64c(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
    fn sample_normal<R: Rng>(rng: &mut R) -> Self {
        rng.sample::<f64, _>(StandardNormal)
    }
}

/// Dense multi-dimensional array with contiguous row-major storage.
///
/// `product(shape) == data.len()` is enforced at every construction site.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape::numel(&shape) != data.len() {
            return Err(Error::shape(
                "tensor::new",
                format!("{} elements", shape::numel(&shape)),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape::numel(shape)],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape::numel(shape)],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape::numel(shape);
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    /// Shape-only placeholder left behind by [`crate::Graph::trim`]; reading
    /// its data is a bug and will panic on indexing.
    pub(crate) fn tombstone(shape: Vec<usize>) -> Self {
        Tensor { shape, data: Vec::new() }
    }

    /// N(0, std^2) initialization, deterministic for a given rng state.
    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let stdv = T::from_f64(std);
        Tensor::from_fn(shape, |_| T::sample_normal(rng) * stdv)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        shape::numel(&self.shape)
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

    pub fn at(&self, coords: &[usize]) -> T {
        self.data[shape::ravel(coords, &self.shape)]
    }

    pub fn set(&mut self, coords: &[usize], v: T) {
        let idx = shape::ravel(coords, &self.shape);
        self.data[idx] = v;
    }

    /// Scalar extraction; panics if the tensor is not 1-element.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape::numel(&shape) != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{} elements", self.data.len()),
                shape::fmt_shape(&shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lossy dtype conversion (used by oracles that cross-check f32 against f64).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64c())).collect(),
        }
    }
}

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// A named learnable leaf. The id ties gradients produced by a [`Graph`]
/// back to the owning parameter; the name is the checkpoint key.
#[derive(Debug, Clone)]
pub struct Param<T> {
    id: u64,
    name: String,
    pub value: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Param {
            id: NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed),
            name: name.into(),
            value,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Visitor over the learnable leaves of a module tree, in declaration order.
pub trait Parameterized<T: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.numel());
        n
    }
}
