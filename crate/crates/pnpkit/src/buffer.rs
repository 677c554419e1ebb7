//! Flat, shape-tagged tensors of 64-bit reals.
//!
//! `ImageBuffer` is the universal carrier for images, measurements, duals,
//! and gradients. All reductions accumulate sequentially in flat index
//! order (lowest index first), so repeated calls on the same inputs are
//! bitwise identical across runs.

use crate::error::{PnpError, Result};

/// Maximum number of dimensions a buffer may have.
pub const MAX_NDIM: usize = 4;

/// Floor used in relative-residual denominators to avoid division by zero.
pub const EPS_DENOM: f64 = 1e-12;

/// A dense row-major tensor with 1 to 4 dimensions.
///
/// Invariants enforced on every construction path: the data length equals
/// the product of the extents, and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_NDIM {
        return Err(PnpError::InvalidArgument {
            name: "shape",
            reason: format!("expected 1..={} dims, got {:?}", MAX_NDIM, shape),
        });
    }
    if shape.iter().any(|&n| n == 0) {
        return Err(PnpError::InvalidArgument {
            name: "shape",
            reason: format!("zero extent in {:?}", shape),
        });
    }
    Ok(())
}

impl ImageBuffer {
    /// Builds a buffer, validating shape, length, and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(PnpError::InvalidArgument {
                name: "data",
                reason: format!("length {} does not match shape {:?}", data.len(), shape),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(PnpError::NonFinite {
                context: "ImageBuffer::new".into(),
            });
        }
        Ok(Self { shape, data })
    }

    /// All-zero buffer of the given shape.
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        })
    }

    /// Constant buffer of the given shape.
    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n: usize = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; n])
    }

    /// One-dimensional buffer from a plain vector.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
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

    /// Reinterprets the buffer with a new shape of equal total length.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    /// Applies `f` elementwise; the result is re-validated for finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        Self::new(self.shape.clone(), data)
    }

    fn check_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(PnpError::ShapeMismatch {
                context,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Inner product, accumulated in flat index order.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        let mut acc = 0.0;
        for i in 0..self.data.len() {
            acc += self.data[i] * other.data[i];
        }
        Ok(acc)
    }

    /// Euclidean norm, accumulated in flat index order.
    pub fn norm2(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.data {
            acc += v * v;
        }
        acc.sqrt()
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        let data: Vec<f64> = (0..self.data.len())
            .map(|i| self.data[i] + other.data[i])
            .collect();
        Self::new(self.shape.clone(), data)
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data: Vec<f64> = (0..self.data.len())
            .map(|i| self.data[i] - other.data[i])
            .collect();
        Self::new(self.shape.clone(), data)
    }

    /// Scalar multiple `a * self`.
    pub fn scale(&self, a: f64) -> Result<Self> {
        let data: Vec<f64> = self.data.iter().map(|&v| a * v).collect();
        Self::new(self.shape.clone(), data)
    }

    /// `a * x + y` in one fused pass.
    pub fn axpy(a: f64, x: &Self, y: &Self) -> Result<Self> {
        x.check_same_shape(y, "axpy")?;
        let data: Vec<f64> = (0..x.data.len())
            .map(|i| a * x.data[i] + y.data[i])
            .collect();
        Self::new(x.shape.clone(), data)
    }

    /// `a * x + b * y` in one fused pass.
    pub fn lincomb(a: f64, x: &Self, b: f64, y: &Self) -> Result<Self> {
        x.check_same_shape(y, "lincomb")?;
        let data: Vec<f64> = (0..x.data.len())
            .map(|i| a * x.data[i] + b * y.data[i])
            .collect();
        Self::new(x.shape.clone(), data)
    }

    /// Distance `‖self - other‖₂`.
    pub fn dist2(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other, "dist2")?;
        let mut acc = 0.0;
        for i in 0..self.data.len() {
            let d = self.data[i] - other.data[i];
            acc += d * d;
        }
        Ok(acc.sqrt())
    }

    /// Relative change `‖self - prev‖ / max(‖prev‖, EPS_DENOM)`.
    pub fn rel_change(&self, prev: &Self) -> Result<f64> {
        Ok(self.dist2(prev)? / prev.norm2().max(EPS_DENOM))
    }
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}
