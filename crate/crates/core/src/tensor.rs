//! Dense rank-4 tensors in `f64`.
//!
//! Everything the network touches is a [`Tensor4`] with axes
//! `(n, c, h, w)` — batch, channel, row, column — stored row-major with
//! `w` fastest. Reductions (`dot`, `sum`) run in flat storage order so
//! results are reproducible bit for bit across runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a rank-4 tensor: `(n, c, h, w)`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    /// Total element count, failing on overflow rather than wrapping.
    pub fn len(&self) -> Result<usize> {
        self.n
            .checked_mul(self.c)
            .and_then(|p| p.checked_mul(self.h))
            .and_then(|p| p.checked_mul(self.w))
            .ok_or_else(|| Error::Size(format!("shape {self:?} overflows usize")))
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Row-major rank-4 tensor of `f64`, `w` fastest.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor4 {
    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Shape4) -> Result<Self> {
        let len = shape.len()?;
        Ok(Tensor4 {
            shape,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor from existing data; the length must match the shape.
    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        let len = shape.len()?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat index of `(n, c, h, w)`. Debug-asserts bounds; the arithmetic
    /// cannot overflow because the shape's total length fit in `usize`.
    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(
            n < self.shape.n && c < self.shape.c && h < self.shape.h && w < self.shape.w,
            "index ({n}, {c}, {h}, {w}) out of bounds for {}",
            self.shape
        );
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Consumes the tensor, returning its storage.
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Applies `f` to every element in place.
    pub fn map_elementwise(&mut self, mut f: impl FnMut(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add: shape {} vs {}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor4 {
            shape: self.shape,
            data,
        })
    }

    /// Adds `scale * other` into `self` in place; shapes must match.
    pub fn add_scaled(&mut self, other: &Tensor4, scale: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add_scaled: shape {} vs {}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Multiplies every element by `scale` in place.
    pub fn scale(&mut self, scale: f64) {
        for v in &mut self.data {
            *v *= scale;
        }
    }

    /// Inner product in flat storage order (index 0 upward). The order is
    /// part of the contract: callers get the same rounding every run.
    pub fn dot(&self, other: &Tensor4) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "dot: shape {} vs {}",
                self.shape, other.shape
            )));
        }
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            acc += a * b;
        }
        Ok(acc)
    }

    /// Sum of all elements, in flat storage order.
    pub fn sum(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.data {
            acc += v;
        }
        acc
    }

    /// Largest element; `NaN` never wins. Empty tensors have no maximum.
    pub fn max(&self) -> Option<f64> {
        self.data
            .iter()
            .copied()
            .filter(|v| !v.is_nan())
            .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
