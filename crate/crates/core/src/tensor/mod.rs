//! Dense rank-4 tensors and a reverse-mode gradient tape.
//!
//! Every tensor is laid out as `(batch, channels, height, width)` in
//! row-major order. Values live in [`Tensor`]; differentiable computation is
//! recorded on a [`Graph`] and addressed through [`Var`] handles.

pub mod gradcheck;
mod graph;
pub(crate) mod kernels;

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, SubAssign};

pub use gradcheck::{
    grad_check, grad_check_f64_oracle, grad_check_projected, GradCheckOptions, GradCheckReport,
    GradLeaf, Objective,
};
pub use graph::{Graph, Var};

use crate::error::{Error, Result};

/// Element type of a tensor. Implemented for `f32` (training) and `f64`
/// (gradient checking).
pub trait Float:
    num_traits::Float + Send + Sync + Default + Debug + Display + Sum + AddAssign + SubAssign + 'static
{
    /// Converts a literal, rounding to the nearest representable value.
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
    const NAME: &'static str;
}

impl Float for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    const NAME: &'static str = "f32";
}

impl Float for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    const NAME: &'static str = "f64";
}

/// Extents of a rank-4 tensor.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn from_dims(d: &[usize]) -> Result<Self> {
        match d {
            [n, c, h, w] => Ok(Shape::new(*n, *c, *h, *w)),
            _ => Err(Error::dim(format!("expected 4 extents, got {}", d.len()))),
        }
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub fn with_hw(self, h: usize, w: usize) -> Self {
        Shape { h, w, ..self }
    }
}

impl Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::dim(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f64(shape: Shape, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor::full(Shape::scalar(), value)
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(
            self.numel(),
            1,
            "item() on a tensor of shape {}",
            self.shape
        );
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// One sample of the batch as a `(1, c, h, w)` tensor.
    pub fn sample(&self, n: usize) -> Tensor<T> {
        let per = self.shape.c * self.shape.plane();
        Tensor {
            shape: Shape { n: 1, ..self.shape },
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Stacks equally shaped `(1, c, h, w)` tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::dim("cannot stack an empty list"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.c != first.shape.c
                || t.shape.h != first.shape.h
                || t.shape.w != first.shape.w
            {
                return Err(Error::dim(format!(
                    "stack: shape {} differs from {}",
                    t.shape, first.shape
                )));
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Tensor::new(Shape { n, ..first.shape }, data)
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor{} {:?}", self.shape, preview)?;
        if self.data.len() > 8 {
            write!(f, "...")?;
        }
        Ok(())
    }
}

/// Inverse of the sub-pixel rearrangement: `(n, c, r*h, r*w)` back to
/// `(n, c*r*r, h, w)`.
pub fn pixel_unshuffle<T: Float>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::dim(format!(
            "pixel_unshuffle: spatial extents {}x{} not divisible by {r}",
            s.h, s.w
        )));
    }
    let out_shape = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    let data = kernels::pixel_unshuffle(x.data(), out_shape, r);
    Tensor::new(out_shape, data)
}

/// Direct (tape-free) convolution; used as an independent reference.
pub fn conv2d_value<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let out = kernels::conv_out_shape(x.shape(), w.shape(), stride, padding)?;
    let data = kernels::conv2d_forward(
        x.data(),
        x.shape(),
        w.data(),
        w.shape(),
        b.map(|b| b.data()),
        stride,
        padding,
        out,
    );
    Tensor::new(out, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::<f32>::new(Shape::new(1, 2, 2, 2), vec![0.0; 7]).is_err());
        let t = Tensor::<f32>::new(Shape::new(1, 2, 2, 2), vec![0.0; 8]).unwrap();
        assert_eq!(t.numel(), 8);
    }

    #[test]
    fn stack_and_sample_roundtrip() {
        let a = Tensor::<f32>::full(Shape::new(1, 2, 3, 3), 1.0);
        let b = Tensor::<f32>::full(Shape::new(1, 2, 3, 3), 2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 3, 3));
        assert_eq!(s.sample(0), a);
        assert_eq!(s.sample(1), b);
    }

    #[test]
    fn unshuffle_rejects_indivisible() {
        let t = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 4));
        assert!(matches!(pixel_unshuffle(&t, 2), Err(Error::Dimension(_))));
    }
}
