//! Dense rank-4 tensors in `(batch, height, width, channels)` layout.
//!
//! Matrices are carried as `(batch, 1, rows, cols)` so that reshaping a pooled
//! feature map into a `pixels x channels` matrix is a metadata change only.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{shape_err, Result};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Shape { n, h, w, c }
    }

    /// A batch of `n` matrices with `rows x cols` entries.
    pub const fn matrix(n: usize, rows: usize, cols: usize) -> Self {
        Shape {
            n,
            h: 1,
            w: rows,
            c: cols,
        }
    }

    pub const fn scalar() -> Self {
        Shape {
            n: 1,
            h: 1,
            w: 1,
            c: 1,
        }
    }

    /// Vector of length `len` stored along the channel axis.
    pub const fn vector(len: usize) -> Self {
        Shape {
            n: 1,
            h: 1,
            w: 1,
            c: len,
        }
    }

    pub const fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    pub const fn from_dims(d: [usize; 4]) -> Self {
        Shape {
            n: d[0],
            h: d[1],
            w: d[2],
            c: d[3],
        }
    }

    /// Pixels per batch item.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub const fn index(&self, n: usize, h: usize, w: usize, c: usize) -> usize {
        ((n * self.h + h) * self.w + w) * self.c + c
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.h, self.w, self.c)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(shape_err(
                "from_vec",
                alloc::format!("{} values for shape {}", data.len(), shape),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for h in 0..shape.h {
                for w in 0..shape.w {
                    for c in 0..shape.c {
                        data.push(f(n, h, w, c));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, h: usize, w: usize, c: usize) -> f64 {
        self.data[self.shape.index(n, h, w, c)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, h: usize, w: usize, c: usize, v: f64) {
        let i = self.shape.index(n, h, w, c);
        self.data[i] = v;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.len() != self.shape.len() {
            return Err(shape_err(
                "reshape",
                alloc::format!("cannot view {} as {}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }

    /// Channel slice `[n, h, w, ..]`.
    #[inline]
    pub fn pixel(&self, n: usize, h: usize, w: usize) -> &[f64] {
        let i = self.shape.index(n, h, w, 0);
        &self.data[i..i + self.shape.c]
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{} ", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "[{} values]", self.data.len())
        }
    }
}

pub(crate) fn check_same(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(shape_err(op, alloc::format!("{} vs {}", a, b)));
    }
    Ok(())
}
