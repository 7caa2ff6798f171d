//! Dense channels-major tensors and the numeric primitives the pipeline is
//! built from.
//!
//! Everything runs in `f32`. The element type is generic only so that test
//! oracles and the finite-difference checker can replay the exact same code
//! in `f64`.

pub mod hst;
mod ops;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

pub(crate) use ops::softmax_backward;
pub use ops::{
    backward_warp, backward_warp_adjoint, bilinear_resize, bilinear_resize_adjoint,
    concat_channels, conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_adjoint,
    pixel_shuffle, pixel_unshuffle, softmax_over_axis, ConvOptions, PadMode, ResizeScale,
};

/// Floating-point element type. Implemented for `f32` and `f64`.
pub trait Real:
    Float + FromPrimitive + Default + Debug + Sum + Send + Sync + std::ops::AddAssign + 'static
{
    /// `c = a · b + beta · c` for strided row/column-major operands.
    ///
    /// Operand extents are checked against the slice lengths before the
    /// unchecked kernel runs.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits")
    }
}

fn extent(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: (&[Self], isize, isize),
                b: (&[Self], isize, isize),
                beta: Self,
                c: (&mut [Self], isize, isize),
            ) {
                assert!(a.1 >= 0 && a.2 >= 0 && b.1 >= 0 && b.2 >= 0 && c.1 >= 0 && c.2 >= 0);
                assert!(extent(m, k, a.1, a.2) <= a.0.len(), "gemm: lhs out of bounds");
                assert!(extent(k, n, b.1, b.2) <= b.0.len(), "gemm: rhs out of bounds");
                assert!(extent(m, n, c.1, c.2) <= c.0.len(), "gemm: out out of bounds");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every addressed element lies inside the slices (checked above).
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.0.as_ptr(),
                        a.1,
                        a.2,
                        b.0.as_ptr(),
                        b.1,
                        b.2,
                        beta,
                        c.0.as_mut_ptr(),
                        c.1,
                        c.2,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Dense row-major tensor. Canonical image layout is `(C, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::invalid(
                "tensor",
                format!("expected a (C, H, W) tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(self, op: &str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op: op.to_string() })
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, "zip")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.len().max(1)).unwrap()
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn mean_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        self.same_shape(other, "mean_abs_diff")?;
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().to_f64().unwrap())
            .sum();
        Ok(total / self.len().max(1) as f64)
    }

    /// Channels `[start, end)` of a `(C, H, W)` tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        let (c, h, w) = self.chw()?;
        if start > end || end > c {
            return Err(Error::invalid(
                "slice_channels",
                format!("range {start}..{end} out of {c} channels"),
            ));
        }
        let plane = h * w;
        Ok(Tensor {
            shape: vec![end - start, h, w],
            data: self.data[start * plane..end * plane].to_vec(),
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

impl<T: Real> std::ops::Index<[usize; 3]> for Tensor<T> {
    type Output = T;

    fn index(&self, [c, y, x]: [usize; 3]) -> &T {
        let (h, w) = (self.shape[1], self.shape[2]);
        &self.data[(c * h + y) * w + x]
    }
}

/// Per-pixel displacement `(dx, dy)` in pixels, stored as a `(2, H, W)` tensor.
///
/// `backward_warp` samples the source at `p + flow(p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField(Tensor<f32>);

impl FlowField {
    pub fn new(t: Tensor<f32>) -> Result<Self> {
        match t.shape() {
            [2, _, _] => Ok(FlowField(t.ensure_finite("flow")?)),
            s => Err(Error::invalid(
                "flow",
                format!("flow must be (2, H, W), got {s:?}"),
            )),
        }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        FlowField(Tensor::zeros([2, h, w]))
    }

    pub fn uniform(h: usize, w: usize, dx: f32, dy: f32) -> Self {
        let mut t = Tensor::zeros([2, h, w]);
        let plane = h * w;
        t.data_mut()[..plane].fill(dx);
        t.data_mut()[plane..].fill(dy);
        FlowField(t)
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn dx(&self) -> &[f32] {
        &self.0.data()[..self.height() * self.width()]
    }

    pub fn dy(&self) -> &[f32] {
        &self.0.data()[self.height() * self.width()..]
    }

    pub fn as_tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn max_abs(&self) -> f32 {
        self.0.data().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.0.data().iter().all(|&v| v == 0.0)
    }
}
