use rand::Rng;

use crate::linalg::{gemm, View, ViewMut};
use crate::real::Real;
use crate::tensor::{scoped, Tensor};

/// Affine map `y = x·W + b` over the rows of `x`; `W` is stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, std: f64, rng: &mut R) -> Self {
        Self {
            w: Tensor::randn(&[input, output], std, rng),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Tensor::zeros(&[input, output]),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        let (din, dout) = (self.input_dim(), self.output_dim());
        let mut y = Vec::with_capacity(rows * dout);
        for _ in 0..rows {
            y.extend_from_slice(&self.b.data);
        }
        gemm(
            T::one(),
            View::new(x, rows, din),
            View::new(&self.w.data, din, dout),
            T::one(),
            ViewMut::new(&mut y, rows, dout),
        );
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[T], dy: &[T], rows: usize, grad: &mut Linear<T>) -> Vec<T> {
        self.accumulate(x, dy, rows, grad);
        self.input_grad(dy, rows)
    }

    pub fn accumulate(&self, x: &[T], dy: &[T], rows: usize, grad: &mut Linear<T>) {
        let (din, dout) = (self.input_dim(), self.output_dim());
        gemm(
            T::one(),
            View::new(x, rows, din).t(),
            View::new(dy, rows, dout),
            T::one(),
            ViewMut::new(&mut grad.w.data, din, dout),
        );
        for r in 0..rows {
            for (g, &d) in grad.b.data.iter_mut().zip(&dy[r * dout..(r + 1) * dout]) {
                *g += d;
            }
        }
    }

    pub fn input_grad(&self, dy: &[T], rows: usize) -> Vec<T> {
        let (din, dout) = (self.input_dim(), self.output_dim());
        let mut dx = vec![T::zero(); rows * din];
        gemm(
            T::one(),
            View::new(dy, rows, dout),
            View::new(&self.w.data, din, dout).t(),
            T::zero(),
            ViewMut::new(&mut dx, rows, din),
        );
        dx
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((scoped(prefix, "w"), &self.w));
        out.push((scoped(prefix, "b"), &self.b));
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((scoped(prefix, "w"), &mut self.w));
        out.push((scoped(prefix, "b"), &mut self.b));
    }
}
