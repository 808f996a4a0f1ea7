use crate::real::Real;
use crate::tensor::{scoped, Tensor};

const EPS: f64 = 1e-5;

/// Per-row layer normalization with learned gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

pub struct LayerNormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Tensor::filled(&[dim], T::one()),
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gain: Tensor::zeros(&[dim]),
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    pub fn forward(&self, x: &[T], rows: usize) -> (Vec<T>, LayerNormCache<T>) {
        let d = self.dim();
        let inv_d = T::one() / T::of_usize(d);
        let eps = T::lit(EPS);
        let mut y = vec![T::zero(); rows * d];
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = (var + eps).sqrt().recip();
            rstd.push(rs);
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                y[r * d + j] = h * self.gain.data[j] + self.bias.data[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache<T>,
        dy: &[T],
        rows: usize,
        grad: &mut LayerNorm<T>,
    ) -> Vec<T> {
        let d = self.dim();
        let inv_d = T::one() / T::of_usize(d);
        let mut dx = vec![T::zero(); rows * d];
        let mut dxhat = vec![T::zero(); d];
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let g = &dy[r * d..(r + 1) * d];
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for j in 0..d {
                grad.gain.data[j] += g[j] * xh[j];
                grad.bias.data[j] += g[j];
                dxhat[j] = g[j] * self.gain.data[j];
                sum_dxhat += dxhat[j];
                sum_dxhat_xhat += dxhat[j] * xh[j];
            }
            let rs = cache.rstd[r];
            for j in 0..d {
                dx[r * d + j] =
                    rs * (dxhat[j] - sum_dxhat * inv_d - xh[j] * sum_dxhat_xhat * inv_d);
            }
        }
        dx
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((scoped(prefix, "gain"), &self.gain));
        out.push((scoped(prefix, "bias"), &self.bias));
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((scoped(prefix, "gain"), &mut self.gain));
        out.push((scoped(prefix, "bias"), &mut self.bias));
    }
}
