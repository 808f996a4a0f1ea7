//! Single-image 2-D convolution (stride 1, "same" padding) via im2col, plus
//! 2× average pooling and nearest upsampling. Feature maps are channel-major:
//! `channels × (height·width)`.

use rand::Rng;

use crate::linalg::{gemm, View, ViewMut};
use crate::real::Real;
use crate::tensor::{scoped, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub kernel: usize,
    /// `out_channels × (in_channels·kernel²)`
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        std_scale: f64,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "odd kernels only");
        let fan_in = cin * kernel * kernel;
        Self {
            kernel,
            w: Tensor::randn(&[cout, fan_in], std_scale / (fan_in as f64).sqrt(), rng),
            b: Tensor::zeros(&[cout]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            kernel: self.kernel,
            w: self.w.zeros_like(),
            b: self.b.zeros_like(),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w.cols() / (self.kernel * self.kernel)
    }

    pub fn out_channels(&self) -> usize {
        self.w.rows()
    }

    fn im2col(&self, x: &[T], h: usize, w: usize) -> Vec<T> {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let cin = self.in_channels();
        let hw = h * w;
        let mut cols = vec![T::zero(); cin * k * k * hw];
        for c in 0..cin {
            let plane = &x[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let dst_row = &mut dst[y * w..(y + 1) * w];
                        for x0 in 0..w {
                            let sx = x0 as isize + dx;
                            if sx >= 0 && sx < w as isize {
                                dst_row[x0] = src_row[sx as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize) -> Vec<T> {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let cin = self.in_channels();
        let hw = h * w;
        let mut x = vec![T::zero(); cin * hw];
        for c in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for x0 in 0..w {
                            let sx = x0 as isize + dx;
                            if sx >= 0 && sx < w as isize {
                                x[c * hw + sy as usize * w + sx as usize] += src[y * w + x0];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns the output map and the column buffer needed by `backward`.
    pub fn forward(&self, x: &[T], h: usize, w: usize) -> (Vec<T>, Vec<T>) {
        let hw = h * w;
        let cout = self.out_channels();
        let fan_in = self.w.cols();
        let cols = if self.kernel == 1 {
            x.to_vec()
        } else {
            self.im2col(x, h, w)
        };
        let mut y = vec![T::zero(); cout * hw];
        for (o, chunk) in y.chunks_mut(hw).enumerate() {
            chunk.fill(self.b.data[o]);
        }
        gemm(
            T::one(),
            View::new(&self.w.data, cout, fan_in),
            View::new(&cols, fan_in, hw),
            T::one(),
            ViewMut::new(&mut y, cout, hw),
        );
        (y, cols)
    }

    pub fn backward(
        &self,
        cols: &[T],
        dy: &[T],
        h: usize,
        w: usize,
        grad: &mut Conv2d<T>,
    ) -> Vec<T> {
        self.accumulate(cols, dy, h, w, grad);
        let hw = h * w;
        let cout = self.out_channels();
        let fan_in = self.w.cols();
        let mut dcols = vec![T::zero(); fan_in * hw];
        gemm(
            T::one(),
            View::new(&self.w.data, cout, fan_in).t(),
            View::new(dy, cout, hw),
            T::zero(),
            ViewMut::new(&mut dcols, fan_in, hw),
        );
        if self.kernel == 1 {
            dcols
        } else {
            self.col2im(&dcols, h, w)
        }
    }

    /// Parameter gradients only; skips the input gradient.
    pub fn accumulate(&self, cols: &[T], dy: &[T], h: usize, w: usize, grad: &mut Conv2d<T>) {
        let hw = h * w;
        let cout = self.out_channels();
        let fan_in = self.w.cols();
        gemm(
            T::one(),
            View::new(dy, cout, hw),
            View::new(cols, fan_in, hw).t(),
            T::one(),
            ViewMut::new(&mut grad.w.data, cout, fan_in),
        );
        for (o, chunk) in dy.chunks(hw).enumerate() {
            grad.b.data[o] += chunk.iter().copied().sum::<T>();
        }
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

/// 2×2 mean pooling; `h` and `w` must be even.
pub fn avg_pool2<T: Real>(x: &[T], channels: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut y = vec![T::zero(); channels * oh * ow];
    for c in 0..channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let s = src[2 * i * w + 2 * j]
                    + src[2 * i * w + 2 * j + 1]
                    + src[(2 * i + 1) * w + 2 * j]
                    + src[(2 * i + 1) * w + 2 * j + 1];
                y[c * oh * ow + i * ow + j] = s * quarter;
            }
        }
    }
    y
}

pub fn avg_pool2_backward<T: Real>(dy: &[T], channels: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut dx = vec![T::zero(); channels * h * w];
    for c in 0..channels {
        for i in 0..h {
            for j in 0..w {
                dx[c * h * w + i * w + j] = dy[c * oh * ow + (i / 2) * ow + j / 2] * quarter;
            }
        }
    }
    dx
}

/// Nearest-neighbour 2× upsampling from `h × w`.
pub fn upsample2<T: Real>(x: &[T], channels: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = vec![T::zero(); channels * oh * ow];
    for c in 0..channels {
        for i in 0..oh {
            for j in 0..ow {
                y[c * oh * ow + i * ow + j] = x[c * h * w + (i / 2) * w + j / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Real>(dy: &[T], channels: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); channels * h * w];
    for c in 0..channels {
        for i in 0..oh {
            for j in 0..ow {
                dx[c * h * w + (i / 2) * w + j / 2] += dy[c * oh * ow + i * ow + j];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct convolution used as an independent reference.
    fn direct(conv: &Conv2d<f64>, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let k = conv.kernel as isize;
        let pad = k / 2;
        let cin = conv.in_channels();
        let cout = conv.out_channels();
        let mut y = vec![0.0; cout * h * w];
        for o in 0..cout {
            for i in 0..h as isize {
                for j in 0..w as isize {
                    let mut acc = conv.b.data[o];
                    for c in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (si, sj) = (i + ky - pad, j + kx - pad);
                                if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                    continue;
                                }
                                let widx = ((c as isize * k + ky) * k + kx) as usize;
                                acc += conv.w.data[o * conv.w.cols() + widx]
                                    * x[c * h * w + si as usize * w + sj as usize];
                            }
                        }
                    }
                    y[o * h * w + i as usize * w + j as usize] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn im2col_convolution_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 1.0, &mut rng);
        conv.b = Tensor::randn(&[3], 1.0, &mut rng);
        let x: Vec<f64> = Tensor::<f64>::randn(&[2 * 5 * 4], 1.0, &mut rng).data;
        let (y, _) = conv.forward(&x, 5, 4);
        let r = direct(&conv, &x, 5, 4);
        for (a, b) in y.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = Conv2d::<f64>::new(2, 2, 3, 1.0, &mut rng);
        let x: Vec<f64> = Tensor::<f64>::randn(&[2 * 4 * 4], 1.0, &mut rng).data;
        let probe: Vec<f64> = Tensor::<f64>::randn(&[2 * 4 * 4], 1.0, &mut rng).data;
        let loss = |c: &Conv2d<f64>, x: &[f64]| -> f64 {
            let (y, _) = c.forward(x, 4, 4);
            y.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let (_, cols) = conv.forward(&x, 4, 4);
        let mut g = conv.zeros_like();
        let dx = conv.backward(&cols, &probe, 4, 4, &mut g);
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
        for i in 0..conv.w.len() {
            let mut cp = conv.clone();
            cp.w.data[i] += eps;
            let mut cm = conv.clone();
            cm.w.data[i] -= eps;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * eps);
            assert!((fd - g.w.data[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        // <pool(x), y> == <x, pool_backward(y)>, and likewise for upsampling.
        let x: Vec<f64> = (0..2 * 16).map(|v| (v as f64).cos()).collect();
        let y: Vec<f64> = (0..2 * 4).map(|v| (v as f64).sin()).collect();
        let lhs: f64 = avg_pool2(&x, 2, 4, 4).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x
            .iter()
            .zip(&avg_pool2_backward(&y, 2, 4, 4))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let lhs: f64 = upsample2(&y, 2, 2, 2).iter().zip(&x).map(|(a, b)| a * b).sum();
        let rhs: f64 = y
            .iter()
            .zip(&upsample2_backward(&x, 2, 2, 2))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
