//! Multi-head scaled dot-product attention with an explicit backward pass.

use rand::Rng;

use crate::linalg::{gemm, View, ViewMut};
use crate::nn::linear::Linear;
use crate::real::Real;
use crate::tensor::{scoped, Tensor};

/// Where one operand's heads live inside a buffer: `rows` rows with row
/// stride `rs`, heads packed contiguously from column `off`.
#[derive(Clone, Copy, Debug)]
pub struct Packed {
    pub rows: usize,
    pub rs: usize,
    pub off: usize,
}

impl Packed {
    pub fn dense(rows: usize, width: usize) -> Self {
        Self {
            rows,
            rs: width,
            off: 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Heads {
    pub count: usize,
    pub dim: usize,
    pub causal: bool,
}

fn head<'a, T: Real>(buf: &'a [T], p: Packed, h: usize, dim: usize) -> View<'a, T> {
    View::strided(buf, p.off + h * dim, p.rows, dim, p.rs, 1)
}

/// Returns the concatenated head outputs (`tq × count·dim`) and the attention
/// probabilities (`count × tq × tk`).
pub fn mha_forward<T: Real>(
    q: &[T],
    qp: Packed,
    k: &[T],
    kp: Packed,
    v: &[T],
    vp: Packed,
    heads: Heads,
) -> (Vec<T>, Vec<T>) {
    let (tq, tk, dh) = (qp.rows, kp.rows, heads.dim);
    assert_eq!(kp.rows, vp.rows);
    if heads.causal {
        assert_eq!(tq, tk, "causal attention needs square scores");
    }
    let width = heads.count * dh;
    let scale = T::one() / T::of_usize(dh).sqrt();
    let mut probs = vec![T::zero(); heads.count * tq * tk];
    let mut ctx = vec![T::zero(); tq * width];
    for h in 0..heads.count {
        let p = &mut probs[h * tq * tk..(h + 1) * tq * tk];
        gemm(
            scale,
            head(q, qp, h, dh),
            head(k, kp, h, dh).t(),
            T::zero(),
            ViewMut::new(p, tq, tk),
        );
        for i in 0..tq {
            let row = &mut p[i * tk..(i + 1) * tk];
            let live = if heads.causal { i + 1 } else { tk };
            let max = row[..live]
                .iter()
                .copied()
                .fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for s in row[..live].iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let inv = sum.recip();
            for s in row[..live].iter_mut() {
                *s *= inv;
            }
            for s in row[live..].iter_mut() {
                *s = T::zero();
            }
        }
        gemm(
            T::one(),
            View::new(p, tq, tk),
            head(v, vp, h, dh),
            T::zero(),
            ViewMut::strided(&mut ctx, h * dh, tq, dh, width, 1),
        );
    }
    (ctx, probs)
}

/// Gradients for q, k and v as dense `rows × count·dim` buffers.
#[allow(clippy::too_many_arguments)]
pub fn mha_backward<T: Real>(
    q: &[T],
    qp: Packed,
    k: &[T],
    kp: Packed,
    v: &[T],
    vp: Packed,
    probs: &[T],
    dctx: &[T],
    heads: Heads,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (tq, tk, dh) = (qp.rows, kp.rows, heads.dim);
    let width = heads.count * dh;
    let scale = T::one() / T::of_usize(dh).sqrt();
    let mut dq = vec![T::zero(); tq * width];
    let mut dk = vec![T::zero(); tk * width];
    let mut dv = vec![T::zero(); tk * width];
    let mut dp = vec![T::zero(); tq * tk];
    for h in 0..heads.count {
        let p = &probs[h * tq * tk..(h + 1) * tq * tk];
        let dctx_h = View::strided(dctx, h * dh, tq, dh, width, 1);
        gemm(
            T::one(),
            dctx_h,
            head(v, vp, h, dh).t(),
            T::zero(),
            ViewMut::new(&mut dp, tq, tk),
        );
        gemm(
            T::one(),
            View::new(p, tq, tk).t(),
            dctx_h,
            T::zero(),
            ViewMut::strided(&mut dv, h * dh, tk, dh, width, 1),
        );
        for i in 0..tq {
            let prow = &p[i * tk..(i + 1) * tk];
            let drow = &mut dp[i * tk..(i + 1) * tk];
            let inner: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
            for (d, &pv) in drow.iter_mut().zip(prow) {
                *d = pv * (*d - inner) * scale;
            }
        }
        gemm(
            T::one(),
            View::new(&dp, tq, tk),
            head(k, kp, h, dh),
            T::zero(),
            ViewMut::strided(&mut dq, h * dh, tq, dh, width, 1),
        );
        gemm(
            T::one(),
            View::new(&dp, tq, tk).t(),
            head(q, qp, h, dh),
            T::zero(),
            ViewMut::strided(&mut dk, h * dh, tk, dh, width, 1),
        );
    }
    (dq, dk, dv)
}

/// Self-attention with a fused QKV projection.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttention<T> {
    pub heads: usize,
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
}

pub struct SelfAttentionCache<T> {
    qkv: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
}

impl<T: Real> SelfAttention<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, std: f64, rng: &mut R) -> Self {
        assert_eq!(dim % heads, 0, "model dim must split evenly across heads");
        Self {
            heads,
            qkv: Linear::new(dim, 3 * dim, std, rng),
            proj: Linear::new(dim, dim, std, rng),
        }
    }

    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self {
            heads,
            qkv: Linear::zeros(dim, 3 * dim),
            proj: Linear::zeros(dim, dim),
        }
    }

    fn layout(&self, rows: usize) -> (Packed, Packed, Packed, usize) {
        let d = self.proj.input_dim();
        let p = |off| Packed {
            rows,
            rs: 3 * d,
            off,
        };
        (p(0), p(d), p(2 * d), d)
    }

    pub fn forward(&self, x: &[T], rows: usize, causal: bool) -> (Vec<T>, SelfAttentionCache<T>) {
        let qkv = self.qkv.forward(x, rows);
        let (qp, kp, vp, d) = self.layout(rows);
        let heads = Heads {
            count: self.heads,
            dim: d / self.heads,
            causal,
        };
        let (ctx, probs) = mha_forward(&qkv, qp, &qkv, kp, &qkv, vp, heads);
        let y = self.proj.forward(&ctx, rows);
        (y, SelfAttentionCache { qkv, probs, ctx })
    }

    pub fn backward(
        &self,
        x: &[T],
        cache: &SelfAttentionCache<T>,
        dy: &[T],
        rows: usize,
        causal: bool,
        grad: &mut SelfAttention<T>,
    ) -> Vec<T> {
        let dctx = self.proj.backward(&cache.ctx, dy, rows, &mut grad.proj);
        let (qp, kp, vp, d) = self.layout(rows);
        let heads = Heads {
            count: self.heads,
            dim: d / self.heads,
            causal,
        };
        let (dq, dk, dv) = mha_backward(
            &cache.qkv, qp, &cache.qkv, kp, &cache.qkv, vp, &cache.probs, &dctx, heads,
        );
        let mut dqkv = vec![T::zero(); rows * 3 * d];
        for r in 0..rows {
            let dst = &mut dqkv[r * 3 * d..(r + 1) * 3 * d];
            dst[..d].copy_from_slice(&dq[r * d..(r + 1) * d]);
            dst[d..2 * d].copy_from_slice(&dk[r * d..(r + 1) * d]);
            dst[2 * d..].copy_from_slice(&dv[r * d..(r + 1) * d]);
        }
        self.qkv.backward(x, &dqkv, rows, &mut grad.qkv)
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.qkv.tensors(&scoped(prefix, "qkv"), out);
        self.proj.tensors(&scoped(prefix, "proj"), out);
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.qkv.tensors_mut(&scoped(prefix, "qkv"), out);
        self.proj.tensors_mut(&scoped(prefix, "proj"), out);
    }
}

/// Attention from query rows onto a separate context sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttention<T> {
    pub heads: usize,
    pub q: Linear<T>,
    pub kv: Linear<T>,
    pub proj: Linear<T>,
}

pub struct CrossAttentionCache<T> {
    q: Vec<T>,
    kv: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
}

impl<T: Real> CrossAttention<T> {
    pub fn new<R: Rng + ?Sized>(
        query_dim: usize,
        context_dim: usize,
        dim: usize,
        heads: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        assert_eq!(dim % heads, 0);
        Self {
            heads,
            q: Linear::new(query_dim, dim, std, rng),
            kv: Linear::new(context_dim, 2 * dim, std, rng),
            proj: Linear::new(dim, query_dim, std, rng),
        }
    }

    fn dims(&self) -> usize {
        self.q.output_dim()
    }

    pub fn forward(
        &self,
        x: &[T],
        rows: usize,
        context: &[T],
        ctx_rows: usize,
    ) -> (Vec<T>, CrossAttentionCache<T>) {
        let d = self.dims();
        let q = self.q.forward(x, rows);
        let kv = self.kv.forward(context, ctx_rows);
        let heads = Heads {
            count: self.heads,
            dim: d / self.heads,
            causal: false,
        };
        let kp = Packed {
            rows: ctx_rows,
            rs: 2 * d,
            off: 0,
        };
        let vp = Packed { off: d, ..kp };
        let (ctx, probs) = mha_forward(&q, Packed::dense(rows, d), &kv, kp, &kv, vp, heads);
        let y = self.proj.forward(&ctx, rows);
        (y, CrossAttentionCache { q, kv, probs, ctx })
    }

    /// Returns `(dL/dx, dL/dcontext)`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[T],
        rows: usize,
        context: &[T],
        ctx_rows: usize,
        cache: &CrossAttentionCache<T>,
        dy: &[T],
        grad: &mut CrossAttention<T>,
    ) -> (Vec<T>, Vec<T>) {
        let d = self.dims();
        let dctx = self.proj.backward(&cache.ctx, dy, rows, &mut grad.proj);
        let heads = Heads {
            count: self.heads,
            dim: d / self.heads,
            causal: false,
        };
        let kp = Packed {
            rows: ctx_rows,
            rs: 2 * d,
            off: 0,
        };
        let vp = Packed { off: d, ..kp };
        let (dq, dk, dv) = mha_backward(
            &cache.q,
            Packed::dense(rows, d),
            &cache.kv,
            kp,
            &cache.kv,
            vp,
            &cache.probs,
            &dctx,
            heads,
        );
        let mut dkv = vec![T::zero(); ctx_rows * 2 * d];
        for r in 0..ctx_rows {
            dkv[r * 2 * d..r * 2 * d + d].copy_from_slice(&dk[r * d..(r + 1) * d]);
            dkv[r * 2 * d + d..(r + 1) * 2 * d].copy_from_slice(&dv[r * d..(r + 1) * d]);
        }
        let dx = self.q.backward(x, &dq, rows, &mut grad.q);
        let dc = self.kv.backward(context, &dkv, ctx_rows, &mut grad.kv);
        (dx, dc)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            heads: self.heads,
            q: Linear::zeros(self.q.input_dim(), self.q.output_dim()),
            kv: Linear::zeros(self.kv.input_dim(), self.kv.output_dim()),
            proj: Linear::zeros(self.proj.input_dim(), self.proj.output_dim()),
        }
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.q.tensors(&scoped(prefix, "q"), out);
        self.kv.tensors(&scoped(prefix, "kv"), out);
        self.proj.tensors(&scoped(prefix, "proj"), out);
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.q.tensors_mut(&scoped(prefix, "q"), out);
        self.kv.tensors_mut(&scoped(prefix, "kv"), out);
        self.proj.tensors_mut(&scoped(prefix, "proj"), out);
    }
}
