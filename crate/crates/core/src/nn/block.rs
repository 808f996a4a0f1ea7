use rand::Rng;

use crate::nn::act::{gelu, gelu_grad};
use crate::nn::attention::{SelfAttention, SelfAttentionCache};
use crate::nn::linear::Linear;
use crate::nn::norm::{LayerNorm, LayerNormCache};
use crate::real::Real;
use crate::tensor::{scoped, Tensor};

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `+ mlp(ln2(·))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub ln1: LayerNorm<T>,
    pub attn: SelfAttention<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

pub struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    h1: Vec<T>,
    attn: SelfAttentionCache<T>,
    ln2: LayerNormCache<T>,
    h2: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

impl<T: Real> Block<T> {
    /// `std` initializes every matrix; residual output projections are
    /// additionally scaled by `resid_scale`.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        heads: usize,
        mlp_mult: usize,
        std: f64,
        resid_scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut attn = SelfAttention::new(dim, heads, std, rng);
        attn.proj = Linear::new(dim, dim, std * resid_scale, rng);
        Self {
            ln1: LayerNorm::new(dim),
            attn,
            ln2: LayerNorm::new(dim),
            fc1: Linear::new(dim, mlp_mult * dim, std, rng),
            fc2: Linear::new(mlp_mult * dim, dim, std * resid_scale, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let d = self.ln1.dim();
        let hidden = self.fc1.output_dim();
        Self {
            ln1: LayerNorm::zeros(d),
            attn: SelfAttention::zeros(d, self.attn.heads),
            ln2: LayerNorm::zeros(d),
            fc1: Linear::zeros(d, hidden),
            fc2: Linear::zeros(hidden, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.ln1.dim()
    }

    pub fn forward(&self, x: &[T], rows: usize, causal: bool) -> (Vec<T>, BlockCache<T>) {
        let (h1, ln1) = self.ln1.forward(x, rows);
        let (a, attn) = self.attn.forward(&h1, rows, causal);
        let x_mid: Vec<T> = x.iter().zip(&a).map(|(&u, &v)| u + v).collect();
        let (h2, ln2) = self.ln2.forward(&x_mid, rows);
        let pre = self.fc1.forward(&h2, rows);
        let act: Vec<T> = pre.iter().map(|&v| gelu(v)).collect();
        let m = self.fc2.forward(&act, rows);
        let y = x_mid.iter().zip(&m).map(|(&u, &v)| u + v).collect();
        (
            y,
            BlockCache {
                ln1,
                h1,
                attn,
                ln2,
                h2,
                pre,
                act,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &BlockCache<T>,
        dy: &[T],
        rows: usize,
        causal: bool,
        grad: &mut Block<T>,
    ) -> Vec<T> {
        let dact = self.fc2.backward(&cache.act, dy, rows, &mut grad.fc2);
        let dpre: Vec<T> = dact
            .iter()
            .zip(&cache.pre)
            .map(|(&g, &p)| g * gelu_grad(p))
            .collect();
        let dh2 = self.fc1.backward(&cache.h2, &dpre, rows, &mut grad.fc1);
        let dmid_norm = self.ln2.backward(&cache.ln2, &dh2, rows, &mut grad.ln2);
        let dmid: Vec<T> = dy.iter().zip(&dmid_norm).map(|(&a, &b)| a + b).collect();
        let dh1 = self
            .attn
            .backward(&cache.h1, &cache.attn, &dmid, rows, causal, &mut grad.attn);
        let dx_norm = self.ln1.backward(&cache.ln1, &dh1, rows, &mut grad.ln1);
        dmid.iter().zip(&dx_norm).map(|(&a, &b)| a + b).collect()
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.ln1.tensors(&scoped(prefix, "ln1"), out);
        self.attn.tensors(&scoped(prefix, "attn"), out);
        self.ln2.tensors(&scoped(prefix, "ln2"), out);
        self.fc1.tensors(&scoped(prefix, "fc1"), out);
        self.fc2.tensors(&scoped(prefix, "fc2"), out);
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.ln1.tensors_mut(&scoped(prefix, "ln1"), out);
        self.attn.tensors_mut(&scoped(prefix, "attn"), out);
        self.ln2.tensors_mut(&scoped(prefix, "ln2"), out);
        self.fc1.tensors_mut(&scoped(prefix, "fc1"), out);
        self.fc2.tensors_mut(&scoped(prefix, "fc2"), out);
    }
}
