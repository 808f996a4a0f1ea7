//! A small U-shaped denoiser over channel-major feature maps.
//!
//! Three resolutions (full, half, quarter). The condition enters at the
//! quarter-resolution bottleneck twice: as extra channels (one slot per
//! bottleneck pixel) and through cross-attention. Every stage adds a
//! per-channel projection of the timestep embedding.

use mmgen_core::nn::act::{silu, silu_grad};
use mmgen_core::nn::attention::CrossAttentionCache;
use mmgen_core::nn::conv::{avg_pool2, avg_pool2_backward, upsample2, upsample2_backward};
use mmgen_core::nn::{Conv2d, CrossAttention, Linear};
use mmgen_core::{scoped, Real, Tensor};
use rand::Rng;

use crate::error::DecError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    pub image_size: usize,
    pub channels: usize,
    /// Channels at full resolution.
    pub base: usize,
    /// Channels at half and quarter resolution.
    pub mid: usize,
    /// Channels the condition contributes at the bottleneck.
    pub cond_channels: usize,
    /// Width of one condition vector.
    pub cond_dim: usize,
    /// Condition vectors per image; must equal the bottleneck pixel count.
    pub slots: usize,
    pub time_dim: usize,
    pub heads: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 3,
            base: 32,
            mid: 64,
            cond_channels: 32,
            cond_dim: 64,
            slots: 64,
            time_dim: 64,
            heads: 4,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<(), DecError> {
        let q = self.image_size / 4;
        if self.image_size % 4 != 0 || q * q != self.slots {
            return Err(DecError::Config(format!(
                "{} condition slots do not tile the {q}×{q} bottleneck of a {}-pixel image",
                self.slots, self.image_size
            )));
        }
        if self.heads == 0 || self.mid % self.heads != 0 || self.time_dim % 2 != 0 {
            return Err(DecError::Config("bad head count or odd time dimension".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size * self.channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNet<T> {
    pub cfg: UNetConfig,
    pub time1: Linear<T>,
    pub time2: Linear<T>,
    /// Per-stage timestep projections: down full, down half, bottleneck,
    /// up half, up full.
    pub time_proj: Vec<Linear<T>>,
    pub conv1a: Conv2d<T>,
    pub conv1b: Conv2d<T>,
    pub conv2a: Conv2d<T>,
    pub conv2b: Conv2d<T>,
    pub cond_proj: Linear<T>,
    pub conv3a: Conv2d<T>,
    pub xattn: CrossAttention<T>,
    pub conv3b: Conv2d<T>,
    pub conv4a: Conv2d<T>,
    pub conv4b: Conv2d<T>,
    pub conv5a: Conv2d<T>,
    pub conv_out: Conv2d<T>,
}

/// Sinusoidal embedding of a timestep.
pub fn timestep_embedding<T: Real>(t: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    let freqs: Vec<f64> = (0..half)
        .map(|i| (-(10_000f64).ln() * i as f64 / half as f64).exp())
        .collect();
    out.extend(freqs.iter().map(|f| T::lit((t as f64 * f).sin())));
    out.extend(freqs.iter().map(|f| T::lit((t as f64 * f).cos())));
    out
}

fn silu_vec<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| silu(v)).collect()
}

fn silu_back<T: Real>(pre: &[T], dy: &[T]) -> Vec<T> {
    pre.iter().zip(dy).map(|(&p, &g)| g * silu_grad(p)).collect()
}

fn add_channel_bias<T: Real>(x: &mut [T], bias: &[T], hw: usize) {
    for (plane, &b) in x.chunks_mut(hw).zip(bias) {
        plane.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_sums<T: Real>(dy: &[T], hw: usize) -> Vec<T> {
    dy.chunks(hw).map(|p| p.iter().copied().sum()).collect()
}

fn concat<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().chain(b).copied().collect()
}

/// `channels × pixels` to `pixels × channels`, or back with the roles swapped.
fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

pub struct UNetCache<T> {
    temb_in: Vec<T>,
    time_pre: Vec<T>,
    temb: Vec<T>,
    cols1a: Vec<T>,
    pre1a: Vec<T>,
    cols1b: Vec<T>,
    pre1b: Vec<T>,
    cols2a: Vec<T>,
    pre2a: Vec<T>,
    cols2b: Vec<T>,
    pre2b: Vec<T>,
    cols3a: Vec<T>,
    pre3a: Vec<T>,
    attn_in: Vec<T>,
    attn: CrossAttentionCache<T>,
    cols3b: Vec<T>,
    pre3b: Vec<T>,
    cols4a: Vec<T>,
    pre4a: Vec<T>,
    cols4b: Vec<T>,
    pre4b: Vec<T>,
    cols5a: Vec<T>,
    pre5a: Vec<T>,
    cols_out: Vec<T>,
}

impl<T: Real> UNet<T> {
    pub fn new<R: Rng + ?Sized>(cfg: UNetConfig, rng: &mut R) -> Result<Self, DecError> {
        cfg.validate()?;
        let (c, b, m, cc) = (cfg.channels, cfg.base, cfg.mid, cfg.cond_channels);
        let td = cfg.time_dim;
        let he = 2f64.sqrt();
        let lin_std = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let mut conv_out = Conv2d::new(b, c, 3, 1.0, rng);
        conv_out.w.fill(T::zero());
        Ok(Self {
            cfg,
            time1: Linear::new(td, td, lin_std(td), rng),
            time2: Linear::new(td, td, lin_std(td), rng),
            time_proj: [b, m, m, m, b]
                .iter()
                .map(|&ch| Linear::new(td, ch, lin_std(td), rng))
                .collect(),
            conv1a: Conv2d::new(c, b, 3, he, rng),
            conv1b: Conv2d::new(b, b, 3, he, rng),
            conv2a: Conv2d::new(b, m, 3, he, rng),
            conv2b: Conv2d::new(m, m, 3, he, rng),
            cond_proj: Linear::new(cfg.cond_dim, cc, lin_std(cfg.cond_dim), rng),
            conv3a: Conv2d::new(m + cc, m, 3, he, rng),
            xattn: CrossAttention::new(m, cfg.cond_dim, m, cfg.heads, lin_std(m), rng),
            conv3b: Conv2d::new(m, m, 3, he, rng),
            conv4a: Conv2d::new(2 * m, m, 3, he, rng),
            conv4b: Conv2d::new(m, m, 3, he, rng),
            conv5a: Conv2d::new(m + b, b, 3, he, rng),
            conv_out,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg,
            time1: Linear::zeros(self.time1.input_dim(), self.time1.output_dim()),
            time2: Linear::zeros(self.time2.input_dim(), self.time2.output_dim()),
            time_proj: self
                .time_proj
                .iter()
                .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            conv1a: self.conv1a.zeros_like(),
            conv1b: self.conv1b.zeros_like(),
            conv2a: self.conv2a.zeros_like(),
            conv2b: self.conv2b.zeros_like(),
            cond_proj: Linear::zeros(self.cond_proj.input_dim(), self.cond_proj.output_dim()),
            conv3a: self.conv3a.zeros_like(),
            xattn: self.xattn.zeros_like(),
            conv3b: self.conv3b.zeros_like(),
            conv4a: self.conv4a.zeros_like(),
            conv4b: self.conv4b.zeros_like(),
            conv5a: self.conv5a.zeros_like(),
            conv_out: self.conv_out.zeros_like(),
        }
    }

    /// Predicts the noise in the planar image `x` at timestep `t` given
    /// `slots × cond_dim` condition rows.
    pub fn forward(&self, x: &[T], t: usize, cond: &[T]) -> (Vec<T>, UNetCache<T>) {
        let cfg = &self.cfg;
        let s1 = cfg.image_size;
        let (s2, s3) = (s1 / 2, s1 / 4);
        let (hw1, hw2, hw3) = (s1 * s1, s2 * s2, s3 * s3);
        let (b, m) = (cfg.base, cfg.mid);

        let temb_in = timestep_embedding::<T>(t, cfg.time_dim);
        let time_pre = self.time1.forward(&temb_in, 1);
        let temb = self.time2.forward(&silu_vec(&time_pre), 1);
        let tb: Vec<Vec<T>> = self.time_proj.iter().map(|l| l.forward(&temb, 1)).collect();

        let (mut pre1a, cols1a) = self.conv1a.forward(x, s1, s1);
        add_channel_bias(&mut pre1a, &tb[0], hw1);
        let (pre1b, cols1b) = self.conv1b.forward(&silu_vec(&pre1a), s1, s1);
        let skip1 = silu_vec(&pre1b);

        let (mut pre2a, cols2a) = self.conv2a.forward(&avg_pool2(&skip1, b, s1, s1), s2, s2);
        add_channel_bias(&mut pre2a, &tb[1], hw2);
        let (pre2b, cols2b) = self.conv2b.forward(&silu_vec(&pre2a), s2, s2);
        let skip2 = silu_vec(&pre2b);

        let cond_map = transpose(&self.cond_proj.forward(cond, cfg.slots), cfg.slots, cfg.cond_channels);
        let bottleneck_in = concat(&avg_pool2(&skip2, m, s2, s2), &cond_map);
        let (mut pre3a, cols3a) = self.conv3a.forward(&bottleneck_in, s3, s3);
        add_channel_bias(&mut pre3a, &tb[2], hw3);
        let attn_in = transpose(&silu_vec(&pre3a), m, hw3);
        let (attn_out, attn) = self.xattn.forward(&attn_in, hw3, cond, cfg.slots);
        let attended: Vec<T> = attn_in.iter().zip(&attn_out).map(|(&a, &o)| a + o).collect();
        let (pre3b, cols3b) = self.conv3b.forward(&transpose(&attended, hw3, m), s3, s3);
        let mid = silu_vec(&pre3b);

        let up_in = concat(&upsample2(&mid, m, s3, s3), &skip2);
        let (mut pre4a, cols4a) = self.conv4a.forward(&up_in, s2, s2);
        add_channel_bias(&mut pre4a, &tb[3], hw2);
        let (pre4b, cols4b) = self.conv4b.forward(&silu_vec(&pre4a), s2, s2);
        let up2 = silu_vec(&pre4b);

        let top_in = concat(&upsample2(&up2, m, s2, s2), &skip1);
        let (mut pre5a, cols5a) = self.conv5a.forward(&top_in, s1, s1);
        add_channel_bias(&mut pre5a, &tb[4], hw1);
        let (eps, cols_out) = self.conv_out.forward(&silu_vec(&pre5a), s1, s1);
        (
            eps,
            UNetCache {
                temb_in,
                time_pre,
                temb,
                cols1a,
                pre1a,
                cols1b,
                pre1b,
                cols2a,
                pre2a,
                cols2b,
                pre2b,
                cols3a,
                pre3a,
                attn_in,
                attn,
                cols3b,
                pre3b,
                cols4a,
                pre4a,
                cols4b,
                pre4b,
                cols5a,
                pre5a,
                cols_out,
            },
        )
    }

    /// Accumulates parameter gradients; returns the condition gradient.
    pub fn backward(&self, cache: &UNetCache<T>, cond: &[T], deps: &[T], grad: &mut UNet<T>) -> Vec<T> {
        let cfg = &self.cfg;
        let s1 = cfg.image_size;
        let (s2, s3) = (s1 / 2, s1 / 4);
        let (hw1, hw2, hw3) = (s1 * s1, s2 * s2, s3 * s3);
        let (b, m, cc) = (cfg.base, cfg.mid, cfg.cond_channels);
        let mut dtb: Vec<Vec<T>> = Vec::with_capacity(5);

        let d5 = self.conv_out.backward(&cache.cols_out, deps, s1, s1, &mut grad.conv_out);
        let dpre5a = silu_back(&cache.pre5a, &d5);
        let dtb4 = channel_sums(&dpre5a, hw1);
        let dtop = self.conv5a.backward(&cache.cols5a, &dpre5a, s1, s1, &mut grad.conv5a);
        let (dup2_up, dskip1_top) = dtop.split_at(m * hw1);
        let dup2 = upsample2_backward(dup2_up, m, s2, s2);

        let dpre4b = silu_back(&cache.pre4b, &dup2);
        let d4 = self.conv4b.backward(&cache.cols4b, &dpre4b, s2, s2, &mut grad.conv4b);
        let dpre4a = silu_back(&cache.pre4a, &d4);
        let dtb3 = channel_sums(&dpre4a, hw2);
        let dup = self.conv4a.backward(&cache.cols4a, &dpre4a, s2, s2, &mut grad.conv4a);
        let (dmid_up, dskip2_up) = dup.split_at(m * hw2);
        let dmid = upsample2_backward(dmid_up, m, s3, s3);

        let dpre3b = silu_back(&cache.pre3b, &dmid);
        let d3 = self.conv3b.backward(&cache.cols3b, &dpre3b, s3, s3, &mut grad.conv3b);
        let dattended = transpose(&d3, m, hw3);
        let (dattn_in_x, dcond_attn) = self.xattn.backward(
            &cache.attn_in,
            hw3,
            cond,
            cfg.slots,
            &cache.attn,
            &dattended,
            &mut grad.xattn,
        );
        let dattn_in: Vec<T> = dattended.iter().zip(&dattn_in_x).map(|(&a, &b)| a + b).collect();
        let dpre3a = silu_back(&cache.pre3a, &transpose(&dattn_in, hw3, m));
        let dtb2 = channel_sums(&dpre3a, hw3);
        let dbottleneck = self.conv3a.backward(&cache.cols3a, &dpre3a, s3, s3, &mut grad.conv3a);
        let (dpooled2, dcond_map) = dbottleneck.split_at(m * hw3);
        let dcond_rows = transpose(dcond_map, cc, cfg.slots);
        let mut dcond = self
            .cond_proj
            .backward(cond, &dcond_rows, cfg.slots, &mut grad.cond_proj);
        dcond.iter_mut().zip(&dcond_attn).for_each(|(a, &b)| *a += b);

        let mut dskip2 = avg_pool2_backward(dpooled2, m, s2, s2);
        dskip2.iter_mut().zip(dskip2_up).for_each(|(a, &b)| *a += b);
        let dpre2b = silu_back(&cache.pre2b, &dskip2);
        let d2 = self.conv2b.backward(&cache.cols2b, &dpre2b, s2, s2, &mut grad.conv2b);
        let dpre2a = silu_back(&cache.pre2a, &d2);
        let dtb1 = channel_sums(&dpre2a, hw2);
        let dpool1 = self.conv2a.backward(&cache.cols2a, &dpre2a, s2, s2, &mut grad.conv2a);

        let mut dskip1 = avg_pool2_backward(&dpool1, b, s1, s1);
        dskip1.iter_mut().zip(dskip1_top).for_each(|(a, &b)| *a += b);
        let dpre1b = silu_back(&cache.pre1b, &dskip1);
        let d1 = self.conv1b.backward(&cache.cols1b, &dpre1b, s1, s1, &mut grad.conv1b);
        let dpre1a = silu_back(&cache.pre1a, &d1);
        let dtb0 = channel_sums(&dpre1a, hw1);
        // the input-image gradient is not needed
        self.conv1a.accumulate(&cache.cols1a, &dpre1a, s1, s1, &mut grad.conv1a);

        dtb.extend([dtb0, dtb1, dtb2, dtb3, dtb4]);
        let mut dtemb = vec![T::zero(); cfg.time_dim];
        for ((l, g), d) in self.time_proj.iter().zip(grad.time_proj.iter_mut()).zip(&dtb) {
            let dt = l.backward(&cache.temb, d, 1, g);
            dtemb.iter_mut().zip(&dt).for_each(|(a, &b)| *a += b);
        }
        let dact = self.time2.backward(&silu_vec(&cache.time_pre), &dtemb, 1, &mut grad.time2);
        let dpre = silu_back(&cache.time_pre, &dact);
        self.time1.accumulate(&cache.temb_in, &dpre, 1, &mut grad.time1);
        dcond
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.time1.tensors(&scoped(prefix, "time1"), out);
        self.time2.tensors(&scoped(prefix, "time2"), out);
        for (i, l) in self.time_proj.iter().enumerate() {
            l.tensors(&scoped(prefix, &format!("time_proj{i}")), out);
        }
        for (name, c) in self.convs() {
            c.tensors(&scoped(prefix, name), out);
        }
        self.cond_proj.tensors(&scoped(prefix, "cond_proj"), out);
        self.xattn.tensors(&scoped(prefix, "xattn"), out);
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.time1.tensors_mut(&scoped(prefix, "time1"), out);
        self.time2.tensors_mut(&scoped(prefix, "time2"), out);
        for (i, l) in self.time_proj.iter_mut().enumerate() {
            l.tensors_mut(&scoped(prefix, &format!("time_proj{i}")), out);
        }
        let names = CONV_NAMES;
        let convs = [
            &mut self.conv1a,
            &mut self.conv1b,
            &mut self.conv2a,
            &mut self.conv2b,
            &mut self.conv3a,
            &mut self.conv3b,
            &mut self.conv4a,
            &mut self.conv4b,
            &mut self.conv5a,
            &mut self.conv_out,
        ];
        for (name, c) in names.iter().zip(convs) {
            c.tensors_mut(&scoped(prefix, name), out);
        }
        self.cond_proj.tensors_mut(&scoped(prefix, "cond_proj"), out);
        self.xattn.tensors_mut(&scoped(prefix, "xattn"), out);
    }

    fn convs(&self) -> [(&'static str, &Conv2d<T>); 10] {
        let c = [
            &self.conv1a,
            &self.conv1b,
            &self.conv2a,
            &self.conv2b,
            &self.conv3a,
            &self.conv3b,
            &self.conv4a,
            &self.conv4b,
            &self.conv5a,
            &self.conv_out,
        ];
        std::array::from_fn(|i| (CONV_NAMES[i], c[i]))
    }
}

const CONV_NAMES: [&str; 10] = [
    "conv1a", "conv1b", "conv2a", "conv2b", "conv3a", "conv3b", "conv4a", "conv4b", "conv5a",
    "conv_out",
];
