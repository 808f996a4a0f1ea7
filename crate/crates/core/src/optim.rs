//! AdamW with decoupled weight decay, global-norm clipping and a
//! warmup + cosine learning-rate schedule.

use crate::error::CoreError;
use crate::real::Real;
use crate::tensor::{ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-6,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

/// Names a parameter set marks as not trainable.
pub trait Frozen {
    fn is_frozen(&self, _name: &str) -> bool {
        false
    }
}

impl<T: Real> AdamW<T> {
    pub fn new<P: ParamSet<T>>(params: &P, cfg: AdamWConfig) -> Self {
        let tensors = params.tensors();
        Self {
            cfg,
            step: 0,
            names: tensors.iter().map(|(n, _)| n.clone()).collect(),
            m: tensors.iter().map(|(_, t)| t.zeros_like()).collect(),
            v: tensors.iter().map(|(_, t)| t.zeros_like()).collect(),
        }
    }

    /// Applies one update. Frozen arrays are skipped; a nonzero gradient on a
    /// frozen array is rejected before anything is modified.
    pub fn update<P: ParamSet<T> + Frozen>(
        &mut self,
        params: &mut P,
        grads: &P,
        lr: f64,
    ) -> Result<(), CoreError> {
        let grads = grads.tensors();
        let frozen: Vec<bool> = grads.iter().map(|(n, _)| params.is_frozen(n)).collect();
        for ((name, g), &fz) in grads.iter().zip(&frozen) {
            if fz && g.data.iter().any(|&v| v != T::zero()) {
                return Err(CoreError::FrozenUpdate(name.clone()));
            }
        }
        let mut params = params.tensors_mut();
        if params.len() != self.names.len() || grads.len() != self.names.len() {
            return Err(CoreError::Layout(format!(
                "optimizer tracks {} arrays, got {} params / {} grads",
                self.names.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (ob1, ob2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        let decay = T::lit(1.0 - lr * c.weight_decay);
        for (i, ((name, p), (_, g))) in params.iter_mut().zip(grads.iter()).enumerate() {
            if frozen[i] {
                continue;
            }
            debug_assert_eq!(name, &self.names[i]);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let matrix = p.shape().len() >= 2;
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m.data[j] = b1 * m.data[j] + ob1 * gj;
                v.data[j] = b2 * v.data[j] + ob2 * gj * gj;
                if matrix && c.weight_decay != 0.0 {
                    p.data[j] *= decay;
                }
                p.data[j] -= step_size * m.data[j] / ((v.data[j] * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn global_norm<T: Real, P: ParamSet<T>>(grads: &P) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|v| {
            let f = v.as_f64();
            f * f
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_global_norm<T: Real, P: ParamSet<T>>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = T::lit(max_norm / norm);
        for (_, t) in grads.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to
/// 0 at `total`.
pub fn warmup_cosine(step: u64, total: u64, warmup: u64, peak: f64) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if step >= total {
        return 0.0;
    }
    let span = (total - warmup).max(1) as f64;
    let progress = (step - warmup) as f64 / span;
    0.5 * peak * (1.0 + (std::f64::consts::PI * progress).cos())
}
