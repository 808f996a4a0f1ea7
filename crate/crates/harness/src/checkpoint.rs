//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "MMGENCKP" | version u32
//! config: len u32, UTF-8 key=value text
//! meta:   len u32, UTF-8 key=value text (stage, step, ...)
//! rng:    len u32, 0 or 56 bytes of ChaCha stream state
//! count u32, then per tensor:
//!   name len u16, name | dtype u8 (0 = f32) | rank u8 | dims u64×rank | data
//! ```
//!
//! Names are namespaced by module (`viztok/`, `mmlm/`, `vizdec/`), with
//! optimizer state under `optim/m/` and `optim/v/`.

use std::collections::BTreeMap;
use std::path::Path;

use mmgen_core::{AdamW, ParamSet, RngState, Tensor};

use crate::error::HarnessError;

pub const MAGIC: &[u8; 8] = b"MMGENCKP";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub meta: BTreeMap<String, String>,
    pub rng: Option<RngState>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HarnessError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad(format!("truncated at byte {} (wanted {n} more)", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, HarnessError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, HarnessError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, HarnessError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, HarnessError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self) -> Result<String, HarnessError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("section is not UTF-8"))
    }
}

fn put_text(out: &mut Vec<u8>, text: &str) {
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
}

fn meta_text(meta: &BTreeMap<String, String>) -> String {
    meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_text(&mut out, &self.config);
        put_text(&mut out, &meta_text(&self.meta));
        let rng = self.rng.as_ref().map(RngState::to_bytes).unwrap_or_default();
        out.extend_from_slice(&(rng.len() as u32).to_le_bytes());
        out.extend_from_slice(&rng);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarnessError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("version {version}, expected {VERSION}")));
        }
        let config = r.text()?;
        let meta = r
            .text()?
            .lines()
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| bad(format!("bad meta line `{l}`")))
            })
            .collect::<Result<_, _>>()?;
        let rng_len = r.u32()? as usize;
        let rng = match rng_len {
            0 => None,
            _ => Some(RngState::from_bytes(r.take(rng_len)?).ok_or_else(|| bad("bad rng state"))?),
        };
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
            if r.u8()? != DTYPE_F32 {
                return Err(bad(format!("`{name}`: unsupported dtype")));
            }
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| bad(format!("`{name}`: shape overflows")))?;
            let data = r
                .take(len)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::from_vec(&shape, data)));
        }
        if r.at != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self {
            config,
            meta,
            rng,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn has_scope(&self, scope: &str) -> bool {
        let prefix = format!("{scope}/");
        self.tensors.iter().any(|(n, _)| n.starts_with(&prefix))
    }

    /// Appends every array of `params` under `scope`.
    pub fn put<P: ParamSet<f32>>(&mut self, scope: &str, params: &P) {
        for (name, t) in params.tensors() {
            self.tensors.push((mmgen_core::scoped(scope, &name), t.clone()));
        }
    }

    /// Fills every array of `params` from `scope`; a missing array or a
    /// shape mismatch is an error.
    pub fn fill<P: ParamSet<f32>>(&self, scope: &str, params: &mut P) -> Result<(), HarnessError> {
        for (name, t) in params.tensors_mut() {
            let full = mmgen_core::scoped(scope, &name);
            let src = self.get(&full).ok_or_else(|| bad(format!("missing tensor `{full}`")))?;
            if src.shape() != t.shape() {
                return Err(bad(format!(
                    "`{full}` has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            t.data.copy_from_slice(&src.data);
        }
        Ok(())
    }

    /// Rejects any array outside the `allowed` name prefixes.
    pub fn check_names(&self, allowed: &[&str]) -> Result<(), HarnessError> {
        match self
            .tensors
            .iter()
            .find(|(n, _)| !allowed.iter().any(|a| n.starts_with(a)))
        {
            Some((n, _)) => Err(bad(format!("unknown tensor `{n}`"))),
            None => Ok(()),
        }
    }

    /// Stores optimizer moments under `optim/m/` and `optim/v/`, the step in meta.
    pub fn put_optimizer(&mut self, opt: &AdamW<f32>) {
        for (name, (m, v)) in opt.names.iter().zip(opt.m.iter().zip(&opt.v)) {
            self.tensors.push((format!("optim/m/{name}"), m.clone()));
            self.tensors.push((format!("optim/v/{name}"), v.clone()));
        }
        self.meta.insert("optim_step".into(), opt.step.to_string());
    }

    pub fn fill_optimizer(&self, opt: &mut AdamW<f32>) -> Result<(), HarnessError> {
        for (name, (m, v)) in opt.names.iter().zip(opt.m.iter_mut().zip(opt.v.iter_mut())) {
            for (kind, dst) in [("m", m), ("v", v)] {
                let full = format!("optim/{kind}/{name}");
                let src = self.get(&full).ok_or_else(|| bad(format!("missing tensor `{full}`")))?;
                if src.shape() != dst.shape() {
                    return Err(bad(format!("`{full}` has the wrong shape")));
                }
                dst.data.copy_from_slice(&src.data);
            }
        }
        opt.step = self.meta_value("optim_step")?;
        Ok(())
    }

    pub fn meta_value<T: std::str::FromStr>(&self, key: &str) -> Result<T, HarnessError> {
        let raw = self.meta.get(key).ok_or_else(|| bad(format!("missing meta `{key}`")))?;
        raw.parse().map_err(|_| bad(format!("bad meta `{key}={raw}`")))
    }
}
