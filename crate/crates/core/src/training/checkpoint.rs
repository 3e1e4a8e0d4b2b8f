//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic "HSIECKPT" | version u32 = 1
//! k, feat, n_cab, n_dense, eca_kernel, mask_channels, growth   (u32 each)
//! epoch u64 | parameter count u64 | parameters f32 * count
//! optimizer flag u8
//!   if 1: t u64 | beta1, beta2, eps f64 | m f32 * count | v f32 * count
//! ```
//!
//! Parameters use the canonical tensor order of the model.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{HsieConfig, HsieParams};
use crate::numerics::{AdamConfig, AdamState, Tensor};

const MAGIC: &[u8; 8] = b"HSIECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Completed epochs.
    pub epoch: u64,
    pub params: HsieParams<f32>,
    pub optimizer: Option<AdamState<f32>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated while reading {what} at byte {}", self.pos)),
        }
    }

    fn u8(&mut self, what: &str) -> std::result::Result<u8, String> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> std::result::Result<Vec<f32>, String> {
        let len = n.checked_mul(4).ok_or_else(|| format!("{what} length overflows"))?;
        let raw = self.take(len, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn flat(ts: &[Tensor<f32>]) -> impl Iterator<Item = f32> + '_ {
    ts.iter().flat_map(|t| t.data().iter().copied())
}

fn split_like(values: Vec<f32>, like: &[&Tensor<f32>]) -> Vec<Tensor<f32>> {
    let mut offset = 0;
    like.iter()
        .map(|t| {
            let n = t.len();
            let out = Tensor::new(t.shape().to_vec(), values[offset..offset + n].to_vec()).expect("same size");
            offset += n;
            out
        })
        .collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.params.config();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [c.k, c.feat, c.n_cab, c.n_dense, c.eca_kernel, c.mask_channels, c.growth()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.params.param_count() as u64).to_le_bytes());
        put_f32s(&mut out, self.params.flat());
        match &self.optimizer {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&s.t.to_le_bytes());
                for v in [s.config.beta1, s.config.beta2, s.config.eps] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                put_f32s(&mut out, flat(&s.m));
                put_f32s(&mut out, flat(&s.v));
            }
        }
        out
    }

    /// Parses a checkpoint; `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        Self::parse(bytes).map_err(|reason| match reason {
            ParseError::Format(reason) => Error::Format {
                path: origin.to_path_buf(),
                reason,
            },
            ParseError::Model(e) => e,
        })
    }

    fn parse(bytes: &[u8]) -> std::result::Result<Self, ParseError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err("not a checkpoint (bad magic)".to_string().into());
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})").into());
        }
        let mut f = [0usize; 7];
        for (i, name) in ["k", "feat", "n_cab", "n_dense", "eca_kernel", "mask_channels", "growth"]
            .iter()
            .enumerate()
        {
            f[i] = r.u32(name)? as usize;
        }
        let config = HsieConfig {
            k: f[0],
            feat: f[1],
            n_cab: f[2],
            n_dense: f[3],
            eca_kernel: f[4],
            mask_channels: f[5],
            growth: Some(f[6]),
        };
        config
            .validate()
            .map_err(|e| ParseError::Format(format!("stored configuration is invalid: {e}")))?;
        let epoch = r.u64("epoch")?;
        let count = r.u64("parameter count")?;
        let expected = HsieParams::<f32>::zeros(&config).map_err(ParseError::Model)?.param_count();
        if count != expected as u64 {
            return Err(format!("header declares {count} parameters, configuration needs {expected}").into());
        }
        let values = r.f32s(expected, "parameters")?;
        let params = HsieParams::from_flat(&config, &values).map_err(ParseError::Model)?;
        let optimizer = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let t = r.u64("optimizer step")?;
                let config = AdamConfig {
                    beta1: r.f64("beta1")?,
                    beta2: r.f64("beta2")?,
                    eps: r.f64("eps")?,
                };
                let like = params.tensors();
                let m = split_like(r.f32s(expected, "first moments")?, &like);
                let v = split_like(r.f32s(expected, "second moments")?, &like);
                Some(AdamState { m, v, t, config })
            }
            other => return Err(format!("invalid optimizer flag {other}").into()),
        };
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos).into());
        }
        Ok(Self {
            epoch,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // Write then rename so a crash never leaves a half-written checkpoint.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and checks that the stored weights fit `expected`.
    pub fn load_for(path: &Path, expected: &HsieConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        ck.params.check_compatible(expected)?;
        Ok(ck)
    }
}

enum ParseError {
    Format(String),
    Model(Error),
}

impl From<String> for ParseError {
    fn from(s: String) -> Self {
        ParseError::Format(s)
    }
}
