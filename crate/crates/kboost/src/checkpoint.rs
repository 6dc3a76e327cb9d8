//! Checkpoint container.
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic    8 bytes   "KBOOSTCK"
//! version  u16       1
//! role     u8        0 small, 1 medium, 2 large, 3 boosted
//! hash     32 bytes  model hash of the config the weights were trained for
//! seed     u64
//! count    u32
//! count times:
//!   name   u32 length + UTF-8 bytes, "<group>/<parameter>"
//!   dtype  u8        1 f32, 2 f64
//!   rank   u8
//!   dims   rank * u32
//!   data   product(dims) values
//! ```

use std::path::Path;

use kboost_core::numerics::ParamStore;
use kboost_core::{Real, Tensor};

use crate::config::{hex, Role};
use crate::error::{io_err, Error, Result};

const MAGIC: &[u8; 8] = b"KBOOSTCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub role: Role,
    /// Hex model hash.
    pub hash: String,
    pub seed: u64,
    pub dtype: Dtype,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn new(role: Role, hash: String, seed: u64) -> Self {
        Self {
            role,
            hash,
            seed,
            dtype: Dtype::F64,
            tensors: Vec::new(),
        }
    }

    /// Adds every parameter of `store` under `group/`.
    pub fn add_store<T: Real>(&mut self, group: &str, store: &ParamStore<T>) {
        for p in store.params() {
            self.tensors.push((format!("{group}/{}", p.name), p.value.cast()));
        }
    }

    pub fn groups(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for (name, _) in &self.tensors {
            let g = name.split_once('/').map_or("", |(g, _)| g);
            if !out.contains(&g) {
                out.push(g);
            }
        }
        out
    }

    /// Loads the values stored under `group/` into `store`.
    pub fn restore<T: Real>(&self, group: &str, store: &mut ParamStore<T>) -> Result<()> {
        let prefix = format!("{group}/");
        let named: Vec<(String, Tensor<T>)> = self
            .tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(&prefix).map(|n| (n.to_string(), t.cast())))
            .collect();
        Ok(store.load_named(&named)?)
    }

    /// Compares the stored hash with `expected`. A mismatch is an error unless
    /// `allow` is set; the return value says whether they differed.
    pub fn verify(&self, expected: &str, allow: bool) -> Result<bool> {
        if self.hash == expected {
            Ok(false)
        } else if allow {
            Ok(true)
        } else {
            Err(Error::HashMismatch {
                expected: expected.to_string(),
                found: self.hash.clone(),
            })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.push(role_tag(self.role));
        b.extend_from_slice(&unhex(&self.hash));
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.push(self.dtype as u8);
            b.push(t.shape().len() as u8);
            for &d in t.shape() {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                match self.dtype {
                    Dtype::F32 => b.extend_from_slice(&(v as f32).to_le_bytes()),
                    Dtype::F64 => b.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let role = match r.take(1)?[0] {
            0 => Role::Small,
            1 => Role::Medium,
            2 => Role::Large,
            3 => Role::Boosted,
            t => return Err(format!("unknown role tag {t}")),
        };
        let hash = hex(r.take(32)?);
        let seed = u64::from_le_bytes(r.array()?);
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        let mut dtype = Dtype::F64;
        for _ in 0..count {
            let len = u32::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?.to_string();
            dtype = match r.take(1)?[0] {
                1 => Dtype::F32,
                2 => Dtype::F64,
                t => return Err(format!("{name}: unknown dtype tag {t}")),
            };
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.array().map(|a| u32::from_le_bytes(a) as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = match dtype {
                Dtype::F32 => r.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
                Dtype::F64 => r.take(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            };
            tensors.push((name, Tensor::from_vec(&shape, data).map_err(|e| e.to_string())?));
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self {
            role,
            hash,
            seed,
            dtype,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes).map_err(|detail| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        })
    }
}

fn role_tag(role: Role) -> u8 {
    match role {
        Role::Small => 0,
        Role::Medium => 1,
        Role::Large => 2,
        Role::Boosted => 3,
    }
}

fn unhex(s: &str) -> [u8; 32] {
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = s.get(2 * i..2 * i + 2).and_then(|h| u8::from_str_radix(h, 16).ok()).unwrap_or(0);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}
