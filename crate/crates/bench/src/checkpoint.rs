//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "HUDCKPT\0" | version u32 | config hash (u32 len + utf8)
//! adam step u64 | store seed u64
//! rng count u32 | { name, seed u64, stream u64, counter u128 }*
//! param count u32 | { name, rows u64, cols u64, frozen u8, value, m, v }*
//! sha256 of everything above (32 bytes)
//! ```
//!
//! Arrays are `rows·cols` f64 values in row-major order. Gradients are not
//! stored.

use std::path::Path;

use hud_core::params::{Param, ParameterStore};
use hud_core::rng::{RngState, RngStream};
use hud_core::tensor::Tensor2D;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{BenchError, Result};
use crate::train::TrainState;

pub const MAGIC: &[u8; 8] = b"HUDCKPT\0";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub store: ParameterStore,
    pub rngs: Vec<(String, RngState)>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

fn put_array(out: &mut Vec<u8>, t: &Tensor2D) {
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| BenchError::Checkpoint(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice length is N"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| BenchError::Checkpoint(e.to_string()))
    }

    fn tensor(&mut self, rows: usize, cols: usize) -> Result<Tensor2D> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| BenchError::Checkpoint(format!("array shape {rows}×{cols} overflows")))?;
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| BenchError::Checkpoint("array too large".into()))?,
        )?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Tensor2D::new(rows, cols, data)?)
    }
}

impl Checkpoint {
    pub fn from_state(cfg: &RunConfig, state: &TrainState) -> Self {
        let mut store = state.store.clone();
        store.zero_grads();
        Self {
            config_hash: cfg.hash(),
            store,
            rngs: vec![
                ("sampler".into(), state.sampler.state()),
                ("noise".into(), state.noise.state()),
            ],
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        put_str(&mut out, &self.config_hash);
        out.extend(self.store.step.to_le_bytes());
        out.extend(self.store.seed.to_le_bytes());
        out.extend((self.rngs.len() as u32).to_le_bytes());
        for (name, s) in &self.rngs {
            put_str(&mut out, name);
            out.extend(s.seed.to_le_bytes());
            out.extend(s.stream.to_le_bytes());
            out.extend(s.counter.to_le_bytes());
        }
        out.extend((self.store.len() as u32).to_le_bytes());
        for (name, p) in self.store.iter() {
            put_str(&mut out, name);
            let (r, c) = p.value.shape();
            out.extend((r as u64).to_le_bytes());
            out.extend((c as u64).to_le_bytes());
            out.push(u8::from(p.frozen));
            put_array(&mut out, &p.value);
            put_array(&mut out, &p.m);
            put_array(&mut out, &p.v);
        }
        let digest = Sha256::digest(&out);
        out.extend(digest.as_slice());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + CHECKSUM_LEN {
            return Err(BenchError::Checksum);
        }
        let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != sum {
            return Err(BenchError::Checksum);
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(BenchError::Checkpoint("not a checkpoint file (bad magic bytes)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(BenchError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let config_hash = r.string()?;
        let step = r.u64()?;
        let seed = r.u64()?;
        let mut rngs = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let state = RngState {
                seed: r.u64()?,
                stream: r.u64()?,
                counter: r.u128()?,
            };
            rngs.push((name, state));
        }
        let mut store = ParameterStore::new(seed);
        store.step = step;
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let frozen = match r.u8()? {
                0 => false,
                1 => true,
                b => return Err(BenchError::Checkpoint(format!("`{name}`: bad frozen flag {b}"))),
            };
            let value = r.tensor(rows, cols)?;
            let m = r.tensor(rows, cols)?;
            let v = r.tensor(rows, cols)?;
            let grad = Tensor2D::zeros(rows, cols);
            store.insert_param(
                name,
                Param {
                    value,
                    grad,
                    m,
                    v,
                    frozen,
                },
            )?;
        }
        if r.pos != body.len() {
            return Err(BenchError::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            config_hash,
            store,
            rngs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Parameters checked against the layout `cfg` would initialize; a
    /// mismatch names the offending array.
    pub fn store_for(&self, cfg: &RunConfig) -> Result<ParameterStore> {
        let reference = cfg.model().init_params(cfg.seed)?;
        self.store.check_layout(&reference)?;
        Ok(self.store.clone())
    }

    /// Restores a training state for `cfg`.
    pub fn into_state(self, cfg: &RunConfig) -> Result<TrainState> {
        let store = self.store_for(cfg)?;
        let find = |name: &str| -> Result<RngStream> {
            self.rngs
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, s)| RngStream::from_state(*s))
                .ok_or_else(|| BenchError::Checkpoint(format!("missing rng state `{name}`")))
        };
        Ok(TrainState {
            sampler: find("sampler")?,
            noise: find("noise")?,
            store,
        })
    }
}
