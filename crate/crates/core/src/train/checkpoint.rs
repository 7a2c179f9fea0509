//! Versioned binary checkpoints: `JSSU`, version, config JSON, counters,
//! tensor records (parameters and optimizer moments), then the RNG state.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::pipeline::POSTPROC_PREFIX;
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::train::Adam;

pub const MAGIC: &[u8; 4] = b"JSSU";
pub const VERSION: u32 = 1;

const KIND_TRAINABLE: u8 = 0;
const KIND_FIXED: u8 = 1;
const KIND_MOMENT1: u8 = 2;
const KIND_MOMENT2: u8 = 3;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// 1 or 2; the training phase that produced the state.
    pub phase: u8,
    /// Completed epochs in `phase`.
    pub epoch: u64,
    pub params: ParamStore<f32>,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint: truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint: invalid utf-8".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, kind: u8, path: &str, t: &Tensor<f32>) {
    out.push(kind);
    put_str(out, path);
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &serde_json::to_string(&self.config).expect("config serializes"));
        out.push(self.phase);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        out.extend_from_slice(&self.adam.lr.to_le_bytes());
        let count = self.params.len() + self.adam.m.len() + self.adam.v.len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (path, p) in self.params.iter() {
            put_tensor(&mut out, if p.trainable { KIND_TRAINABLE } else { KIND_FIXED }, path, &p.value);
        }
        for (path, t) in &self.adam.m {
            put_tensor(&mut out, KIND_MOMENT1, path, t);
        }
        for (path, t) in &self.adam.v {
            put_tensor(&mut out, KIND_MOMENT2, path, t);
        }
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Format("checkpoint: bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint: unsupported version {version}")));
        }
        let config = RunConfig::from_json(&r.string()?)?;
        let phase = r.u8()?;
        let epoch = r.u64()?;
        let mut adam = Adam::new(1.0);
        adam.step = r.u64()?;
        adam.lr = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let kind = r.u8()?;
            let path = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(4usize, |a, &d| a.checked_mul(d))
                .map(|bytes| bytes / 4)
                .ok_or_else(|| Error::Format("checkpoint: dimension overflow".into()))?;
            let data = r.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::from_vec(&shape, data)?;
            match kind {
                KIND_TRAINABLE | KIND_FIXED => params.insert(path, t, kind == KIND_TRAINABLE),
                KIND_MOMENT1 => {
                    adam.m.insert(path, t);
                }
                KIND_MOMENT2 => {
                    adam.v.insert(path, t);
                }
                k => return Err(Error::Format(format!("checkpoint: unknown record kind {k}"))),
            }
        }
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        if r.pos != bytes.len() {
            return Err(Error::Format("checkpoint: trailing bytes".into()));
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Self { config, phase, epoch, params, adam, rng })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

/// SHA-256 over the paths and values of the parameters selected by `keep`.
pub fn params_digest(params: &ParamStore<f32>, keep: impl Fn(&str) -> bool) -> String {
    let mut h = Sha256::new();
    for (path, p) in params.iter().filter(|(k, _)| keep(k)) {
        h.update(path.as_bytes());
        for &d in p.value.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

/// Digest of everything except the post-processor.
pub fn backbone_digest(params: &ParamStore<f32>) -> String {
    params_digest(params, |k| !k.starts_with(POSTPROC_PREFIX))
}
