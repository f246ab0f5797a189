//! Versioned binary checkpoints.
//!
//! Layout: magic `CBTN`, format version (u32 LE), header length (u32 LE)
//! and a JSON header (config, training metadata, optimiser settings), record
//! count (u32 LE), then per tensor: name length (u32), name bytes, rank
//! (u32), dims (u32 each), values (f32 LE).

use std::fs;
use std::io::Write;
use std::path::Path;

use cbt_tensor::{AdamConfig, AdamState, ParamSet, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{CbtNet, CbtNetConfig};

pub const MAGIC: &[u8; 4] = b"CBTN";
pub const VERSION: u32 = 1;

/// Provenance of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub step: u64,
    pub layer_k: u8,
    pub resolution: String,
    /// Loss of the last completed step, when known.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: CbtNetConfig,
    metadata: TrainingMetadata,
    batch_norm_momentum: f32,
    batch_norm_epsilon: f32,
    adam: Option<AdamHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CbtNet<f32>,
    pub adam: Option<AdamState<f32>>,
    pub metadata: TrainingMetadata,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| invalid("checkpoint", format!("{v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    put_u32(buf, name.len())?;
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, t.ndim())?;
    for &d in t.dims() {
        put_u32(buf, d)?;
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let bn0 = self
            .model
            .bn
            .first()
            .ok_or_else(|| invalid("checkpoint", "model without norm layers"))?;
        let header = Header {
            config: self.model.config.clone(),
            metadata: self.metadata.clone(),
            batch_norm_momentum: bn0.momentum,
            batch_norm_epsilon: bn0.epsilon,
            adam: self.adam.as_ref().map(|a| AdamHeader {
                lr: a.config.lr,
                beta1: a.config.beta1,
                beta2: a.config.beta2,
                epsilon: a.config.epsilon,
                step_count: a.step_count,
            }),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut buf, json.len())?;
        buf.extend_from_slice(&json);
        let p = &self.model.params;
        let n_adam = if self.adam.is_some() { 2 * p.len() } else { 0 };
        put_u32(&mut buf, p.len() + 2 * self.model.bn.len() + n_adam)?;
        for (name, t) in p.iter() {
            put_tensor(&mut buf, name, t)?;
        }
        for (i, s) in self.model.bn.iter().enumerate() {
            put_tensor(&mut buf, &format!("feat{}.bn.running_mean", i + 1), &s.running_mean)?;
            put_tensor(&mut buf, &format!("feat{}.bn.running_var", i + 1), &s.running_var)?;
        }
        if let Some(a) = &self.adam {
            for (i, (name, _)) in p.iter().enumerate() {
                put_tensor(&mut buf, &format!("adam.m.{name}"), &a.m[i])?;
                put_tensor(&mut buf, &format!("adam.v.{name}"), &a.v[i])?;
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Format {
            path: origin.to_path_buf(),
            reason,
        };
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4).map_err(&fail)?;
        if magic != MAGIC {
            return Err(fail(format!("bad magic {magic:?}, expected {MAGIC:?}")));
        }
        let version = r.u32().map_err(&fail)?;
        if version != VERSION {
            return Err(fail(format!("unsupported version {version}, expected {VERSION}")));
        }
        let hlen = r.u32().map_err(&fail)? as usize;
        let header: Header =
            serde_json::from_slice(r.take(hlen).map_err(&fail)?).map_err(|e| fail(format!("header: {e}")))?;
        let mut model = CbtNet::<f32>::new(header.config.clone(), 0).map_err(|e| fail(e.to_string()))?;
        for s in &mut model.bn {
            s.momentum = header.batch_norm_momentum;
            s.epsilon = header.batch_norm_epsilon;
        }
        let count = r.u32().map_err(&fail)? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            records.push(r.tensor().map_err(&fail)?);
        }
        if r.pos != bytes.len() {
            return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut records = records.into_iter();
        let mut next = |want: &str, dims: &[usize]| -> Result<Tensor<f32>> {
            let (name, t) = records.next().ok_or_else(|| fail(format!("missing tensor {want}")))?;
            if name != want || t.dims() != dims {
                return Err(fail(format!("expected {want} {dims:?}, found {name} {:?}", t.dims())));
            }
            Ok(t)
        };
        let names: Vec<(String, Vec<usize>)> = model
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.dims().to_vec()))
            .collect();
        let mut params = ParamSet::new();
        for (name, dims) in &names {
            params.push(name.clone(), next(name, dims)?);
        }
        for (i, s) in model.bn.iter_mut().enumerate() {
            let c = [s.channels()];
            s.running_mean = next(&format!("feat{}.bn.running_mean", i + 1), &c)?;
            s.running_var = next(&format!("feat{}.bn.running_var", i + 1), &c)?;
        }
        let adam = match &header.adam {
            None => None,
            Some(h) => {
                let config = AdamConfig {
                    lr: h.lr,
                    beta1: h.beta1,
                    beta2: h.beta2,
                    epsilon: h.epsilon,
                };
                let mut st = AdamState::new(config, &params);
                st.step_count = h.step_count;
                for (i, (name, dims)) in names.iter().enumerate() {
                    st.m[i] = next(&format!("adam.m.{name}"), dims)?;
                    st.v[i] = next(&format!("adam.v.{name}"), dims)?;
                }
                Some(st)
            }
        };
        if let Some((name, _)) = records.next() {
            return Err(fail(format!("unexpected tensor {name}")));
        }
        model.params = params;
        Ok(Self {
            model,
            adam,
            metadata: header.metadata,
        })
    }

    /// Writes atomically: a sibling temporary file is renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| Error::Io {
            context: format!("reading {}", path.display()),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |what: &str| {
        let context = format!("{what} {}", path.display());
        move |source| Error::Io { context, source }
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| invalid("write", format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.partial", file_name.to_string_lossy()));
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp).map_err(io("creating"))?;
        f.write_all(bytes).map_err(io("writing"))?;
        f.sync_all().map_err(io("syncing"))?;
        fs::rename(&tmp, path).map_err(io("renaming onto"))?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                )
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self) -> std::result::Result<(String, Tensor<f32>), String> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec()).map_err(|e| format!("tensor name: {e}"))?;
        let rank = self.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or("tensor size overflow")?;
        let raw = self.take(count.checked_mul(4).ok_or("tensor size overflow")?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::from_vec(&dims, data).map_err(|e| format!("tensor {name}: {e}"))?;
        Ok((name, t))
    }
}
