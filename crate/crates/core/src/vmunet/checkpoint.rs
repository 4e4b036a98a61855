//! Self-describing binary checkpoint container.
//!
//! ```text
//! magic      8 bytes  "VMSEGCK1"
//! header     u32 length + UTF-8 key=value text (model config)
//! count      u32
//! per tensor u32 name length + UTF-8 name
//!            u8  dtype tag (0 = f32, 1 = f64)
//!            u32 rank, then rank x u64 dims
//!            raw little-endian values
//! ```
//!
//! All integers are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{VmUnet, VmUnetConfig};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"VMSEGCK1";

/// A decoded checkpoint with tensors widened to f64 and their stored dtype.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: KvMap,
    pub tensors: Vec<StoredTensor>,
}

#[derive(Debug, Clone)]
pub struct StoredTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl StoredTensor {
    pub fn from_tensor<T: Scalar>(name: &str, t: &Tensor<T>) -> Self {
        let mut bytes = Vec::with_capacity(t.len() * T::DTYPE.size());
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
        Self {
            name: name.to_string(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        }
    }

    /// Decodes into `T`, converting when the stored dtype differs.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let sz = self.dtype.size();
        let data: Vec<T> = match self.dtype {
            DType::F32 => self
                .bytes
                .chunks_exact(sz)
                .map(|b| T::of(f32::read_le(b) as f64))
                .collect(),
            DType::F64 => self
                .bytes
                .chunks_exact(sz)
                .map(|b| T::of(f64::read_le(b)))
                .collect(),
        };
        Tensor::new(self.shape.clone(), data)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let header = self.header.to_text();
        put_u32(&mut out, header.len())?;
        out.extend_from_slice(header.as_bytes());
        put_u32(&mut out, self.tensors.len())?;
        for t in &self.tensors {
            put_u32(&mut out, t.name.len())?;
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dtype.tag());
            put_u32(&mut out, t.shape.len())?;
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.bytes);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let hlen = r.u32()?;
        let header = std::str::from_utf8(r.take(hlen)?)
            .map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let header = KvMap::parse(header)?;
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u32()?;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag)
                .ok_or_else(|| Error::Format(format!("unknown dtype tag {tag} for `{name}`")))?;
            let rank = r.u32()?;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                let d = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                shape.push(
                    usize::try_from(d).map_err(|_| Error::Format("dimension overflow".into()))?,
                );
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size()))
                .ok_or_else(|| Error::Format(format!("size overflow for `{name}`")))?;
            let data = r.take(n)?.to_vec();
            tensors.push(StoredTensor {
                name,
                dtype,
                shape,
                bytes: data,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { header, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::Load {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

impl<T: Scalar> VmUnet<T> {
    /// Packs the config and all weights. `extra` entries are appended to
    /// the header (e.g. training metadata).
    pub fn to_checkpoint(&self, extra: &KvMap) -> Checkpoint {
        let mut header = self.cfg.to_kv();
        header.merge(extra);
        let tensors = self
            .params
            .iter()
            .map(|(n, t)| StoredTensor::from_tensor(n, t))
            .collect();
        Checkpoint { header, tensors }
    }

    /// Rebuilds a model from a checkpoint; every parameter must be present
    /// with its expected shape.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = VmUnetConfig::from_kv(&ck.header, VmUnetConfig::tiny())?;
        // the initial values are overwritten below
        let mut model = Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        if ck.tensors.len() != model.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model needs {}",
                ck.tensors.len(),
                model.params.len()
            )));
        }
        for st in &ck.tensors {
            let t = st.to_tensor::<T>()?;
            model.params.set(&st.name, t).map_err(|e| match e {
                Error::Config(m) | Error::Dimension(m) => Error::Format(m),
                other => other,
            })?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path, extra: &KvMap) -> Result<()> {
        self.to_checkpoint(extra).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}
