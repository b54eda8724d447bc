//! Binary checkpoint files for named parameter tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "MGRL0001"
//! count   u64      number of parameter records
//! record  repeated count times:
//!     name_len  u32
//!     name      name_len bytes of UTF-8
//!     rank      u32
//!     extents   rank x u64
//!     values    prod(extents) x f64, row-major
//! checksum u64     FNV-1a over every byte after the magic and before
//!                  this field
//! ```
//!
//! Records are written in ascending name order, so saving the same store
//! twice produces byte-identical files. A model checkpoint is a plain
//! store whose entries carry `policy.` / `disc.` prefixes plus `meta.*`
//! scalars describing the architecture.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::nets::{Aggregation, GcpnConfig};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"MGRL0001";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("integrity failure in {path}: {detail}")]
    Integrity { path: PathBuf, detail: String },
    #[error("malformed checkpoint {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
}

impl CheckpointError {
    /// True for damage to the file itself (bad magic, checksum mismatch,
    /// truncation) as opposed to I/O or schema problems.
    pub fn is_integrity(&self) -> bool {
        matches!(self, CheckpointError::Integrity { .. })
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Serialize a store to the checkpoint byte format.
pub fn to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (name, t) in store.iter() {
        payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
        payload.extend_from_slice(name.as_bytes());
        let shape = t.shape();
        payload.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &e in shape {
            payload.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a(&payload);
    let mut out = Vec::with_capacity(MAGIC.len() + payload.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Integrity {
                path: self.path.to_path_buf(),
                detail: format!(
                    "truncated: needed {} bytes at offset {}, file holds {}",
                    n,
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse checkpoint bytes back into a store, verifying magic and checksum.
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ParamStore, CheckpointError> {
    if bytes.len() < MAGIC.len() + 8 + 8 {
        return Err(CheckpointError::Integrity {
            path: path.to_path_buf(),
            detail: format!("file too short ({} bytes)", bytes.len()),
        });
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::Integrity {
            path: path.to_path_buf(),
            detail: "bad magic bytes".into(),
        });
    }
    let payload = &bytes[MAGIC.len()..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a(payload);
    if stored != computed {
        return Err(CheckpointError::Integrity {
            path: path.to_path_buf(),
            detail: format!("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"),
        });
    }

    let mut r = Reader {
        bytes: payload,
        pos: 0,
        path,
    };
    let count = r.u64()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name_bytes = r.take(name_len)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Malformed {
                path: path.to_path_buf(),
                detail: "parameter name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed {
            path: path.to_path_buf(),
            detail: format!("parameter '{name}': {e}"),
        })?;
        if store.contains(&name) {
            return Err(CheckpointError::Malformed {
                path: path.to_path_buf(),
                detail: format!("duplicate parameter '{name}'"),
            });
        }
        store.insert(name, t);
    }
    if r.pos != payload.len() {
        return Err(CheckpointError::Malformed {
            path: path.to_path_buf(),
            detail: format!(
                "{} trailing bytes after the last record",
                payload.len() - r.pos
            ),
        });
    }
    Ok(store)
}

/// Write a store to disk.
pub fn save(path: impl AsRef<Path>, store: &ParamStore) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, to_bytes(store)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a store from disk, verifying integrity.
pub fn load(path: impl AsRef<Path>) -> Result<ParamStore, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes, path)
}

// ---------------------------------------------------------------------------
// Model checkpoints: policy (+ optional discriminator) + architecture
// ---------------------------------------------------------------------------

/// A trained model: architecture settings, policy parameters, and (when
/// adversarial training is active) discriminator parameters.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub cfg: GcpnConfig,
    pub policy: ParamStore,
    pub disc: Option<ParamStore>,
}

fn meta_scalar(v: f64) -> Tensor {
    Tensor::new(vec![1, 1], vec![v]).expect("scalar shape")
}

fn agg_code(a: Aggregation) -> f64 {
    match a {
        Aggregation::Sum => 0.0,
        Aggregation::Mean => 1.0,
        Aggregation::Max => 2.0,
        Aggregation::Concat => 3.0,
    }
}

fn agg_from_code(v: f64, path: &Path) -> Result<Aggregation, CheckpointError> {
    match v as i64 {
        0 => Ok(Aggregation::Sum),
        1 => Ok(Aggregation::Mean),
        2 => Ok(Aggregation::Max),
        3 => Ok(Aggregation::Concat),
        other => Err(CheckpointError::Malformed {
            path: path.to_path_buf(),
            detail: format!("meta.agg code {other} is not a known aggregation"),
        }),
    }
}

impl ModelCheckpoint {
    /// Flatten into a single prefixed store.
    pub fn to_store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        store.absorb_prefixed("policy.", self.policy.clone());
        if let Some(d) = &self.disc {
            store.absorb_prefixed("disc.", d.clone());
        }
        store.insert("meta.layers", meta_scalar(self.cfg.layers as f64));
        store.insert("meta.embed_dim", meta_scalar(self.cfg.embed_dim as f64));
        store.insert("meta.agg", meta_scalar(agg_code(self.cfg.agg)));
        store.insert(
            "meta.batch_norm",
            meta_scalar(if self.cfg.batch_norm { 1.0 } else { 0.0 }),
        );
        store.insert("meta.atom_cap", meta_scalar(self.cfg.atom_cap as f64));
        store
    }

    pub fn from_store(store: &ParamStore, path: &Path) -> Result<ModelCheckpoint, CheckpointError> {
        let meta = |name: &str| -> Result<f64, CheckpointError> {
            store
                .get(name)
                .map(|t| t.data()[0])
                .map_err(|_| CheckpointError::Malformed {
                    path: path.to_path_buf(),
                    detail: format!("missing required entry '{name}'"),
                })
        };
        let usize_meta = |name: &str| -> Result<usize, CheckpointError> {
            let v = meta(name)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(CheckpointError::Malformed {
                    path: path.to_path_buf(),
                    detail: format!("{name} must be a non-negative integer, got {v}"),
                });
            }
            Ok(v as usize)
        };
        let cfg = GcpnConfig {
            layers: usize_meta("meta.layers")?,
            embed_dim: usize_meta("meta.embed_dim")?,
            agg: agg_from_code(meta("meta.agg")?, path)?,
            batch_norm: meta("meta.batch_norm")? != 0.0,
            atom_cap: usize_meta("meta.atom_cap")?,
        };
        let policy = store.extract_prefixed("policy.");
        if policy.is_empty() {
            return Err(CheckpointError::Malformed {
                path: path.to_path_buf(),
                detail: "no policy parameters present".into(),
            });
        }
        let disc = {
            let d = store.extract_prefixed("disc.");
            if d.is_empty() {
                None
            } else {
                Some(d)
            }
        };
        Ok(ModelCheckpoint { cfg, policy, disc })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        save(path, &self.to_store())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ModelCheckpoint, CheckpointError> {
        let path = path.as_ref();
        let store = load(path)?;
        ModelCheckpoint::from_store(&store, path)
    }
}
