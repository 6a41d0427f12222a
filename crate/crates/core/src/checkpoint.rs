//! Portable binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! | bytes            | content                                            |
//! |------------------|----------------------------------------------------|
//! | 4                | magic `CFRC`                                       |
//! | 4                | format version (`u32`, currently 1)                |
//! | 4 x 8            | `N`, `M`, `d`, `L` (`u64`)                         |
//! | 4 + k            | config snapshot: `u32` length, then UTF-8 `key=value\n` lines sorted by key |
//! | 4 x N x d        | user embeddings, `f32`, row-major                  |
//! | 4 x M x d        | item embeddings, `f32`, row-major                  |
//! | 8                | checksum: first 8 bytes of SHA-256 over everything above, read as `u64` |

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::EmbeddingState;

pub const MAGIC: [u8; 4] = *b"CFRC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub layers: usize,
    pub config: BTreeMap<String, String>,
    pub user_emb: Vec<f32>,
    pub item_emb: Vec<f32>,
}

pub fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl Checkpoint {
    /// Snapshot of the layer-0 tables, rounded to `f32`.
    pub fn from_state(
        state: &EmbeddingState,
        layers: usize,
        config: BTreeMap<String, String>,
    ) -> Self {
        Self {
            num_users: state.num_users(),
            num_items: state.num_items(),
            dim: state.dim(),
            layers,
            config,
            user_emb: state
                .user_emb
                .as_slice()
                .iter()
                .map(|&x| x as f32)
                .collect(),
            item_emb: state
                .item_emb
                .as_slice()
                .iter()
                .map(|&x| x as f32)
                .collect(),
        }
    }

    /// Layer-0 tables widened back to `f64`; the readout still needs
    /// [`EmbeddingState::propagate`].
    pub fn to_state(&self) -> EmbeddingState {
        let widen = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        EmbeddingState::from_layer0(
            Matrix::from_vec(self.num_users, self.dim, widen(&self.user_emb)),
            Matrix::from_vec(self.num_items, self.dim, widen(&self.item_emb)),
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.user_emb.len() != self.num_users * self.dim
            || self.item_emb.len() != self.num_items * self.dim
        {
            return Err(Error::DimensionMismatch(
                "embedding lengths disagree with checkpoint dims".into(),
            ));
        }
        let mut config = String::new();
        for (k, v) in &self.config {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::InvalidConfig(format!(
                    "config entry `{k}` cannot be stored in a checkpoint"
                )));
            }
            config.push_str(k);
            config.push('=');
            config.push_str(v);
            config.push('\n');
        }
        let mut out = Vec::with_capacity(
            48 + config.len() + 4 * (self.user_emb.len() + self.item_emb.len()) + 8,
        );
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for dim in [self.num_users, self.num_items, self.dim, self.layers] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        for x in self.user_emb.iter().chain(&self.item_emb) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let malformed = |msg: &str| Error::MalformedCheckpoint(msg.to_owned());
        if bytes.len() < 8 + 32 + 4 + 8 {
            return Err(malformed("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let computed = checksum(body);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }

        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(malformed("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(malformed(&format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = usize::try_from(r.u64()?).map_err(|_| malformed("dimension overflow"))?;
        }
        let [num_users, num_items, dim, layers] = dims;
        let cfg_len = r.u32()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|_| malformed("config snapshot is not UTF-8"))?;
        let mut config = BTreeMap::new();
        for line in cfg_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| malformed("config line without `=`"))?;
            config.insert(k.to_owned(), v.to_owned());
        }

        let floats = |n: usize| -> Option<usize> { n.checked_mul(dim)?.checked_mul(4) };
        let user_bytes = floats(num_users).ok_or_else(|| malformed("dimension overflow"))?;
        let item_bytes = floats(num_items).ok_or_else(|| malformed("dimension overflow"))?;
        if r.remaining() != user_bytes.saturating_add(item_bytes) {
            return Err(malformed(&format!(
                "expected {} embedding bytes, found {}",
                user_bytes.saturating_add(item_bytes),
                r.remaining()
            )));
        }
        let decode = |raw: &[u8]| -> Vec<f32> {
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect()
        };
        let user_emb = decode(r.take(user_bytes)?);
        let item_emb = decode(r.take(item_bytes)?);
        Ok(Self {
            num_users,
            num_items,
            dim,
            layers,
            config,
            user_emb,
            item_emb,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::MalformedCheckpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}
