//! Parameter checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field |
//! |---|---|
//! | 8 | magic `HOLACKPT` |
//! | 2 | version (u16) |
//! | 1 | stage: 0 pretrain, 1 finetune |
//! | 4 + n | config snapshot length (u32) and UTF-8 text |
//! | 4 | tensor count (u32) |
//! | per tensor | name length (u16), UTF-8 name, trainable flag (u8), rank (u8), dims (u32 each), f64 payload |
//! | 32 | SHA-256 of every preceding byte |

use std::path::Path;

use hola_core::{ParamStore, Tensor};
use sha2::{Digest, Sha256};

use crate::binio::Reader;
use crate::error::{read_file, write_file, Error, FormatError, Result};

pub const CKPT_MAGIC: &[u8; 8] = b"HOLACKPT";
pub const CKPT_VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pretrain => "pretrain",
            Self::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    /// Canonical text of the run configuration that produced the parameters.
    pub config: String,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.push(match self.stage {
            Stage::Pretrain => 0,
            Stage::Finetune => 1,
        });
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for e in self.params.entries() {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.trainable as u8);
            out.push(e.value.shape().len() as u8);
            for &d in e.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, FormatError> {
        let mut r = Reader::new("checkpoint", bytes);
        r.header(CKPT_MAGIC, CKPT_VERSION)?;
        let stage = match r.u8()? {
            0 => Stage::Pretrain,
            1 => Stage::Finetune,
            s => return Err(r.invalid(format!("unknown stage tag {s}"))),
        };
        let config = utf8(&mut r)?;
        let count = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = {
                let n = r.u16()? as usize;
                let at = r.offset();
                String::from_utf8(r.take(n)?.to_vec()).map_err(|_| FormatError::Invalid {
                    what: "checkpoint",
                    offset: at,
                    reason: "tensor name is not UTF-8".into(),
                })?
            };
            if params.id(&name).is_some() {
                return Err(r.invalid(format!("duplicate tensor {name}")));
            }
            let trainable = match r.u8()? {
                0 => false,
                1 => true,
                f => return Err(r.invalid(format!("trainable flag {f}"))),
            };
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel = shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
            let n = r.payload_len(numel.unwrap_or(u64::MAX), 8)?;
            let data = r
                .take(n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let value = Tensor::new(&shape, data).map_err(|e| r.invalid(e.to_string()))?;
            if trainable {
                params.add(&name, value);
            } else {
                params.add_buffer(&name, value);
            }
        }
        let body = r.offset();
        let stored = r.take(DIGEST_LEN)?;
        if Sha256::digest(&bytes[..body]).as_slice() != stored {
            return Err(FormatError::Checksum {
                what: "checkpoint",
                offset: body,
            });
        }
        r.finish()?;
        Ok(Self { stage, config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?).map_err(|e| Error::format(path, e))
    }
}

fn utf8(r: &mut Reader) -> std::result::Result<String, FormatError> {
    let n = r.u32()?;
    let n = r.payload_len(n as u64, 1)?;
    let at = r.offset();
    String::from_utf8(r.take(n)?.to_vec()).map_err(|_| FormatError::Invalid {
        what: "checkpoint",
        offset: at,
        reason: "config snapshot is not UTF-8".into(),
    })
}
