//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `NDCT`, u32 version, u8 stage, NormStats
//! block (u32 dims, f32 values), config text and vocabulary table (each a
//! u32 length plus UTF-8), u64 vocabulary hash, u32 tensor count, then per
//! tensor a u32-length-prefixed name, u32 rank, u32 dims and f32 values.
//! A CRC32 of everything before it closes the file.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::NormStats;
use crate::numerics::{ParamStore, Tensor};
use crate::transducer::Vocabulary;

pub const MAGIC: &[u8; 4] = b"NDCT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: u8,
    pub config_text: String,
    pub vocab: Vocabulary,
    pub norm: NormStats,
    /// Values are exactly representable in 32 bits.
    pub params: ParamStore,
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

impl Checkpoint {
    /// Builds a checkpoint, rounding every value to 32-bit precision so the
    /// in-memory copy equals what a reload produces.
    pub fn new(
        stage: u8,
        config_text: String,
        vocab: Vocabulary,
        norm: NormStats,
        params: &ParamStore,
    ) -> Self {
        let mut rounded = ParamStore::new();
        for (name, p) in params.iter() {
            rounded.insert(name.clone(), p.value.map(round_f32));
        }
        Checkpoint {
            stage,
            config_text,
            vocab,
            norm: NormStats {
                mean: norm.mean.into_iter().map(round_f32).collect(),
            },
            params: rounded,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.stage);
        out.extend_from_slice(&(self.norm.mean.len() as u32).to_le_bytes());
        for &m in &self.norm.mean {
            out.extend_from_slice(&(m as f32).to_le_bytes());
        }
        for text in [self.config_text.as_str(), self.vocab.to_tsv().as_str()] {
            out.extend_from_slice(&(text.len() as u32).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        out.extend_from_slice(&self.vocab.hash().to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in p.value.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(bad(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..bytes.len().min(4)]),
                std::str::from_utf8(MAGIC).expect("ascii")
            )));
        }
        if bytes.len() < 12 {
            return Err(bad("truncated header".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!(
                "unsupported version {}, expected {}",
                version, VERSION
            )));
        }
        let stored_crc = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored_crc {
            return Err(bad("CRC mismatch: file is truncated or corrupt".into()));
        }
        let stage = r.u8()?;
        let dims = r.u32()? as usize;
        let mean = (0..dims)
            .map(|_| r.f32().map(|v| v as f64))
            .collect::<Result<Vec<_>>>()?;
        let config_text = r.string()?;
        let vocab_tsv = r.string()?;
        let vocab =
            Vocabulary::from_tsv(&vocab_tsv).map_err(|e| bad(format!("vocabulary: {}", e)))?;
        let hash = r.u64()?;
        if hash != vocab.hash() {
            return Err(bad("vocabulary hash does not match the stored table".into()));
        }
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| r.f32().map(|v| v as f64))
                .collect::<Result<Vec<_>>>()?;
            if params.contains(&name) {
                return Err(bad(format!("duplicate tensor {}", name)));
            }
            params.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != body.len() {
            return Err(bad(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Checkpoint {
            stage,
            config_text,
            vocab,
            norm: NormStats { mean },
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {}", path.display(), msg)),
            other => other,
        })
    }

    /// Errors unless the tensor names are exactly `expected`, listing the
    /// missing and unexpected names.
    pub fn expect_names(&self, expected: &BTreeSet<String>) -> Result<()> {
        let have: BTreeSet<String> = self.params.names().cloned().collect();
        let missing: Vec<&String> = expected.difference(&have).collect();
        let unexpected: Vec<&String> = have.difference(expected).collect();
        if missing.is_empty() && unexpected.is_empty() {
            return Ok(());
        }
        Err(Error::Checkpoint(format!(
            "tensor names do not match the configuration; missing: [{}]; unexpected: [{}]",
            join_short(&missing),
            join_short(&unexpected)
        )))
    }
}

fn join_short(names: &[&String]) -> String {
    const SHOW: usize = 8;
    let mut s = names
        .iter()
        .take(SHOW)
        .map(|n| n.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    if names.len() > SHOW {
        s.push_str(&format!(", … ({} more)", names.len() - SHOW));
    }
    s
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?.to_vec();
        String::from_utf8(bytes)
            .map_err(|_| Error::Checkpoint("invalid UTF-8 in string field".into()))
    }
}
