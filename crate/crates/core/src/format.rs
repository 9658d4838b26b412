//! The `DNP1` container: magic, a length-prefixed `key=value` header, then
//! named 64-bit tensors.
//!
//! ```text
//! "DNP1"
//! u32 header_len, header_len bytes of UTF-8 "key=value\n" lines
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 rank, rank × u32 dims, f64 values
//! ```
//!
//! Integers and floats are little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use thiserror::Error;

use crate::diff::Tensor;

pub const MAGIC: &[u8; 4] = b"DNP1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("unsupported model file version {found:?} (this build reads version {FORMAT_VERSION})")]
    Version { found: String },
    #[error("model header: {0}")]
    Header(String),
}

/// Decoded contents of a container.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Container {
    pub header: IndexMap<String, String>,
    pub tensors: IndexMap<String, Tensor<f64>>,
}

impl Container {
    pub fn get(&self, key: &str) -> Result<&str, FormatError> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| FormatError::Header(format!("missing key {key:?}")))
    }

    /// Parses header value `key` with `FromStr`.
    pub fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V, FormatError> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| FormatError::Header(format!("bad value {raw:?} for {key:?}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<f64>, FormatError> {
        self.tensors
            .get(name)
            .ok_or_else(|| FormatError::Header(format!("missing tensor {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        for (k, v) in &self.header {
            assert!(
                !k.contains(['=', '\n']) && !v.contains('\n'),
                "header entry {k:?}={v:?} is not representable"
            );
            header.push_str(&format!("{k}={v}\n"));
        }
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.numel());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, header.len());
        out.extend_from_slice(header.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(r.corrupt_at(0, "bad magic, expected \"DNP1\""));
        }
        let header_len = r.u32("header length")?;
        let header_start = r.pos;
        let text = std::str::from_utf8(r.take(header_len, "header")?)
            .map_err(|e| r.corrupt_at(header_start + e.valid_up_to(), "header is not UTF-8"))?;
        let mut header = IndexMap::new();
        let mut line_start = header_start;
        for line in text.split_terminator('\n') {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| r.corrupt_at(line_start, "header line without '='"))?;
            header.insert(k.to_string(), v.to_string());
            line_start += line.len() + 1;
        }
        match header.get("version") {
            Some(v) if v == &FORMAT_VERSION.to_string() => {}
            Some(v) => return Err(FormatError::Version { found: v.clone() }),
            None => return Err(r.corrupt_at(header_start, "header has no version")),
        }

        let count = r.u32("tensor count")?;
        let mut tensors = IndexMap::new();
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u32("tensor name length")?;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| r.corrupt_at(at + 4, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32("tensor rank")?;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u32("tensor dimension")?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some())
                .ok_or_else(|| r.corrupt_at(at, "tensor size overflows"))?;
            let raw = r.take(8 * n, "tensor values")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if tensors.insert(name.clone(), Tensor::new(&shape, data)).is_some() {
                return Err(r.corrupt_at(at, &format!("duplicate tensor {name:?}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt_at(r.pos, "trailing bytes after last tensor"));
        }
        Ok(Self { header, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        fs::write(path, self.to_bytes()).map_err(|source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let bytes = fs::read(path).map_err(|source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("length fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.corrupt_at(
                self.pos,
                &format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn corrupt_at(&self, offset: usize, reason: &str) -> FormatError {
        FormatError::Corrupt {
            offset,
            reason: reason.to_string(),
        }
    }
}
