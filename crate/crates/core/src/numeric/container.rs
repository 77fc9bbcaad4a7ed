//! Versioned binary container for model checkpoints.
//!
//! All integers are little-endian `u32`, all reals little-endian IEEE-754 `f64`,
//! strings are a `u32` byte length followed by UTF-8 bytes.
//!
//! ```text
//! magic        8 bytes   "DRIMCKPT"
//! version      u32       FORMAT_VERSION
//! d            u32       embedding dimension
//! k            u32       interest count
//! n_items      u32       item vocabulary size, padding row excluded
//! n_profile    u32       profile embedding rows (0 when absent)
//! config       string    "key=value\n" lines, the effective configuration
//! n_tables     u32
//!   name       string
//!   n_entries  u32
//!   entry      string    (n_entries times)
//! n_matrices   u32
//!   name       string
//!   rows       u32
//!   cols       u32
//!   values     f64       (rows * cols times, row-major)
//! ```

use std::fs;
use std::path::Path;

use super::matrix::DenseMatrix;
use crate::error::{DrimError, Result};

pub const MAGIC: &[u8; 8] = b"DRIMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub d: u32,
    pub k: u32,
    pub n_items: u32,
    pub n_profile: u32,
    pub config: Vec<(String, String)>,
    pub tables: Vec<(String, Vec<String>)>,
    pub matrices: Vec<(String, DenseMatrix)>,
}

impl Container {
    pub fn matrix(&self, name: &str) -> Option<&DenseMatrix> {
        self.matrices.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn table(&self, name: &str) -> Option<&[String]> {
        self.tables
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_slice())
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.d);
        put_u32(&mut out, self.k);
        put_u32(&mut out, self.n_items);
        put_u32(&mut out, self.n_profile);
        let config: String = self
            .config
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        put_str(&mut out, &config);
        put_u32(&mut out, self.tables.len() as u32);
        for (name, entries) in &self.tables {
            put_str(&mut out, name);
            put_u32(&mut out, entries.len() as u32);
            for e in entries {
                put_str(&mut out, e);
            }
        }
        put_u32(&mut out, self.matrices.len() as u32);
        for (name, m) in &self.matrices {
            put_str(&mut out, name);
            put_u32(&mut out, m.rows() as u32);
            put_u32(&mut out, m.cols() as u32);
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(DrimError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(DrimError::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let d = r.u32()?;
        let k = r.u32()?;
        let n_items = r.u32()?;
        let n_profile = r.u32()?;
        let config_text = r.string()?;
        let mut config = Vec::new();
        for line in config_text.split('\n').filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DrimError::Checkpoint(format!("bad config line {line:?}")))?;
            config.push((k.to_string(), v.to_string()));
        }
        let n_tables = r.u32()?;
        let mut tables = Vec::with_capacity(n_tables as usize);
        for _ in 0..n_tables {
            let name = r.string()?;
            let n = r.u32()? as usize;
            let mut entries = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                entries.push(r.string()?);
            }
            tables.push((name, entries));
        }
        let n_mats = r.u32()?;
        let mut matrices = Vec::with_capacity(n_mats as usize);
        for _ in 0..n_mats {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows * cols * 8)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            matrices.push((name, DenseMatrix::from_vec(rows, cols, values)));
        }
        if r.pos != bytes.len() {
            return Err(DrimError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            d,
            k,
            n_items,
            n_profile,
            config,
            tables,
            matrices,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| DrimError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| DrimError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
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
            .ok_or_else(|| DrimError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| DrimError::Checkpoint(format!("invalid utf-8 near byte {}", self.pos)))
    }
}
