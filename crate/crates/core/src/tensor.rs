//! Raw float tensor files: `PC2DTNSR` | u32 ndim | u32 dims[ndim] | f32 payload,
//! all little-endian, payload row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PC2DTNSR";

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().map(|&d| d as usize).product();
        if expected != data.len() {
            return Err(Error::Shape(format!("dims {dims:?} need {expected} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err("missing PC2DTNSR header".into());
        }
        let word = |at: usize| -> std::result::Result<u32, String> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| "truncated header".to_string())
        };
        let ndim = word(8)? as usize;
        if ndim > 16 {
            return Err(format!("implausible rank {ndim}"));
        }
        let dims: Vec<u32> = (0..ndim).map(|i| word(12 + 4 * i)).collect::<std::result::Result<_, _>>()?;
        let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize)).ok_or("dims overflow")?;
        let start = 12 + 4 * ndim;
        let payload = &bytes[start..];
        if payload.len() != count * 4 {
            return Err(format!("payload has {} bytes, dims {dims:?} need {}", payload.len(), count * 4));
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }
}
