//! `.pfv` patch-feature interchange files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PFV1" | u32 grid_h | u32 grid_w | u32 dim | u32 flags
//!        | grid_h * grid_w * dim f32, ordered (row, column, channel)
//!        | u32 metadata length | UTF-8 JSON metadata
//! ```
//!
//! Flag bit 0 marks unit-normalized feature vectors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::PatchFeatureGrid;
use crate::error::{Error, Result};

pub const PFV_MAGIC: &[u8; 4] = b"PFV1";
pub const FLAG_UNIT_NORMALIZED: u32 = 1;
const HEADER_LEN: usize = 4 + 16;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureFileMeta {
    #[serde(default)]
    pub source_id: String,
    #[serde(default)]
    pub backbone: String,
    #[serde(default)]
    pub resolution: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub grid: PatchFeatureGrid,
    pub meta: FeatureFileMeta,
    pub flags: u32,
}

pub fn encode_feature_file(grid: &PatchFeatureGrid, meta: &FeatureFileMeta, flags: u32) -> Vec<u8> {
    let json = serde_json::to_vec(meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + grid.data().len() * 4 + 4 + json.len());
    out.extend_from_slice(PFV_MAGIC);
    for v in [grid.grid_h() as u32, grid.grid_w() as u32, grid.dim() as u32, flags] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} available",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let nbytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.pos as u64, format!("{what} size overflows")))?;
        let start = self.pos;
        let raw = self.take(nbytes, what)?;
        let mut out = Vec::with_capacity(n);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(
                    (start + 4 * i) as u64,
                    format!("non-finite value {v} in {what}"),
                ));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4, "magic")?;
        if m != magic {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(m),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    pub fn json<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T> {
        let len = self.u32("metadata length")? as usize;
        let start = self.pos;
        let raw = self.take(len, "metadata")?;
        let parsed = serde_json::from_slice(raw)
            .map_err(|e| Error::format(start as u64, format!("bad metadata JSON: {e}")))?;
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(parsed)
    }
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<FeatureFile> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(PFV_MAGIC)?;
    let grid_h = r.u32("grid_h")? as usize;
    let grid_w = r.u32("grid_w")? as usize;
    let dim = r.u32("dim")? as usize;
    let flags = r.u32("flags")?;
    if grid_h == 0 || grid_w == 0 || dim == 0 {
        return Err(Error::format(
            4,
            format!("empty grid {grid_h}x{grid_w} dim {dim}"),
        ));
    }
    let n = grid_h
        .checked_mul(grid_w)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::format(4, "grid size overflows"))?;
    let data = r.f32s(n, "feature payload")?;
    let meta: FeatureFileMeta = r.json()?;
    let grid = PatchFeatureGrid::new(grid_h, grid_w, dim, data, meta.source_id.clone())?;
    Ok(FeatureFile { grid, meta, flags })
}

pub fn write_feature_file(
    path: impl AsRef<Path>,
    grid: &PatchFeatureGrid,
    meta: &FeatureFileMeta,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_feature_file(grid, meta, 0)).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_file(&bytes)
}
