//! `.amb` memory bank files.
//!
//! ```text
//! "AMB1" | u32 dim | u64 count | u32 flags | count * dim f32 | u32 meta length | JSON meta
//! ```
//!
//! Rows are stored as supplied to the bank (flag bit 0 clear) so that a
//! reloaded bank normalizes them to bit-identical unit vectors.

use std::path::Path;

use super::{BankMeta, MemoryBank};
use crate::error::{Error, Result};
use crate::features::{Reader, FLAG_UNIT_NORMALIZED};

pub const AMB_MAGIC: &[u8; 4] = b"AMB1";

pub fn encode_bank(bank: &MemoryBank) -> Vec<u8> {
    let json = serde_json::to_vec(bank.meta()).expect("bank metadata serializes");
    let mut out = Vec::with_capacity(20 + bank.raw_rows().len() * 4 + 4 + json.len());
    out.extend_from_slice(AMB_MAGIC);
    out.extend_from_slice(&(bank.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(bank.count() as u64).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in bank.raw_rows() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out
}

pub fn decode_bank(bytes: &[u8]) -> Result<MemoryBank> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(AMB_MAGIC)?;
    let dim = r.u32("dim")? as usize;
    let count = r.u64("count")? as usize;
    let flags = r.u32("flags")?;
    if dim == 0 || count == 0 {
        return Err(Error::format(4, format!("empty bank: dim {dim}, count {count}")));
    }
    if flags & !FLAG_UNIT_NORMALIZED != 0 {
        return Err(Error::format(16, format!("unknown flags {flags:#x}")));
    }
    let n = dim
        .checked_mul(count)
        .ok_or_else(|| Error::format(4, "bank size overflows"))?;
    let raw = r.f32s(n, "bank rows")?;
    let mut meta: BankMeta = r.json()?;
    // from_rows re-counts replacements; keep the original tally instead
    let replaced = std::mem::take(&mut meta.zero_replaced);
    let mut bank = MemoryBank::from_rows(dim, raw, meta)?;
    bank.meta_mut().zero_replaced += replaced;
    Ok(bank)
}

pub fn write_bank(path: impl AsRef<Path>, bank: &MemoryBank) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_bank(bank)).map_err(|e| Error::io(path, e))
}

pub fn read_bank(path: impl AsRef<Path>) -> Result<MemoryBank> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bank(&bytes)
}
