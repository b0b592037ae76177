//! Nominal patch memory bank and exact cosine nearest-neighbor search.

mod amb;
mod coreset;
pub(crate) mod scan;

use serde::{Deserialize, Serialize};

pub use amb::{decode_bank, encode_bank, read_bank, write_bank, AMB_MAGIC};
pub use coreset::coreset_reduce;
pub use scan::{normalize, normalize_f64};

use crate::error::{Error, Result};
use crate::features::PatchFeatureGrid;
use crate::masking::PatchMask;
use crate::scoring::PatchDistances;
use scan::UnitPanel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetRecord {
    pub original_count: usize,
    pub target: usize,
    pub seed: u64,
}

/// Provenance of a memory bank; serialized into the bank file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BankMeta {
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub shots: usize,
    #[serde(default)]
    pub rotation_angles: Vec<f64>,
    #[serde(default)]
    pub backbone: String,
    #[serde(default)]
    pub resolution: u32,
    /// Rows that were zero vectors and got replaced by the first basis vector.
    #[serde(default)]
    pub zero_replaced: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coreset: Option<CoresetRecord>,
    /// Masking test outcome, policy and the resolved masking switch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masking: Option<serde_json::Value>,
    /// Echo of the configuration that produced the bank.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Immutable set of unit-normalized nominal patch vectors.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    dim: usize,
    /// Rows as supplied (after zero replacement), kept for exact persistence.
    raw: Vec<f32>,
    panel: UnitPanel,
    meta: BankMeta,
}

impl MemoryBank {
    /// Builds a bank from flat rows. Zero rows are replaced by `e_0`.
    pub fn from_rows(dim: usize, mut raw: Vec<f32>, mut meta: BankMeta) -> Result<Self> {
        if dim == 0 || raw.is_empty() || raw.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "bank needs a non-empty multiple of dim {dim} values, got {}",
                raw.len()
            )));
        }
        let mut unit = Vec::with_capacity(raw.len());
        let mut replaced = 0;
        for row in raw.chunks_exact_mut(dim) {
            match normalize(row) {
                Some(u) => unit.extend(u),
                None => {
                    row.fill(0.0);
                    row[0] = 1.0;
                    unit.extend(row.iter().map(|&v| v as f64));
                    replaced += 1;
                }
            }
        }
        if replaced > 0 {
            log::warn!("{replaced} zero feature vectors replaced by a basis vector");
        }
        meta.zero_replaced += replaced;
        Ok(Self {
            dim,
            panel: UnitPanel::from_rows(&unit, dim),
            raw,
            meta,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.panel.count()
    }

    pub fn meta(&self) -> &BankMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut BankMeta {
        &mut self.meta
    }

    pub fn raw_rows(&self) -> &[f32] {
        &self.raw
    }

    pub fn raw_row(&self, i: usize) -> &[f32] {
        &self.raw[i * self.dim..(i + 1) * self.dim]
    }

    /// Unit-normalized row `i`.
    pub fn unit_row(&self, i: usize) -> Vec<f64> {
        self.panel.row(i)
    }

    /// Maximum cosine similarity of each unit query (flat, `dim` per row).
    pub fn max_similarities(&self, unit_queries: &[f64]) -> Vec<f64> {
        self.panel.max_dots(unit_queries)
    }
}

/// Collects every patch of every grid into a bank.
pub fn build_bank(grids: &[PatchFeatureGrid], meta: BankMeta) -> Result<MemoryBank> {
    let first = grids
        .first()
        .ok_or_else(|| Error::invalid("cannot build a memory bank from zero grids"))?;
    let dim = first.dim();
    let mut raw = Vec::with_capacity(grids.iter().map(|g| g.data().len()).sum());
    for g in grids {
        if g.dim() != dim {
            return Err(Error::invalid(format!(
                "grid {:?} has dim {}, expected {dim}",
                g.source_id(),
                g.dim()
            )));
        }
        raw.extend_from_slice(g.data());
    }
    MemoryBank::from_rows(dim, raw, meta)
}

/// `1 - <a, b> / (|a| |b|)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine distance of a zero vector"));
    }
    Ok(similarity_to_distance(scan::dot(a, b) / (na * nb)))
}

/// Distances below this are rounding residue of a unit vector's dot with
/// itself and are reported as exact zeros.
pub const ZERO_SNAP: f64 = 1e-13;

pub(crate) fn similarity_to_distance(sim: f64) -> f64 {
    let d = 1.0 - sim;
    if d < ZERO_SNAP {
        0.0
    } else {
        d.min(2.0)
    }
}

/// Distance from `p` to its nearest bank row.
pub fn nn_distance(p: &[f64], bank: &MemoryBank) -> Result<f64> {
    if p.len() != bank.dim() {
        return Err(Error::invalid(format!(
            "query dim {} does not match bank dim {}",
            p.len(),
            bank.dim()
        )));
    }
    let unit = normalize_f64(p).ok_or_else(|| Error::invalid("query is the zero vector"))?;
    Ok(similarity_to_distance(bank.max_similarities(&unit)[0]))
}

/// Nearest-neighbor distance of every grid patch; masked-out patches are
/// excluded and carry 0.
pub fn score_grid(
    grid: &PatchFeatureGrid,
    bank: &MemoryBank,
    mask: Option<&PatchMask>,
) -> Result<PatchDistances> {
    if grid.dim() != bank.dim() {
        return Err(Error::invalid(format!(
            "feature dim {} does not match bank dim {}",
            grid.dim(),
            bank.dim()
        )));
    }
    let (gh, gw) = (grid.grid_h(), grid.grid_w());
    if let Some(m) = mask {
        if (m.grid_h(), m.grid_w()) != (gh, gw) {
            return Err(Error::invalid(format!(
                "mask {}x{} does not match grid {gh}x{gw}",
                m.grid_h(),
                m.grid_w()
            )));
        }
    }
    let included: Vec<usize> = (0..gh * gw)
        .filter(|&i| mask.map_or(true, |m| m.bits()[i]))
        .collect();
    let mut queries = Vec::with_capacity(included.len() * grid.dim());
    for &i in &included {
        let u = normalize(grid.patch(i)).ok_or_else(|| {
            Error::invalid(format!(
                "patch {i} of {:?} is the zero vector",
                grid.source_id()
            ))
        })?;
        queries.extend(u);
    }
    let sims = bank.max_similarities(&queries);
    let mut values = vec![0.0; gh * gw];
    let mut excluded = vec![true; gh * gw];
    for (&i, s) in included.iter().zip(sims) {
        values[i] = similarity_to_distance(s);
        excluded[i] = false;
    }
    PatchDistances::new(gh, gw, values, excluded)
}
