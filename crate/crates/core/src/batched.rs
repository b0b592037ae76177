//! Batched zero-shot scoring: every image is scored against the patches of
//! all other images in the batch, using the mean of the smallest
//! `max(1, floor(alpha * |M_j|))` distances instead of the single nearest
//! neighbor.

use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{PatchFeatureGrid, PATCH_PX};
use crate::masking::PatchMask;
use crate::memory::scan::{normalize, UnitPanel, LANES};
use crate::memory::similarity_to_distance;
use crate::scoring::{aggregate_with_map, make_map, AnomalyMap, PatchDistances, ScoreConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchedConfig {
    pub alpha: f64,
    pub score: ScoreConfig,
}

impl Default for BatchedConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            score: ScoreConfig::default(),
        }
    }
}

impl BatchedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        self.score.validate()
    }
}

/// `max(1, floor(alpha * n))`; the epsilon absorbs representation error.
pub fn tail_count(alpha: f64, n: usize) -> usize {
    ((alpha * n as f64 + 1e-9).floor() as usize).clamp(1, n.max(1))
}

/// Unit-normalized patches of a whole batch, shared by all per-image passes.
pub struct BatchFeatures {
    dim: usize,
    offsets: Vec<usize>,
    shapes: Vec<(usize, usize)>,
    unit: Vec<f64>,
    panel: UnitPanel,
}

impl BatchFeatures {
    pub fn new(grids: &[PatchFeatureGrid]) -> Result<Self> {
        if grids.len() < 2 {
            return Err(Error::invalid(format!(
                "batched scoring needs at least 2 images, got {}",
                grids.len()
            )));
        }
        let dim = grids[0].dim();
        let mut offsets = vec![0];
        let mut unit = Vec::new();
        for g in grids {
            if g.dim() != dim {
                return Err(Error::invalid(format!(
                    "grid {:?} has dim {}, expected {dim}",
                    g.source_id(),
                    g.dim()
                )));
            }
            for (i, p) in g.patches().enumerate() {
                let u = normalize(p).ok_or_else(|| {
                    Error::invalid(format!("patch {i} of {:?} is the zero vector", g.source_id()))
                })?;
                unit.extend(u);
            }
            offsets.push(offsets.last().unwrap() + g.n_patches());
        }
        Ok(Self {
            dim,
            panel: UnitPanel::from_rows(&unit, dim),
            shapes: grids.iter().map(|g| (g.grid_h(), g.grid_w())).collect(),
            offsets,
            unit,
        })
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn total_patches(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// The `m` largest similarities of `query` to rows outside `skip`,
    /// returned in descending order.
    fn top_similarities(&self, query: &[f64], skip: std::ops::Range<usize>, m: usize) -> Vec<f64> {
        let mut group = vec![0.0; 4 * self.dim];
        group[..self.dim].copy_from_slice(query);
        // min-heap of the best m similarities
        let mut heap: BinaryHeap<std::cmp::Reverse<Ord64>> = BinaryHeap::with_capacity(m + 1);
        for b in 0..self.panel.n_blocks() {
            let acc = self.panel.block_dots(&group, b);
            let valid = self.panel.valid_lanes(b);
            for (l, &s) in acc[0][..valid].iter().enumerate() {
                let row = b * LANES + l;
                if skip.contains(&row) {
                    continue;
                }
                if heap.len() < m {
                    heap.push(std::cmp::Reverse(Ord64(s)));
                } else if s > heap.peek().unwrap().0 .0 {
                    heap.pop();
                    heap.push(std::cmp::Reverse(Ord64(s)));
                }
            }
        }
        let mut out: Vec<f64> = heap.into_iter().map(|r| r.0 .0).collect();
        out.sort_by(|a, b| b.total_cmp(a));
        out
    }

    pub fn mutual_patch_scores(
        &self,
        j: usize,
        alpha: f64,
        mask: Option<&PatchMask>,
    ) -> Result<PatchDistances> {
        if j >= self.len() {
            return Err(Error::invalid(format!("image index {j} out of range")));
        }
        let (gh, gw) = self.shapes[j];
        if let Some(m) = mask {
            if (m.grid_h(), m.grid_w()) != (gh, gw) {
                return Err(Error::invalid("mask shape does not match grid"));
            }
        }
        let range = self.offsets[j]..self.offsets[j + 1];
        let others = self.total_patches() - range.len();
        let m = tail_count(alpha, others);
        let n = gh * gw;
        let excluded: Vec<bool> = (0..n).map(|i| mask.is_some_and(|mk| !mk.bits()[i])).collect();
        let values: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                if excluded[i] {
                    return 0.0;
                }
                let row = range.start + i;
                let q = &self.unit[row * self.dim..(row + 1) * self.dim];
                let sims = self.top_similarities(q, range.clone(), m);
                // smallest distance first, summed in a fixed order
                sims.iter().map(|&s| similarity_to_distance(s)).sum::<f64>() / m as f64
            })
            .collect();
        PatchDistances::new(gh, gw, values, excluded)
    }
}

/// Total-ordered f64 wrapper for heaps.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ord64(f64);

impl Eq for Ord64 {}

impl PartialOrd for Ord64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ord64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Mutual scores of image `j` against the rest of the batch.
pub fn mutual_patch_scores(
    grids: &[PatchFeatureGrid],
    j: usize,
    cfg: &BatchedConfig,
    masks: Option<&[PatchMask]>,
) -> Result<PatchDistances> {
    cfg.validate()?;
    let feats = BatchFeatures::new(grids)?;
    feats.mutual_patch_scores(j, cfg.alpha, masks.map(|m| &m[j]))
}

#[derive(Debug, Clone)]
pub struct BatchedResult {
    pub score: f64,
    pub distances: PatchDistances,
    pub map: AnomalyMap,
}

/// Scores every image of the batch; output order follows input order.
pub fn batched_run(
    grids: &[PatchFeatureGrid],
    cfg: &BatchedConfig,
    masks: Option<&[PatchMask]>,
) -> Result<Vec<BatchedResult>> {
    cfg.validate()?;
    if let Some(m) = masks {
        if m.len() != grids.len() {
            return Err(Error::invalid(format!(
                "{} masks for {} images",
                m.len(),
                grids.len()
            )));
        }
    }
    let feats = BatchFeatures::new(grids)?;
    (0..grids.len())
        .map(|j| {
            let d = feats.mutual_patch_scores(j, cfg.alpha, masks.map(|m| &m[j]))?;
            let map = make_map(&d, d.grid_h() * PATCH_PX, d.grid_w() * PATCH_PX, &cfg.score)?;
            let score = aggregate_with_map(&d, &map, &cfg.score)?;
            Ok(BatchedResult {
                score,
                distances: d,
                map,
            })
        })
        .collect()
}
