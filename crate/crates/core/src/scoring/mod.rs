//! Image-level aggregation of patch distances and pixel-level anomaly maps.

mod heatmap;
mod map;

use serde::{Deserialize, Serialize};

pub use heatmap::{colormap, export_heatmap, heatmap_indices, write_map_dump};
pub use map::{gaussian_kernel, make_map, upsample_bilinear};

use crate::error::{Error, Result};
use crate::features::PATCH_PX;

/// Per-patch distances of one image; excluded cells hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDistances {
    grid_h: usize,
    grid_w: usize,
    values: Vec<f64>,
    excluded: Vec<bool>,
}

impl PatchDistances {
    pub fn new(grid_h: usize, grid_w: usize, values: Vec<f64>, excluded: Vec<bool>) -> Result<Self> {
        let n = grid_h * grid_w;
        if n == 0 || values.len() != n || excluded.len() != n {
            return Err(Error::invalid(format!(
                "patch distances need {n} values and flags, got {} and {}",
                values.len(),
                excluded.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("patch distance {v} is not finite and >= 0")));
        }
        let mut values = values;
        for (v, &e) in values.iter_mut().zip(&excluded) {
            if e {
                *v = 0.0;
            }
        }
        Ok(Self {
            grid_h,
            grid_w,
            values,
            excluded,
        })
    }

    /// All cells included.
    pub fn dense(grid_h: usize, grid_w: usize, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(grid_h, grid_w, values, vec![false; n])
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn excluded(&self) -> &[bool] {
        &self.excluded
    }

    pub fn included_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.excluded)
            .filter(|(_, &e)| !e)
            .map(|(&v, _)| v)
            .collect()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-pixel anomaly scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl AnomalyMap {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || values.len() != h * w {
            return Err(Error::invalid(format!(
                "anomaly map {h}x{w} with {} values",
                values.len()
            )));
        }
        Ok(Self { h, w, values })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.w + x]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of the largest `ceil(fraction * n)` included distances.
    MeanTopFraction,
    MaxPatch,
    /// Maximum of the smoothed anomaly map.
    MaxMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub aggregation: Aggregation,
    pub fraction: f64,
    pub sigma: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::MeanTopFraction,
            fraction: 0.01,
            sigma: 4.0,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "aggregation fraction {} outside (0, 1]",
                self.fraction
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma {} must be > 0", self.sigma)));
        }
        Ok(())
    }

    pub fn kernel_radius(&self) -> usize {
        (4.0 * self.sigma).ceil() as usize
    }

    /// Parses `mean-top:<fraction>`, `mean-top`, `max-patch` or `max-map`.
    pub fn with_aggregation_spec(mut self, spec: &str) -> Result<Self> {
        match spec {
            "max-patch" => self.aggregation = Aggregation::MaxPatch,
            "max-map" => self.aggregation = Aggregation::MaxMap,
            "mean-top" => self.aggregation = Aggregation::MeanTopFraction,
            other => {
                let frac = other
                    .strip_prefix("mean-top:")
                    .and_then(|f| f.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::invalid(format!(
                            "unknown aggregation {other:?} (expected mean-top:<f> | max-patch | max-map)"
                        ))
                    })?;
                self.aggregation = Aggregation::MeanTopFraction;
                self.fraction = frac;
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn aggregation_spec(&self) -> String {
        match self.aggregation {
            Aggregation::MeanTopFraction => format!("mean-top:{}", self.fraction),
            Aggregation::MaxPatch => "max-patch".into(),
            Aggregation::MaxMap => "max-map".into(),
        }
    }
}

/// `ceil(fraction * n)` clamped to `1..=n`; the epsilon absorbs binary
/// representation error such as `0.07 * 100 = 7.000000000000001`.
pub fn top_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Mean of the `m` largest values, summed in descending order so the
/// result does not depend on input order.
pub fn mean_of_largest(values: &[f64], m: usize) -> f64 {
    let mut v = values.to_vec();
    let m = m.min(v.len());
    if m < v.len() {
        v.select_nth_unstable_by(m, |a, b| b.total_cmp(a));
        v.truncate(m);
    }
    v.sort_by(|a, b| b.total_cmp(a));
    v.iter().sum::<f64>() / m as f64
}

/// Image-level anomaly score.
pub fn aggregate(d: &PatchDistances, cfg: &ScoreConfig) -> Result<f64> {
    cfg.validate()?;
    let included = d.included_values();
    if included.is_empty() {
        return Err(Error::EmptyInput(
            "every patch is excluded; nothing to aggregate".into(),
        ));
    }
    Ok(match cfg.aggregation {
        Aggregation::MeanTopFraction => {
            mean_of_largest(&included, top_count(cfg.fraction, included.len()))
        }
        Aggregation::MaxPatch => included.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::MaxMap => {
            let map = make_map(d, d.grid_h() * PATCH_PX, d.grid_w() * PATCH_PX, cfg)?;
            map.max_value()
        }
    })
}

/// Like [`aggregate`] but reuses an already computed map for `MaxMap`.
pub fn aggregate_with_map(d: &PatchDistances, map: &AnomalyMap, cfg: &ScoreConfig) -> Result<f64> {
    match cfg.aggregation {
        Aggregation::MaxMap => {
            if d.included_values().is_empty() {
                return Err(Error::EmptyInput(
                    "every patch is excluded; nothing to aggregate".into(),
                ));
            }
            Ok(map.max_value())
        }
        _ => aggregate(d, cfg),
    }
}
