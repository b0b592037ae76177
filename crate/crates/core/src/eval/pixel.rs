use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::TieGroups;
use crate::error::{Error, Result};
use crate::scoring::AnomalyMap;

/// Binary pixel ground truth, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl GroundTruth {
    pub fn new(h: usize, w: usize, bits: Vec<bool>) -> Result<Self> {
        if h == 0 || w == 0 || bits.len() != h * w {
            return Err(Error::invalid(format!(
                "ground truth {h}x{w} with {} pixels",
                bits.len()
            )));
        }
        Ok(Self { h, w, bits })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            bits: vec![false; h * w],
        }
    }

    pub fn from_gray(img: &image::GrayImage) -> Self {
        Self {
            h: img.height() as usize,
            w: img.width() as usize,
            bits: img.as_raw().iter().map(|&v| v >= 128).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Self::from_gray(&img.into_luma8()))
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    /// Connected foreground regions under 8-connectivity, as pixel index lists.
    pub fn regions(&self) -> Vec<Vec<usize>> {
        let (h, w) = (self.h as i64, self.w as i64);
        let mut seen = vec![false; self.bits.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.bits.len() {
            if !self.bits[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut region = Vec::new();
            while let Some(p) = queue.pop_front() {
                region.push(p);
                let (y, x) = ((p / self.w) as i64, (p % self.w) as i64);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny < 0 || nx < 0 || ny >= h || nx >= w {
                            continue;
                        }
                        let q = (ny * w + nx) as usize;
                        if self.bits[q] && !seen[q] {
                            seen[q] = true;
                            queue.push_back(q);
                        }
                    }
                }
            }
            region.sort_unstable();
            out.push(region);
        }
        out
    }
}

fn check_pairs(maps: &[AnomalyMap], gts: &[GroundTruth]) -> Result<()> {
    if maps.len() != gts.len() {
        return Err(Error::invalid(format!(
            "{} maps for {} ground-truth masks",
            maps.len(),
            gts.len()
        )));
    }
    for (i, (m, g)) in maps.iter().zip(gts).enumerate() {
        if (m.h(), m.w()) != (g.h, g.w) {
            return Err(Error::invalid(format!(
                "image {i}: map {}x{} vs ground truth {}x{}",
                m.h(),
                m.w(),
                g.h,
                g.w
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub auroc: f64,
    pub f1_max: f64,
    /// Share of nominal pixels, reported because pixel metrics are dominated by it.
    pub nominal_fraction: f64,
}

/// AUROC and F1-max over all pixels of all images, flattened.
pub fn pixel_metrics(maps: &[AnomalyMap], gts: &[GroundTruth]) -> Result<PixelMetrics> {
    check_pairs(maps, gts)?;
    let scores: Vec<f64> = maps.iter().flat_map(|m| m.values().iter().copied()).collect();
    let labels: Vec<bool> = gts.iter().flat_map(|g| g.bits.iter().copied()).collect();
    let nominal = labels.iter().filter(|&&l| !l).count();
    let groups = TieGroups::new(&scores, &labels)?;
    Ok(PixelMetrics {
        auroc: groups.auroc()?,
        f1_max: groups.f1_max()?,
        nominal_fraction: nominal as f64 / labels.len().max(1) as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProThresholds {
    /// Equally spaced over the observed score range, both ends included.
    Uniform(usize),
    /// Every distinct score; exact but quadratic-ish on large inputs.
    Exact,
}

impl Default for ProThresholds {
    fn default() -> Self {
        Self::Uniform(200)
    }
}

/// For each threshold (descending), how many values are `>= t`.
fn counts_at_least(values: impl Iterator<Item = f64>, ts: &[f64], uniform_step: Option<f64>) -> Vec<u64> {
    // hist[i]: values whose first satisfied threshold is ts[i]
    let mut hist = vec![0u64; ts.len() + 1];
    let n = ts.len();
    for v in values {
        let mut i = match uniform_step {
            Some(step) if step > 0.0 => (((ts[0] - v) / step).ceil().max(0.0) as usize).min(n),
            _ => ts.partition_point(|&t| t > v),
        };
        // the arithmetic guess may be off by one near a boundary
        while i > 0 && ts[i - 1] <= v {
            i -= 1;
        }
        while i < n && ts[i] > v {
            i += 1;
        }
        hist[i] += 1;
    }
    let mut acc = 0;
    hist[..n]
        .iter()
        .map(|&h| {
            acc += h;
            acc
        })
        .collect()
}

/// The `(fpr, mean region overlap)` curve for descending thresholds,
/// starting at `(0, 0)`.
pub fn pro_curve(
    maps: &[AnomalyMap],
    gts: &[GroundTruth],
    thresholds: ProThresholds,
) -> Result<Vec<(f64, f64)>> {
    check_pairs(maps, gts)?;
    let mut n_neg = 0usize;
    let mut regions: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, g) in gts.iter().enumerate() {
        n_neg += g.bits.iter().filter(|&&b| !b).count();
        regions.extend(g.regions().into_iter().map(|r| (i, r)));
    }
    if regions.is_empty() {
        return Err(Error::UndefinedMetric("PRO needs at least one anomalous region".into()));
    }
    if n_neg == 0 {
        return Err(Error::UndefinedMetric("PRO needs nominal pixels for the FPR".into()));
    }

    let all = || maps.iter().flat_map(|m| m.values().iter().copied());
    let (ts, step) = match thresholds {
        ProThresholds::Uniform(n) => {
            if n == 0 {
                return Err(Error::invalid("PRO threshold count must be >= 1"));
            }
            let (lo, hi) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            });
            if n == 1 || lo == hi {
                (vec![lo], None)
            } else {
                let step = (hi - lo) / (n - 1) as f64;
                let mut t: Vec<f64> = (0..n - 1).map(|i| hi - i as f64 * step).collect();
                t.push(lo);
                (t, Some(step))
            }
        }
        ProThresholds::Exact => {
            let mut v: Vec<f64> = all().collect();
            v.sort_unstable_by(|a, b| b.total_cmp(a));
            v.dedup();
            (v, None)
        }
    };

    let negatives = maps.iter().zip(gts).flat_map(|(m, g)| {
        m.values().iter().zip(&g.bits).filter(|(_, &b)| !b).map(|(&v, _)| v)
    });
    let fp = counts_at_least(negatives, &ts, step);
    let mut overlap = vec![0.0; ts.len()];
    for (img, r) in &regions {
        let vals = r.iter().map(|&p| maps[*img].values()[p]);
        let hit = counts_at_least(vals, &ts, step);
        for (o, h) in overlap.iter_mut().zip(hit) {
            *o += h as f64 / r.len() as f64;
        }
    }
    let mut curve = Vec::with_capacity(ts.len() + 1);
    curve.push((0.0, 0.0));
    for (f, o) in fp.iter().zip(&overlap) {
        curve.push((*f as f64 / n_neg as f64, o / regions.len() as f64));
    }
    Ok(curve)
}

/// Trapezoid area under a monotone curve from 0 to `limit`, linearly
/// interpolated at the limit and divided by it.
pub fn normalized_area(curve: &[(f64, f64)], limit: f64) -> f64 {
    let mut area = 0.0;
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y) / 2.0;
            break;
        }
    }
    (area / limit).clamp(0.0, 1.0)
}

/// Normalized area under the per-region-overlap curve up to `fpr_limit`.
pub fn pro(
    maps: &[AnomalyMap],
    gts: &[GroundTruth],
    fpr_limit: f64,
    thresholds: ProThresholds,
) -> Result<f64> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(Error::invalid(format!("fpr limit {fpr_limit} outside (0, 1]")));
    }
    Ok(normalized_area(&pro_curve(maps, gts, thresholds)?, fpr_limit))
}
