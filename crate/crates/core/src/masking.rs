//! Zero-shot foreground masking from the first principal component of the
//! patch features, refined with morphology on the patch grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{MaskingMode, PatchFeatureGrid, PreprocessConfig};

const POWER_MAX_ITERS: usize = 1000;
const POWER_TOL: f64 = 1e-7;

/// Foreground flag per patch cell, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    grid_h: usize,
    grid_w: usize,
    bits: Vec<bool>,
}

impl PatchMask {
    pub fn new(grid_h: usize, grid_w: usize, bits: Vec<bool>) -> Result<Self> {
        if grid_h * grid_w == 0 || bits.len() != grid_h * grid_w {
            return Err(Error::invalid(format!(
                "mask {grid_h}x{grid_w} with {} cells",
                bits.len()
            )));
        }
        Ok(Self {
            grid_h,
            grid_w,
            bits,
        })
    }

    pub fn full(grid_h: usize, grid_w: usize) -> Self {
        Self {
            grid_h,
            grid_w,
            bits: vec![true; grid_h * grid_w],
        }
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.grid_w + c]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &PatchMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Writes a 1-bit grayscale PNG with one pixel per patch cell.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(
            std::io::BufWriter::new(file),
            self.grid_w as u32,
            self.grid_h as u32,
        );
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let row_bytes = self.grid_w.div_ceil(8);
        let mut data = vec![0u8; row_bytes * self.grid_h];
        for r in 0..self.grid_h {
            for c in 0..self.grid_w {
                if self.get(r, c) {
                    data[r * row_bytes + c / 8] |= 0x80 >> (c % 8);
                }
            }
        }
        let to_io = |e: png::EncodingError| match e {
            png::EncodingError::IoError(io) => Error::io(path, io),
            other => Error::invalid(format!("png encoding: {other}")),
        };
        let mut w = enc.write_header().map_err(to_io)?;
        w.write_image_data(&data).map_err(to_io)?;
        w.finish().map_err(to_io)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    /// Side fraction of the central crop inspected by the masking test.
    pub center_fraction: f64,
    pub center_fg_min: f64,
    pub global_fg_max: f64,
    /// Square structuring element side (odd) for the initial dilation.
    pub dilation_se: usize,
    /// Square structuring element side (odd) for the closing.
    pub closing_se: usize,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            center_fraction: 0.5,
            center_fg_min: 0.7,
            global_fg_max: 0.8,
            dilation_se: 3,
            closing_se: 3,
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("center_fraction", self.center_fraction),
            ("center_fg_min", self.center_fg_min),
            ("global_fg_max", self.global_fg_max),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!("{name} = {v} outside (0, 1]")));
            }
        }
        for (name, s) in [("dilation_se", self.dilation_se), ("closing_se", self.closing_se)] {
            if s % 2 == 0 {
                return Err(Error::invalid(format!("{name} = {s} must be odd")));
            }
        }
        Ok(())
    }

    /// Row and column ranges of the central crop of an `h × w` grid.
    pub fn center_crop(&self, h: usize, w: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let side = |n: usize| {
            let s = ((n as f64 * self.center_fraction).round() as usize).clamp(1, n);
            let start = (n - s) / 2;
            start..start + s
        };
        (side(h), side(w))
    }
}

/// First principal direction together with the mean it was centered on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaDirection {
    pub mean: Vec<f64>,
    pub direction: Vec<f64>,
}

impl PcaDirection {
    /// Projection of the mean-centered feature onto the direction.
    pub fn project(&self, v: &[f32]) -> f64 {
        v.iter()
            .zip(&self.mean)
            .zip(&self.direction)
            .map(|((&x, m), d)| (x as f64 - m) * d)
            .sum()
    }
}

/// Unit-norm first principal direction of all patches of `grids`, by power
/// iteration on the covariance. The sign is chosen so the central crop of
/// the first grid projects positively on average.
pub fn fit_pca_direction(grids: &[PatchFeatureGrid], policy: &MaskPolicy) -> Result<PcaDirection> {
    let first = grids
        .first()
        .ok_or_else(|| Error::invalid("PCA needs at least one grid"))?;
    let dim = first.dim();
    if grids.iter().any(|g| g.dim() != dim) {
        return Err(Error::invalid("PCA grids disagree on feature dim"));
    }
    let n: usize = grids.iter().map(|g| g.n_patches()).sum();
    if n < 2 {
        return Err(Error::invalid(format!("PCA needs >= 2 patches, got {n}")));
    }

    let mut mean = vec![0.0; dim];
    for v in grids.iter().flat_map(|g| g.patches()) {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = vec![0.0; dim * dim];
    let mut centered = vec![0.0; dim];
    for v in grids.iter().flat_map(|g| g.patches()) {
        for ((c, &x), m) in centered.iter_mut().zip(v).zip(&mean) {
            *c = x as f64 - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            for j in i..dim {
                cov[i * dim + j] += ci * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / n as f64;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
    if !(trace > 1e-24) {
        return Err(Error::Degenerate(
            "patch features have zero variance; no principal direction".into(),
        ));
    }

    let mut direction = power_iteration(&cov, dim)?;

    let (rows, cols) = policy.center_crop(first.grid_h(), first.grid_w());
    let mut pca = PcaDirection {
        mean,
        direction: direction.clone(),
    };
    let mut center_sum = 0.0;
    for r in rows {
        for c in cols.clone() {
            center_sum += pca.project(first.at(r, c));
        }
    }
    if center_sum < 0.0 {
        direction.iter_mut().for_each(|d| *d = -*d);
    }
    pca.direction = direction;
    Ok(pca)
}

fn power_iteration(cov: &[f64], dim: usize) -> Result<Vec<f64>> {
    let mat_vec = |v: &[f64]| -> Vec<f64> {
        (0..dim)
            .map(|i| (0..dim).map(|j| cov[i * dim + j] * v[j]).sum())
            .collect()
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // start from the covariance column with the largest norm: it lies in the
    // range of the matrix and cannot be orthogonal to every top eigenvector
    let mut v: Vec<f64> = (0..dim)
        .map(|j| (0..dim).map(|i| cov[i * dim + j]).collect::<Vec<f64>>())
        .max_by(|a, b| norm(a).total_cmp(&norm(b)))
        .unwrap();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    for _ in 0..POWER_MAX_ITERS {
        let mut w = mat_vec(&v);
        let nw = norm(&w);
        if nw == 0.0 || !nw.is_finite() {
            return Err(Error::Degenerate("power iteration collapsed".into()));
        }
        w.iter_mut().for_each(|x| *x /= nw);
        let change = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        v = w;
        if change < POWER_TOL {
            break;
        }
    }
    Ok(v)
}

/// Foreground where the centered projection is strictly positive.
pub fn patch_mask(grid: &PatchFeatureGrid, pca: &PcaDirection) -> Result<PatchMask> {
    if grid.dim() != pca.direction.len() {
        return Err(Error::invalid(format!(
            "grid dim {} does not match PCA dim {}",
            grid.dim(),
            pca.direction.len()
        )));
    }
    let bits = grid.patches().map(|v| pca.project(v) > 0.0).collect();
    PatchMask::new(grid.grid_h(), grid.grid_w(), bits)
}

fn dilate(bits: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            if !bits[r * w + c] {
                continue;
            }
            for rr in r.saturating_sub(radius)..(r + radius + 1).min(h) {
                for cc in c.saturating_sub(radius)..(c + radius + 1).min(w) {
                    out[rr * w + cc] = true;
                }
            }
        }
    }
    out
}

/// Closing as on the unbounded plane with background outside the grid:
/// the grid is padded so the intermediate dilation is not truncated.
fn close(bits: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    let (ph, pw) = (h + 2 * radius, w + 2 * radius);
    let mut padded = vec![false; ph * pw];
    for r in 0..h {
        for c in 0..w {
            padded[(r + radius) * pw + c + radius] = bits[r * w + c];
        }
    }
    let dilated = dilate(&padded, ph, pw, radius);
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let (pr, pc) = (r + radius, c + radius);
            out[r * w + c] = (pr - radius..=pr + radius)
                .all(|rr| (pc - radius..=pc + radius).all(|cc| dilated[rr * pw + cc]));
        }
    }
    out
}

pub fn dilate_mask(mask: &PatchMask, se: usize) -> PatchMask {
    PatchMask {
        grid_h: mask.grid_h,
        grid_w: mask.grid_w,
        bits: dilate(&mask.bits, mask.grid_h, mask.grid_w, se / 2),
    }
}

pub fn close_mask(mask: &PatchMask, se: usize) -> PatchMask {
    PatchMask {
        grid_h: mask.grid_h,
        grid_w: mask.grid_w,
        bits: close(&mask.bits, mask.grid_h, mask.grid_w, se / 2),
    }
}

/// One dilation followed by one closing.
pub fn refine_mask(mask: &PatchMask, policy: &MaskPolicy) -> PatchMask {
    close_mask(&dilate_mask(mask, policy.dilation_se), policy.closing_se)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskTestOutcome {
    pub passed: bool,
    pub center_foreground: f64,
    pub global_foreground: f64,
}

/// Accepts a mask whose central crop is mostly foreground while the whole
/// frame is not.
pub fn masking_test(mask: &PatchMask, policy: &MaskPolicy) -> MaskTestOutcome {
    let (rows, cols) = policy.center_crop(mask.grid_h, mask.grid_w);
    let center_cells = rows.len() * cols.len();
    let mut center_fg = 0;
    for r in rows {
        for c in cols.clone() {
            center_fg += mask.get(r, c) as usize;
        }
    }
    let center_foreground = center_fg as f64 / center_cells as f64;
    let global_foreground = mask.count() as f64 / mask.bits.len() as f64;
    MaskTestOutcome {
        passed: center_foreground >= policy.center_fg_min && global_foreground <= policy.global_fg_max,
        center_foreground,
        global_foreground,
    }
}

/// Whether test images of a category get masked.
pub fn resolve_mask_mode(cfg: &PreprocessConfig, test_passed: bool) -> bool {
    if cfg.texture {
        return false;
    }
    match cfg.masking_mode {
        MaskingMode::Off => false,
        MaskingMode::On => true,
        MaskingMode::Auto => test_passed,
    }
}

/// Per-image mask: fit on the grid itself (or use a shared direction),
/// threshold, refine.
pub fn compute_mask(
    grid: &PatchFeatureGrid,
    shared: Option<&PcaDirection>,
    policy: &MaskPolicy,
) -> Result<PatchMask> {
    let raw = match shared {
        Some(pca) => patch_mask(grid, pca)?,
        None => {
            let pca = fit_pca_direction(std::slice::from_ref(grid), policy)?;
            patch_mask(grid, &pca)?
        }
    };
    Ok(refine_mask(&raw, policy))
}
