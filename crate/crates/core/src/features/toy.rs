//! Deterministic hand-crafted patch descriptor.
//!
//! Per 14×14 patch: RGB means, RGB standard deviations (both on a [0, 1]
//! scale) and an 8-bin luminance gradient-orientation histogram weighted by
//! gradient magnitude. Patches without any gradient get a uniform histogram.

use image::RgbImage;

use super::grid::{PatchFeatureGrid, PATCH_PX};
use super::Backbone;
use crate::error::{Error, Result};

pub const TOY_DIM: usize = 14;
pub const ORIENTATION_BINS: usize = 8;

#[derive(Debug, Clone, Copy, Default)]
pub struct ToyBackbone;

impl Backbone for ToyBackbone {
    fn name(&self) -> &str {
        "toy"
    }

    fn dim(&self) -> usize {
        TOY_DIM
    }

    fn extract(&self, img: &RgbImage) -> Result<PatchFeatureGrid> {
        toy_extract(img)
    }
}

/// Orientation bin of a gradient; bin 0 is centered on +x, bins advance
/// by 45 degrees towards +y (image rows grow downwards).
pub fn orientation_bin(gx: f64, gy: f64) -> usize {
    let step = std::f64::consts::PI / 4.0;
    let b = (gy.atan2(gx) / step).round() as i64;
    b.rem_euclid(ORIENTATION_BINS as i64) as usize
}

pub fn toy_extract(img: &RgbImage) -> Result<PatchFeatureGrid> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 || w % PATCH_PX != 0 || h % PATCH_PX != 0 {
        return Err(Error::invalid(format!(
            "toy backbone needs dimensions that are multiples of {PATCH_PX}, got {w}x{h}"
        )));
    }
    let (gh, gw) = (h / PATCH_PX, w / PATCH_PX);
    let raw = img.as_raw();
    let mut data = Vec::with_capacity(gh * gw * TOY_DIM);
    let mut lum = [[0f64; PATCH_PX]; PATCH_PX];
    for pr in 0..gh {
        for pc in 0..gw {
            let mut sum = [0u64; 3];
            let mut sq = [0u64; 3];
            for (y, lrow) in lum.iter_mut().enumerate() {
                let row = pr * PATCH_PX + y;
                for (x, l) in lrow.iter_mut().enumerate() {
                    let o = (row * w + pc * PATCH_PX + x) * 3;
                    let rgb = [
                        raw[o] as f64 / 255.0,
                        raw[o + 1] as f64 / 255.0,
                        raw[o + 2] as f64 / 255.0,
                    ];
                    for c in 0..3 {
                        let v = raw[o + c] as u64;
                        sum[c] += v;
                        sq[c] += v * v;
                    }
                    *l = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
                }
            }
            let n = (PATCH_PX * PATCH_PX) as u64;
            let mut feat = [0f64; TOY_DIM];
            for c in 0..3 {
                feat[c] = sum[c] as f64 / (n as f64 * 255.0);
                // integer moments, so flat patches give exactly 0
                let var = (n * sq[c] - sum[c] * sum[c]) as f64 / (n * n) as f64;
                feat[3 + c] = var.sqrt() / 255.0;
            }

            let mut hist = [0f64; ORIENTATION_BINS];
            let last = PATCH_PX - 1;
            for y in 0..PATCH_PX {
                for x in 0..PATCH_PX {
                    let gx = lum[y][(x + 1).min(last)] - lum[y][x.saturating_sub(1)];
                    let gy = lum[(y + 1).min(last)][x] - lum[y.saturating_sub(1)][x];
                    let mag = (gx * gx + gy * gy).sqrt();
                    if mag > 0.0 {
                        hist[orientation_bin(gx, gy)] += mag;
                    }
                }
            }
            let total: f64 = hist.iter().sum();
            for (b, v) in hist.iter().enumerate() {
                feat[6 + b] = if total > 0.0 {
                    v / total
                } else {
                    1.0 / ORIENTATION_BINS as f64
                };
            }
            data.extend(feat.iter().map(|&v| v as f32));
        }
    }
    PatchFeatureGrid::new(gh, gw, TOY_DIM, data, "")
}
