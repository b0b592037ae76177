//! Deterministic synthetic datasets: plain objects or striped textures on
//! noisy backgrounds, with saturated color blobs as anomalies.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Centered disk on a noisy dark background.
    Object,
    /// Full-frame diagonal stripes.
    Texture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCategory {
    pub name: String,
    pub kind: SynthKind,
    pub n_train: usize,
    pub n_test_good: usize,
    pub n_test_anomalous: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub size: u32,
    pub categories: Vec<SynthCategory>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let cat = |name: &str, kind| SynthCategory {
            name: name.into(),
            kind,
            n_train: 3,
            n_test_good: 20,
            n_test_anomalous: 20,
        };
        Self {
            seed: 7,
            size: 448,
            categories: vec![cat("disk", SynthKind::Object), cat("stripes", SynthKind::Texture)],
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// One nominal or anomalous image with its ground-truth mask.
pub fn render(kind: SynthKind, size: u32, anomalous: bool, rng: &mut ChaCha8Rng) -> (RgbImage, GrayImage) {
    let s = size as f64;
    let noise = Normal::new(0.0, 6.0).unwrap();
    let (cx, cy) = (s / 2.0 + rng.gen_range(-0.02..0.02) * s, s / 2.0 + rng.gen_range(-0.02..0.02) * s);
    let radius = 0.38 * s;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let period = s / 12.0;
    let mut img = RgbImage::from_fn(size, size, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let base = match kind {
            SynthKind::Object => {
                if (fx - cx).hypot(fy - cy) <= radius {
                    [170.0, 150.0, 110.0]
                } else {
                    [50.0, 55.0, 60.0]
                }
            }
            SynthKind::Texture => {
                let t = ((fx + fy) / period * std::f64::consts::TAU + phase).sin();
                let v = 120.0 + 50.0 * t;
                [v, v * 0.9, v * 0.8]
            }
        };
        Rgb(base.map(|b| clamp_u8(b + noise.sample(rng))))
    });
    let mut mask = GrayImage::new(size, size);
    if anomalous {
        // a few overlapping discs roughly three patches across
        let scale = s / 448.0;
        let spread = match kind {
            SynthKind::Object => radius - 30.0 * scale,
            SynthKind::Texture => 0.35 * s,
        };
        let ang = rng.gen_range(0.0..std::f64::consts::TAU);
        let dist = spread * rng.gen::<f64>().sqrt();
        let (bx, by) = (s / 2.0 + dist * ang.cos(), s / 2.0 + dist * ang.sin());
        let color = hsv_to_rgb(rng.gen_range(0.0..360.0), 1.0, 1.0);
        let discs: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    bx + rng.gen_range(-8.0..8.0) * scale,
                    by + rng.gen_range(-8.0..8.0) * scale,
                    rng.gen_range(12.0..20.0) * scale,
                )
            })
            .collect();
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                if discs.iter().any(|&(dx, dy, r)| (fx - dx).hypot(fy - dy) <= r) {
                    img.put_pixel(x, y, Rgb(color.map(|c| clamp_u8(c as f64 + noise.sample(rng)))));
                    mask.put_pixel(x, y, Luma([255]));
                }
            }
        }
    }
    (img, mask)
}

fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|e| Error::image(path, e))
}

fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Writes an MVTec-style tree under `root`.
pub fn generate_dataset(root: &Path, cfg: &SynthConfig) -> Result<()> {
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    for cat in &cfg.categories {
        let dir = root.join(&cat.name);
        for i in 0..cat.n_train {
            let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
            let (img, _) = render(cat.kind, cfg.size, false, &mut rng);
            save_rgb(&img, &dir.join(format!("train/good/{i:03}.png")))?;
        }
        for i in 0..cat.n_test_good {
            let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
            let (img, _) = render(cat.kind, cfg.size, false, &mut rng);
            save_rgb(&img, &dir.join(format!("test/good/{i:03}.png")))?;
        }
        for i in 0..cat.n_test_anomalous {
            let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
            let (img, mask) = render(cat.kind, cfg.size, true, &mut rng);
            save_rgb(&img, &dir.join(format!("test/blob/{i:03}.png")))?;
            save_gray(&mask, &dir.join(format!("ground_truth/blob/{i:03}_mask.png")))?;
        }
    }
    Ok(())
}

/// A flat folder of `n` object images, every `1 / anomalous_fraction`-th one
/// anomalous. Returns paths with their labels in file order.
pub fn generate_batch(
    dir: &Path,
    seed: u64,
    n: usize,
    anomalous_fraction: f64,
    size: u32,
) -> Result<Vec<(PathBuf, bool)>> {
    let n_anom = (n as f64 * anomalous_fraction).round() as usize;
    let stride = if n_anom == 0 { usize::MAX } else { n / n_anom };
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let anomalous = n_anom > 0 && i % stride == stride - 1 && i / stride < n_anom;
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
        let (img, _) = render(SynthKind::Object, size, anomalous, &mut rng);
        let path = dir.join(format!("{i:03}.png"));
        save_rgb(&img, &path)?;
        out.push((path, anomalous));
    }
    Ok(out)
}
