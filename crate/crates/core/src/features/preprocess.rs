//! Resize/crop geometry and right-angle rotation.
//!
//! The smaller image edge is scaled to the target resolution with bilinear
//! resampling, the longer edge is rounded to the nearest pixel, and both
//! edges are then center-cropped down to a multiple of [`PATCH_PX`].

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::grid::PATCH_PX;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskingMode {
    #[default]
    Auto,
    On,
    Off,
}

impl std::str::FromStr for MaskingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "on" => Ok(Self::On),
            "off" => Ok(Self::Off),
            other => Err(Error::invalid(format!(
                "unknown masking mode {other:?} (expected auto|on|off)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Target length of the smaller edge; a positive multiple of 14.
    pub resolution: u32,
    /// Rotation angles in degrees (clockwise) applied to reference images.
    pub rotation_angles: Vec<f64>,
    pub masking_mode: MaskingMode,
    pub texture: bool,
    /// Permit angles that are not multiples of 90 (reflect-padded resampling).
    #[serde(default)]
    pub free_rotation: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            resolution: 448,
            rotation_angles: vec![0.0, 90.0, 180.0, 270.0],
            masking_mode: MaskingMode::Auto,
            texture: false,
            free_rotation: false,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        validate_resolution(self.resolution)?;
        if self.rotation_angles.is_empty() {
            return Err(Error::invalid("rotation angle list is empty"));
        }
        if !self.rotation_angles.iter().any(|&a| a == 0.0) {
            return Err(Error::invalid("rotation angle list must contain 0"));
        }
        for (i, a) in self.rotation_angles.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::invalid(format!("rotation angle {a} is not finite")));
            }
            if self.rotation_angles[..i].contains(a) {
                return Err(Error::invalid(format!("rotation angle {a} listed twice")));
            }
            if !self.free_rotation && quarter_turns(*a).is_none() {
                return Err(Error::invalid(format!(
                    "rotation angle {a} is not a right angle (enable free rotation to allow it)"
                )));
            }
        }
        Ok(())
    }
}

pub fn validate_resolution(resolution: u32) -> Result<()> {
    if resolution == 0 || resolution as usize % PATCH_PX != 0 {
        return Err(Error::invalid(format!(
            "resolution {resolution} is not a positive multiple of {PATCH_PX}"
        )));
    }
    Ok(())
}

/// Resize and crop plan for one source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub src_w: u32,
    pub src_h: u32,
    pub scaled_w: u32,
    pub scaled_h: u32,
    pub crop_x: u32,
    pub crop_y: u32,
    pub out_w: u32,
    pub out_h: u32,
}

impl Geometry {
    pub fn grid_h(&self) -> usize {
        self.out_h as usize / PATCH_PX
    }

    pub fn grid_w(&self) -> usize {
        self.out_w as usize / PATCH_PX
    }
}

pub fn plan_geometry(src_w: u32, src_h: u32, resolution: u32) -> Result<Geometry> {
    validate_resolution(resolution)?;
    if src_w < PATCH_PX as u32 || src_h < PATCH_PX as u32 {
        return Err(Error::invalid(format!(
            "image {src_w}x{src_h} is smaller than one {PATCH_PX}x{PATCH_PX} patch"
        )));
    }
    let small = src_w.min(src_h) as u64;
    let long = src_w.max(src_h) as u64;
    let res = resolution as u64;
    // round-half-up of long * res / small
    let scaled_long = (2 * long * res + small) / (2 * small);
    let (scaled_w, scaled_h) = if src_w <= src_h {
        (res, scaled_long)
    } else {
        (scaled_long, res)
    };
    let p = PATCH_PX as u64;
    let (out_w, out_h) = (scaled_w / p * p, scaled_h / p * p);
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!(
            "image {src_w}x{src_h} collapses below one patch at resolution {resolution}"
        )));
    }
    Ok(Geometry {
        src_w,
        src_h,
        scaled_w: scaled_w as u32,
        scaled_h: scaled_h as u32,
        crop_x: ((scaled_w - out_w) / 2) as u32,
        crop_y: ((scaled_h - out_h) / 2) as u32,
        out_w: out_w as u32,
        out_h: out_h as u32,
    })
}

pub fn preprocess_image(img: &RgbImage, cfg: &PreprocessConfig) -> Result<RgbImage> {
    let geom = plan_geometry(img.width(), img.height(), cfg.resolution)?;
    Ok(apply_geometry(img, &geom))
}

pub fn apply_geometry(img: &RgbImage, geom: &Geometry) -> RgbImage {
    let scaled = if (img.width(), img.height()) == (geom.scaled_w, geom.scaled_h) {
        img.clone()
    } else {
        resize_bilinear(img, geom.scaled_w, geom.scaled_h)
    };
    if (geom.out_w, geom.out_h) == (geom.scaled_w, geom.scaled_h) {
        return scaled;
    }
    image::imageops::crop_imm(&scaled, geom.crop_x, geom.crop_y, geom.out_w, geom.out_h)
        .to_image()
}

/// Brings a ground-truth mask onto the preprocessed pixel grid.
///
/// Uses nearest-neighbor sampling so labels stay binary.
pub fn apply_geometry_mask(mask: &GrayImage, geom: &Geometry) -> GrayImage {
    let (sw, sh) = (geom.scaled_w, geom.scaled_h);
    let (mw, mh) = (mask.width(), mask.height());
    GrayImage::from_fn(geom.out_w, geom.out_h, |x, y| {
        let xs = x + geom.crop_x;
        let ys = y + geom.crop_y;
        let mx = (((xs as f64 + 0.5) * mw as f64 / sw as f64) as u32).min(mw - 1);
        let my = (((ys as f64 + 0.5) * mh as f64 / sh as f64) as u32).min(mh - 1);
        let v = mask.get_pixel(mx, my)[0];
        Luma([if v >= 128 { 255 } else { 0 }])
    })
}

/// Half-pixel-centered bilinear resampling with edge clamping.
pub fn resize_bilinear(img: &RgbImage, new_w: u32, new_h: u32) -> RgbImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let taps = |n_src: usize, n_dst: u32| -> Vec<(usize, usize, f32)> {
        let scale = n_src as f64 / n_dst as f64;
        (0..n_dst)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_src - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xt = taps(w, new_w);
    let yt = taps(h, new_h);
    let raw = img.as_raw();
    let px = |x: usize, y: usize, c: usize| raw[(y * w + x) * 3 + c] as f32;
    RgbImage::from_fn(new_w, new_h, |x, y| {
        let (x0, x1, fx) = xt[x as usize];
        let (y0, y1, fy) = yt[y as usize];
        let mut out = [0u8; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = px(x0, y0, c) * (1.0 - fx) + px(x1, y0, c) * fx;
            let bot = px(x0, y1, c) * (1.0 - fx) + px(x1, y1, c) * fx;
            *o = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}

/// Number of clockwise quarter turns if `angle` is a multiple of 90 degrees.
pub fn quarter_turns(angle: f64) -> Option<u32> {
    let q = angle / 90.0;
    if q.fract() == 0.0 && q.is_finite() {
        Some((q as i64).rem_euclid(4) as u32)
    } else {
        None
    }
}

/// Rotates clockwise by `angle` degrees.
///
/// Right angles are exact pixel permutations (dimensions swap for 90/270).
/// Any other angle keeps the dimensions and resamples bilinearly about the
/// image center, filling out-of-frame samples by reflection.
pub fn rotate_image(img: &RgbImage, angle: f64) -> Result<RgbImage> {
    if !angle.is_finite() {
        return Err(Error::invalid(format!("rotation angle {angle} is not finite")));
    }
    Ok(match quarter_turns(angle) {
        Some(0) => img.clone(),
        Some(1) => image::imageops::rotate90(img),
        Some(2) => image::imageops::rotate180(img),
        Some(_) => image::imageops::rotate270(img),
        None => rotate_free(img, angle),
    })
}

fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn rotate_free(img: &RgbImage, angle: f64) -> RgbImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.to_radians().sin_cos();
    let raw = img.as_raw();
    let px = |x: i64, y: i64, c: usize| {
        let (xr, yr) = (reflect(x, w), reflect(y, h));
        raw[(yr * w as usize + xr) * 3 + c] as f64
    };
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        // inverse map: rotate the destination coordinate counter-clockwise
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = cos * dx + sin * dy + cx;
        let sy = -sin * dx + cos * dy + cy;
        let (x0, y0) = (sx.floor() as i64, sy.floor() as i64);
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let mut out = [0u8; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = px(x0, y0, c) * (1.0 - fx) + px(x0 + 1, y0, c) * fx;
            let bot = px(x0, y0 + 1, c) * (1.0 - fx) + px(x0 + 1, y0 + 1, c) * fx;
            *o = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}
