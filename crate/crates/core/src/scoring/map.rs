//! Patch distances to pixel maps: bilinear upsampling with values anchored
//! at patch-cell centers (edge clamped), then a separable Gaussian blur
//! truncated at `ceil(4 sigma)` with half-sample symmetric reflection at
//! the borders.

use super::{AnomalyMap, PatchDistances, ScoreConfig};
use crate::error::{Error, Result};

/// Normalized 1-D Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Index into `0..n` under half-sample symmetric reflection
/// (`d c b a | a b c d | d c b a`), periodic with period `2n`.
pub(crate) fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Source taps `(i0, i1, w1)` for each of `n_dst` outputs sampling `n_src`
/// cell centers.
fn bilinear_taps(n_src: usize, n_dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_src as f64 / n_dst as f64;
    (0..n_dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear(
    values: &[f64],
    grid_h: usize,
    grid_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let xt = bilinear_taps(grid_w, out_w);
    let yt = bilinear_taps(grid_h, out_h);
    // rows first, then columns
    let mut rows = vec![0.0; grid_h * out_w];
    for r in 0..grid_h {
        let src = &values[r * grid_w..(r + 1) * grid_w];
        for (x, &(x0, x1, f)) in xt.iter().enumerate() {
            rows[r * out_w + x] = src[x0] * (1.0 - f) + src[x1] * f;
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (y, &(y0, y1, f)) in yt.iter().enumerate() {
        let (a, b) = (&rows[y0 * out_w..(y0 + 1) * out_w], &rows[y1 * out_w..(y1 + 1) * out_w]);
        for x in 0..out_w {
            out[y * out_w + x] = a[x] * (1.0 - f) + b[x] * f;
        }
    }
    out
}

fn blur_separable(img: &mut [f64], h: usize, w: usize, kernel: &[f64]) {
    let r = (kernel.len() / 2) as i64;
    // horizontal, over a reflect-padded copy of each row
    let mut line = vec![0.0; w + kernel.len() - 1];
    for y in 0..h {
        let row = &mut img[y * w..(y + 1) * w];
        for (i, v) in line.iter_mut().enumerate() {
            *v = row[reflect_index(i as i64 - r, w)];
        }
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &wt) in kernel.iter().enumerate() {
                acc += wt * line[x + k];
            }
            *out = acc;
        }
    }
    // vertical, accumulating whole rows in the same tap order
    let src = img.to_vec();
    for y in 0..h {
        let out = &mut img[y * w..(y + 1) * w];
        out.fill(0.0);
        for (k, &wt) in kernel.iter().enumerate() {
            let sy = reflect_index(y as i64 + k as i64 - r, h);
            for (o, &v) in out.iter_mut().zip(&src[sy * w..(sy + 1) * w]) {
                *o += wt * v;
            }
        }
    }
}

pub fn make_map(d: &PatchDistances, out_h: usize, out_w: usize, cfg: &ScoreConfig) -> Result<AnomalyMap> {
    cfg.validate()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!("zero-size anomaly map {out_h}x{out_w}")));
    }
    let mut values = upsample_bilinear(d.values(), d.grid_h(), d.grid_w(), out_h, out_w);
    let kernel = gaussian_kernel(cfg.sigma, cfg.kernel_radius());
    blur_separable(&mut values, out_h, out_w, &kernel);
    // convex combinations only; clamp roundoff so max(map) <= max(input)
    let hi = d.max_value();
    for v in &mut values {
        *v = v.clamp(0.0, hi);
    }
    AnomalyMap::new(out_h, out_w, values)
}
