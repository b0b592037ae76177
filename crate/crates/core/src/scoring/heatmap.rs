use std::path::Path;

use image::{Rgb, RgbImage};

use super::AnomalyMap;
use crate::error::{Error, Result};
use crate::features::{encode_feature_file, FeatureFileMeta, PatchFeatureGrid};

/// Jet-style colormap entry for index `0..=255` (dark blue to dark red).
pub fn colormap(index: u8) -> [u8; 3] {
    let t = index as f64 / 255.0;
    let ch = |c: f64| ((1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Colormap indices: `round(clamp(v / normalizer, 0, 1) * 255)`, halves
/// rounding up, so `normalizer / 2` maps to 128.
pub fn heatmap_indices(map: &AnomalyMap, normalizer: f64) -> Result<Vec<u8>> {
    if !(normalizer > 0.0 && normalizer.is_finite()) {
        return Err(Error::invalid(format!(
            "heatmap normalizer {normalizer} must be > 0"
        )));
    }
    Ok(map
        .values()
        .iter()
        .map(|&v| ((v / normalizer).clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
        .collect())
}

pub fn export_heatmap(map: &AnomalyMap, normalizer: f64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let idx = heatmap_indices(map, normalizer)?;
    let img = RgbImage::from_fn(map.w() as u32, map.h() as u32, |x, y| {
        Rgb(colormap(idx[y as usize * map.w() + x as usize]))
    });
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Raw float dump in the `.pfv` layout with `dim = 1` and the pixel
/// dimensions as the grid.
pub fn write_map_dump(map: &AnomalyMap, source_id: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data = map.values().iter().map(|&v| v as f32).collect();
    let grid = PatchFeatureGrid::new(map.h(), map.w(), 1, data, source_id)?;
    let meta = FeatureFileMeta {
        source_id: source_id.to_string(),
        backbone: "anomaly-map".into(),
        resolution: map.h().min(map.w()) as u32,
    };
    std::fs::write(path, encode_feature_file(&grid, &meta, 0)).map_err(|e| Error::io(path, e))
}
