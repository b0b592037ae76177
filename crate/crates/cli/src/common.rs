use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use patchbank::eval::list_images;
use patchbank::features::MaskingMode;
use patchbank::{PipelineConfig, RotationMode};
use serde::Serialize;

use crate::PipelineArgs;

/// Base config from `--config`, else `fallback`, else defaults.
pub fn base_config(path: Option<&Path>, fallback: Option<&serde_json::Value>) -> Result<PipelineConfig> {
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| patchbank::Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
        return Ok(cfg);
    }
    if let Some(v) = fallback {
        return Ok(serde_json::from_value(v.clone()).context("config stored in bank")?);
    }
    Ok(PipelineConfig::default())
}

impl PipelineArgs {
    pub fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(b) = &self.backbone {
            cfg.backbone = b.parse()?;
        }
        if let Some(r) = self.resolution {
            cfg.resolution = r;
        }
        if let Some(r) = &self.rotations {
            cfg.rotation = r.parse::<RotationMode>()?;
        }
        if let Some(a) = &self.angles {
            cfg.rotation_angles = a.clone();
        }
        if let Some(m) = &self.masking {
            cfg.masking = m.parse::<MaskingMode>()?;
        }
        if let Some(a) = &self.agg {
            cfg.score = cfg.score.with_aggregation_spec(a)?;
        }
        if let Some(s) = self.sigma {
            cfg.score.sigma = s;
        }
        if self.mask_references {
            cfg.mask_references = true;
        }
        if self.shared_pca {
            cfg.shared_pca = true;
        }
        for t in &self.textures {
            cfg.overrides.entry(t.clone()).or_default().texture = Some(true);
        }
        Ok(())
    }
}

/// Directories expand to their images; the result is sorted and deduplicated.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(list_images(p)?);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(patchbank::Error::Io {
                path: p.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
            }
            .into());
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Serialize)]
pub struct Echo<'a, A: Serialize> {
    pub command: &'a str,
    pub args: &'a A,
    pub pipeline: &'a PipelineConfig,
}

impl<A: Serialize> Echo<'_, A> {
    pub fn line(&self) -> String {
        format!("# config: {}", serde_json::to_string(self).expect("echo serializes"))
    }
}

pub fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            std::fs::write(p, text).map_err(|e| patchbank::Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| patchbank::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn require_dir(dir: &Path, what: &str) -> Result<()> {
    if !dir.is_dir() {
        return Err(patchbank::Error::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} directory not found")),
        }
        .into());
    }
    Ok(())
}
