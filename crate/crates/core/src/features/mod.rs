//! Image preprocessing, patch feature extraction and the `.pfv` format.

mod grid;
mod pfv;
mod preprocess;
mod toy;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use image::RgbImage;

pub use grid::{PatchFeatureGrid, PATCH_PX};
pub use pfv::{
    decode_feature_file, encode_feature_file, read_feature_file, write_feature_file, FeatureFile,
    FeatureFileMeta, FLAG_UNIT_NORMALIZED, PFV_MAGIC,
};
pub(crate) use pfv::Reader;
pub use preprocess::{
    apply_geometry, apply_geometry_mask, plan_geometry, preprocess_image, quarter_turns,
    resize_bilinear, rotate_image, validate_resolution, Geometry, MaskingMode, PreprocessConfig,
};
pub use toy::{orientation_bin, toy_extract, ToyBackbone, ORIENTATION_BINS, TOY_DIM};

use crate::error::{Error, Result};

/// A patch feature extractor. Must be deterministic.
pub trait Backbone: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn extract(&self, img: &RgbImage) -> Result<PatchFeatureGrid>;
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|e| Error::image(path, e))?
        .into_rgb8())
}

pub fn image_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// `dir/<a>/<b>/<name>` for the longest trailing run `a/b` of the image's
/// parent directories that exists, else `dir/<name>`.
fn locate_feature_file(dir: &Path, image: &Path, name: &str) -> PathBuf {
    let parents: Vec<&std::ffi::OsStr> = image
        .parent()
        .map(|p| {
            p.components()
                .filter_map(|c| match c {
                    std::path::Component::Normal(s) => Some(s),
                    _ => None,
                })
                .collect()
        })
        .unwrap_or_default();
    for start in 0..parents.len() {
        let mut candidate = dir.to_path_buf();
        candidate.extend(&parents[start..]);
        candidate.push(name);
        if candidate.is_file() {
            return candidate;
        }
    }
    dir.join(name)
}

/// Where patch features come from: `toy`, `file:<dir>` or `extern:<command>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackboneSelector {
    Toy,
    /// Precomputed `.pfv` files named `<stem>.pfv`; rotated variants may be
    /// supplied as `<stem>_rot<angle>.pfv`. Files may sit in subdirectories
    /// mirroring the image's parent directories (`bottle/test/crack/000.pfv`),
    /// which keeps repeated stems in dataset trees apart.
    File(PathBuf),
    /// A command invoked with a preprocessed image path as its last
    /// argument that prints a `.pfv` file on stdout.
    Extern(String),
}

impl std::str::FromStr for BackboneSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "toy" {
            Ok(Self::Toy)
        } else if let Some(dir) = s.strip_prefix("file:") {
            Ok(Self::File(PathBuf::from(dir)))
        } else if let Some(cmd) = s.strip_prefix("extern:") {
            if cmd.trim().is_empty() {
                return Err(Error::invalid("extern backbone needs a command"));
            }
            Ok(Self::Extern(cmd.to_string()))
        } else {
            Err(Error::invalid(format!(
                "unknown backbone {s:?} (expected toy | file:<dir> | extern:<command>)"
            )))
        }
    }
}

impl std::fmt::Display for BackboneSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Toy => write!(f, "toy"),
            Self::File(dir) => write!(f, "file:{}", dir.display()),
            Self::Extern(cmd) => write!(f, "extern:{cmd}"),
        }
    }
}

/// Turns image paths into feature grids at a fixed resolution.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    selector: BackboneSelector,
    resolution: u32,
}

impl FeatureExtractor {
    pub fn new(selector: BackboneSelector, resolution: u32) -> Result<Self> {
        validate_resolution(resolution)?;
        Ok(Self {
            selector,
            resolution,
        })
    }

    pub fn selector(&self) -> &BackboneSelector {
        &self.selector
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn geometry(&self, path: &Path) -> Result<Geometry> {
        let (w, h) = image::image_dimensions(path).map_err(|e| Error::image(path, e))?;
        plan_geometry(w, h, self.resolution)
    }

    /// Features of the preprocessed image at `path`, rotated clockwise by
    /// `angle` degrees before extraction.
    pub fn extract_path(&self, path: &Path, angle: f64) -> Result<PatchFeatureGrid> {
        let stem = image_stem(path);
        let mut grid = match &self.selector {
            BackboneSelector::Toy => {
                let img = self.load_prepared(path, angle)?;
                toy_extract(&img)?
            }
            BackboneSelector::File(dir) => self.from_file(dir, path, &stem, angle)?,
            BackboneSelector::Extern(cmd) => {
                let img = self.load_prepared(path, angle)?;
                let grid = run_extern(cmd, &img, self.resolution)?;
                check_grid(&grid, img.width(), img.height(), path)?;
                grid
            }
        };
        grid.set_source_id(stem);
        Ok(grid)
    }

    /// Features of an in-memory image that is already preprocessed.
    pub fn extract_prepared(&self, img: &RgbImage, source_id: &str) -> Result<PatchFeatureGrid> {
        let mut grid = match &self.selector {
            BackboneSelector::Toy => toy_extract(img)?,
            BackboneSelector::Extern(cmd) => {
                let grid = run_extern(cmd, img, self.resolution)?;
                check_grid(&grid, img.width(), img.height(), Path::new(source_id))?;
                grid
            }
            BackboneSelector::File(_) => {
                return Err(Error::invalid(
                    "file backbone cannot extract from in-memory images",
                ))
            }
        };
        grid.set_source_id(source_id);
        Ok(grid)
    }

    fn load_prepared(&self, path: &Path, angle: f64) -> Result<RgbImage> {
        let img = load_rgb(path)?;
        let geom = plan_geometry(img.width(), img.height(), self.resolution)?;
        rotate_image(&apply_geometry(&img, &geom), angle)
    }

    fn from_file(&self, dir: &Path, path: &Path, stem: &str, angle: f64) -> Result<PatchFeatureGrid> {
        let geom = self.geometry(path)?;
        let turns = quarter_turns(angle);
        let (ew, eh) = match turns {
            Some(1) | Some(3) => (geom.out_h, geom.out_w),
            _ => (geom.out_w, geom.out_h),
        };
        if angle != 0.0 {
            let rotated = locate_feature_file(dir, path, &format!("{stem}_rot{angle}.pfv"));
            if rotated.exists() {
                let grid = read_feature_file(&rotated)?.grid;
                check_grid(&grid, ew, eh, &rotated)?;
                return Ok(grid);
            }
        }
        let file = locate_feature_file(dir, path, &format!("{stem}.pfv"));
        let grid = read_feature_file(&file)?.grid;
        check_grid(&grid, geom.out_w, geom.out_h, &file)?;
        match turns {
            Some(0) => Ok(grid),
            Some(t) => {
                log::debug!("no rotated features for {stem} at {angle}, permuting grid cells");
                Ok(grid.rotate_cells(t))
            }
            None => Err(Error::invalid(format!(
                "precomputed features for {stem} at angle {angle} are missing"
            ))),
        }
    }
}

fn check_grid(grid: &PatchFeatureGrid, w: u32, h: u32, origin: &Path) -> Result<()> {
    let expect = (h as usize / PATCH_PX, w as usize / PATCH_PX);
    if (grid.grid_h(), grid.grid_w()) != expect {
        return Err(Error::Backbone(format!(
            "{}: feature grid {}x{} does not match preprocessed image {}x{} (expected grid {}x{})",
            origin.display(),
            grid.grid_h(),
            grid.grid_w(),
            w,
            h,
            expect.0,
            expect.1
        )));
    }
    Ok(())
}

fn run_extern(cmd: &str, img: &RgbImage, resolution: u32) -> Result<PatchFeatureGrid> {
    let mut tmp = tempfile::Builder::new()
        .suffix(".png")
        .tempfile()
        .map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let mut png = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
        .map_err(|e| Error::image(tmp.path(), e))?;
    tmp.write_all(&png).map_err(|e| Error::io(tmp.path(), e))?;
    let output = Command::new("sh")
        .arg("-c")
        .arg(format!("{cmd} \"$1\""))
        .arg("sh")
        .arg(tmp.path())
        .env("PATCHBANK_RESOLUTION", resolution.to_string())
        .stdin(Stdio::null())
        .output()
        .map_err(|e| Error::Backbone(format!("failed to spawn {cmd:?}: {e}")))?;
    if !output.status.success() {
        return Err(Error::Backbone(format!(
            "{cmd:?} exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    Ok(decode_feature_file(&output.stdout)?.grid)
}
