//! End-to-end detector: reference images to memory bank, test images to
//! scores and maps, with the per-category preprocessing policy.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batched::{batched_run, BatchedConfig, BatchedResult};
use crate::error::{Error, Result};
use crate::features::{
    BackboneSelector, FeatureExtractor, MaskingMode, PatchFeatureGrid, PreprocessConfig, PATCH_PX,
};
use crate::masking::{compute_mask, fit_pca_direction, masking_test, resolve_mask_mode, MaskPolicy, MaskTestOutcome, PatchMask, PcaDirection};
use crate::memory::{build_bank, coreset_reduce, score_grid, BankMeta, MemoryBank};
use crate::scoring::{aggregate, aggregate_with_map, make_map, Aggregation, AnomalyMap, PatchDistances, ScoreConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RotationMode {
    /// Always augment references with every configured angle.
    #[default]
    Agnostic,
    /// Rotate only categories known to appear rotated.
    Informed,
    Off,
}

impl std::str::FromStr for RotationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agnostic" => Ok(Self::Agnostic),
            "informed" => Ok(Self::Informed),
            "off" => Ok(Self::Off),
            other => Err(Error::invalid(format!(
                "unknown rotation mode {other:?} (expected agnostic | informed | off)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryPolicy {
    pub texture: bool,
    pub informed_rotation: bool,
}

/// Default preprocessing per benchmark category (MVTec-AD and VisA names).
pub const CATEGORY_TABLE: &[(&str, CategoryPolicy)] = {
    const fn p(texture: bool, informed_rotation: bool) -> CategoryPolicy {
        CategoryPolicy {
            texture,
            informed_rotation,
        }
    }
    &[
        ("bottle", p(false, false)),
        ("cable", p(false, false)),
        ("capsule", p(false, false)),
        ("carpet", p(true, false)),
        ("grid", p(true, false)),
        ("hazelnut", p(false, true)),
        ("leather", p(true, false)),
        ("metal_nut", p(false, false)),
        ("pill", p(false, false)),
        ("screw", p(false, true)),
        ("tile", p(true, false)),
        ("toothbrush", p(false, false)),
        ("transistor", p(false, false)),
        ("wood", p(true, false)),
        ("zipper", p(false, false)),
        ("candle", p(false, false)),
        ("capsules", p(false, false)),
        ("cashew", p(false, false)),
        ("chewinggum", p(false, false)),
        ("fryum", p(false, false)),
        ("macaroni1", p(false, false)),
        ("macaroni2", p(false, false)),
        ("pcb1", p(false, false)),
        ("pcb2", p(false, false)),
        ("pcb3", p(false, false)),
        ("pcb4", p(false, false)),
        ("pipe_fryum", p(false, false)),
    ]
};

pub fn known_category(name: &str) -> Option<CategoryPolicy> {
    CATEGORY_TABLE.iter().find(|(n, _)| *n == name).map(|(_, p)| *p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CategoryOverride {
    pub texture: Option<bool>,
    pub informed_rotation: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoresetConfig {
    pub target: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(with = "selector_string")]
    pub backbone: BackboneSelector,
    pub resolution: u32,
    pub rotation: RotationMode,
    pub rotation_angles: Vec<f64>,
    pub free_rotation: bool,
    pub masking: MaskingMode,
    pub mask_policy: MaskPolicy,
    /// Fit the masking direction on the references instead of per test image.
    pub shared_pca: bool,
    /// Also drop background patches of the references before they enter
    /// the bank. Off by default: masking applies to test images only.
    pub mask_references: bool,
    pub score: ScoreConfig,
    /// Tail fraction for batched zero-shot scoring.
    pub batched_alpha: f64,
    pub coreset: Option<CoresetConfig>,
    pub overrides: BTreeMap<String, CategoryOverride>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let pre = PreprocessConfig::default();
        Self {
            backbone: BackboneSelector::Toy,
            resolution: pre.resolution,
            rotation: RotationMode::Agnostic,
            rotation_angles: pre.rotation_angles,
            free_rotation: false,
            masking: MaskingMode::Auto,
            mask_policy: MaskPolicy::default(),
            shared_pca: false,
            mask_references: false,
            score: ScoreConfig::default(),
            batched_alpha: BatchedConfig::default().alpha,
            coreset: None,
            overrides: BTreeMap::new(),
        }
    }
}

mod selector_string {
    use super::BackboneSelector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BackboneSelector, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BackboneSelector, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl PipelineConfig {
    /// Checks the whole config; `extra_categories` lists names besides the
    /// built-in table that overrides may refer to.
    pub fn validate(&self, extra_categories: &[&str]) -> Result<()> {
        PreprocessConfig {
            rotation_angles: self.rotation_angles.clone(),
            ..self.preprocess_for("")
        }
        .validate()?;
        self.mask_policy.validate()?;
        self.score.validate()?;
        self.batched_config().validate()?;
        if let Some(c) = &self.coreset {
            if c.target == 0 {
                return Err(Error::invalid("coreset target must be >= 1"));
            }
        }
        for name in self.overrides.keys() {
            if known_category(name).is_none() && !extra_categories.contains(&name.as_str()) {
                return Err(Error::invalid(format!("override for unknown category {name:?}")));
            }
        }
        Ok(())
    }

    pub fn policy_for(&self, category: &str) -> CategoryPolicy {
        let mut p = known_category(category).unwrap_or(CategoryPolicy {
            texture: false,
            informed_rotation: false,
        });
        if let Some(o) = self.overrides.get(category) {
            p.texture = o.texture.unwrap_or(p.texture);
            p.informed_rotation = o.informed_rotation.unwrap_or(p.informed_rotation);
        }
        p
    }

    pub fn preprocess_for(&self, category: &str) -> PreprocessConfig {
        let policy = self.policy_for(category);
        let rotate = match self.rotation {
            RotationMode::Agnostic => true,
            RotationMode::Informed => policy.informed_rotation,
            RotationMode::Off => false,
        };
        PreprocessConfig {
            resolution: self.resolution,
            rotation_angles: if rotate { self.rotation_angles.clone() } else { vec![0.0] },
            masking_mode: self.masking,
            texture: policy.texture,
            free_rotation: self.free_rotation,
        }
    }

    pub fn batched_config(&self) -> BatchedConfig {
        BatchedConfig {
            alpha: self.batched_alpha,
            score: self.score,
        }
    }

    pub fn extractor(&self) -> Result<FeatureExtractor> {
        FeatureExtractor::new(self.backbone.clone(), self.resolution)
    }
}

/// Masking decision recorded in bank metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingRecord {
    pub enabled: bool,
    pub texture: bool,
    pub mode: MaskingMode,
    /// `None` when skipped (textures).
    pub test: Option<MaskTestOutcome>,
    pub policy: MaskPolicy,
    pub shared_pca: Option<PcaDirection>,
}

/// Runs the masking test on `first` and resolves whether to mask.
pub fn decide_masking(
    first: &PatchFeatureGrid,
    pre: &PreprocessConfig,
    cfg: &PipelineConfig,
    shared_fit: &[PatchFeatureGrid],
) -> Result<MaskingRecord> {
    let test = if pre.texture {
        None
    } else {
        match compute_mask(first, None, &cfg.mask_policy) {
            Ok(m) => Some(masking_test(&m, &cfg.mask_policy)),
            Err(Error::Degenerate(msg)) => {
                log::warn!("masking test on {:?} is degenerate ({msg}); treating as failed", first.source_id());
                Some(MaskTestOutcome {
                    passed: false,
                    center_foreground: 0.0,
                    global_foreground: 0.0,
                })
            }
            Err(e) => return Err(e),
        }
    };
    let enabled = resolve_mask_mode(pre, test.is_some_and(|t| t.passed));
    let shared_pca = if enabled && cfg.shared_pca {
        Some(fit_pca_direction(shared_fit, &cfg.mask_policy)?)
    } else {
        None
    };
    Ok(MaskingRecord {
        enabled,
        texture: pre.texture,
        mode: pre.masking_mode,
        test,
        policy: cfg.mask_policy,
        shared_pca,
    })
}

/// Result for one scored image.
#[derive(Debug, Clone)]
pub struct ScoredImage {
    pub source_id: String,
    pub score: f64,
    pub distances: PatchDistances,
    /// Present when requested or needed by the aggregation.
    pub map: Option<AnomalyMap>,
    pub mask: Option<PatchMask>,
}

pub struct Detector {
    config: PipelineConfig,
    category: String,
    extractor: FeatureExtractor,
    bank: MemoryBank,
    masking: MaskingRecord,
}

impl Detector {
    /// Builds the bank from reference images (each augmented with the
    /// category's rotation angles).
    pub fn build(refs: &[PathBuf], category: &str, config: &PipelineConfig) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::EmptyInput("no reference images".into()));
        }
        let pre = config.preprocess_for(category);
        pre.validate()?;
        let extractor = config.extractor()?;
        let jobs: Vec<(&PathBuf, f64)> = refs
            .iter()
            .flat_map(|p| pre.rotation_angles.iter().map(move |&a| (p, a)))
            .collect();
        let grids = jobs
            .par_iter()
            .map(|(p, a)| extractor.extract_path(p, *a))
            .collect::<Result<Vec<_>>>()?;
        Self::from_reference_grids(grids, refs.len(), category, config)
    }

    /// `grids` holds every reference at every angle, reference-major with
    /// the unrotated view first.
    pub fn from_reference_grids(
        grids: Vec<PatchFeatureGrid>,
        shots: usize,
        category: &str,
        config: &PipelineConfig,
    ) -> Result<Self> {
        let pre = config.preprocess_for(category);
        let per_ref = pre.rotation_angles.len();
        if grids.len() != shots * per_ref || grids.is_empty() {
            return Err(Error::invalid(format!(
                "{} reference grids for {shots} shots at {per_ref} angles",
                grids.len()
            )));
        }
        let unrotated: Vec<PatchFeatureGrid> = grids.iter().step_by(per_ref).cloned().collect();
        let masking = decide_masking(&unrotated[0], &pre, config, &unrotated)?;
        let meta = BankMeta {
            category: category.to_string(),
            shots,
            rotation_angles: pre.rotation_angles.clone(),
            backbone: config.backbone.to_string(),
            resolution: config.resolution,
            masking: Some(serde_json::to_value(&masking)?),
            config: Some(serde_json::to_value(config)?),
            ..Default::default()
        };
        let grids = if masking.enabled && config.mask_references {
            grids.iter().map(|g| foreground_only(g, &masking)).collect::<Result<Vec<_>>>()?
        } else {
            grids
        };
        let mut bank = build_bank(&grids, meta)?;
        if let Some(c) = config.coreset {
            if c.target < bank.count() {
                bank = coreset_reduce(&bank, c.target, c.seed)?;
            }
        }
        Ok(Self {
            config: config.clone(),
            category: category.to_string(),
            extractor: config.extractor()?,
            bank,
            masking,
        })
    }

    /// Restores a detector from a saved bank; `config` supplies the scoring
    /// settings while masking follows the bank's recorded decision.
    pub fn from_bank(bank: MemoryBank, config: &PipelineConfig) -> Result<Self> {
        let masking: MaskingRecord = match &bank.meta().masking {
            Some(v) => serde_json::from_value(v.clone())?,
            None => MaskingRecord {
                enabled: false,
                texture: false,
                mode: MaskingMode::Off,
                test: None,
                policy: config.mask_policy,
                shared_pca: None,
            },
        };
        if bank.meta().resolution != 0 && bank.meta().resolution != config.resolution {
            return Err(Error::invalid(format!(
                "bank was built at resolution {}, config asks for {}",
                bank.meta().resolution,
                config.resolution
            )));
        }
        Ok(Self {
            category: bank.meta().category.clone(),
            config: config.clone(),
            extractor: config.extractor()?,
            bank,
            masking,
        })
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn into_bank(self) -> MemoryBank {
        self.bank
    }

    pub fn masking(&self) -> &MaskingRecord {
        &self.masking
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    /// The test-time mask for `grid`, or `None` when masking is off. A
    /// mask that removes every patch falls back to scoring all of them.
    pub fn mask_for(&self, grid: &PatchFeatureGrid) -> Result<Option<PatchMask>> {
        if !self.masking.enabled {
            return Ok(None);
        }
        let mask = match compute_mask(grid, self.masking.shared_pca.as_ref(), &self.masking.policy) {
            Ok(m) => m,
            Err(Error::Degenerate(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        if mask.count() == 0 {
            log::warn!("mask for {:?} is empty; scoring every patch", grid.source_id());
            return Ok(None);
        }
        Ok(Some(mask))
    }

    /// Scores one grid; the pixel map is built only if `want_map` or the
    /// aggregation reads it.
    pub fn score_grid(&self, grid: &PatchFeatureGrid, want_map: bool) -> Result<ScoredImage> {
        if grid.dim() != self.bank.dim() {
            return Err(Error::invalid(format!(
                "feature dim {} of {:?} does not match bank dim {}",
                grid.dim(),
                grid.source_id(),
                self.bank.dim()
            )));
        }
        let mask = self.mask_for(grid)?;
        let distances = score_grid(grid, &self.bank, mask.as_ref())?;
        let cfg = &self.config.score;
        let (score, map) = if want_map || cfg.aggregation == Aggregation::MaxMap {
            let map = make_map(&distances, grid.grid_h() * PATCH_PX, grid.grid_w() * PATCH_PX, cfg)?;
            (aggregate_with_map(&distances, &map, cfg)?, Some(map))
        } else {
            (aggregate(&distances, cfg)?, None)
        };
        Ok(ScoredImage {
            source_id: grid.source_id().to_string(),
            score,
            distances,
            map,
            mask,
        })
    }

    pub fn score_path(&self, path: &Path, want_map: bool) -> Result<ScoredImage> {
        self.score_grid(&self.extractor.extract_path(path, 0.0)?, want_map)
    }
}

/// The foreground patches of `grid` as a one-row grid; the whole grid when
/// its mask comes out empty or degenerate.
fn foreground_only(grid: &PatchFeatureGrid, masking: &MaskingRecord) -> Result<PatchFeatureGrid> {
    let mask = match compute_mask(grid, masking.shared_pca.as_ref(), &masking.policy) {
        Ok(m) if m.count() > 0 => m,
        Ok(_) | Err(Error::Degenerate(_)) => return Ok(grid.clone()),
        Err(e) => return Err(e),
    };
    let kept: Vec<f32> = grid
        .patches()
        .zip(mask.bits())
        .filter(|(_, &fg)| fg)
        .flat_map(|(p, _)| p.iter().copied())
        .collect();
    PatchFeatureGrid::new(1, mask.count(), grid.dim(), kept, grid.source_id().to_string())
}

/// Batched zero-shot over test images; the masking test runs on the first
/// image of the batch since no references exist.
pub fn batched_grids(
    grids: &[PatchFeatureGrid],
    category: &str,
    config: &PipelineConfig,
) -> Result<(Vec<BatchedResult>, MaskingRecord)> {
    let first = grids.first().ok_or_else(|| Error::invalid("batched scoring needs at least 2 images, got 0"))?;
    let pre = config.preprocess_for(category);
    let masking = decide_masking(first, &pre, config, grids)?;
    let masks = if masking.enabled {
        let ms = grids
            .par_iter()
            .map(|g| {
                Ok(match compute_mask(g, masking.shared_pca.as_ref(), &masking.policy) {
                    Ok(m) if m.count() > 0 => m,
                    Ok(_) | Err(Error::Degenerate(_)) => PatchMask::full(g.grid_h(), g.grid_w()),
                    Err(e) => return Err(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(ms)
    } else {
        None
    };
    Ok((batched_run(grids, &config.batched_config(), masks.as_deref())?, masking))
}
