use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{CategoryIndex, DatasetIndex};
use super::metrics::{auroc, average_precision, f1_max};
use super::pixel::{pixel_metrics, pro, GroundTruth, ProThresholds};
use crate::error::{Error, Result};
use crate::features::{apply_geometry_mask, PatchFeatureGrid};
use crate::pipeline::{Detector, PipelineConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub shots: Vec<usize>,
    pub seeds: usize,
    pub fpr_limit: f64,
    pub pro_thresholds: ProThresholds,
    /// Restrict to these categories; empty means all.
    pub categories: Vec<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            shots: vec![1],
            seeds: 3,
            fpr_limit: 0.3,
            pro_thresholds: ProThresholds::default(),
            categories: Vec::new(),
        }
    }
}

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: usize,
    pub references: Vec<String>,
    pub bank_size: usize,
    pub masking_enabled: bool,
    pub image_auroc: Option<f64>,
    pub image_f1_max: Option<f64>,
    pub image_ap: Option<f64>,
    pub pixel_auroc: Option<f64>,
    pub pixel_f1_max: Option<f64>,
    pub pro: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub shots: usize,
    pub n_test_nominal: usize,
    pub n_test_anomalous: usize,
    pub nominal_pixel_fraction: f64,
    pub image_auroc: Option<Summary>,
    pub image_f1_max: Option<Summary>,
    pub image_ap: Option<Summary>,
    pub pixel_auroc: Option<Summary>,
    pub pixel_f1_max: Option<Summary>,
    pub pro: Option<Summary>,
    pub seeds: Vec<SeedResult>,
    /// Wall-clock seconds; excluded from determinism comparisons.
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub category: String,
    pub shots: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub options: EvalOptions,
    pub dataset: String,
    pub results: Vec<CategoryReport>,
    pub skipped: Vec<Skipped>,
}

const METRICS: [&str; 6] = ["image_auroc", "image_f1_max", "image_ap", "pixel_auroc", "pixel_f1_max", "pro"];

impl CategoryReport {
    fn metric(&self, name: &str) -> Option<Summary> {
        match name {
            "image_auroc" => self.image_auroc,
            "image_f1_max" => self.image_f1_max,
            "image_ap" => self.image_ap,
            "pixel_auroc" => self.pixel_auroc,
            "pixel_f1_max" => self.pixel_f1_max,
            "pro" => self.pro,
            _ => None,
        }
    }
}

impl EvalReport {
    /// Copy with wall-clock fields cleared.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for c in &mut r.results {
            c.seconds = None;
        }
        r
    }

    /// Per-shot mean of each metric's seed mean over categories that have it.
    pub fn mean_row(&self, shots: usize) -> Vec<Option<f64>> {
        METRICS
            .iter()
            .map(|m| {
                let v: Vec<f64> = self
                    .results
                    .iter()
                    .filter(|c| c.shots == shots)
                    .filter_map(|c| c.metric(m).map(|s| s.mean))
                    .collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }

    /// Flat table: a `# config:` line, a header, one row per category and
    /// shot count, then a `mean` row per shot count.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = format!("# config: {}\n", serde_json::to_string(&self.config).unwrap_or_default());
        out += "category,shots";
        for m in METRICS {
            out += &format!(",{m}_mean,{m}_std");
        }
        out += "\n";
        for c in &self.results {
            out += &format!("{},{}", c.category, c.shots);
            for m in METRICS {
                let s = c.metric(m);
                out += &format!(",{},{}", fmt(s.map(|s| s.mean)), fmt(s.map(|s| s.std)));
            }
            out += "\n";
        }
        for &k in &self.options.shots {
            if !self.results.iter().any(|c| c.shots == k) {
                continue;
            }
            out += &format!("mean,{k}");
            for v in self.mean_row(k) {
                out += &format!(",{},", fmt(v));
            }
            out += "\n";
        }
        out
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(msg)) => {
            log::debug!("metric undefined: {msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Test-side inputs shared by every shot count and seed of a category.
pub struct PreparedTests {
    pub grids: Vec<PatchFeatureGrid>,
    pub labels: Vec<bool>,
    pub gts: Vec<GroundTruth>,
}

pub fn prepare_tests(cat: &CategoryIndex, cfg: &PipelineConfig) -> Result<PreparedTests> {
    let extractor = cfg.extractor()?;
    let pairs = cat
        .test
        .par_iter()
        .map(|item| {
            let grid = extractor.extract_path(&item.path, 0.0)?;
            let geom = extractor.geometry(&item.path)?;
            let gt = match &item.mask {
                Some(m) => {
                    let img = image::open(m).map_err(|e| Error::image(m, e))?.into_luma8();
                    if (img.width(), img.height()) != (geom.src_w, geom.src_h) {
                        return Err(Error::Dataset {
                            path: m.clone(),
                            message: format!(
                                "mask is {}x{} but its image is {}x{}",
                                img.width(),
                                img.height(),
                                geom.src_w,
                                geom.src_h
                            ),
                        });
                    }
                    GroundTruth::from_gray(&apply_geometry_mask(&img, &geom))
                }
                None => GroundTruth::empty(geom.out_h as usize, geom.out_w as usize),
            };
            Ok((grid, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    let (grids, gts) = pairs.into_iter().unzip();
    Ok(PreparedTests {
        grids,
        labels: cat.test.iter().map(|t| t.anomalous).collect(),
        gts,
    })
}

/// Scores one reference slice against prepared tests.
pub fn evaluate_seed(
    detector: &Detector,
    tests: &PreparedTests,
    opts: &EvalOptions,
) -> Result<(Vec<f64>, SeedResult)> {
    let scored = tests
        .grids
        .par_iter()
        .map(|g| detector.score_grid(g, true))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let any_anomalous = tests.labels.iter().any(|&l| l);
    let (pixel_auroc, pixel_f1_max, pro_value) = if any_anomalous {
        let maps: Vec<_> = scored.into_iter().filter_map(|s| s.map).collect();
        let pm = pixel_metrics(&maps, &tests.gts);
        let (pa, pf) = match pm {
            Ok(p) => (Some(p.auroc), Some(p.f1_max)),
            Err(Error::UndefinedMetric(_)) => (None, None),
            Err(e) => return Err(e),
        };
        let pr = defined(pro(&maps, &tests.gts, opts.fpr_limit, opts.pro_thresholds))?;
        (pa, pf, pr)
    } else {
        (None, None, None)
    };
    let result = SeedResult {
        seed: 0,
        references: Vec::new(),
        bank_size: detector.bank().count(),
        masking_enabled: detector.masking().enabled,
        image_auroc: defined(auroc(&scores, &tests.labels))?,
        image_f1_max: defined(f1_max(&scores, &tests.labels))?,
        image_ap: defined(average_precision(&scores, &tests.labels))?,
        pixel_auroc,
        pixel_f1_max,
        pro: pro_value,
    };
    Ok((scores, result))
}

fn summarize(seeds: &[SeedResult], pick: impl Fn(&SeedResult) -> Option<f64>) -> Option<Summary> {
    let v: Vec<f64> = seeds.iter().filter_map(pick).collect();
    // a metric counts only when every seed defines it
    if v.len() != seeds.len() {
        return None;
    }
    Summary::of(&v)
}

fn eval_category(
    cat: &CategoryIndex,
    cfg: &PipelineConfig,
    opts: &EvalOptions,
    skipped: &mut Vec<Skipped>,
) -> Result<Vec<CategoryReport>> {
    let start = Instant::now();
    let tests = prepare_tests(cat, cfg)?;
    let nominal_pixels: usize = tests.gts.iter().map(|g| g.bits().iter().filter(|&&b| !b).count()).sum();
    let total_pixels: usize = tests.gts.iter().map(|g| g.bits().len()).sum();

    let pre = cfg.preprocess_for(&cat.name);
    let angles = &pre.rotation_angles;
    let usable: Vec<usize> = opts
        .shots
        .iter()
        .copied()
        .filter(|&k| {
            let ok = k >= 1 && cat.train.len() >= k * opts.seeds;
            if !ok {
                log::warn!(
                    "{}: {} reference images cannot cover {} seeds of {k} shots; skipping",
                    cat.name,
                    cat.train.len(),
                    opts.seeds
                );
                skipped.push(Skipped {
                    category: cat.name.clone(),
                    shots: Some(k),
                    reason: format!("needs {} reference images, has {}", k * opts.seeds, cat.train.len()),
                });
            }
            ok
        })
        .collect();
    let needed = usable.iter().map(|k| k * opts.seeds).max().unwrap_or(0);
    let extractor = cfg.extractor()?;
    let jobs: Vec<_> = cat.train[..needed]
        .iter()
        .flat_map(|p| angles.iter().map(move |&a| (p, a)))
        .collect();
    let ref_grids = jobs
        .par_iter()
        .map(|(p, a)| extractor.extract_path(p, *a))
        .collect::<Result<Vec<_>>>()?;
    let prep_seconds = start.elapsed().as_secs_f64();

    let mut out = Vec::new();
    for &k in &usable {
        let t0 = Instant::now();
        let mut seeds = Vec::new();
        for i in 1..=opts.seeds {
            let range = (i - 1) * k..i * k;
            let grids = ref_grids[range.start * angles.len()..range.end * angles.len()].to_vec();
            let detector = Detector::from_reference_grids(grids, k, &cat.name, cfg)?;
            let (_, mut r) = evaluate_seed(&detector, &tests, opts)?;
            r.seed = i;
            r.references = cat.train[range]
                .iter()
                .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
                .collect();
            seeds.push(r);
        }
        out.push(CategoryReport {
            category: cat.name.clone(),
            shots: k,
            n_test_nominal: tests.labels.iter().filter(|&&l| !l).count(),
            n_test_anomalous: cat.n_anomalous(),
            nominal_pixel_fraction: nominal_pixels as f64 / total_pixels.max(1) as f64,
            image_auroc: summarize(&seeds, |s| s.image_auroc),
            image_f1_max: summarize(&seeds, |s| s.image_f1_max),
            image_ap: summarize(&seeds, |s| s.image_ap),
            pixel_auroc: summarize(&seeds, |s| s.pixel_auroc),
            pixel_f1_max: summarize(&seeds, |s| s.pixel_f1_max),
            pro: summarize(&seeds, |s| s.pro),
            seeds,
            seconds: Some(prep_seconds + t0.elapsed().as_secs_f64()),
        });
    }
    Ok(out)
}

/// k-shot evaluation: seed `i` uses train images `[(i-1)k, ik)` in sorted
/// filename order as references. Categories that fail are skipped and
/// listed; the call fails only when every category fails.
pub fn run_fewshot_eval(index: &DatasetIndex, cfg: &PipelineConfig, opts: &EvalOptions) -> Result<EvalReport> {
    if opts.seeds == 0 || opts.shots.is_empty() {
        return Err(Error::invalid("evaluation needs at least one seed and one shot count"));
    }
    let names: Vec<&str> = index.categories.iter().map(|c| c.name.as_str()).collect();
    cfg.validate(&names)?;
    for c in &opts.categories {
        if index.category(c).is_none() {
            return Err(Error::invalid(format!("category {c:?} not in dataset")));
        }
    }
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    let mut last_err = None;
    for cat in &index.categories {
        if !opts.categories.is_empty() && !opts.categories.contains(&cat.name) {
            continue;
        }
        match eval_category(cat, cfg, opts, &mut skipped) {
            Ok(r) => results.extend(r),
            Err(e) => {
                log::warn!("{}: skipped after error: {e}", cat.name);
                skipped.push(Skipped {
                    category: cat.name.clone(),
                    shots: None,
                    reason: e.to_string(),
                });
                last_err = Some(e);
            }
        }
    }
    if results.is_empty() {
        if let Some(e) = last_err {
            return Err(e);
        }
        return Err(Error::EmptyInput("no category could be evaluated".into()));
    }
    Ok(EvalReport {
        config: serde_json::to_value(cfg)?,
        options: opts.clone(),
        dataset: index.root.display().to_string(),
        results,
        skipped,
    })
}
