//! Wall-clock runtime harness over shots, resolution and preprocessing.
//!
//! Latency covers one test sample from a decoded RGB image to its score and
//! anomaly map: resize and crop, feature extraction, masking, nearest-neighbor
//! search, aggregation and map smoothing. Bank-build time covers the same
//! front end for every reference view plus the bank itself.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use clap::Args;
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use patchbank::eval::{list_images, Summary};
use patchbank::features::{load_rgb, preprocess_image, rotate_image, MaskingMode};
use patchbank::synth::{render, SynthKind};
use patchbank::{Detector, Error, PipelineConfig, RotationMode};

use crate::common::{base_config, require_dir, write_text};
use crate::PipelineArgs;

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    /// Measured inference iterations per row.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Measured bank builds per row.
    #[arg(long, default_value_t = 5)]
    build_iters: usize,
    /// `shots=1,2,4`, `resolution=448,672` or
    /// `preprocessing=none,mask,rotate,both`; repeatable.
    #[arg(long = "axis")]
    axes: Vec<String>,
    /// Real images to use instead of synthetic ones; the first k are the
    /// references and the rest are cycled as test samples.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Edge length of the synthetic source images.
    #[arg(long, default_value_t = 512)]
    source_size: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "")]
    category: String,
    /// JSON report file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Preprocessing {
    /// As configured.
    Config,
    None,
    Mask,
    Rotate,
    Both,
}

impl Preprocessing {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "config" => Self::Config,
            "none" => Self::None,
            "mask" => Self::Mask,
            "rotate" => Self::Rotate,
            "both" => Self::Both,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown preprocessing {other:?} (expected none | mask | rotate | both)"
                ))
                .into())
            }
        })
    }

    fn apply(self, cfg: &mut PipelineConfig) {
        let (rotate, mask) = match self {
            Self::Config => return,
            Self::None => (false, false),
            Self::Mask => (false, true),
            Self::Rotate => (true, false),
            Self::Both => (true, true),
        };
        cfg.rotation = if rotate { RotationMode::Agnostic } else { RotationMode::Off };
        cfg.masking = if mask { MaskingMode::On } else { MaskingMode::Off };
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub shots: usize,
    pub resolution: u32,
    pub preprocessing: String,
    pub bank_size: usize,
    pub masking_enabled: bool,
    /// Seconds per sample.
    pub latency: Summary,
    /// Seconds per bank build.
    pub build: Summary,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport<'a> {
    pub config: &'a BenchArgs,
    pub pipeline: &'a PipelineConfig,
    pub threads: usize,
    pub rows: Vec<BenchRow>,
}

struct Axes {
    shots: Vec<usize>,
    resolution: Vec<u32>,
    preprocessing: Vec<Preprocessing>,
}

fn parse_axes(specs: &[String], cfg: &PipelineConfig) -> Result<Axes> {
    let mut axes = Axes {
        shots: vec![1],
        resolution: vec![cfg.resolution],
        preprocessing: vec![Preprocessing::Config],
    };
    for spec in specs {
        let (name, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("--axis {spec:?}: expected name=v1,v2,...")))?;
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::InvalidInput(format!("--axis {spec:?} lists no values")).into());
        }
        let bad = |v: &str| Error::InvalidInput(format!("--axis {name}: bad value {v:?}"));
        match name {
            "shots" => {
                axes.shots = values
                    .iter()
                    .map(|v| v.parse().ok().filter(|&k: &usize| k > 0).ok_or_else(|| bad(v)))
                    .collect::<Result<_, _>>()?
            }
            "resolution" => {
                axes.resolution = values
                    .iter()
                    .map(|v| v.parse().map_err(|_| bad(v)))
                    .collect::<Result<_, _>>()?
            }
            "preprocessing" => {
                axes.preprocessing = values.iter().map(|v| Preprocessing::parse(v)).collect::<Result<_>>()?
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown axis {other:?} (expected shots | resolution | preprocessing)"
                ))
                .into())
            }
        }
    }
    Ok(axes)
}

fn source_images(args: &BenchArgs, n: usize) -> Result<Vec<RgbImage>> {
    if let Some(dir) = &args.images {
        require_dir(dir, "bench image")?;
        let paths = list_images(dir)?;
        if paths.len() < 2 {
            return Err(Error::EmptyInput(format!("{} holds fewer than 2 images", dir.display())).into());
        }
        return paths.iter().take(n).map(|p| Ok(load_rgb(p)?)).collect();
    }
    let mut master = ChaCha8Rng::seed_from_u64(args.seed);
    Ok((0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
            render(SynthKind::Object, args.source_size, i % 4 == 3, &mut rng).0
        })
        .collect())
}

fn seconds_summary(v: &[f64]) -> Summary {
    Summary::of(v).unwrap_or(Summary { mean: 0.0, std: 0.0 })
}

fn build_detector(refs: &[RgbImage], category: &str, cfg: &PipelineConfig) -> Result<Detector> {
    let pre = cfg.preprocess_for(category);
    let extractor = cfg.extractor()?;
    let mut grids = Vec::with_capacity(refs.len() * pre.rotation_angles.len());
    for (i, img) in refs.iter().enumerate() {
        let prepared = preprocess_image(img, &pre)?;
        for &a in &pre.rotation_angles {
            let view = if a == 0.0 { prepared.clone() } else { rotate_image(&prepared, a)? };
            grids.push(extractor.extract_prepared(&view, &format!("ref{i}"))?);
        }
    }
    Ok(Detector::from_reference_grids(grids, refs.len(), category, cfg)?)
}

fn infer(detector: &Detector, img: &RgbImage, category: &str) -> Result<f64> {
    let pre = detector.config().preprocess_for(category);
    let prepared = preprocess_image(img, &pre)?;
    let grid = detector.extractor().extract_prepared(&prepared, "sample")?;
    Ok(detector.score_grid(&grid, true)?.score)
}

pub fn run(args: BenchArgs, config: Option<&Path>) -> Result<()> {
    let mut cfg = base_config(config, None)?;
    args.pipeline.apply(&mut cfg)?;
    cfg.validate(&[args.category.as_str()])?;
    if args.iters == 0 || args.build_iters == 0 {
        return Err(Error::InvalidInput("--iters and --build-iters must be >= 1".into()).into());
    }
    let axes = parse_axes(&args.axes, &cfg)?;
    let max_shots = *axes.shots.iter().max().unwrap();
    let n_tests = 8;
    let images = source_images(&args, max_shots + n_tests)?;
    if images.len() <= max_shots {
        return Err(Error::EmptyInput(format!(
            "{} images cannot provide {max_shots} references and a test sample",
            images.len()
        ))
        .into());
    }
    let (refs_all, tests) = images.split_at(max_shots);
    let mut rows = Vec::new();
    for &resolution in &axes.resolution {
        for &prep in &axes.preprocessing {
            for &k in &axes.shots {
                let mut row_cfg = cfg.clone();
                row_cfg.resolution = resolution;
                prep.apply(&mut row_cfg);
                row_cfg.validate(&[args.category.as_str()])?;
                let refs = &refs_all[..k];

                let mut build = Vec::with_capacity(args.build_iters);
                let mut detector = None;
                for _ in 0..args.build_iters {
                    let t = Instant::now();
                    let d = build_detector(refs, &args.category, &row_cfg)?;
                    build.push(t.elapsed().as_secs_f64());
                    detector = Some(d);
                }
                let detector = detector.expect("at least one build");

                for i in 0..args.warmup {
                    std::hint::black_box(infer(&detector, &tests[i % tests.len()], &args.category)?);
                }
                let mut latency = Vec::with_capacity(args.iters);
                for i in 0..args.iters {
                    let t = Instant::now();
                    std::hint::black_box(infer(&detector, &tests[i % tests.len()], &args.category)?);
                    latency.push(t.elapsed().as_secs_f64());
                }
                let row = BenchRow {
                    shots: k,
                    resolution,
                    preprocessing: serde_json::to_value(prep)?.as_str().unwrap_or_default().to_string(),
                    bank_size: detector.bank().count(),
                    masking_enabled: detector.masking().enabled,
                    latency: seconds_summary(&latency),
                    build: seconds_summary(&build),
                };
                println!(
                    "shots={} resolution={} preprocessing={} bank={} latency={:.3} ± {:.3} ms build={:.3} ± {:.3} ms",
                    row.shots,
                    row.resolution,
                    row.preprocessing,
                    row.bank_size,
                    row.latency.mean * 1e3,
                    row.latency.std * 1e3,
                    row.build.mean * 1e3,
                    row.build.std * 1e3
                );
                rows.push(row);
            }
        }
    }
    let report = BenchReport {
        config: &args,
        pipeline: &cfg,
        threads: rayon::current_num_threads(),
        rows,
    };
    if let Some(p) = &args.out {
        write_text(Some(p), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}
