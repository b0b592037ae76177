use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use patchbank::eval::{load_dataset, run_fewshot_eval, EvalOptions, Layout, ProThresholds};
use patchbank::features::image_stem;
use patchbank::masking::{compute_mask, masking_test};
use patchbank::memory::{read_bank, write_bank};
use patchbank::pipeline::{batched_grids, CoresetConfig};
use patchbank::scoring::{export_heatmap, write_map_dump};
use patchbank::{AnomalyMap, Detector, Error};

use crate::common::{base_config, create_dir, expand_inputs, require_dir, write_text, Echo};
use crate::PipelineArgs;

#[derive(Args, Debug, Serialize)]
pub struct BuildBankArgs {
    /// Reference image files or directories.
    #[arg(long, required = true, num_args = 1..)]
    refs: Vec<PathBuf>,
    /// Output `.amb` file.
    #[arg(long)]
    out: PathBuf,
    /// Category name; selects texture and rotation defaults.
    #[arg(long, default_value = "")]
    category: String,
    /// Reduce the bank to this many rows by greedy coreset selection.
    #[arg(long)]
    coreset: Option<usize>,
    #[arg(long, default_value_t = 0)]
    coreset_seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pipeline: PipelineArgs,
}

pub fn build_bank(args: BuildBankArgs, config: Option<&Path>) -> Result<()> {
    let mut cfg = base_config(config, None)?;
    args.pipeline.apply(&mut cfg)?;
    if let Some(target) = args.coreset {
        cfg.coreset = Some(CoresetConfig {
            target,
            seed: args.coreset_seed,
        });
    }
    cfg.validate(&[args.category.as_str()])?;
    let refs = expand_inputs(&args.refs)?;
    if refs.is_empty() {
        return Err(Error::EmptyInput(format!("no reference images under {:?}", args.refs)).into());
    }
    let detector = Detector::build(&refs, &args.category, &cfg)?;
    let m = detector.masking();
    let bank = detector.bank();
    write_bank(&args.out, bank)?;
    let test = match &m.test {
        Some(t) => format!(
            "{} (center {:.4}, global {:.4})",
            if t.passed { "pass" } else { "fail" },
            t.center_foreground,
            t.global_foreground
        ),
        None => "skipped (texture)".into(),
    };
    println!(
        "{}: {} rows, dim {}, {} reference(s) x {} angle(s), masking test {test}, masking {}",
        args.out.display(),
        bank.count(),
        bank.dim(),
        refs.len(),
        bank.meta().rotation_angles.len(),
        if m.enabled { "on" } else { "off" }
    );
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct OutputArgs {
    /// CSV output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for colormapped PNG heatmaps.
    #[arg(long)]
    heatmaps: Option<PathBuf>,
    /// Directory for raw float map dumps (`.pfv`, dim 1).
    #[arg(long)]
    maps: Option<PathBuf>,
    /// Heatmap value mapped to the top color; defaults to the largest map
    /// value of the run.
    #[arg(long)]
    normalizer: Option<f64>,
}

impl OutputArgs {
    fn wants_maps(&self) -> bool {
        self.heatmaps.is_some() || self.maps.is_some()
    }
}

/// File stems for per-image outputs, disambiguated by parent directory and
/// then by position when stems collide.
fn output_names(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = paths.iter().map(|p| image_stem(p)).collect();
    if unique(&stems) {
        return stems;
    }
    let with_parent: Vec<String> = paths
        .iter()
        .zip(&stems)
        .map(|(p, s)| match p.parent().and_then(|d| d.file_name()) {
            Some(d) => format!("{}_{s}", d.to_string_lossy()),
            None => s.clone(),
        })
        .collect();
    if unique(&with_parent) {
        return with_parent;
    }
    stems.iter().enumerate().map(|(i, s)| format!("{i:05}_{s}")).collect()
}

fn unique(names: &[String]) -> bool {
    names.iter().collect::<HashSet<_>>().len() == names.len()
}

/// Writes maps and the score table; `rows` are `(path, score, map)`.
fn emit_scores<A: Serialize>(
    out: &OutputArgs,
    echo: &Echo<A>,
    paths: &[PathBuf],
    scores: &[f64],
    maps: &[Option<&AnomalyMap>],
) -> Result<()> {
    let names = output_names(paths);
    let normalizer = out.normalizer.unwrap_or_else(|| {
        let m = maps
            .iter()
            .flatten()
            .map(|m| m.max_value())
            .fold(0.0, f64::max);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    });
    for dir in [&out.heatmaps, &out.maps].into_iter().flatten() {
        create_dir(dir)?;
    }
    let mut text = echo.line();
    text += &format!(" normalizer={normalizer}\npath,score");
    if out.heatmaps.is_some() {
        text += ",heatmap";
    }
    if out.maps.is_some() {
        text += ",map";
    }
    text += "\n";
    for (i, path) in paths.iter().enumerate() {
        text += &format!("{},{}", path.display(), scores[i]);
        if let Some(dir) = &out.heatmaps {
            let f = dir.join(format!("{}.png", names[i]));
            export_heatmap(maps[i].expect("map requested"), normalizer, &f)?;
            text += &format!(",{}", f.display());
        }
        if let Some(dir) = &out.maps {
            let f = dir.join(format!("{}.pfv", names[i]));
            write_map_dump(maps[i].expect("map requested"), &image_stem(path), &f)?;
            text += &format!(",{}", f.display());
        }
        text += "\n";
    }
    write_text(out.out.as_deref(), &text)
}

#[derive(Args, Debug, Serialize)]
pub struct ScoreArgs {
    /// Memory bank written by `build-bank`.
    #[arg(long)]
    bank: PathBuf,
    /// Test image files or directories.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    #[serde(skip)]
    pipeline: PipelineArgs,
}

pub fn score(args: ScoreArgs, config: Option<&Path>) -> Result<()> {
    let bank = read_bank(&args.bank)?;
    let mut cfg = base_config(config, bank.meta().config.as_ref())?;
    args.pipeline.apply(&mut cfg)?;
    let category = bank.meta().category.clone();
    cfg.validate(&[category.as_str()])?;
    let detector = Detector::from_bank(bank, &cfg)?;
    let paths = expand_inputs(&args.inputs)?;
    if paths.is_empty() {
        log::warn!("no input images found in {:?}", args.inputs);
        eprintln!("warning: no input images found");
        return Ok(());
    }
    let want = args.output.wants_maps();
    let scored = paths
        .par_iter()
        .map(|p| detector.score_path(p, want).with_context(|| format!("scoring {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let maps: Vec<Option<&AnomalyMap>> = scored.iter().map(|s| s.map.as_ref()).collect();
    let echo = Echo {
        command: "score",
        args: &args,
        pipeline: &cfg,
    };
    emit_scores(&args.output, &echo, &paths, &scores, &maps)
}

#[derive(Args, Debug, Serialize)]
pub struct BatchedArgs {
    /// Test image files or directories (at least two images).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "")]
    category: String,
    /// Fraction of the other images' patches averaged per patch.
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    #[serde(skip)]
    pipeline: PipelineArgs,
}

pub fn batched(args: BatchedArgs, config: Option<&Path>) -> Result<()> {
    let mut cfg = base_config(config, None)?;
    args.pipeline.apply(&mut cfg)?;
    if let Some(a) = args.alpha {
        cfg.batched_alpha = a;
    }
    cfg.validate(&[args.category.as_str()])?;
    let paths = expand_inputs(&args.inputs)?;
    if paths.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "batched scoring compares images with each other and needs at least 2, got {}",
            paths.len()
        ))
        .into());
    }
    let extractor = cfg.extractor()?;
    let grids = paths
        .par_iter()
        .map(|p| extractor.extract_path(p, 0.0).with_context(|| format!("extracting {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let (results, masking) = batched_grids(&grids, &args.category, &cfg)?;
    log::info!("batched masking {}", if masking.enabled { "on" } else { "off" });
    let scores: Vec<f64> = results.iter().map(|r| r.score).collect();
    let maps: Vec<Option<&AnomalyMap>> = results.iter().map(|r| Some(&r.map)).collect();
    let echo = Echo {
        command: "batched",
        args: &args,
        pipeline: &cfg,
    };
    emit_scores(&args.output, &echo, &paths, &scores, &maps)
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Dataset root (MVTec-AD or VisA layout).
    #[arg(long)]
    dataset: PathBuf,
    /// mvtec | visa; detected from the tree when omitted.
    #[arg(long)]
    layout: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    shots: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    /// Restrict to these categories.
    #[arg(long, value_delimiter = ',')]
    categories: Vec<String>,
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// CSV report; printed to stdout when neither output is given.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Number of uniform thresholds, or `exact`.
    #[arg(long, default_value = "200")]
    pro_thresholds: String,
    #[arg(long, default_value_t = 0.3)]
    fpr_limit: f64,
    #[command(flatten)]
    #[serde(skip)]
    pipeline: PipelineArgs,
}

fn parse_thresholds(s: &str) -> Result<ProThresholds> {
    if s == "exact" {
        return Ok(ProThresholds::Exact);
    }
    match s.parse::<usize>() {
        Ok(n) if n >= 2 => Ok(ProThresholds::Uniform(n)),
        _ => Err(Error::InvalidInput(format!("--pro-thresholds {s:?}: expected exact or an integer >= 2")).into()),
    }
}

pub fn eval(args: EvalArgs, config: Option<&Path>) -> Result<()> {
    let mut cfg = base_config(config, None)?;
    args.pipeline.apply(&mut cfg)?;
    require_dir(&args.dataset, "dataset")?;
    let layout = args.layout.as_deref().map(str::parse::<Layout>).transpose()?;
    let index = load_dataset(&args.dataset, layout)?;
    let names: Vec<&str> = index.categories.iter().map(|c| c.name.as_str()).collect();
    cfg.validate(&names)?;
    if args.shots.is_empty() || args.shots.contains(&0) {
        return Err(Error::InvalidInput("--shots needs positive counts".into()).into());
    }
    if args.seeds == 0 {
        return Err(Error::InvalidInput("--seeds must be >= 1".into()).into());
    }
    if !(args.fpr_limit > 0.0 && args.fpr_limit <= 1.0) {
        return Err(Error::InvalidInput(format!("--fpr-limit {} outside (0, 1]", args.fpr_limit)).into());
    }
    let opts = EvalOptions {
        shots: args.shots.clone(),
        seeds: args.seeds,
        fpr_limit: args.fpr_limit,
        pro_thresholds: parse_thresholds(&args.pro_thresholds)?,
        categories: args.categories.clone(),
    };
    let report = run_fewshot_eval(&index, &cfg, &opts)?;
    for s in &report.skipped {
        eprintln!("skipped {} (shots {:?}): {}", s.category, s.shots, s.reason);
    }
    if let Some(p) = &args.out_json {
        write_text(Some(p), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    if args.out_csv.is_some() || args.out_json.is_none() {
        write_text(args.out_csv.as_deref(), &report.to_csv())?;
    }
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct MaskTestArgs {
    /// Reference image.
    image: PathBuf,
    #[arg(long, default_value = "")]
    category: String,
    /// Debug mask PNG; defaults to `<stem>_mask.png` in the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pipeline: PipelineArgs,
}

pub fn mask_test(args: MaskTestArgs, config: Option<&Path>) -> Result<()> {
    let mut cfg = base_config(config, None)?;
    args.pipeline.apply(&mut cfg)?;
    cfg.validate(&[args.category.as_str()])?;
    if cfg.preprocess_for(&args.category).texture {
        println!("skipped (texture)");
        return Ok(());
    }
    if !args.image.is_file() {
        return Err(Error::Io {
            path: args.image.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "image not found"),
        }
        .into());
    }
    let grid = cfg.extractor()?.extract_path(&args.image, 0.0)?;
    let p = &cfg.mask_policy;
    let mask = match compute_mask(&grid, None, p) {
        Ok(m) => m,
        Err(Error::Degenerate(msg)) => {
            println!("fail (degenerate features: {msg})");
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let t = masking_test(&mask, p);
    println!(
        "{} center_foreground={:.4} (min {}) global_foreground={:.4} (max {})",
        if t.passed { "pass" } else { "fail" },
        t.center_foreground,
        p.center_fg_min,
        t.global_foreground,
        p.global_fg_max
    );
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}_mask.png", image_stem(&args.image))));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    mask.write_png(&out)?;
    println!("mask: {}", out.display());
    Ok(())
}
