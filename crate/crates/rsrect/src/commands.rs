//! The command implementations behind the `rsrect` binary.
//!
//! Each command takes a plain argument struct (already merged with the run
//! configuration), writes its artifacts to the paths it was given and
//! returns a summary. Nothing here prints except the progress callbacks
//! the training commands forward to standard error.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rsrect_core::gradcheck::{run_suite, BlockReport};
use rsrect_core::metrics::masked_psnr;
use rsrect_core::nn::ModelParams;
use rsrect_core::rectifier::{rectify_ts, row_map_fixed_point, FixedPointConfig};
use rsrect_core::synth::textured_image;
use rsrect_core::train::dataset::{generate_sample, padded_size, prepare_clean, sample_seed};
use rsrect_core::train::{
    pretrain_motion, rectify_with_model, train_end_to_end, MetricsRecord, PretrainRecord,
    TrainSample,
};
use rsrect_core::trajectory::{eval_trajectory, random_trajectory};
use rsrect_core::warp::{full_support, warp_rs_from_gs};
use rsrect_core::{Image, MotionCurve, MotionRanges, Real, RowMap, VisibilityMask};
use serde::Serialize;

use crate::checkpoint::{checkpoint_from_bytes, read_header, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{load_motion, save_motion, save_rowmap, save_trajectory};
use crate::manifest::{
    dataset_digest, load_samples, manifest_to_string, CsvLog, ManifestRecord, METRICS_HEADER,
    PRETRAIN_HEADER,
};
use crate::png_io::{load_mask_png, load_png, save_mask_png, save_png};

/// Loads a PNG and makes it square: center-cropped to the shorter side
/// when `crop` is set, rejected otherwise.
pub fn load_square<T: Real>(path: &Path, crop: bool) -> Result<Image<T>> {
    let img = load_png::<T>(path)?;
    let (h, w) = (img.height(), img.width());
    if h == w {
        Ok(img)
    } else if crop {
        Ok(img.center_crop(h.min(w))?)
    } else {
        Err(Error::NotSquare {
            path: path.to_path_buf(),
            height: h,
            width: w,
        })
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

// ---------------------------------------------------------------- gendata

#[derive(Debug, Clone)]
pub struct GendataArgs {
    pub out_dir: PathBuf,
    /// Directory of clean PNGs (sorted by name); procedural scenes when
    /// absent.
    pub clean_dir: Option<PathBuf>,
    pub images: usize,
    pub motions: usize,
    pub seed: u64,
    pub r: usize,
    pub ranges: MotionRanges,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GendataSummary {
    pub manifest: PathBuf,
    pub records: usize,
    /// SHA-256 of the manifest and every file it references.
    pub digest: String,
}

/// Procedural clean image `index` for a dataset seeded with `seed`.
pub fn procedural_clean(seed: u64, index: usize, r: usize) -> Image<f64> {
    textured_image(sample_seed(seed, index, usize::MAX), padded_size(r), 3)
}

/// Synthesizes `images x motions` GS/RS pairs into `out_dir`:
/// `manifest.jsonl` plus `samples/NNNNN_{gs.png,rs.png,motion.csv,trajectory.json}`.
pub fn cmd_gendata(a: &GendataArgs) -> Result<GendataSummary> {
    if a.images == 0 || a.motions == 0 {
        return Err(Error::Usage(
            "--images and --motions must be positive".into(),
        ));
    }
    let clean: Vec<Image<f64>> = match &a.clean_dir {
        Some(dir) => {
            let files = png_files(dir)?;
            if files.len() < a.images {
                return Err(Error::Usage(format!(
                    "{} holds {} PNG file(s), {} requested",
                    dir.display(),
                    files.len(),
                    a.images
                )));
            }
            files[..a.images]
                .iter()
                .map(|p| load_png(p))
                .collect::<Result<_>>()?
        }
        None => (0..a.images)
            .map(|k| procedural_clean(a.seed, k, a.r))
            .collect(),
    };
    let padded: Vec<Image<f64>> = clean
        .iter()
        .map(|c| prepare_clean(c, a.r))
        .collect::<rsrect_core::Result<_>>()?;
    let samples_dir = a.out_dir.join("samples");
    create_dir(&samples_dir)?;
    let jobs: Vec<(usize, usize)> = (0..a.images)
        .flat_map(|i| (0..a.motions).map(move |m| (i, m)))
        .collect();
    let records = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(i, m))| {
            let s = generate_sample(&padded[i], a.r, sample_seed(a.seed, i, m), a.ranges)?;
            let name = |what: &str| format!("samples/{k:05}_{what}");
            let rec = ManifestRecord {
                gs: name("gs.png"),
                rs: name("rs.png"),
                motion: name("motion.csv"),
                trajectory: name("trajectory.json"),
                seed: s.seed,
            };
            save_png(&a.out_dir.join(&rec.gs), &s.gs)?;
            save_png(&a.out_dir.join(&rec.rs), &s.rs)?;
            save_motion(&a.out_dir.join(&rec.motion), &s.motion)?;
            save_trajectory(&a.out_dir.join(&rec.trajectory), &s.trajectory)?;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = a.out_dir.join("manifest.jsonl");
    fs::write(&manifest, manifest_to_string(&records)).map_err(|e| Error::io(&manifest, e))?;
    let digest = dataset_digest(&manifest)?;
    Ok(GendataSummary {
        manifest,
        records: records.len(),
        digest,
    })
}

// ---------------------------------------------------------------- distort

#[derive(Debug, Clone)]
pub enum MotionSource {
    File(PathBuf),
    /// Seeded random degree-2 trajectory within the given ranges.
    Random {
        seed: u64,
        ranges: MotionRanges,
    },
}

#[derive(Debug, Clone)]
pub struct DistortArgs {
    pub input: PathBuf,
    pub motion: MotionSource,
    pub crop: bool,
    pub out_rs: PathBuf,
    pub out_mask: PathBuf,
    pub out_motion: PathBuf,
    pub out_trajectory: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortSummary {
    pub size: usize,
    pub visible: usize,
}

/// GS image + motion -> RS image, its visibility mask and the motion used.
pub fn cmd_distort(a: &DistortArgs) -> Result<DistortSummary> {
    let gs = load_square::<f64>(&a.input, a.crop)?;
    let r = gs.height();
    let (motion, traj) = match &a.motion {
        MotionSource::File(p) => (load_motion::<f64>(p)?, None),
        MotionSource::Random { seed, ranges } => {
            let t = random_trajectory(*seed, *ranges);
            (eval_trajectory(&t, r)?, Some(t))
        }
    };
    if motion.len() != r {
        return Err(Error::Usage(format!(
            "motion has {} rows, image has {r}",
            motion.len()
        )));
    }
    let (rs, mask) = warp_rs_from_gs(&gs, &motion)?;
    save_png(&a.out_rs, &rs)?;
    save_mask_png(&a.out_mask, &mask)?;
    save_motion(&a.out_motion, &motion)?;
    if let (Some(p), Some(t)) = (&a.out_trajectory, &traj) {
        save_trajectory(p, t)?;
    }
    Ok(DistortSummary {
        size: r,
        visible: mask.count(),
    })
}

// ---------------------------------------------------------------- rectify

#[derive(Debug, Clone)]
pub enum Rectifier {
    /// Known per-row motion: fixed-point row map + gather warp.
    Motion(PathBuf),
    /// Trained network (checkpoint), smoothing with a trajectory fit of
    /// the given degree.
    Model { checkpoint: PathBuf, degree: usize },
}

#[derive(Debug, Clone)]
pub struct RectifyArgs {
    pub input: PathBuf,
    pub rectifier: Rectifier,
    pub crop: bool,
    /// Visibility mask of the RS input (as written by `distort`); pixels
    /// outside it are treated as invalid.
    pub input_mask: Option<PathBuf>,
    pub out: PathBuf,
    pub out_mask: PathBuf,
    /// Motion used (the network's smoothed prediction for `Model`).
    pub out_motion: Option<PathBuf>,
    pub out_rowmap: Option<PathBuf>,
    /// GS reference for a masked-PSNR report.
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RectifySummary {
    pub size: usize,
    pub visible: usize,
    pub psnr: Option<f64>,
}

pub fn cmd_rectify(a: &RectifyArgs) -> Result<RectifySummary> {
    let mut rs = load_square::<f64>(&a.input, a.crop)?;
    let r = rs.height();
    let mut support = Image::filled(r, r, 1, 1.0);
    if let Some(p) = &a.input_mask {
        let mut m = load_mask_png(p)?;
        if a.crop && (m.height() != r || m.width() != r) {
            let (top, left) = (
                (m.height().saturating_sub(r)) / 2,
                (m.width().saturating_sub(r)) / 2,
            );
            m = m.crop(top, left, r, r)?;
        }
        rs = rs.masked(&m)?;
        support = support.masked(&m)?;
    }
    let (rect, mask, motion, rowmap) = match &a.rectifier {
        Rectifier::Motion(p) => {
            let motion = load_motion::<f64>(p)?;
            if motion.len() != r {
                return Err(Error::Usage(format!(
                    "motion has {} rows, image has {r}",
                    motion.len()
                )));
            }
            let sol = row_map_fixed_point(&motion, FixedPointConfig::default())?;
            let (img, mask) = rectify_ts(&rs, &motion, &sol.map)?;
            (img, mask, motion, sol.map)
        }
        Rectifier::Model { checkpoint, degree } => {
            let model = load_checkpoint_for(checkpoint, r)?.model;
            let out = rectify_with_model(&model, &rs.cast::<f32>(), Some(*degree))?;
            (
                out.image.cast(),
                out.mask,
                out.motion.cast(),
                out.rowmap.cast(),
            )
        }
    };
    save_png(&a.out, &rect)?;
    save_mask_png(&a.out_mask, &mask)?;
    if let Some(p) = &a.out_motion {
        save_motion(p, &motion)?;
    }
    if let Some(p) = &a.out_rowmap {
        save_rowmap(p, &rowmap)?;
    }
    let psnr = match &a.reference {
        Some(p) => {
            let gs = load_square::<f64>(p, a.crop)?;
            Some(masked_psnr(
                &rect,
                &gs,
                &comparison_mask(&support, &mask, &motion, &rowmap)?,
            )?)
        }
        None => None,
    };
    Ok(RectifySummary {
        size: r,
        visible: mask.count(),
        psnr,
    })
}

/// Pixels of a rectified image that are full-support interpolations of
/// valid RS pixels: the output mask restricted to where the rectified
/// `support` (1 on valid RS pixels) is 1. Reference comparisons use this
/// so partially covered border pixels do not count.
pub fn comparison_mask(
    support: &Image<f64>,
    mask: &VisibilityMask,
    motion: &MotionCurve<f64>,
    rowmap: &RowMap<f64>,
) -> Result<VisibilityMask> {
    let (cover, _) = rectify_ts(support, motion, rowmap)?;
    Ok(mask.and(&full_support(&cover))?)
}

/// Loads an `f32` checkpoint and checks it was trained for images of side
/// `r`.
pub fn load_checkpoint_for(path: &Path, r: usize) -> Result<Checkpoint<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, _) = read_header(&bytes, path)?;
    if header.r != r {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected: header.r,
            found: r,
        });
    }
    checkpoint_from_bytes(&bytes, path)
}

// ---------------------------------------------------------------- training

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub manifest: PathBuf,
    pub config: RunConfig,
    /// Starting checkpoint; a fresh initialization from the config seed
    /// when absent.
    pub init: Option<PathBuf>,
    pub out: PathBuf,
    /// Per-epoch CSV log.
    pub log: Option<PathBuf>,
}

/// Loads a manifest for training and the starting model.
fn training_inputs(a: &TrainArgs) -> Result<(Vec<TrainSample<f32>>, ModelParams<f32>, u64)> {
    a.config.validate()?;
    let samples = load_samples::<f32>(&a.manifest)?;
    let r = samples[0].gs.height();
    if let Some(bad) = samples
        .iter()
        .position(|s| s.gs.height() != r || s.motion.len() != r)
    {
        return Err(Error::Manifest {
            path: a.manifest.clone(),
            line: bad + 1,
            reason: format!("sample size differs from the first sample ({r})"),
        });
    }
    if r != a.config.r {
        eprintln!(
            "note: dataset has r={r}, config says r={}; using the dataset's",
            a.config.r
        );
    }
    let (model, seed) = match &a.init {
        Some(p) => {
            let ck = load_checkpoint_for(p, r)?;
            (ck.model, ck.seed)
        }
        None => (ModelParams::init(r, a.config.seed)?, a.config.seed),
    };
    Ok((samples, model, seed))
}

/// Saves the model that was reached before a non-finite step, then passes
/// the error on.
fn keep_last_good(
    res: rsrect_core::Result<()>,
    out: &Path,
    model: &ModelParams<f32>,
    seed: u64,
) -> Result<()> {
    if let Err(e) = res {
        if matches!(
            e,
            rsrect_core::Error::NonFiniteLoss { .. } | rsrect_core::Error::NonFiniteGradient(_)
        ) {
            save_checkpoint(out, model, seed)?;
        }
        return Err(e.into());
    }
    Ok(())
}

pub fn cmd_pretrain(
    a: &TrainArgs,
    mut progress: impl FnMut(&PretrainRecord),
) -> Result<Vec<PretrainRecord>> {
    let (samples, mut model, seed) = training_inputs(a)?;
    let mut log = a
        .log
        .as_deref()
        .map(|p| CsvLog::create(p, PRETRAIN_HEADER))
        .transpose()?;
    let mut log_err = None;
    let cfg = a.config.pretrain_config();
    let res = pretrain_motion(&mut model, &samples, &cfg, |rec| {
        progress(rec);
        if let Some(l) = log.as_mut() {
            if let Err(e) = l.pretrain(rec) {
                log_err.get_or_insert(e);
            }
        }
    });
    let records = match res {
        Ok(r) => r,
        Err(e) => return keep_last_good(Err(e), &a.out, &model, seed).map(|_| Vec::new()),
    };
    if let Some(e) = log_err {
        return Err(e);
    }
    save_checkpoint(&a.out, &model, seed)?;
    Ok(records)
}

pub fn cmd_train(
    a: &TrainArgs,
    mut progress: impl FnMut(&MetricsRecord),
) -> Result<Vec<MetricsRecord>> {
    let (samples, mut model, seed) = training_inputs(a)?;
    let mut log = a
        .log
        .as_deref()
        .map(|p| CsvLog::create(p, METRICS_HEADER))
        .transpose()?;
    let mut log_err = None;
    let cfg = a.config.train_config();
    let res = train_end_to_end(&mut model, &samples, &cfg, |rec| {
        progress(rec);
        if let Some(l) = log.as_mut() {
            if let Err(e) = l.metrics(rec) {
                log_err.get_or_insert(e);
            }
        }
    });
    let records = match res {
        Ok(r) => r,
        Err(e) => return keep_last_good(Err(e), &a.out, &model, seed).map(|_| Vec::new()),
    };
    if let Some(e) = log_err {
        return Err(e);
    }
    save_checkpoint(&a.out, &model, seed)?;
    Ok(records)
}

// ---------------------------------------------------------------- gradcheck

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
    Both,
}

/// Runs the finite-difference suite; fails with [`Error::GradCheck`] when
/// any block misses its tolerance (the reports are still returned through
/// `reports`).
pub fn cmd_gradcheck(
    precision: Precision,
    seed: u64,
    reports: &mut Vec<BlockReport>,
) -> Result<()> {
    if matches!(precision, Precision::F32 | Precision::Both) {
        reports.extend(run_suite::<f32>(seed)?);
    }
    if matches!(precision, Precision::F64 | Precision::Both) {
        reports.extend(run_suite::<f64>(seed)?);
    }
    match reports.iter().filter(|r| !r.passed()).count() {
        0 => Ok(()),
        n => Err(Error::GradCheck(n)),
    }
}

/// One line per block: name, relative error, tolerance, verdict.
pub fn format_report(r: &BlockReport) -> String {
    format!(
        "{:<28} rel_err {:.3e}  tol {:.0e}  entries {:>5}  skipped {:>3}  {}",
        r.block,
        r.rel_err,
        r.tolerance,
        r.entries,
        r.skipped,
        if r.passed() { "PASS" } else { "FAIL" }
    )
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub manifest: PathBuf,
    /// Rectify with this checkpoint; with the manifest's ground-truth
    /// motion when absent.
    pub model: Option<PathBuf>,
    pub degree: usize,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub samples: usize,
    /// Mean masked PSNR (dB) over samples with a finite PSNR.
    pub mean_psnr: f64,
    pub min_psnr: f64,
    /// Samples whose rectification matched the reference exactly.
    pub exact: usize,
    pub psnr: Vec<Option<f64>>,
}

pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport> {
    let samples = load_samples::<f64>(&a.manifest)?;
    let r = samples[0].gs.height();
    let model = a
        .model
        .as_deref()
        .map(|p| load_checkpoint_for(p, r).map(|c| c.model))
        .transpose()?;
    let psnr: Vec<f64> = samples
        .par_iter()
        .map(|s| -> Result<f64> {
            let (rect, mask, motion, rowmap) = match &model {
                None => {
                    let sol = row_map_fixed_point(&s.motion, FixedPointConfig::default())?;
                    let (img, mask) = rectify_ts(&s.rs, &s.motion, &sol.map)?;
                    (img, mask, s.motion.clone(), sol.map)
                }
                Some(m) => {
                    let out = rectify_with_model(m, &s.rs.cast::<f32>(), Some(a.degree))?;
                    (
                        out.image.cast(),
                        out.mask,
                        out.motion.cast(),
                        out.rowmap.cast(),
                    )
                }
            };
            let support = Image::filled(r, r, 1, 1.0);
            Ok(masked_psnr(
                &rect,
                &s.gs,
                &comparison_mask(&support, &mask, &motion, &rowmap)?,
            )?)
        })
        .collect::<Result<_>>()?;
    let finite: Vec<f64> = psnr.iter().copied().filter(|v| v.is_finite()).collect();
    let report = EvalReport {
        method: if model.is_some() { "model" } else { "motion" }.into(),
        samples: psnr.len(),
        mean_psnr: if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        },
        min_psnr: finite.iter().copied().fold(f64::INFINITY, f64::min),
        exact: psnr.len() - finite.len(),
        psnr: psnr.iter().map(|v| v.is_finite().then_some(*v)).collect(),
    };
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    Ok(report)
}
