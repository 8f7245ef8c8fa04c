//! Dataset manifests (JSON lines) and training logs (CSV).
//!
//! A manifest line is `{"gs": .., "rs": .., "motion": .., "trajectory": ..,
//! "seed": ..}`; the four paths are relative to the manifest's directory
//! (absolute paths are used as-is).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rsrect_core::train::{MetricsRecord, PretrainRecord, TrainSample};
use rsrect_core::Real;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::formats::{load_motion, load_trajectory};
use crate::png_io::load_png;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub gs: String,
    pub rs: String,
    pub motion: String,
    pub trajectory: String,
    pub seed: u64,
}

impl ManifestRecord {
    /// The referenced files, resolved against `base`, in field order.
    pub fn paths(&self, base: &Path) -> [PathBuf; 4] {
        [&self.gs, &self.rs, &self.motion, &self.trajectory].map(|p| base.join(p))
    }
}

pub fn manifest_to_string(records: &[ManifestRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: k + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line: 0,
            reason: "no records".into(),
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads every sample a manifest references.
pub fn load_samples<T: Real>(manifest: &Path) -> Result<Vec<TrainSample<T>>> {
    let base = base_dir(manifest);
    read_manifest(manifest)?
        .iter()
        .map(|rec| {
            let [gs, rs, motion, traj] = rec.paths(&base);
            Ok(TrainSample {
                gs: load_png(&gs)?,
                rs: load_png(&rs)?,
                motion: load_motion(&motion)?,
                trajectory: load_trajectory(&traj)?,
                seed: rec.seed,
            })
        })
        .collect()
}

/// SHA-256 over the manifest bytes followed by every referenced file in
/// manifest order: a fingerprint of the whole dataset.
pub fn dataset_digest(manifest: &Path) -> Result<String> {
    let mut h = Sha256::new();
    h.update(fs::read(manifest).map_err(|e| Error::io(manifest, e))?);
    let base = base_dir(manifest);
    for rec in read_manifest(manifest)? {
        for p in rec.paths(&base) {
            h.update(fs::read(&p).map_err(|e| Error::io(&p, e))?);
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub const METRICS_HEADER: &str =
    "epoch,step,L_total,L_rec_mse,L_reg_mse,L_rec_edge,L_reg_edge,psnr_masked";
pub const PRETRAIN_HEADER: &str = "epoch,step,loss";

/// Line-buffered CSV log that is flushed after every record, so a crashed
/// run still leaves the epochs it completed.
pub struct CsvLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvLog {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut log = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        log.line(header)?;
        Ok(log)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn metrics(&mut self, m: &MetricsRecord) -> Result<()> {
        let l = &m.loss;
        self.line(&format!(
            "{},{},{},{},{},{},{},{}",
            m.epoch, m.step, l.total, l.rec_mse, l.reg_mse, l.rec_edge, l.reg_edge, m.psnr_masked
        ))
    }

    pub fn pretrain(&mut self, m: &PretrainRecord) -> Result<()> {
        self.line(&format!("{},{},{}", m.epoch, m.step, m.loss))
    }
}
