//! Text and binary encodings of motion curves, trajectories and row maps.
//!
//! * Motion curve: CSV with header `row,tx_px,rz_rad`, one line per row.
//! * Trajectory: JSON `{degree, coeffs_tx, coeffs_rz, normalization}`.
//! * Row map: `"RMAP"`, `u16` size, `u16` reserved (0), then `size^2`
//!   little-endian `f32` entries in row-major order; invalid entries are
//!   stored as NaN.
//!
//! Floats are written in shortest round-trip form, so text files reproduce
//! the in-memory values exactly.

use std::fs;
use std::path::Path;

use rsrect_core::trajectory::NORMALIZATION;
use rsrect_core::{MotionCurve, PolynomialTrajectory, Real, RowMap};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MOTION_HEADER: [&str; 3] = ["row", "tx_px", "rz_rad"];
pub const ROWMAP_MAGIC: &[u8; 4] = b"RMAP";

pub fn motion_to_csv<T: Real>(motion: &MotionCurve<T>) -> String {
    let mut out = MOTION_HEADER.join(",");
    out.push('\n');
    for (i, (t, z)) in motion.tx().iter().zip(motion.rz()).enumerate() {
        out.push_str(&format!("{i},{},{}\n", t.as_f64(), z.as_f64()));
    }
    out
}

pub fn motion_from_csv<T: Real>(text: &str, path: &Path) -> Result<MotionCurve<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::format(path, e))?;
    if header.iter().collect::<Vec<_>>() != MOTION_HEADER {
        return Err(Error::format(
            path,
            format!("expected header `{}`", MOTION_HEADER.join(",")),
        ));
    }
    let (mut tx, mut rz) = (Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let field = |n: usize| -> Result<&str> {
            rec.get(n)
                .ok_or_else(|| Error::format(path, format!("line {}: missing column", k + 2)))
        };
        let row: usize = field(0)?
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad row index", k + 2)))?;
        if row != k {
            return Err(Error::format(
                path,
                format!("line {}: expected row {k}, found {row}", k + 2),
            ));
        }
        let num = |n: usize| -> Result<f64> {
            field(n)?
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(path, format!("line {}: bad number", k + 2)))
        };
        tx.push(T::of(num(1)?));
        rz.push(T::of(num(2)?));
    }
    if tx.is_empty() {
        return Err(Error::format(path, "motion curve has no rows"));
    }
    Ok(MotionCurve::new(tx, rz)?)
}

pub fn save_motion<T: Real>(path: &Path, motion: &MotionCurve<T>) -> Result<()> {
    fs::write(path, motion_to_csv(motion)).map_err(|e| Error::io(path, e))
}

pub fn load_motion<T: Real>(path: &Path) -> Result<MotionCurve<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    motion_from_csv(&text, path)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryJson {
    degree: usize,
    coeffs_tx: Vec<f64>,
    coeffs_rz: Vec<f64>,
    normalization: String,
}

pub fn trajectory_to_json(traj: &PolynomialTrajectory) -> String {
    let doc = TrajectoryJson {
        degree: traj.degree(),
        coeffs_tx: traj.coeffs_tx().to_vec(),
        coeffs_rz: traj.coeffs_rz().to_vec(),
        normalization: NORMALIZATION.to_string(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("trajectory serializes");
    s.push('\n');
    s
}

pub fn trajectory_from_json(text: &str, path: &Path) -> Result<PolynomialTrajectory> {
    let doc: TrajectoryJson = serde_json::from_str(text).map_err(|e| Error::format(path, e))?;
    if doc.normalization != NORMALIZATION {
        return Err(Error::format(
            path,
            format!(
                "unsupported normalization `{}` (expected `{NORMALIZATION}`)",
                doc.normalization
            ),
        ));
    }
    PolynomialTrajectory::new(doc.degree, doc.coeffs_tx, doc.coeffs_rz)
        .map_err(|e| Error::format(path, e))
}

pub fn save_trajectory(path: &Path, traj: &PolynomialTrajectory) -> Result<()> {
    fs::write(path, trajectory_to_json(traj)).map_err(|e| Error::io(path, e))
}

pub fn load_trajectory(path: &Path) -> Result<PolynomialTrajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    trajectory_from_json(&text, path)
}

pub fn rowmap_to_bytes<T: Real>(map: &RowMap<T>) -> Result<Vec<u8>> {
    let r = map.size();
    let side = u16::try_from(r)
        .map_err(|_| rsrect_core::Error::InvalidArgument("row map too large to store"))?;
    let mut out = Vec::with_capacity(8 + 4 * r * r);
    out.extend_from_slice(ROWMAP_MAGIC);
    out.extend_from_slice(&side.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for (v, &ok) in map.data().iter().zip(map.validity()) {
        let x = if ok { v.as_f64() as f32 } else { f32::NAN };
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn rowmap_from_bytes<T: Real>(bytes: &[u8], path: &Path) -> Result<RowMap<T>> {
    if bytes.len() < 8 || &bytes[..4] != ROWMAP_MAGIC {
        return Err(Error::format(path, "not a row map (bad magic)"));
    }
    let r = usize::from(u16::from_le_bytes([bytes[4], bytes[5]]));
    let body = &bytes[8..];
    if body.len() != 4 * r * r {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", 4 * r * r, body.len()),
        ));
    }
    let entries = body
        .chunks_exact(4)
        .map(|c| T::of(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
        .collect();
    Ok(RowMap::from_entries(r, entries)?)
}

pub fn save_rowmap<T: Real>(path: &Path, map: &RowMap<T>) -> Result<()> {
    fs::write(path, rowmap_to_bytes(map)?).map_err(|e| Error::io(path, e))
}

pub fn load_rowmap<T: Real>(path: &Path) -> Result<RowMap<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    rowmap_from_bytes(&bytes, path)
}
