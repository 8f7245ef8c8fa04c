//! Analytic rectification with known motion.
//!
//! A GS pixel is imaged by whichever RS row `x_rs` satisfies the consistency
//! condition
//!
//! ```text
//! x_rs = x_gs cos r_z(x_rs) - y_gs sin r_z(x_rs) + t_x(x_rs)
//! ```
//!
//! [`row_map_fixed_point`] solves it per pixel by fixed-point iteration; the
//! resulting [`RowMap`] drives [`rectify_ts`].

use alloc::vec;
use alloc::vec::Vec;

use crate::warp::{gather_rectify, gather_rectify_cached, WarpCache};
use crate::{Error, Image, MotionCurve, Real, Result, VisibilityMask};

/// `r x r` grid of fractional RS row indices, one per rectified pixel.
///
/// Entries are array row indices (the identity map is `A(i, j) = i`).
/// Entries outside `[-r/2, 3r/2]` are clamped to that range and marked
/// invalid; invalid pixels rectify to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMap<T = f64> {
    size: usize,
    data: Vec<T>,
    valid: Vec<bool>,
}

impl<T: Real> RowMap<T> {
    /// The zero-motion map `A(i, j) = i`.
    pub fn identity(size: usize) -> Self {
        let data = (0..size * size).map(|p| T::of((p / size) as f64)).collect();
        Self {
            size,
            data,
            valid: vec![true; size * size],
        }
    }

    /// Builds a map from raw entries, clamping out-of-range (and
    /// non-finite) values and invalidating them.
    pub fn from_entries(size: usize, entries: Vec<T>) -> Result<Self> {
        if entries.len() != size * size {
            return Err(Error::dim("row map entries", size * size, entries.len()));
        }
        let mut map = Self {
            size,
            data: entries,
            valid: vec![true; size * size],
        };
        let (lo, hi) = Self::limits(size);
        for (v, ok) in map.data.iter_mut().zip(map.valid.iter_mut()) {
            if v.is_nan() {
                *v = lo;
                *ok = false;
            } else if *v < lo || *v > hi {
                *v = v.max(lo).min(hi);
                *ok = false;
            }
        }
        Ok(map)
    }

    /// `A + residual` for a row-major residual.
    pub fn from_residual(size: usize, residual: &[T]) -> Result<Self> {
        if residual.len() != size * size {
            return Err(Error::dim("row map residual", size * size, residual.len()));
        }
        let entries = residual
            .iter()
            .enumerate()
            .map(|(p, &d)| T::of((p / size) as f64) + d)
            .collect();
        Self::from_entries(size, entries)
    }

    /// Clamp range `[-r/2, 3r/2]`.
    pub fn limits(size: usize) -> (T, T) {
        let r = size as f64;
        (T::of(-0.5 * r), T::of(1.5 * r))
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.size + j]
    }

    #[inline]
    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[i * self.size + j]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn invalidate(&mut self, i: usize, j: usize) {
        self.valid[i * self.size + j] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn cast<U: Real>(&self) -> RowMap<U> {
        RowMap {
            size: self.size,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            valid: self.valid.clone(),
        }
    }
}

/// Iteration limits for [`row_map_fixed_point`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    pub max_iters: usize,
    /// Convergence threshold on `|x_(k+1) - x_k|`, in rows.
    pub tol: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            max_iters: 25,
            tol: 1e-4,
        }
    }
}

/// Output of [`row_map_fixed_point`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSolution<T> {
    /// Converged entries are valid; everything else is invalidated.
    pub map: RowMap<T>,
    pub converged: Vec<bool>,
    /// Iterations taken per pixel.
    pub iterations: Vec<u32>,
}

impl<T> FixedPointSolution<T> {
    pub fn converged_fraction(&self) -> f64 {
        let n = self.converged.iter().filter(|&&c| c).count();
        n as f64 / self.converged.len().max(1) as f64
    }
}

/// Right-hand side of the consistency condition at RS row `x` (centered),
/// for GS point `(xg, yg)`.
#[inline]
pub fn consistency_rhs<T: Real>(motion: &MotionCurve<T>, center: T, x: T, xg: T, yg: T) -> T {
    let (t, th) = motion.at(x + center);
    let (s, c) = th.sin_cos();
    xg * c - yg * s + t
}

/// Solves the per-pixel row assignment by fixed-point iteration, starting
/// from `x_0 = x_gs`.
///
/// A pixel converges when two successive iterates differ by less than
/// `tol`; the stored value is the last iterate. Non-convergence is reported
/// per pixel and those entries are invalid in the returned map.
pub fn row_map_fixed_point<T: Real>(
    motion: &MotionCurve<T>,
    config: FixedPointConfig,
) -> Result<FixedPointSolution<T>> {
    if config.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1"));
    }
    // also rejects NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(config.tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive"));
    }
    let r = motion.len();
    let c = T::of((r as f64 - 1.0) * 0.5);
    let tol = T::of(config.tol);
    let (lo, hi) = RowMap::<T>::limits(r);
    let mut data = Vec::with_capacity(r * r);
    let mut converged = Vec::with_capacity(r * r);
    let mut iterations = Vec::with_capacity(r * r);
    for i in 0..r {
        let xg = T::of(i as f64) - c;
        for j in 0..r {
            let yg = T::of(j as f64) - c;
            let mut x = xg;
            let mut done = false;
            let mut k = 0;
            while k < config.max_iters {
                k += 1;
                let next = consistency_rhs(motion, c, x, xg, yg);
                let step = (next - x).abs();
                x = next;
                if !x.is_finite() {
                    break;
                }
                if step < tol {
                    done = true;
                    break;
                }
            }
            let row = x + c;
            let in_range = row >= lo && row <= hi;
            data.push(if row.is_finite() {
                row.max(lo).min(hi)
            } else {
                lo
            });
            converged.push(done && in_range);
            iterations.push(k as u32);
        }
    }
    let valid = converged.clone();
    Ok(FixedPointSolution {
        map: RowMap {
            size: r,
            data,
            valid,
        },
        converged,
        iterations,
    })
}

/// Gather rectification of an RS image given per-row motion and a row map.
///
/// Each target pixel takes the motion at its row-map entry, maps through
/// the forward row-motion equation to an RS coordinate and samples `rs`
/// bilinearly. Invalid row-map entries give zero; the mask is zero where
/// all channels of the result are zero.
pub fn rectify_ts<T: Real>(
    rs: &Image<T>,
    motion: &MotionCurve<T>,
    rowmap: &RowMap<T>,
) -> Result<(Image<T>, VisibilityMask)> {
    gather_rectify(rs, motion, rowmap)
}

/// [`rectify_ts`] that records the geometry for [`crate::warp::warp_bwd`].
pub fn rectify_ts_cached<T: Real>(
    rs: &Image<T>,
    motion: &MotionCurve<T>,
    rowmap: &RowMap<T>,
) -> Result<(Image<T>, VisibilityMask, WarpCache<T>)> {
    gather_rectify_cached(rs, motion, rowmap)
}

/// Fixed-point row map followed by [`rectify_ts`].
pub fn rectify_known_motion<T: Real>(
    rs: &Image<T>,
    motion: &MotionCurve<T>,
    config: FixedPointConfig,
) -> Result<(Image<T>, VisibilityMask)> {
    let solution = row_map_fixed_point(motion, config)?;
    rectify_ts(rs, motion, &solution.map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::masked_psnr;
    use crate::synth;
    use crate::trajectory::{eval_trajectory, random_trajectory, MotionRanges};
    use crate::warp::{formation_coverage, full_support, warp_rs_from_gs};

    #[test]
    fn zero_motion_gives_identity_in_one_iteration() {
        let sol = row_map_fixed_point(&MotionCurve::<f64>::zeros(32), FixedPointConfig::default())
            .unwrap();
        assert_eq!(sol.map, RowMap::identity(32));
        assert!(sol.converged.iter().all(|&c| c));
        assert!(sol.iterations.iter().all(|&k| k == 1));
    }

    #[test]
    fn constant_shift_row_map() {
        let c = 2.5;
        let sol = row_map_fixed_point(
            &MotionCurve::<f64>::constant(32, c, 0.0),
            FixedPointConfig::default(),
        )
        .unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert!((sol.map.get(i, j) - (i as f64 + c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn converged_entries_satisfy_consistency() {
        let traj = random_trajectory(11, MotionRanges::default());
        let m = eval_trajectory(&traj, 64).unwrap();
        let cfg = FixedPointConfig::default();
        let sol = row_map_fixed_point(&m, cfg).unwrap();
        let c = 31.5;
        for i in 0..64 {
            for j in 0..64 {
                if sol.converged[i * 64 + j] {
                    let x = sol.map.get(i, j) - c;
                    let res = x - consistency_rhs(&m, c, x, i as f64 - c, j as f64 - c);
                    // contraction: residual bounded by the final step size
                    assert!(res.abs() < cfg.tol);
                }
            }
        }
    }

    #[test]
    fn bad_config_rejected() {
        let m = MotionCurve::<f64>::zeros(8);
        let cfg = FixedPointConfig {
            max_iters: 0,
            tol: 1e-4,
        };
        assert!(row_map_fixed_point(&m, cfg).is_err());
        let cfg = FixedPointConfig {
            max_iters: 3,
            tol: 0.0,
        };
        assert!(row_map_fixed_point(&m, cfg).is_err());
    }

    #[test]
    fn row_map_clamps_and_invalidates() {
        let map = RowMap::<f64>::from_entries(
            4,
            vec![
                0.0,
                -3.0,
                7.0,
                f64::NAN,
                1.0,
                1.0,
                1.0,
                1.0,
                2.0,
                2.0,
                2.0,
                2.0,
                3.0,
                3.0,
                3.0,
                3.0,
            ],
        )
        .unwrap();
        assert_eq!(map.get(0, 1), -2.0);
        assert_eq!(map.get(0, 2), 6.0);
        assert!(!map.is_valid(0, 1) && !map.is_valid(0, 2) && !map.is_valid(0, 3));
        assert_eq!(map.valid_count(), 13);
    }

    #[test]
    fn identity_rectification_is_noop() {
        let rs = synth::textured_image::<f32>(2, 32, 3);
        let (rect, mask) = rectify_ts(&rs, &MotionCurve::zeros(32), &RowMap::identity(32)).unwrap();
        assert_eq!(rect, rs);
        assert_eq!(mask.count(), 32 * 32);
    }

    #[test]
    fn constant_shift_matches_scalar_oracle() {
        let rs = synth::textured_image::<f64>(4, 24, 3);
        let c = 1.75;
        let m = MotionCurve::constant(24, c, 0.0);
        let sol = row_map_fixed_point(&m, FixedPointConfig::default()).unwrap();
        let (rect, _) = rectify_ts(&rs, &m, &sol.map).unwrap();
        // rect(i, j) = rs(i + c, j), bilinear along the row axis only
        for i in 0..24 {
            for j in 0..24 {
                let u = i as f64 + c;
                let (i0, a) = (u.floor() as usize, u - u.floor());
                for k in 0..3 {
                    let p = if i0 < 24 { rs.get(i0, j, k) } else { 0.0 };
                    let q = if i0 + 1 < 24 {
                        rs.get(i0 + 1, j, k)
                    } else {
                        0.0
                    };
                    let want = p * (1.0 - a) + q * a;
                    assert!((rect.get(i, j, k) - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn round_trip_psnr() {
        for seed in 0..6u64 {
            let gs = synth::textured_image::<f64>(100 + seed, 64, 3);
            let m = eval_trajectory(&random_trajectory(seed, MotionRanges::default()), 64).unwrap();
            let (rs, _) = warp_rs_from_gs(&gs, &m).unwrap();
            let sol = row_map_fixed_point(&m, FixedPointConfig::default()).unwrap();
            let (rect, mask) = rectify_ts(&rs, &m, &sol.map).unwrap();
            let cov = formation_coverage(64, &m).unwrap();
            let (cov_rect, _) = rectify_ts(&cov, &m, &sol.map).unwrap();
            let valid = mask.and(&full_support(&cov_rect)).unwrap();
            let psnr = masked_psnr(&rect, &gs, &valid).unwrap();
            assert!(psnr >= 30.0, "seed {seed}: {psnr}");
        }
    }
}
