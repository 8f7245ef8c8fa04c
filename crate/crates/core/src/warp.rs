//! Per-row motion warps.
//!
//! * [`warp_rs_from_gs`]: RS formation by gather (target-to-source). Each RS
//!   pixel is mapped back into the GS frame with its own row's motion.
//! * [`scatter_st_rectify`]: source-to-target rectification by scatter; leaves
//!   holes.
//! * [`gather_rectify`]: target-to-source rectification driven by a
//!   [`RowMap`], the building block of [`crate::rectifier::rectify_ts`].
//!
//! The two gather warps can record a [`WarpCache`]; [`warp_bwd`] then returns
//! exact derivatives of the warped image with respect to the motion curve and
//! the row map.

use alloc::vec;
use alloc::vec::Vec;

use crate::motion::RowLookup;
use crate::sample::{sample_into, sample_with_grad};
use crate::{Error, Image, MotionCurve, PixelCoord, Real, Result, RowMap, VisibilityMask};

pub use crate::motion::{row_motion_forward, row_motion_inverse};

/// Which gather warp produced a [`WarpCache`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpKind {
    /// RS formation from GS (regeneration branch).
    Formation,
    /// Row-map driven rectification of an RS image.
    Rectification,
}

/// Geometry recorded by a gather warp for its backward pass.
#[derive(Debug, Clone)]
pub struct WarpCache<T> {
    kind: WarpKind,
    source: Image<T>,
    motion: MotionCurve<T>,
    rowmap: Option<RowMap<T>>,
}

impl<T: Real> WarpCache<T> {
    pub fn kind(&self) -> WarpKind {
        self.kind
    }
}

/// Gradients of a scalar with respect to the warp's geometric inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpGrads<T> {
    pub d_tx: Vec<T>,
    pub d_rz: Vec<T>,
    /// Row-major `r x r`; empty for [`WarpKind::Formation`].
    pub d_rowmap: Vec<T>,
}

fn check_square_motion<T: Real>(img: &Image<T>, motion: &MotionCurve<T>) -> Result<usize> {
    let r = img.side()?;
    motion.check_rows(r)?;
    Ok(r)
}

/// Synthesizes an RS image from a GS image and per-row motion.
///
/// For RS pixel `(i, j)` the GS source is `row_motion_inverse` of its
/// centered coordinate with row `i`'s motion, bilinearly sampled with zero
/// fill. The mask is zero where all channels of the result are zero.
pub fn warp_rs_from_gs<T: Real>(
    gs: &Image<T>,
    motion: &MotionCurve<T>,
) -> Result<(Image<T>, VisibilityMask)> {
    let rs = formation(gs, motion)?;
    let mask = rs.visibility();
    Ok((rs, mask))
}

/// [`warp_rs_from_gs`] that also records the geometry for [`warp_bwd`].
pub fn warp_rs_from_gs_cached<T: Real>(
    gs: &Image<T>,
    motion: &MotionCurve<T>,
) -> Result<(Image<T>, VisibilityMask, WarpCache<T>)> {
    let (rs, mask) = warp_rs_from_gs(gs, motion)?;
    let cache = WarpCache {
        kind: WarpKind::Formation,
        source: gs.clone(),
        motion: motion.clone(),
        rowmap: None,
    };
    Ok((rs, mask, cache))
}

fn formation<T: Real>(gs: &Image<T>, motion: &MotionCurve<T>) -> Result<Image<T>> {
    let r = check_square_motion(gs, motion)?;
    let (ci, cj) = gs.center();
    let mut out = Image::zeros(r, r, gs.channels());
    for i in 0..r {
        let (s, c) = motion.rz()[i].sin_cos();
        let dx = T::of(i as f64) - ci - motion.tx()[i];
        for j in 0..r {
            let y = T::of(j as f64) - cj;
            let xg = dx * c + y * s;
            let yg = -dx * s + y * c;
            sample_into(gs, xg + ci, yg + cj, out.pixel_mut(i, j));
        }
    }
    Ok(out)
}

/// RS source coordinate (centered) for GS target `(xg, yg)` under motion
/// looked up at row-map value `rho`.
#[inline]
fn rectification_source<T: Real>(
    motion: &MotionCurve<T>,
    rho: T,
    xg: T,
    yg: T,
) -> (RowLookup<T>, T, T, T, T, T) {
    let l = RowLookup::new(motion.len(), rho);
    let t = l.eval(motion.tx());
    let th = l.eval(motion.rz());
    let (s, c) = th.sin_cos();
    let x = xg * c - yg * s + t;
    let y = xg * s + yg * c;
    (l, t, s, c, x, y)
}

/// Gather rectification of `rs` with a known per-target row assignment.
///
/// Target pixel `(i, j)` reads the motion at fractional row `rowmap(i, j)`,
/// maps its centered coordinate through [`row_motion_forward`] and samples
/// `rs` there. Pixels whose row-map entry is invalid are zero.
pub fn gather_rectify<T: Real>(
    rs: &Image<T>,
    motion: &MotionCurve<T>,
    rowmap: &RowMap<T>,
) -> Result<(Image<T>, VisibilityMask)> {
    let r = check_square_motion(rs, motion)?;
    if rowmap.size() != r {
        return Err(Error::dim("row map size", r, rowmap.size()));
    }
    let (ci, cj) = rs.center();
    let mut out = Image::zeros(r, r, rs.channels());
    for i in 0..r {
        let xg = T::of(i as f64) - ci;
        for j in 0..r {
            if !rowmap.is_valid(i, j) {
                continue;
            }
            let yg = T::of(j as f64) - cj;
            let (_, _, _, _, x, y) = rectification_source(motion, rowmap.get(i, j), xg, yg);
            sample_into(rs, x + ci, y + cj, out.pixel_mut(i, j));
        }
    }
    let mask = out.visibility();
    Ok((out, mask))
}

/// [`gather_rectify`] that also records the geometry for [`warp_bwd`].
pub fn gather_rectify_cached<T: Real>(
    rs: &Image<T>,
    motion: &MotionCurve<T>,
    rowmap: &RowMap<T>,
) -> Result<(Image<T>, VisibilityMask, WarpCache<T>)> {
    let (out, mask) = gather_rectify(rs, motion, rowmap)?;
    let cache = WarpCache {
        kind: WarpKind::Rectification,
        source: rs.clone(),
        motion: motion.clone(),
        rowmap: Some(rowmap.clone()),
    };
    Ok((out, mask, cache))
}

/// Backward pass of a cached gather warp.
///
/// `grad_out` is d(loss)/d(warped image). Returns d(loss)/d(t_x[k]),
/// d(loss)/d(r_z[k]) and, for rectification, d(loss)/d(rowmap(i, j)) chained
/// through the linear row interpolation. The source image is treated as
/// constant.
pub fn warp_bwd<T: Real>(
    grad_out: &Image<T>,
    cache: Option<&WarpCache<T>>,
) -> Result<WarpGrads<T>> {
    let cache = cache.ok_or(Error::MissingCache)?;
    cache
        .source
        .check_same_shape(grad_out, "warp upstream gradient")?;
    match cache.kind {
        WarpKind::Formation => Ok(formation_bwd(grad_out, cache)),
        WarpKind::Rectification => rectification_bwd(grad_out, cache),
    }
}

fn formation_bwd<T: Real>(grad_out: &Image<T>, cache: &WarpCache<T>) -> WarpGrads<T> {
    let src = &cache.source;
    let motion = &cache.motion;
    let r = src.height();
    let ch = src.channels();
    let (ci, cj) = src.center();
    let mut d_tx = vec![T::zero(); r];
    let mut d_rz = vec![T::zero(); r];
    let (mut val, mut su, mut sv) = (
        vec![T::zero(); ch],
        vec![T::zero(); ch],
        vec![T::zero(); ch],
    );
    for i in 0..r {
        let (s, c) = motion.rz()[i].sin_cos();
        let dx = T::of(i as f64) - ci - motion.tx()[i];
        let (mut gt, mut gth) = (T::zero(), T::zero());
        for j in 0..r {
            let g = grad_out.pixel(i, j);
            if g.iter().all(|v| *v == T::zero()) {
                continue;
            }
            let y = T::of(j as f64) - cj;
            let xg = dx * c + y * s;
            let yg = -dx * s + y * c;
            sample_with_grad(src, xg + ci, yg + cj, &mut val, &mut su, &mut sv);
            let (mut gu, mut gv) = (T::zero(), T::zero());
            for k in 0..ch {
                gu += g[k] * su[k];
                gv += g[k] * sv[k];
            }
            // du/dt = -cos, dv/dt = sin, du/dθ = y_gs, dv/dθ = -x_gs
            gt += -gu * c + gv * s;
            gth += gu * yg - gv * xg;
        }
        d_tx[i] = gt;
        d_rz[i] = gth;
    }
    WarpGrads {
        d_tx,
        d_rz,
        d_rowmap: Vec::new(),
    }
}

fn rectification_bwd<T: Real>(grad_out: &Image<T>, cache: &WarpCache<T>) -> Result<WarpGrads<T>> {
    let rowmap = cache.rowmap.as_ref().ok_or(Error::MissingCache)?;
    let src = &cache.source;
    let motion = &cache.motion;
    let r = src.height();
    let ch = src.channels();
    let (ci, cj) = src.center();
    let mut d_tx = vec![T::zero(); r];
    let mut d_rz = vec![T::zero(); r];
    let mut d_rowmap = vec![T::zero(); r * r];
    let (mut val, mut su, mut sv) = (
        vec![T::zero(); ch],
        vec![T::zero(); ch],
        vec![T::zero(); ch],
    );
    for i in 0..r {
        let xg = T::of(i as f64) - ci;
        for j in 0..r {
            if !rowmap.is_valid(i, j) {
                continue;
            }
            let g = grad_out.pixel(i, j);
            if g.iter().all(|v| *v == T::zero()) {
                continue;
            }
            let yg = T::of(j as f64) - cj;
            let (l, t, _, _, x, y) = rectification_source(motion, rowmap.get(i, j), xg, yg);
            sample_with_grad(src, x + ci, y + cj, &mut val, &mut su, &mut sv);
            let (mut gu, mut gv) = (T::zero(), T::zero());
            for k in 0..ch {
                gu += g[k] * su[k];
                gv += g[k] * sv[k];
            }
            // dX/dt = 1, dY/dt = 0, dX/dθ = -Y, dY/dθ = X - t
            let gt = gu;
            let gth = -gu * y + gv * (x - t);
            let one = T::one();
            d_tx[l.lo] += gt * (one - l.w);
            d_tx[l.hi] += gt * l.w;
            d_rz[l.lo] += gth * (one - l.w);
            d_rz[l.hi] += gth * l.w;
            d_rowmap[i * r + j] = gt * l.slope(motion.tx()) + gth * l.slope(motion.rz());
        }
    }
    Ok(WarpGrads {
        d_tx,
        d_rz,
        d_rowmap,
    })
}

/// Result of [`scatter_st_rectify`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterResult<T> {
    pub image: Image<T>,
    /// `true` where some RS pixel landed; `false` marks a hole.
    pub filled: VisibilityMask,
}

impl<T> ScatterResult<T> {
    pub fn hole_count(&self) -> usize {
        self.filled.data().len() - self.filled.count()
    }
}

/// Source-to-target rectification: every RS pixel is pushed to the nearest
/// integer GS location given by [`row_motion_inverse`] with its row's motion.
///
/// Collisions are resolved by the last writer in row-major scan order of the
/// RS image.
pub fn scatter_st_rectify<T: Real>(
    rs: &Image<T>,
    motion: &MotionCurve<T>,
) -> Result<ScatterResult<T>> {
    let r = check_square_motion(rs, motion)?;
    let mut image = Image::zeros(r, r, rs.channels());
    let mut filled = VisibilityMask::empty(r, r);
    for i in 0..r {
        let (tx, rz) = (motion.tx()[i], motion.rz()[i]);
        for j in 0..r {
            let p = PixelCoord::from_index(T::of(i as f64), T::of(j as f64), r, r);
            if let Some((ti, tj)) = nearest_target(row_motion_inverse(p, tx, rz), r) {
                image.pixel_mut(ti, tj).copy_from_slice(rs.pixel(i, j));
                filled.set(ti, tj, true);
            }
        }
    }
    Ok(ScatterResult { image, filled })
}

/// Integer target of a scattered GS point, if it lands on the grid.
pub fn nearest_target<T: Real>(p: PixelCoord<T>, r: usize) -> Option<(usize, usize)> {
    let (u, v) = p.to_index(r, r);
    let (u, v) = (u.round(), v.round());
    let lim = T::of(r as f64 - 1.0);
    if u >= T::zero() && v >= T::zero() && u <= lim && v <= lim {
        Some((u.to_usize()?, v.to_usize()?))
    } else {
        None
    }
}

/// Fraction of bilinear support that lies on valid source pixels, for every
/// RS pixel of [`warp_rs_from_gs`]: the warp applied to an all-ones image.
pub fn formation_coverage<T: Real>(r: usize, motion: &MotionCurve<T>) -> Result<Image<T>> {
    formation(&Image::filled(r, r, 1, T::one()), motion)
}

/// Pixels whose value is a full-support interpolation of valid source
/// pixels (coverage at least `1 - 1e-6`).
pub fn full_support(coverage: &Image<impl Real>) -> VisibilityMask {
    let mut m = VisibilityMask::empty(coverage.height(), coverage.width());
    for i in 0..coverage.height() {
        for j in 0..coverage.width() {
            m.set(i, j, coverage.get(i, j, 0).as_f64() >= 1.0 - 1e-6);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent scalar oracle: inverse map written out with explicit
    /// trigonometry and a hand-rolled bilinear read.
    fn oracle_warp(gs: &Image<f64>, tx: &[f64], rz: &[f64]) -> Image<f64> {
        let r = gs.height();
        let c = (r as f64 - 1.0) / 2.0;
        let read = |i: i64, j: i64, k: usize| {
            if i < 0 || j < 0 || i >= r as i64 || j >= r as i64 {
                0.0
            } else {
                gs.get(i as usize, j as usize, k)
            }
        };
        Image::from_fn(r, r, gs.channels(), |i, j, k| {
            let (x, y) = (i as f64 - c, j as f64 - c);
            let th = rz[i];
            let xg = (x - tx[i]) * th.cos() + y * th.sin();
            let yg = -(x - tx[i]) * th.sin() + y * th.cos();
            let (u, v) = (xg + c, yg + c);
            let (i0, j0) = (u.floor() as i64, v.floor() as i64);
            let (a, b) = (u - u.floor(), v - v.floor());
            read(i0, j0, k) * (1.0 - a) * (1.0 - b)
                + read(i0, j0 + 1, k) * (1.0 - a) * b
                + read(i0 + 1, j0, k) * a * (1.0 - b)
                + read(i0 + 1, j0 + 1, k) * a * b
        })
    }

    #[test]
    fn zero_motion_is_identity() {
        let gs = synth::textured_image::<f32>(3, 32, 3);
        let (rs, mask) = warp_rs_from_gs(&gs, &MotionCurve::zeros(32)).unwrap();
        assert_eq!(rs, gs);
        assert_eq!(mask.count(), 32 * 32);
    }

    #[test]
    fn constant_shift() {
        let gs = synth::textured_image::<f64>(5, 24, 3);
        let c = 3.0;
        let (rs, mask) = warp_rs_from_gs(&gs, &MotionCurve::constant(24, c, 0.0)).unwrap();
        for i in 0..24 {
            for j in 0..24 {
                if i >= 3 {
                    for k in 0..3 {
                        assert_eq!(rs.get(i, j, k), gs.get(i - 3, j, k));
                    }
                    assert!(mask.get(i, j));
                } else {
                    assert!(!mask.get(i, j));
                }
            }
        }
    }

    #[test]
    fn checkerboard_ramp_matches_oracle() {
        let gs = Image::<f64>::from_fn(8, 8, 1, |i, j, _| if (i + j) % 2 == 0 { 0.9 } else { 0.1 });
        let tx: Vec<f64> = (0..8).map(|i| 2.0 * i as f64 / 7.0).collect();
        let rz = vec![0.0; 8];
        let (rs, _) =
            warp_rs_from_gs(&gs, &MotionCurve::new(tx.clone(), rz.clone()).unwrap()).unwrap();
        let want = oracle_warp(&gs, &tx, &rz);
        for (a, b) in rs.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rotating_motion_matches_oracle() {
        let gs = synth::textured_image::<f64>(9, 16, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tx: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let rz: Vec<f64> = (0..16).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let (rs, _) =
            warp_rs_from_gs(&gs, &MotionCurve::new(tx.clone(), rz.clone()).unwrap()).unwrap();
        let want = oracle_warp(&gs, &tx, &rz);
        for (a, b) in rs.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let gs = Image::<f64>::zeros(8, 8, 3);
        assert!(warp_rs_from_gs(&gs, &MotionCurve::zeros(7)).is_err());
        let wide = Image::<f64>::zeros(8, 9, 3);
        assert!(matches!(
            warp_rs_from_gs(&wide, &MotionCurve::zeros(8)),
            Err(Error::NotSquare { .. })
        ));
        assert!(scatter_st_rectify(&gs, &MotionCurve::zeros(9)).is_err());
    }

    #[test]
    fn scatter_zero_motion() {
        let rs = synth::textured_image::<f32>(1, 16, 3);
        let out = scatter_st_rectify(&rs, &MotionCurve::zeros(16)).unwrap();
        assert_eq!(out.image, rs);
        assert_eq!(out.hole_count(), 0);
    }

    #[test]
    fn scatter_unit_shift_vacates_one_row() {
        let rs = synth::textured_image::<f64>(1, 16, 1);
        let out = scatter_st_rectify(&rs, &MotionCurve::constant(16, 1.0, 0.0)).unwrap();
        assert_eq!(out.hole_count(), 16);
        for j in 0..16 {
            assert!(!out.filled.get(15, j));
        }
    }

    #[test]
    fn scatter_holes_match_occupancy_oracle() {
        use crate::trajectory::{eval_trajectory, random_trajectory, MotionRanges};
        for seed in 0..5u64 {
            let traj = random_trajectory(seed, MotionRanges::default());
            let m = eval_trajectory(&traj, 64).unwrap();
            let rs = synth::textured_image::<f64>(seed, 64, 3);
            let got = scatter_st_rectify(&rs, &m).unwrap();
            // occupancy set from explicit trigonometry
            let c = 31.5f64;
            let mut occupied = alloc::collections::BTreeSet::new();
            for i in 0..64 {
                let (t, th) = (m.tx()[i], m.rz()[i]);
                for j in 0..64 {
                    let (x, y) = (i as f64 - c, j as f64 - c);
                    let xg = (x - t) * th.cos() + y * th.sin();
                    let yg = -(x - t) * th.sin() + y * th.cos();
                    let (u, v) = ((xg + c).round(), (yg + c).round());
                    if (0.0..=63.0).contains(&u) && (0.0..=63.0).contains(&v) {
                        occupied.insert((u as usize, v as usize));
                    }
                }
            }
            assert_eq!(got.hole_count(), 64 * 64 - occupied.len());
        }
    }

    #[test]
    fn missing_cache_rejected() {
        let g = Image::<f64>::zeros(4, 4, 1);
        assert_eq!(warp_bwd(&g, None), Err(Error::MissingCache));
    }

    #[test]
    fn flat_image_has_no_motion_gradient() {
        let gs = Image::<f64>::filled(16, 16, 3, 0.5);
        let m = MotionCurve::new(vec![0.3; 16], vec![0.01; 16]).unwrap();
        let (_, _, cache) = warp_rs_from_gs_cached(&gs, &m).unwrap();
        // interior rows only; the frame edge is a step to zero
        let mut g = Image::<f64>::zeros(16, 16, 3);
        for i in 4..12 {
            for j in 4..12 {
                for k in 0..3 {
                    g.set(i, j, k, 1.0);
                }
            }
        }
        let d = warp_bwd(&g, Some(&cache)).unwrap();
        assert!(d.d_tx.iter().chain(&d.d_rz).all(|v| v.abs() < 1e-12));
        let zero = Image::<f64>::zeros(16, 16, 3);
        let d = warp_bwd(&zero, Some(&cache)).unwrap();
        assert!(d.d_tx.iter().chain(&d.d_rz).all(|v| *v == 0.0));
    }
}
