//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each check builds a small random instance, contracts the op's output
//! with a random weight tensor `w` to get a scalar `f = <w, op(x)>`, and
//! compares the analytic gradient (the op's backward pass fed with `w`)
//! against `(f(x + h e_k) - f(x - h e_k)) / 2h` on sampled entries. The
//! reported error of a block is norm-wise over all its sampled entries:
//! `|a - n| / max(|a|, |n|)`.
//!
//! Bilinear sampling, ReLU and the row lookup are only piecewise smooth.
//! Warp checks therefore zero the weights of pixels whose sample point lies
//! within a margin of the integer lattice, and ReLU inputs are kept away from
//! zero, so no probe crosses a kink.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::motion::{row_motion_forward, row_motion_inverse, RowLookup};
use crate::nn::layers::{
    batchnorm_bwd, batchnorm_fwd_train, conv2d_bwd, conv2d_fwd, fc_bwd, fc_fwd, relu_bwd, relu_fwd,
    ConvShape,
};
use crate::nn::{
    motion_block_bwd, motion_block_fwd, row_block_bwd, row_block_fwd, Mode, ModelGrads,
    ModelParams, Tensor,
};
use crate::train::dataset::{generate_dataset, padded_size, TrainSample};
use crate::train::loss::{total_loss, LossWeights};
use crate::train::pipeline::{loss_and_grads, TrainConfig};
use crate::trajectory::TrajectoryProjection;
use crate::warp::{gather_rectify_cached, warp_bwd, warp_rs_from_gs_cached};
use crate::{Image, MotionCurve, MotionRanges, PixelCoord, Real, Result, RowMap};

/// Outcome of one gradient-check block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub block: String,
    /// Norm-wise relative error between analytic and numeric gradients.
    pub rel_err: f64,
    /// Number of gradient entries compared.
    pub entries: usize,
    /// Probes discarded because the perturbation crossed a kink.
    pub skipped: usize,
    pub tolerance: f64,
}

impl BlockReport {
    pub fn passed(&self) -> bool {
        self.rel_err < self.tolerance
    }
}

/// Pass threshold for precision `T`: `1e-3` for `f32`, `1e-6` for `f64`.
pub fn tolerance<T: Real>() -> f64 {
    if T::NAME == "f32" {
        1e-3
    } else {
        1e-6
    }
}

/// Base finite-difference step for precision `T`.
fn base_step<T: Real>() -> f64 {
    if T::NAME == "f32" {
        1e-2
    } else {
        1e-6
    }
}

/// Distance from the integer lattice kept by every warp sample point.
const LATTICE_MARGIN: f64 = 0.05;

#[derive(Default)]
struct Accumulator {
    diff2: f64,
    a2: f64,
    n2: f64,
    entries: usize,
    skipped: usize,
}

impl Accumulator {
    fn push(&mut self, analytic: f64, numeric: f64) {
        self.diff2 += (analytic - numeric) * (analytic - numeric);
        self.a2 += analytic * analytic;
        self.n2 += numeric * numeric;
        self.entries += 1;
    }

    fn report<T: Real>(&self, block: impl Into<String>) -> BlockReport {
        let denom = self.a2.max(self.n2).sqrt();
        let rel_err = if denom == 0.0 {
            if self.diff2 == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.diff2.sqrt() / denom
        };
        BlockReport {
            block: block.into(),
            rel_err,
            entries: self.entries,
            skipped: self.skipped,
            tolerance: tolerance::<T>(),
        }
    }
}

/// `<w, y>` accumulated in `f64`.
fn dot<T: Real>(w: &[f64], y: &[T]) -> f64 {
    w.iter().zip(y).map(|(&a, &b)| a * b.as_f64()).sum()
}

fn weights_of<T: Real>(w: &[f64]) -> Vec<T> {
    w.iter().map(|&v| T::of(v)).collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn tensor<T: Real>(shape: [usize; 4], data: &[f64]) -> Result<Tensor<T>> {
    Tensor::new(shape[0], shape[1], shape[2], shape[3], weights_of(data))
}

/// Compares `analytic[k]` against central differences of `f` for each `k`
/// in `indices`, perturbing `x[k]` by `h`.
fn probe<T: Real>(
    acc: &mut Accumulator,
    x: &[T],
    analytic: &[T],
    indices: impl IntoIterator<Item = usize>,
    h: f64,
    mut f: impl FnMut(&[T]) -> Result<f64>,
) -> Result<()> {
    let mut xp = x.to_vec();
    for k in indices {
        let x0 = x[k];
        xp[k] = T::of(x0.as_f64() + h);
        // use the step actually representable at this precision
        let hp = xp[k].as_f64() - x0.as_f64();
        let fp = f(&xp)?;
        xp[k] = T::of(x0.as_f64() - h);
        let hm = x0.as_f64() - xp[k].as_f64();
        let fm = f(&xp)?;
        xp[k] = x0;
        acc.push(analytic[k].as_f64(), (fp - fm) / (hp + hm));
    }
    Ok(())
}

/// [`probe`] for piecewise-smooth functions: `f` also returns a signature
/// of its active pieces, and probes whose signature differs from `base` on
/// either side are skipped.
fn probe_piecewise<T: Real>(
    acc: &mut Accumulator,
    x: &[T],
    analytic: &[T],
    indices: impl IntoIterator<Item = usize>,
    h: f64,
    base: &[i64],
    mut f: impl FnMut(&[T]) -> Result<(f64, Vec<i64>)>,
) -> Result<()> {
    let mut xp = x.to_vec();
    for k in indices {
        let x0 = x[k];
        xp[k] = T::of(x0.as_f64() + h);
        let hp = xp[k].as_f64() - x0.as_f64();
        let (fp, sp) = f(&xp)?;
        xp[k] = T::of(x0.as_f64() - h);
        let hm = x0.as_f64() - xp[k].as_f64();
        let (fm, sm) = f(&xp)?;
        xp[k] = x0;
        if sp != base || sm != base {
            acc.skipped += 1;
            continue;
        }
        acc.push(analytic[k].as_f64(), (fp - fm) / (hp + hm));
    }
    Ok(())
}

fn pattern_signature(pattern: &[bool]) -> impl Iterator<Item = i64> + '_ {
    pattern.iter().map(|&b| b as i64)
}

/// Lattice cells touched by the formation warp of an `r x r` image.
fn formation_cells<T: Real>(motion: &MotionCurve<T>, r: usize, out: &mut Vec<i64>) {
    let c = (r as f64 - 1.0) / 2.0;
    for i in 0..r {
        let (t, th) = (motion.tx()[i].as_f64(), motion.rz()[i].as_f64());
        for j in 0..r {
            let p = row_motion_inverse(PixelCoord::new(i as f64 - c, j as f64 - c), t, th);
            out.push((p.x + c).floor() as i64);
            out.push((p.y + c).floor() as i64);
        }
    }
}

/// Row-map validity, motion-lookup cells and lattice cells touched by the
/// rectification warp.
fn rectification_cells<T: Real>(motion: &MotionCurve<T>, rowmap: &RowMap<T>, out: &mut Vec<i64>) {
    let r = rowmap.size();
    let c = (r as f64 - 1.0) / 2.0;
    let m: MotionCurve<f64> = motion.cast();
    for i in 0..r {
        for j in 0..r {
            let rho = rowmap.get(i, j).as_f64();
            let l = RowLookup::new(r, rho);
            let p = row_motion_forward(
                PixelCoord::new(i as f64 - c, j as f64 - c),
                l.eval(m.tx()),
                l.eval(m.rz()),
            );
            out.push(rowmap.is_valid(i, j) as i64);
            out.push(rho.floor() as i64);
            out.push((p.x + c).floor() as i64);
            out.push((p.y + c).floor() as i64);
        }
    }
}

/// Up to `count` distinct indices below `len`, deterministic in `rng`.
fn pick(rng: &mut ChaCha8Rng, len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let k = rng.gen_range(0..len);
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

/// Convolution w.r.t. input, weight and bias at strides 1 and 2.
pub fn check_conv<T: Real>(seed: u64) -> Result<BlockReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = base_step::<T>();
    let mut acc = Accumulator::default();
    for stride in [1, 2] {
        let s = ConvShape {
            cin: 2,
            cout: 3,
            stride,
        };
        let shape = [2, 4, 4, 2];
        let x: Tensor<T> = tensor(shape, &uniform(&mut rng, 64, -1.0, 1.0))?;
        let w: Vec<T> = weights_of(&uniform(&mut rng, s.weight_len(), -1.0, 1.0));
        let b: Vec<T> = weights_of(&uniform(&mut rng, 3, -1.0, 1.0));
        let y = conv2d_fwd(&x, &w, &b, s)?;
        let g = uniform(&mut rng, y.data.len(), -1.0, 1.0);
        let gy = Tensor::new(y.n, y.h, y.w, y.c, weights_of(&g))?;
        let grads = conv2d_bwd(&x, &w, &gy, s, true)?;
        let dx = grads.dx.ok_or(crate::Error::MissingCache)?;
        probe(&mut acc, &x.data, &dx.data, 0..x.data.len(), h, |xp| {
            let xt = Tensor::new(x.n, x.h, x.w, x.c, xp.to_vec())?;
            Ok(dot(&g, &conv2d_fwd(&xt, &w, &b, s)?.data))
        })?;
        probe(&mut acc, &w, &grads.dw, 0..w.len(), h, |wp| {
            Ok(dot(&g, &conv2d_fwd(&x, wp, &b, s)?.data))
        })?;
        probe(&mut acc, &b, &grads.db, 0..b.len(), h, |bp| {
            Ok(dot(&g, &conv2d_fwd(&x, &w, bp, s)?.data))
        })?;
    }
    Ok(acc.report::<T>("conv2d"))
}

/// Training-mode batch normalization w.r.t. input, scale and shift.
pub fn check_batchnorm<T: Real>(seed: u64) -> Result<BlockReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = base_step::<T>();
    let eps = T::of(1e-5);
    let shape = [2, 4, 4, 2];
    let x: Tensor<T> = tensor(shape, &uniform(&mut rng, 64, -2.0, 2.0))?;
    let gamma: Vec<T> = weights_of(&uniform(&mut rng, 2, 0.5, 1.5));
    let beta: Vec<T> = weights_of(&uniform(&mut rng, 2, -0.5, 0.5));
    let (y, cache) = batchnorm_fwd_train(&x, &gamma, &beta, eps)?;
    let g = uniform(&mut rng, y.data.len(), -1.0, 1.0);
    let (dx, dgamma, dbeta) = batchnorm_bwd(
        &Tensor::new(y.n, y.h, y.w, y.c, weights_of(&g))?,
        &cache,
        &gamma,
    )?;
    let mut acc = Accumulator::default();
    probe(&mut acc, &x.data, &dx.data, 0..x.data.len(), h, |xp| {
        let xt = Tensor::new(x.n, x.h, x.w, x.c, xp.to_vec())?;
        Ok(dot(
            &g,
            &batchnorm_fwd_train(&xt, &gamma, &beta, eps)?.0.data,
        ))
    })?;
    probe(&mut acc, &gamma, &dgamma, 0..2, h, |gp| {
        Ok(dot(&g, &batchnorm_fwd_train(&x, gp, &beta, eps)?.0.data))
    })?;
    probe(&mut acc, &beta, &dbeta, 0..2, h, |bp| {
        Ok(dot(&g, &batchnorm_fwd_train(&x, &gamma, bp, eps)?.0.data))
    })?;
    Ok(acc.report::<T>("batchnorm"))
}

/// Fully connected layer w.r.t. input, weight and bias.
pub fn check_fc<T: Real>(seed: u64) -> Result<BlockReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = base_step::<T>();
    let (din, dout) = (8, 5);
    let x: Tensor<T> = tensor([3, 2, 2, 2], &uniform(&mut rng, 3 * din, -1.0, 1.0))?;
    let w: Vec<T> = weights_of(&uniform(&mut rng, din * dout, -1.0, 1.0));
    let b: Vec<T> = weights_of(&uniform(&mut rng, dout, -1.0, 1.0));
    let g = uniform(&mut rng, 3 * dout, -1.0, 1.0);
    let (dx, dw, db) = fc_bwd(&x, &w, &Tensor::matrix(3, dout, weights_of(&g))?)?;
    let mut acc = Accumulator::default();
    probe(&mut acc, &x.data, &dx.data, 0..x.data.len(), h, |xp| {
        let xt = Tensor::new(x.n, x.h, x.w, x.c, xp.to_vec())?;
        Ok(dot(&g, &fc_fwd(&xt, &w, &b, dout)?.data))
    })?;
    probe(&mut acc, &w, &dw, 0..w.len(), h, |wp| {
        Ok(dot(&g, &fc_fwd(&x, wp, &b, dout)?.data))
    })?;
    probe(&mut acc, &b, &db, 0..b.len(), h, |bp| {
        Ok(dot(&g, &fc_fwd(&x, &w, bp, dout)?.data))
    })?;
    Ok(acc.report::<T>("fc"))
}

/// ReLU w.r.t. its input, with inputs kept at least `0.1` from zero.
pub fn check_relu<T: Real>(seed: u64) -> Result<BlockReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = base_step::<T>();
    let data: Vec<f64> = (0..48)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    let x: Tensor<T> = tensor([1, 4, 4, 3], &data)?;
    let g = uniform(&mut rng, 48, -1.0, 1.0);
    let y = relu_fwd(&x);
    let dx = relu_bwd(&y, &Tensor::new(1, 4, 4, 3, weights_of(&g))?)?;
    let mut acc = Accumulator::default();
    probe(&mut acc, &x.data, &dx.data, 0..48, h, |xp| {
        Ok(dot(
            &g,
            &relu_fwd(&Tensor::new(1, 4, 4, 3, xp.to_vec())?).data,
        ))
    })?;
    Ok(acc.report::<T>("relu"))
}

#[inline]
fn off_lattice(u: f64, margin: f64) -> bool {
    let f = u - u.floor();
    f > margin && f < 1.0 - margin
}

fn random_image<T: Real>(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Image<T> {
    Image::from_fn(r, r, c, |_, _, _| T::of(rng.gen_range(0.05..1.0)))
}

fn random_motion<T: Real>(rng: &mut ChaCha8Rng, r: usize) -> Result<MotionCurve<T>> {
    MotionCurve::new(
        weights_of(&uniform(rng, r, -1.5, 1.5)),
        weights_of(&uniform(rng, r, -0.06, 0.06)),
    )
}

/// RS formation warp w.r.t. per-row `t_x` and `r_z`.
pub fn check_formation_warp<T: Real>(seed: u64) -> Result<BlockReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, ch) = (12, 3);
    let c = (r as f64 - 1.0) / 2.0;
    let gs: Image<T> = random_image(&mut rng, r, ch);
    let motion: MotionCurve<T> = random_motion(&mut rng, r)?;
    let mut g = uniform(&mut rng, r * r * ch, -1.0, 1.0);
    for i in 0..r {
        let (t, th) = (motion.tx()[i].as_f64(), motion.rz()[i].as_f64());
        for j in 0..r {
            let p = row_motion_inverse(PixelCoord::new(i as f64 - c, j as f64 - c), t, th);
            if !(off_lattice(p.x + c, LATTICE_MARGIN) && off_lattice(p.y + c, LATTICE_MARGIN)) {
                g[(i * r + j) * ch..(i * r + j + 1) * ch].fill(0.0);
            }
        }
    }
    let (_, _, cache) = warp_rs_from_gs_cached(&gs, &motion)?;
    let grads = warp_bwd(&Image::new(r, r, ch, weights_of(&g))?, Some(&cache))?;
    let h = base_step::<T>();
    let mut acc = Accumulator::default();
    let (tx, rz) = (motion.tx().to_vec(), motion.rz().to_vec());
    probe(&mut acc, &tx, &grads.d_tx, 0..r, h, |tp| {
        let m = MotionCurve::new(tp.to_vec(), rz.clone())?;
        Ok(dot(&g, warp_rs_from_gs_cached(&gs, &m)?.0.data()))
    })?;
    // rotation moves points by up to |coordinate| * h
    probe(&mut acc, &rz, &grads.d_rz, 0..r, h / 10.0, |zp| {
        let m = MotionCurve::new(tx.clone(), zp.to_vec())?;
        Ok(dot(&g, warp_rs_from_gs_cached(&gs, &m)?.0.data()))
    })?;
    Ok(acc.report::<T>("warp_formation(t_x,r_z)"))
}

/// Row-map driven rectification warp w.r.t. `t_x`, `r_z` and the row map.
pub fn check_rectification_warp<T: Real>(seed: u64) -> Result<BlockReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, ch) = (12, 3);
    let c = (r as f64 - 1.0) / 2.0;
    let rs: Image<T> = random_image(&mut rng, r, ch);
    let motion: MotionCurve<T> = random_motion(&mut rng, r)?;
    let residual: Vec<T> = weights_of(&uniform(&mut rng, r * r, -1.5, 1.5));
    let rowmap = RowMap::from_residual(r, &residual)?;
    let mut g = uniform(&mut rng, r * r * ch, -1.0, 1.0);
    let m64: MotionCurve<f64> = motion.cast();
    for i in 0..r {
        for j in 0..r {
            let rho = rowmap.get(i, j).as_f64();
            let l = RowLookup::new(r, rho);
            let p = row_motion_forward(
                PixelCoord::new(i as f64 - c, j as f64 - c),
                l.eval(m64.tx()),
                l.eval(m64.rz()),
            );
            let ok = off_lattice(rho, LATTICE_MARGIN)
                && off_lattice(p.x + c, LATTICE_MARGIN)
                && off_lattice(p.y + c, LATTICE_MARGIN);
            if !ok {
                g[(i * r + j) * ch..(i * r + j + 1) * ch].fill(0.0);
            }
        }
    }
    let (_, _, cache) = gather_rectify_cached(&rs, &motion, &rowmap)?;
    let grads = warp_bwd(&Image::new(r, r, ch, weights_of(&g))?, Some(&cache))?;
    let h = base_step::<T>();
    let mut acc = Accumulator::default();
    let (tx, rz) = (motion.tx().to_vec(), motion.rz().to_vec());
    probe(&mut acc, &tx, &grads.d_tx, 0..r, h, |tp| {
        let m = MotionCurve::new(tp.to_vec(), rz.clone())?;
        Ok(dot(&g, gather_rectify_cached(&rs, &m, &rowmap)?.0.data()))
    })?;
    probe(&mut acc, &rz, &grads.d_rz, 0..r, h / 10.0, |zp| {
        let m = MotionCurve::new(tx.clone(), zp.to_vec())?;
        Ok(dot(&g, gather_rectify_cached(&rs, &m, &rowmap)?.0.data()))
    })?;
    let entries = rowmap.data().to_vec();
    probe(&mut acc, &entries, &grads.d_rowmap, 0..r * r, h, |ep| {
        let map = RowMap::from_entries(r, ep.to_vec())?;
        Ok(dot(&g, gather_rectify_cached(&rs, &motion, &map)?.0.data()))
    })?;
    Ok(acc.report::<T>("warp_rectification(t_x,r_z,rowmap)"))
}

/// The four loss terms w.r.t. their predicted image. Predictions have a
/// masked-out band; only visible pixels are perturbed (masks are constants).
pub fn check_losses<T: Real>(seed: u64) -> Result<Vec<BlockReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, ch) = (10, 3);
    let gs: Image<T> = random_image(&mut rng, r, ch);
    let rs: Image<T> = random_image(&mut rng, r, ch);
    let mut rect: Image<T> = random_image(&mut rng, r, ch);
    let mut regen: Image<T> = random_image(&mut rng, r, ch);
    for j in 0..r {
        for k in 0..ch {
            rect.set(0, j, k, T::zero());
            rect.set(1, j, k, T::zero());
            regen.set(r - 1, j, k, T::zero());
        }
    }
    let h = base_step::<T>();
    let visible = |img: &Image<T>| -> Vec<usize> {
        (0..img.data().len())
            .filter(|&p| {
                img.pixel(p / ch / r, p / ch % r)
                    .iter()
                    .any(|v| *v != T::zero())
            })
            .collect()
    };
    let terms: [(&str, LossWeights, bool); 4] = [
        ("loss_rec_mse", one_hot(0), true),
        ("loss_reg_mse", one_hot(1), false),
        ("loss_rec_edge", one_hot(2), true),
        ("loss_reg_edge", one_hot(3), false),
    ];
    let mut out = Vec::new();
    for (name, w, on_rect) in terms {
        let (_, grads) = total_loss(&rs, &gs, &rect, &regen, &w)?;
        let mut acc = Accumulator::default();
        if on_rect {
            probe(
                &mut acc,
                rect.data(),
                grads.d_rect.data(),
                visible(&rect),
                h,
                |p| {
                    let img = Image::new(r, r, ch, p.to_vec())?;
                    Ok(total_loss(&rs, &gs, &img, &regen, &w)?.0.total)
                },
            )?;
        } else {
            probe(
                &mut acc,
                regen.data(),
                grads.d_regen.data(),
                visible(&regen),
                h,
                |p| {
                    let img = Image::new(r, r, ch, p.to_vec())?;
                    Ok(total_loss(&rs, &gs, &rect, &img, &w)?.0.total)
                },
            )?;
        }
        out.push(acc.report::<T>(name));
    }
    Ok(out)
}

fn one_hot(k: usize) -> LossWeights {
    let mut v = [0.0; 4];
    v[k] = 1.0;
    LossWeights {
        rec_mse: v[0],
        reg_mse: v[1],
        rec_edge: v[2],
        reg_edge: v[3],
    }
}

/// Cubic trajectory projection w.r.t. the raw curve.
pub fn check_projection<T: Real>(seed: u64) -> Result<BlockReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = 16;
    let p = TrajectoryProjection::<T>::new(r, 3)?;
    let x: Vec<T> = weights_of(&uniform(&mut rng, r, -3.0, 3.0));
    let g = uniform(&mut rng, r, -1.0, 1.0);
    let analytic = p.apply_transpose(&weights_of(&g));
    let mut acc = Accumulator::default();
    probe(&mut acc, &x, &analytic, 0..r, base_step::<T>(), |xp| {
        Ok(dot(&g, &p.apply(xp)))
    })?;
    Ok(acc.report::<T>("trajectory_projection"))
}

/// Gradient of `f(params)` w.r.t. sampled entries of every trainable group.
#[allow(clippy::too_many_arguments)]
fn probe_model<T: Real>(
    acc: &mut Accumulator,
    rng: &mut ChaCha8Rng,
    model: &ModelParams<T>,
    grads: &ModelGrads<T>,
    per_group: usize,
    prefixes: &[&str],
    h: f64,
    base: &[i64],
    mut f: impl FnMut(&ModelParams<T>) -> Result<(f64, Vec<i64>)>,
) -> Result<()> {
    let mut work = model.clone();
    for (gi, p) in model.params().iter().enumerate() {
        if !p.trainable || !prefixes.iter().any(|pre| p.name.starts_with(pre)) {
            continue;
        }
        let idx = pick(rng, p.len(), per_group);
        let x = p.data.clone();
        probe_piecewise(acc, &x, &grads.groups[gi], idx, h, base, |xp| {
            work.params_mut()[gi].data.copy_from_slice(xp);
            let v = f(&work);
            work.params_mut()[gi].data.copy_from_slice(&x);
            v
        })?;
    }
    Ok(())
}

fn model_input<T: Real>(rng: &mut ChaCha8Rng, r: usize, n: usize) -> Result<Tensor<T>> {
    tensor([n, r, r, 3], &uniform(rng, n * r * r * 3, 0.0, 1.0))
}

/// Motion block (training mode) w.r.t. every trainable parameter group.
pub fn check_motion_block<T: Real>(seed: u64) -> Result<BlockReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = 16;
    let model = ModelParams::<T>::init(r, seed)?;
    let x = model_input::<T>(&mut rng, r, 2)?;
    let gt = uniform(&mut rng, 2 * r, -1.0, 1.0);
    let gz = uniform(&mut rng, 2 * r, -1.0, 1.0);
    let (_, cache) = motion_block_fwd(&model, &x, Mode::Train)?;
    let base: Vec<i64> = pattern_signature(&cache.activation_pattern()).collect();
    let mut grads = ModelGrads::zeros_like(&model);
    motion_block_bwd(
        &model,
        &cache,
        &Tensor::matrix(2, r, weights_of(&gt))?,
        &Tensor::matrix(2, r, weights_of(&gz))?,
        &mut grads,
    )?;
    let mut acc = Accumulator::default();
    let h = base_step::<T>();
    probe_model(
        &mut acc,
        &mut rng,
        &model,
        &grads,
        3,
        &["base", "tx_head", "rz_head"],
        h,
        &base,
        |m| {
            let (out, c) = motion_block_fwd(m, &x, Mode::Train)?;
            let sig = pattern_signature(&c.activation_pattern()).collect();
            Ok((dot(&gt, &out.tx.data) + dot(&gz, &out.rz.data), sig))
        },
    )?;
    Ok(acc.report::<T>("motion_block"))
}

/// Row block (training mode) w.r.t. every trainable parameter group.
pub fn check_row_block<T: Real>(seed: u64) -> Result<BlockReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = 16;
    let model = ModelParams::<T>::init(r, seed)?;
    let x = model_input::<T>(&mut rng, r, 2)?;
    let g = uniform(&mut rng, 2 * r * r, -1.0, 1.0);
    let (_, cache) = row_block_fwd(&model, &x, Mode::Train)?;
    let base: Vec<i64> = pattern_signature(&cache.activation_pattern()).collect();
    let mut grads = ModelGrads::zeros_like(&model);
    row_block_bwd(&model, &cache, &tensor([2, r, r, 1], &g)?, &mut grads)?;
    let mut acc = Accumulator::default();
    let h = base_step::<T>();
    probe_model(
        &mut acc,
        &mut rng,
        &model,
        &grads,
        3,
        &["row_block"],
        h,
        &base,
        |m| {
            let (out, c) = row_block_fwd(m, &x, Mode::Train)?;
            Ok((
                dot(&g, &out.data),
                pattern_signature(&c.activation_pattern()).collect(),
            ))
        },
    )?;
    Ok(acc.report::<T>("row_block"))
}

/// The whole training objective (motion block, projection, row block, both
/// warps, all four losses) w.r.t. parameters of both blocks.
///
/// The numeric reference is always evaluated in `f64` at the (possibly
/// single-precision) parameter point: at `f32` the chain's forward noise
/// (a few ulp of the loss) would otherwise swamp its small gradients, and the
/// question checked is whether the `f32` backward pass matches the true
/// derivative of the same function.
pub fn check_full_chain<T: Real>(seed: u64) -> Result<BlockReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = 16;
    let clean = crate::synth::textured_image::<f64>(seed, padded_size(r), 3);
    let samples = generate_dataset(&[clean], 2, seed, r, MotionRanges::from_degrees(1.0, 1.0))?;
    let samples_t: Vec<TrainSample<T>> = samples
        .iter()
        .map(|s| TrainSample {
            gs: s.gs.cast(),
            rs: s.rs.cast(),
            motion: s.motion.cast(),
            trajectory: s.trajectory.clone(),
            seed: s.seed,
        })
        .collect();
    let model = ModelParams::<T>::init(r, seed)?;
    let cfg = TrainConfig::default();
    let batch_t: Vec<_> = samples_t.iter().collect();
    let (step, _, _) = loss_and_grads(
        &model,
        &batch_t,
        &cfg,
        Some(&TrajectoryProjection::new(r, cfg.degree)?),
    )?;

    let batch: Vec<_> = samples.iter().collect();
    let proj = TrajectoryProjection::<f64>::new(r, cfg.degree)?;
    let evaluate = |m: &ModelParams<T>| -> Result<(f64, Vec<i64>)> {
        let (step, out, caches) = loss_and_grads(&m.cast::<f64>(), &batch, &cfg, Some(&proj))?;
        let mut sig: Vec<i64> = pattern_signature(&caches.motion.activation_pattern()).collect();
        sig.extend(pattern_signature(&caches.row.activation_pattern()));
        for (motion, rowmap) in out.motions.iter().zip(&out.rowmaps) {
            formation_cells(motion, r, &mut sig);
            rectification_cells(motion, rowmap, &mut sig);
        }
        Ok((step.loss.total, sig))
    };
    let (_, base) = evaluate(&model)?;
    let mut acc = Accumulator::default();
    // the reference is smooth to f64 precision, so a small step keeps most
    // probes inside one piece
    let h = 1e-5;
    probe_model(
        &mut acc,
        &mut rng,
        &model,
        &step.grads,
        2,
        &["base", "tx_head", "rz_head", "row_block"],
        h,
        &base,
        evaluate,
    )?;
    Ok(acc.report::<T>("full_chain"))
}

/// Every check at precision `T`.
pub fn run_suite<T: Real>(seed: u64) -> Result<Vec<BlockReport>> {
    let mut out = vec![
        check_conv::<T>(seed)?,
        check_batchnorm::<T>(seed + 1)?,
        check_fc::<T>(seed + 2)?,
        check_relu::<T>(seed + 3)?,
        check_formation_warp::<T>(seed + 4)?,
        check_rectification_warp::<T>(seed + 5)?,
    ];
    out.extend(check_losses::<T>(seed + 6)?);
    out.push(check_projection::<T>(seed + 7)?);
    out.push(check_motion_block::<T>(seed + 8)?);
    out.push(check_row_block::<T>(seed + 9)?);
    out.push(check_full_chain::<T>(seed + 10)?);
    for rep in &mut out {
        rep.block = format!("{}[{}]", rep.block, T::NAME);
    }
    Ok(out)
}
