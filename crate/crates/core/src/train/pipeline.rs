//! The full differentiable pipeline, motion pretraining and end-to-end
//! training.
//!
//! One end-to-end step on a batch:
//!
//! 1. motion block on the RS images gives raw per-row curves;
//! 2. the curves are projected onto cubic trajectories (optional);
//! 3. the row block gives a residual, `A + residual` is the row map;
//! 4. rectification warps RS with (curve, row map), regeneration warps GS
//!    with the curve;
//! 5. the weighted total loss, averaged over the batch, is backpropagated
//!    through both warps, the projection and both blocks.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::metrics::masked_psnr;
use crate::nn::{
    motion_block_bwd, motion_block_fwd, row_block_bwd, row_block_fwd, Mode, ModelGrads,
    ModelParams, Tensor,
};
use crate::rectifier::rectify_ts_cached;
use crate::train::adam::{adam_step, AdamConfig, OptimizerState};
use crate::train::dataset::TrainSample;
use crate::train::loss::{motion_mse, total_loss, LossBreakdown, LossWeights};
use crate::trajectory::{fit_trajectory, TrajectoryProjection};
use crate::warp::{warp_bwd, warp_rs_from_gs_cached};
use crate::{
    Error, Image, MotionCurve, PolynomialTrajectory, Real, Result, RowMap, VisibilityMask,
};

/// Settings of [`train_end_to_end`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// Project motion curves onto polynomial trajectories before warping.
    pub smoothing: bool,
    pub degree: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 4,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            smoothing: true,
            degree: 3,
            seed: 0,
        }
    }
}

/// Settings of [`pretrain_motion`].
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub max_samples: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            max_samples: 50,
            batch_size: 4,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// One line of the training metrics log (means over an epoch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub loss: LossBreakdown,
    /// Mean masked PSNR (dB) of the rectified images against GS.
    pub psnr_masked: f64,
}

/// One line of the pretraining log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
}

/// Loss, metrics and parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub loss: LossBreakdown,
    pub psnr_masked: f64,
    pub grads: ModelGrads<T>,
}

/// Forward products of the pipeline on one batch.
#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub motions: Vec<MotionCurve<T>>,
    pub rowmaps: Vec<RowMap<T>>,
    pub rects: Vec<Image<T>>,
    pub regens: Vec<Image<T>>,
}

fn check_batch<T: Real>(model: &ModelParams<T>, batch: &[&TrainSample<T>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch"));
    }
    for s in batch {
        let r = s.rs.side()?;
        if r != model.r() {
            return Err(Error::dim("sample size", model.r(), r));
        }
    }
    Ok(())
}

fn psnr_or_nan<T: Real>(a: &Image<T>, b: &Image<T>, mask: &VisibilityMask) -> f64 {
    masked_psnr(a, b, mask).unwrap_or(f64::NAN)
}

/// Mean of the non-NaN values (NaN when there are none). Identical images
/// contribute an infinite PSNR.
fn finite_mean(values: &[f64]) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// Forward and backward pass of the end-to-end loss on a batch (batch-norm
/// in training mode). Gradients are of the batch-mean loss.
pub fn loss_and_grads<T: Real>(
    model: &ModelParams<T>,
    batch: &[&TrainSample<T>],
    cfg: &TrainConfig,
    projection: Option<&TrajectoryProjection<T>>,
) -> Result<(StepOutput<T>, PipelineOutput<T>, BatchCaches<T>)> {
    check_batch(model, batch)?;
    let r = model.r();
    let n = batch.len();
    let inv_n = T::of(1.0 / n as f64);
    let rs_refs: Vec<&Image<T>> = batch.iter().map(|s| &s.rs).collect();
    let x = Tensor::from_images(&rs_refs)?;
    let (raw, motion_cache) = motion_block_fwd(model, &x, Mode::Train)?;
    let (residual, row_cache) = row_block_fwd(model, &x, Mode::Train)?;

    let mut out = PipelineOutput {
        motions: Vec::with_capacity(n),
        rowmaps: Vec::with_capacity(n),
        rects: Vec::with_capacity(n),
        regens: Vec::with_capacity(n),
    };
    let mut loss = LossBreakdown::default();
    let mut psnrs = Vec::with_capacity(n);
    let mut d_tx = Tensor::zeros(n, 1, 1, r);
    let mut d_rz = Tensor::zeros(n, 1, 1, r);
    let mut d_res = Tensor::zeros(n, r, r, 1);
    for (b, s) in batch.iter().enumerate() {
        let raw_curve = raw.curve(b)?;
        let curve = match projection {
            Some(p) => p.project(&raw_curve)?,
            None => raw_curve,
        };
        let rowmap = RowMap::from_residual(r, residual.sample(b))?;
        let (rect, rect_mask, rect_cache) = rectify_ts_cached(&s.rs, &curve, &rowmap)?;
        let (regen, _, regen_cache) = warp_rs_from_gs_cached(&s.gs, &curve)?;
        let (terms, g) = total_loss(&s.rs, &s.gs, &rect, &regen, &cfg.weights)?;
        loss.accumulate(&terms, 1.0 / n as f64);
        psnrs.push(psnr_or_nan(&rect, &s.gs, &rect_mask));

        let gr = warp_bwd(&g.d_rect, Some(&rect_cache))?;
        let gg = warp_bwd(&g.d_regen, Some(&regen_cache))?;
        let mut gt: Vec<T> = gr
            .d_tx
            .iter()
            .zip(&gg.d_tx)
            .map(|(&a, &b)| (a + b) * inv_n)
            .collect();
        let mut gz: Vec<T> = gr
            .d_rz
            .iter()
            .zip(&gg.d_rz)
            .map(|(&a, &b)| (a + b) * inv_n)
            .collect();
        if let Some(p) = projection {
            gt = p.apply_transpose(&gt);
            gz = p.apply_transpose(&gz);
        }
        d_tx.sample_mut(b).copy_from_slice(&gt);
        d_rz.sample_mut(b).copy_from_slice(&gz);
        for (d, &v) in d_res.sample_mut(b).iter_mut().zip(&gr.d_rowmap) {
            *d = v * inv_n;
        }
        out.motions.push(curve);
        out.rowmaps.push(rowmap);
        out.rects.push(rect);
        out.regens.push(regen);
    }
    let mut grads = ModelGrads::zeros_like(model);
    motion_block_bwd(model, &motion_cache, &d_tx, &d_rz, &mut grads)?;
    row_block_bwd(model, &row_cache, &d_res, &mut grads)?;
    Ok((
        StepOutput {
            loss,
            psnr_masked: finite_mean(&psnrs),
            grads,
        },
        out,
        BatchCaches {
            motion: motion_cache,
            row: row_cache,
        },
    ))
}

/// Training-mode activations of a batch, for committing batch-norm
/// statistics.
#[derive(Debug, Clone)]
pub struct BatchCaches<T> {
    pub motion: crate::nn::MotionCache<T>,
    pub row: crate::nn::RowCache<T>,
}

impl<T: Real> BatchCaches<T> {
    pub fn commit(&self, model: &mut ModelParams<T>) {
        let snapshot = model.clone();
        model.commit_running_stats(&self.motion.stats(&snapshot));
        model.commit_running_stats(&self.row.stats(&snapshot));
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// End-to-end training with the weighted total loss. `on_epoch` sees each
/// epoch's metrics as they are produced.
///
/// A non-finite loss or gradient aborts with the model left at the last
/// good step.
pub fn train_end_to_end<T: Real>(
    model: &mut ModelParams<T>,
    samples: &[TrainSample<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&MetricsRecord),
) -> Result<Vec<MetricsRecord>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive"));
    }
    let projection = if cfg.smoothing {
        Some(TrajectoryProjection::new(model.r(), cfg.degree)?)
    } else {
        None
    };
    let mut opt = OptimizerState::new(model.params(), cfg.adam)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(samples.len(), cfg.seed, epoch);
        let mut sum = LossBreakdown::default();
        let mut psnrs = Vec::new();
        let batches = order.chunks(cfg.batch_size);
        let count = batches.len() as f64;
        for idx in batches {
            let batch: Vec<&TrainSample<T>> = idx.iter().map(|&k| &samples[k]).collect();
            let (step, _, caches) = loss_and_grads(model, &batch, cfg, projection.as_ref())?;
            let at = Error::NonFiniteLoss {
                epoch,
                step: opt.step as usize,
            };
            if !step.loss.is_finite() {
                return Err(at);
            }
            if let Some(name) = step.grads.first_non_finite(model) {
                return Err(Error::NonFiniteGradient(name.into()));
            }
            let mut next = model.clone();
            caches.commit(&mut next);
            adam_step(next.params_mut(), &step.grads.groups, &mut opt)?;
            if next
                .params()
                .iter()
                .any(|p| p.data.iter().any(|v| !v.is_finite()))
            {
                return Err(at);
            }
            *model = next;
            sum.accumulate(&step.loss, 1.0 / count);
            psnrs.push(step.psnr_masked);
        }
        let rec = MetricsRecord {
            epoch,
            step: opt.step,
            loss: sum,
            psnr_masked: finite_mean(&psnrs),
        };
        on_epoch(&rec);
        log.push(rec);
    }
    Ok(log)
}

/// Mean end-to-end loss and masked PSNR over `samples` without updating
/// anything. Batches are taken in order; batch-norm runs in `mode`.
pub fn evaluate<T: Real>(
    model: &ModelParams<T>,
    samples: &[TrainSample<T>],
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<(LossBreakdown, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples"));
    }
    let projection = if cfg.smoothing {
        Some(TrajectoryProjection::new(model.r(), cfg.degree)?)
    } else {
        None
    };
    let mut sum = LossBreakdown::default();
    let mut psnrs = Vec::new();
    let total = samples.len() as f64;
    for chunk in samples.chunks(cfg.batch_size.max(1)) {
        let batch: Vec<&TrainSample<T>> = chunk.iter().collect();
        match mode {
            Mode::Train => {
                let (step, _, _) = loss_and_grads(model, &batch, cfg, projection.as_ref())?;
                sum.accumulate(&step.loss, batch.len() as f64 / total);
                psnrs.push(step.psnr_masked);
            }
            Mode::Infer => {
                for s in chunk {
                    let rect =
                        rectify_with_model(model, &s.rs, cfg.smoothing.then_some(cfg.degree))?;
                    let motion = &rect.motion;
                    let (regen, _, _) = warp_rs_from_gs_cached(&s.gs, motion)?;
                    let (terms, _) = total_loss(&s.rs, &s.gs, &rect.image, &regen, &cfg.weights)?;
                    sum.accumulate(&terms, 1.0 / total);
                    psnrs.push(psnr_or_nan(&rect.image, &s.gs, &rect.mask));
                }
            }
        }
    }
    Ok((sum, finite_mean(&psnrs)))
}

/// Regresses the motion block onto ground-truth curves (mean squared
/// error, `t_x` and `r_z` equally weighted) using the first
/// `min(max_samples, n)` samples. The row block is not touched.
pub fn pretrain_motion<T: Real>(
    model: &mut ModelParams<T>,
    samples: &[TrainSample<T>],
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(&PretrainRecord),
) -> Result<Vec<PretrainRecord>> {
    let used = &samples[..cfg.max_samples.min(samples.len())];
    if used.is_empty() {
        return Err(Error::InvalidArgument("no pretraining samples"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive"));
    }
    let mut opt = OptimizerState::new(model.params(), cfg.adam)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(used.len(), cfg.seed, epoch);
        let batches = order.chunks(cfg.batch_size);
        let count = batches.len() as f64;
        let mut mean = 0.0;
        for idx in batches {
            let batch: Vec<&TrainSample<T>> = idx.iter().map(|&k| &used[k]).collect();
            let (loss, grads, cache) = motion_loss_and_grads(model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: opt.step as usize,
                });
            }
            let mut next = model.clone();
            next.commit_running_stats(&cache.stats(model));
            adam_step(next.params_mut(), &grads.groups, &mut opt)?;
            *model = next;
            mean += loss / count;
        }
        let rec = PretrainRecord {
            epoch,
            step: opt.step,
            loss: mean,
        };
        on_epoch(&rec);
        log.push(rec);
    }
    Ok(log)
}

/// Batch-mean motion regression loss and its gradients.
pub fn motion_loss_and_grads<T: Real>(
    model: &ModelParams<T>,
    batch: &[&TrainSample<T>],
) -> Result<(f64, ModelGrads<T>, crate::nn::MotionCache<T>)> {
    check_batch(model, batch)?;
    let n = batch.len();
    let r = model.r();
    let rs_refs: Vec<&Image<T>> = batch.iter().map(|s| &s.rs).collect();
    let x = Tensor::from_images(&rs_refs)?;
    let (out, cache) = motion_block_fwd(model, &x, Mode::Train)?;
    let mut d_tx = Tensor::zeros(n, 1, 1, r);
    let mut d_rz = Tensor::zeros(n, 1, 1, r);
    let mut loss = 0.0;
    let inv_n = T::of(1.0 / n as f64);
    for (b, s) in batch.iter().enumerate() {
        let (l, gt, gz) = motion_mse(
            out.tx.sample(b),
            out.rz.sample(b),
            s.motion.tx(),
            s.motion.rz(),
        )?;
        loss += l / n as f64;
        for (d, v) in d_tx.sample_mut(b).iter_mut().zip(gt) {
            *d = v * inv_n;
        }
        for (d, v) in d_rz.sample_mut(b).iter_mut().zip(gz) {
            *d = v * inv_n;
        }
    }
    let mut grads = ModelGrads::zeros_like(model);
    motion_block_bwd(model, &cache, &d_tx, &d_rz, &mut grads)?;
    Ok((loss, grads, cache))
}

/// Result of rectifying one RS image with the network.
#[derive(Debug, Clone)]
pub struct ModelRectification<T> {
    pub image: Image<T>,
    pub mask: VisibilityMask,
    /// Motion used for rectification (smoothed when a degree was given).
    pub motion: MotionCurve<T>,
    pub trajectory: Option<PolynomialTrajectory>,
    pub rowmap: RowMap<T>,
}

/// Inference: motion block, optional polynomial fit of the given degree,
/// row block, then rectification (batch-norm with running statistics).
pub fn rectify_with_model<T: Real>(
    model: &ModelParams<T>,
    rs: &Image<T>,
    degree: Option<usize>,
) -> Result<ModelRectification<T>> {
    let raw = crate::nn::predict_motion(model, rs)?;
    let (motion, trajectory) = match degree {
        Some(d) => {
            let traj = fit_trajectory(&raw, d)?;
            (
                crate::trajectory::eval_trajectory(&traj, model.r())?,
                Some(traj),
            )
        }
        None => (raw, None),
    };
    let rowmap = crate::nn::predict_rowmap(model, rs)?;
    let (image, mask, _) = rectify_ts_cached(rs, &motion, &rowmap)?;
    Ok(ModelRectification {
        image,
        mask,
        motion,
        trajectory,
        rowmap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::textured_image;
    use crate::train::dataset::generate_dataset;
    use crate::MotionRanges;

    fn toy(r: usize, n: usize) -> Vec<TrainSample<f64>> {
        let big = crate::train::dataset::padded_size(r);
        let img = textured_image::<f64>(1, big, 3);
        generate_dataset(&[img], n, 5, r, MotionRanges::from_degrees(2.0, 1.0)).unwrap()
    }

    #[test]
    fn zero_model_on_zero_motion_has_zero_loss() {
        let r = 16;
        let big = crate::train::dataset::padded_size(r);
        let img = textured_image::<f64>(1, big, 3);
        let s = generate_dataset(
            &[img],
            1,
            5,
            r,
            MotionRanges {
                max_tx: 0.0,
                max_rz: 0.0,
            },
        )
        .unwrap();
        let m = ModelParams::<f64>::zeros(r).unwrap();
        let (step, _, _) = loss_and_grads(&m, &[&s[0]], &TrainConfig::default(), None).unwrap();
        assert!(step.loss.total < 1e-20, "{:?}", step.loss);
        assert_eq!(step.psnr_masked, f64::INFINITY);
    }

    #[test]
    fn regen_branch_gets_no_gradient_without_its_weights() {
        let s = toy(16, 2);
        let m = ModelParams::<f64>::init(16, 3).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.weights.reg_mse = 0.0;
        cfg.weights.reg_edge = 0.0;
        let (step, out, _) = loss_and_grads(&m, &[&s[0], &s[1]], &cfg, None).unwrap();
        let (b, g) = total_loss(
            &s[0].rs,
            &s[0].gs,
            &out.rects[0],
            &out.regens[0],
            &cfg.weights,
        )
        .unwrap();
        assert!(b.total.is_finite());
        assert!(g.d_regen.data().iter().all(|&v| v == 0.0));
        assert!(step.loss.reg_mse > 0.0);
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let s = toy(16, 4);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let mut a = ModelParams::<f64>::init(16, 1).unwrap();
        let mut b = a.clone();
        let la = train_end_to_end(&mut a, &s, &cfg, |_| {}).unwrap();
        let lb = train_end_to_end(&mut b, &s, &cfg, |_| {}).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
        assert_eq!(la.len(), 3);
        assert_eq!(la[2].step, 3);
    }

    #[test]
    fn pretraining_leaves_row_block_alone() {
        let s = toy(16, 4);
        let mut m = ModelParams::<f64>::init(16, 2).unwrap();
        let before = m.clone();
        let log = pretrain_motion(&mut m, &s, &PretrainConfig::default(), |_| {}).unwrap();
        assert_eq!(log.len(), 5);
        for (p, q) in m.params().iter().zip(before.params()) {
            if p.name.starts_with("row_block") {
                assert_eq!(p, q);
            }
        }
    }

    #[test]
    fn nan_input_aborts_with_model_retained() {
        let mut s = toy(16, 1);
        let mut m = ModelParams::<f64>::init(16, 2).unwrap();
        // corrupt a weight so the forward pass overflows
        m.params_mut()[0].data[0] = 1e300;
        let before = m.clone();
        s[0].rs = s[0].rs.clone();
        let err = train_end_to_end(&mut m, &s, &TrainConfig::default(), |_| {}).unwrap_err();
        assert!(
            matches!(
                err,
                Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_)
            ),
            "{err:?}"
        );
        assert_eq!(m, before);
    }
}
