//! Sobel edges and the four masked losses.
//!
//! Every loss is normalized by the element count `H * W * C` of the compared
//! images (edge maps have `2C` channels). Masks are derived from the
//! prediction (zero where all its channels are zero) and treated as
//! constants in the backward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Image, Real, Result, VisibilityMask};

/// Horizontal Sobel kernel (derivative along `j`); the vertical kernel is
/// its transpose.
const SOBEL_J: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

#[inline]
fn sobel_weight(vertical: bool, di: usize, dj: usize) -> f64 {
    if vertical {
        SOBEL_J[dj][di]
    } else {
        SOBEL_J[di][dj]
    }
}

/// Horizontal and vertical 3x3 Sobel responses per channel with zero
/// padding. Output channel `2k` is the horizontal response (derivative
/// along the row, `j`) of input channel `k`, channel `2k + 1` the vertical
/// one (along `i`).
pub fn sobel_edges<T: Real>(img: &Image<T>) -> Image<T> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut out = Image::zeros(h, w, 2 * c);
    for i in 0..h {
        for j in 0..w {
            for di in 0..3 {
                let Some(ii) = (i + di).checked_sub(1).filter(|&ii| ii < h) else {
                    continue;
                };
                for dj in 0..3 {
                    let Some(jj) = (j + dj).checked_sub(1).filter(|&jj| jj < w) else {
                        continue;
                    };
                    let (wh, wv) = (
                        T::of(sobel_weight(false, di, dj)),
                        T::of(sobel_weight(true, di, dj)),
                    );
                    let src = img.pixel(ii, jj);
                    let dst = out.pixel_mut(i, j);
                    for k in 0..c {
                        dst[2 * k] += wh * src[k];
                        dst[2 * k + 1] += wv * src[k];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`sobel_edges`]: maps a `2C`-channel gradient back to `C`
/// channels.
pub fn sobel_edges_adjoint<T: Real>(grad: &Image<T>) -> Result<Image<T>> {
    if !grad.channels().is_multiple_of(2) {
        return Err(Error::dim(
            "edge gradient channels (even)",
            grad.channels() + 1,
            grad.channels(),
        ));
    }
    let (h, w, c) = (grad.height(), grad.width(), grad.channels() / 2);
    let mut out = Image::zeros(h, w, c);
    for i in 0..h {
        for j in 0..w {
            for di in 0..3 {
                let Some(ii) = (i + di).checked_sub(1).filter(|&ii| ii < h) else {
                    continue;
                };
                for dj in 0..3 {
                    let Some(jj) = (j + dj).checked_sub(1).filter(|&jj| jj < w) else {
                        continue;
                    };
                    let (wh, wv) = (
                        T::of(sobel_weight(false, di, dj)),
                        T::of(sobel_weight(true, di, dj)),
                    );
                    let g = grad.pixel(i, j);
                    let dst = out.pixel_mut(ii, jj);
                    for k in 0..c {
                        dst[k] += wh * g[2 * k] + wv * g[2 * k + 1];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `||pred - mask * target||^2 / N` and its gradient w.r.t. `pred`. The loss
/// is accumulated and returned in `f64` at every precision.
pub fn masked_mse<T: Real>(
    pred: &Image<T>,
    target: &Image<T>,
    mask: &VisibilityMask,
) -> Result<(f64, Image<T>)> {
    pred.check_same_shape(target, "loss target")?;
    mask.check_shape(pred.height(), pred.width())?;
    let c = pred.channels();
    let n = T::of(pred.data().len() as f64);
    let two_over_n = T::of(2.0) / n;
    let mut grad = Image::zeros(pred.height(), pred.width(), c);
    // accumulate in f64 so single-precision losses stay accurate
    let mut sum = 0.0f64;
    for (p, ((a, b), g)) in pred
        .data()
        .chunks_exact(c)
        .zip(target.data().chunks_exact(c))
        .zip(grad.data_mut().chunks_exact_mut(c))
        .enumerate()
    {
        let on = mask.data()[p];
        for k in 0..c {
            let d = if on { a[k] - b[k] } else { a[k] };
            sum += d.as_f64() * d.as_f64();
            g[k] = two_over_n * d;
        }
    }
    Ok((sum / pred.data().len() as f64, grad))
}

/// `||E(pred) - E(mask * target)||^2 / N_E` and its gradient w.r.t. `pred`,
/// with `E` = [`sobel_edges`] and `N_E = H * W * 2C`.
pub fn edge_loss<T: Real>(
    pred: &Image<T>,
    target: &Image<T>,
    mask: &VisibilityMask,
) -> Result<(f64, Image<T>)> {
    pred.check_same_shape(target, "loss target")?;
    let masked = target.masked(mask)?;
    let full = VisibilityMask::full(pred.height(), pred.width());
    let (loss, g_edges) = masked_mse(&sobel_edges(pred), &sobel_edges(&masked), &full)?;
    Ok((loss, sobel_edges_adjoint(&g_edges)?))
}

/// Weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rec_mse: f64,
    pub reg_mse: f64,
    pub rec_edge: f64,
    pub reg_edge: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec_mse: 1.0,
            reg_mse: 1.0,
            rec_edge: 0.5,
            reg_edge: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rec_mse, self.reg_mse, self.rec_edge, self.reg_edge];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "loss weights must be finite and nonnegative",
            ));
        }
        Ok(())
    }
}

/// Individual terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec_mse: f64,
    pub reg_mse: f64,
    pub rec_edge: f64,
    pub reg_edge: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.rec_mse,
            self.reg_mse,
            self.rec_edge,
            self.reg_edge,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub(crate) fn accumulate(&mut self, other: &Self, scale: f64) {
        self.total += other.total * scale;
        self.rec_mse += other.rec_mse * scale;
        self.reg_mse += other.reg_mse * scale;
        self.rec_edge += other.rec_edge * scale;
        self.reg_edge += other.reg_edge * scale;
    }
}

/// Gradients of the total loss w.r.t. the rectified and regenerated images.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads<T> {
    pub d_rect: Image<T>,
    pub d_regen: Image<T>,
}

/// Weighted sum of the rectification terms (`rect` vs masked `gs`) and the
/// regeneration terms (`regen` vs masked `rs`), with masks taken from `rect`
/// and `regen`.
pub fn total_loss<T: Real>(
    rs: &Image<T>,
    gs: &Image<T>,
    rect: &Image<T>,
    regen: &Image<T>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, LossGrads<T>)> {
    weights.validate()?;
    let rect_mask = VisibilityMask::from_image(rect);
    let regen_mask = VisibilityMask::from_image(regen);
    let (rec_mse, g1) = masked_mse(rect, gs, &rect_mask)?;
    let (reg_mse, g2) = masked_mse(regen, rs, &regen_mask)?;
    let (rec_edge, g3) = edge_loss(rect, gs, &rect_mask)?;
    let (reg_edge, g4) = edge_loss(regen, rs, &regen_mask)?;
    let w = weights;
    let combine = |a: &Image<T>, wa: f64, b: &Image<T>, wb: f64| {
        let (wa, wb) = (T::of(wa), T::of(wb));
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| wa * x + wb * y)
            .collect();
        Image::new(a.height(), a.width(), a.channels(), data)
    };
    let grads = LossGrads {
        d_rect: combine(&g1, w.rec_mse, &g3, w.rec_edge)?,
        d_regen: combine(&g2, w.reg_mse, &g4, w.reg_edge)?,
    };
    let total =
        w.rec_mse * rec_mse + w.reg_mse * reg_mse + w.rec_edge * rec_edge + w.reg_edge * reg_edge;
    Ok((
        LossBreakdown {
            total,
            rec_mse,
            reg_mse,
            rec_edge,
            reg_edge,
        },
        grads,
    ))
}

/// Mean squared error between predicted and ground-truth motion, `t_x` and
/// `r_z` equally weighted: `mean((tx - tx*)^2) + mean((rz - rz*)^2)`.
/// Returns the loss and the gradients w.r.t. `tx` and `rz`.
pub fn motion_mse<T: Real>(
    tx: &[T],
    rz: &[T],
    gt_tx: &[T],
    gt_rz: &[T],
) -> Result<(f64, Vec<T>, Vec<T>)> {
    let n = tx.len();
    if rz.len() != n || gt_tx.len() != n || gt_rz.len() != n {
        return Err(Error::dim("motion regression length", n, gt_tx.len()));
    }
    let scale = T::of(2.0 / n as f64);
    let mut loss = 0.0;
    let mut d_tx = vec![T::zero(); n];
    let mut d_rz = vec![T::zero(); n];
    for k in 0..n {
        let a = tx[k] - gt_tx[k];
        let b = rz[k] - gt_rz[k];
        loss += a.as_f64() * a.as_f64() + b.as_f64() * b.as_f64();
        d_tx[k] = scale * a;
        d_rz[k] = scale * b;
    }
    Ok((loss / n as f64, d_tx, d_rz))
}
