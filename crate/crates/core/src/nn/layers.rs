//! Layer kit: 3x3 convolution, batch normalization, fully connected and ReLU,
//! each with a forward and a backward function.
//!
//! Convolution weights are stored `[kh][kw][cin][cout]`; fully connected
//! weights `[din][dout]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{gemm, Layout};
use crate::nn::Tensor;
use crate::{Error, Real, Result};

pub const KERNEL: usize = 3;
const PAD: usize = 1;

/// Output side length of a padded 3x3 convolution.
#[inline]
pub fn conv_out_size(size: usize, stride: usize) -> usize {
    (size + 2 * PAD - KERNEL) / stride + 1
}

/// Shape of a 3x3, padding-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        KERNEL * KERNEL * self.cin * self.cout
    }

    fn patch_len(&self) -> usize {
        KERNEL * KERNEL * self.cin
    }

    fn check(&self, x: &Tensor<impl Real>, w_len: usize, b_len: usize) -> Result<()> {
        if x.c != self.cin {
            return Err(Error::dim("conv input channels", self.cin, x.c));
        }
        if w_len != self.weight_len() {
            return Err(Error::dim("conv weight length", self.weight_len(), w_len));
        }
        if b_len != self.cout {
            return Err(Error::dim("conv bias length", self.cout, b_len));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be positive"));
        }
        Ok(())
    }
}

/// Unrolls one sample into `(ho * wo) x (9 * cin)` patches.
fn im2col<T: Real>(x: &[T], h: usize, w: usize, s: ConvShape, cols: &mut [T]) {
    let (ho, wo) = (conv_out_size(h, s.stride), conv_out_size(w, s.stride));
    let k = s.patch_len();
    let cin = s.cin;
    for oi in 0..ho {
        for oj in 0..wo {
            let row = &mut cols[(oi * wo + oj) * k..(oi * wo + oj + 1) * k];
            for kh in 0..KERNEL {
                let ii = (oi * s.stride + kh) as isize - PAD as isize;
                for kw in 0..KERNEL {
                    let jj = (oj * s.stride + kw) as isize - PAD as isize;
                    let dst = &mut row[(kh * KERNEL + kw) * cin..(kh * KERNEL + kw + 1) * cin];
                    if ii < 0 || jj < 0 || ii as usize >= h || jj as usize >= w {
                        dst.fill(T::zero());
                    } else {
                        let o = (ii as usize * w + jj as usize) * cin;
                        dst.copy_from_slice(&x[o..o + cin]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back into the input.
fn col2im<T: Real>(cols: &[T], h: usize, w: usize, s: ConvShape, dx: &mut [T]) {
    let (ho, wo) = (conv_out_size(h, s.stride), conv_out_size(w, s.stride));
    let k = s.patch_len();
    let cin = s.cin;
    for oi in 0..ho {
        for oj in 0..wo {
            let row = &cols[(oi * wo + oj) * k..(oi * wo + oj + 1) * k];
            for kh in 0..KERNEL {
                let ii = (oi * s.stride + kh) as isize - PAD as isize;
                if ii < 0 || ii as usize >= h {
                    continue;
                }
                for kw in 0..KERNEL {
                    let jj = (oj * s.stride + kw) as isize - PAD as isize;
                    if jj < 0 || jj as usize >= w {
                        continue;
                    }
                    let src = &row[(kh * KERNEL + kw) * cin..(kh * KERNEL + kw + 1) * cin];
                    let o = (ii as usize * w + jj as usize) * cin;
                    for (d, &g) in dx[o..o + cin].iter_mut().zip(src) {
                        *d += g;
                    }
                }
            }
        }
    }
}

pub fn conv2d_fwd<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    s: ConvShape,
) -> Result<Tensor<T>> {
    s.check(x, weight.len(), bias.len())?;
    let (ho, wo) = (conv_out_size(x.h, s.stride), conv_out_size(x.w, s.stride));
    let p = ho * wo;
    let k = s.patch_len();
    let mut out = Tensor::zeros(x.n, ho, wo, s.cout);
    let mut cols = vec![T::zero(); p * k];
    for b in 0..x.n {
        im2col(x.sample(b), x.h, x.w, s, &mut cols);
        let y = out.sample_mut(b);
        for row in y.chunks_exact_mut(s.cout) {
            row.copy_from_slice(bias);
        }
        gemm(
            p,
            k,
            s.cout,
            &cols,
            Layout::Normal,
            weight,
            Layout::Normal,
            T::one(),
            y,
        );
    }
    Ok(out)
}

/// Gradients of a convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the input gradient was not requested.
    pub dx: Option<Tensor<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub fn conv2d_bwd<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    dy: &Tensor<T>,
    s: ConvShape,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    s.check(x, weight.len(), s.cout)?;
    let (ho, wo) = (conv_out_size(x.h, s.stride), conv_out_size(x.w, s.stride));
    dy.check_shape([x.n, ho, wo, s.cout], "conv upstream gradient")?;
    let p = ho * wo;
    let k = s.patch_len();
    let mut dw = vec![T::zero(); s.weight_len()];
    let mut db = vec![T::zero(); s.cout];
    let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.h, x.w, x.c));
    let mut cols = vec![T::zero(); p * k];
    let mut dcols = if need_dx {
        vec![T::zero(); p * k]
    } else {
        Vec::new()
    };
    for b in 0..x.n {
        let g = dy.sample(b);
        for row in g.chunks_exact(s.cout) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        im2col(x.sample(b), x.h, x.w, s, &mut cols);
        // dW (k x cout) += cols^T (k x p) * dY (p x cout)
        gemm(
            k,
            p,
            s.cout,
            &cols,
            Layout::Transposed,
            g,
            Layout::Normal,
            T::one(),
            &mut dw,
        );
        if let Some(dx) = dx.as_mut() {
            // dcols (p x k) = dY (p x cout) * W^T (cout x k)
            gemm(
                p,
                s.cout,
                k,
                g,
                Layout::Normal,
                weight,
                Layout::Transposed,
                T::zero(),
                &mut dcols,
            );
            col2im(&dcols, x.h, x.w, s, dx.sample_mut(b));
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

/// Batch statistics and normalized activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Training-mode batch normalization over `(batch, height, width)` per
/// channel, with biased batch variance.
pub fn batchnorm_fwd_train<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<(Tensor<T>, BnCache<T>)> {
    check_bn(x, gamma, beta)?;
    let c = x.c;
    let count = T::of((x.data.len() / c) as f64);
    let mut mean = vec![T::zero(); c];
    for px in x.data.chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![T::zero(); c];
    for px in x.data.chunks_exact(c) {
        for k in 0..c {
            let d = px[k] - mean[k];
            var[k] += d * d;
        }
    }
    for v in &mut var {
        *v /= count;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.data.len()];
    let mut y = Tensor::zeros(x.n, x.h, x.w, c);
    for ((px, xh), out) in x
        .data
        .chunks_exact(c)
        .zip(xhat.chunks_exact_mut(c))
        .zip(y.data.chunks_exact_mut(c))
    {
        for k in 0..c {
            xh[k] = (px[k] - mean[k]) * inv_std[k];
            out[k] = gamma[k] * xh[k] + beta[k];
        }
    }
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Inference-mode batch normalization with stored statistics.
pub fn batchnorm_fwd_infer<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    check_bn(x, gamma, beta)?;
    let c = x.c;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::dim(
            "batch-norm running statistics",
            c,
            running_mean.len(),
        ));
    }
    let scale: Vec<T> = (0..c)
        .map(|k| gamma[k] / (running_var[k] + eps).sqrt())
        .collect();
    let mut y = x.clone();
    for px in y.data.chunks_exact_mut(c) {
        for k in 0..c {
            px[k] = (px[k] - running_mean[k]) * scale[k] + beta[k];
        }
    }
    Ok(y)
}

fn check_bn<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<()> {
    if gamma.len() != x.c {
        return Err(Error::dim("batch-norm scale length", x.c, gamma.len()));
    }
    if beta.len() != x.c {
        return Err(Error::dim("batch-norm shift length", x.c, beta.len()));
    }
    if x.data.is_empty() {
        return Err(Error::InvalidArgument("batch norm of an empty tensor"));
    }
    Ok(())
}

/// Returns `(dx, dgamma, dbeta)` for training-mode batch normalization.
pub fn batchnorm_bwd<T: Real>(
    dy: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &[T],
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let c = dy.c;
    if cache.xhat.len() != dy.data.len() || gamma.len() != c {
        return Err(Error::dim(
            "batch-norm upstream gradient",
            cache.xhat.len(),
            dy.data.len(),
        ));
    }
    let count = T::of((dy.data.len() / c) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (g, xh) in dy.data.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for k in 0..c {
            dgamma[k] += g[k] * xh[k];
            dbeta[k] += g[k];
        }
    }
    // dx = gamma * inv_std / N * (N dy - sum(dy) - xhat * sum(dy * xhat))
    let mut dx = Tensor::zeros(dy.n, dy.h, dy.w, c);
    for ((g, xh), out) in dy
        .data
        .chunks_exact(c)
        .zip(cache.xhat.chunks_exact(c))
        .zip(dx.data.chunks_exact_mut(c))
    {
        for k in 0..c {
            out[k] =
                gamma[k] * cache.inv_std[k] / count * (count * g[k] - dbeta[k] - xh[k] * dgamma[k]);
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// `y = x W + b` for `x` viewed as `n x din`.
pub fn fc_fwd<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], dout: usize) -> Result<Tensor<T>> {
    let din = x.sample_len();
    if weight.len() != din * dout {
        return Err(Error::dim("fc weight length", din * dout, weight.len()));
    }
    if bias.len() != dout {
        return Err(Error::dim("fc bias length", dout, bias.len()));
    }
    let mut y = Tensor::zeros(x.n, 1, 1, dout);
    for row in y.data.chunks_exact_mut(dout) {
        row.copy_from_slice(bias);
    }
    gemm(
        x.n,
        din,
        dout,
        &x.data,
        Layout::Normal,
        weight,
        Layout::Normal,
        T::one(),
        &mut y.data,
    );
    Ok(y)
}

/// Returns `(dx, dW, db)`; `dx` has the shape of `x`.
pub fn fc_bwd<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let din = x.sample_len();
    let dout = dy.sample_len();
    if dy.n != x.n {
        return Err(Error::dim("fc upstream batch", x.n, dy.n));
    }
    if weight.len() != din * dout {
        return Err(Error::dim("fc weight length", din * dout, weight.len()));
    }
    let mut dw = vec![T::zero(); din * dout];
    gemm(
        din,
        x.n,
        dout,
        &x.data,
        Layout::Transposed,
        &dy.data,
        Layout::Normal,
        T::zero(),
        &mut dw,
    );
    let mut db = vec![T::zero(); dout];
    for row in dy.data.chunks_exact(dout) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    let mut dx = Tensor::zeros(x.n, x.h, x.w, x.c);
    gemm(
        x.n,
        dout,
        din,
        &dy.data,
        Layout::Normal,
        weight,
        Layout::Transposed,
        T::zero(),
        &mut dx.data,
    );
    Ok((dx, dw, db))
}

pub fn relu_fwd<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in &mut y.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    y
}

/// Gradient through ReLU given its forward output `y` (`y > 0` where the
/// unit was active).
pub fn relu_bwd<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if !y.same_shape(dy) {
        return Err(Error::dim(
            "relu upstream gradient",
            y.data.len(),
            dy.data.len(),
        ));
    }
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&y.data) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    Ok(dx)
}
