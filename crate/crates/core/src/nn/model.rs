//! Motion block and row block.
//!
//! The motion block is a shared three-layer convolutional base followed by
//! two heads (`tx_head`, `rz_head`), each three strided convolutions and two
//! fully connected layers ending in a length-`r` vector. The row block is
//! five stride-1 convolutions producing an `r x r` residual that is added to
//! the row-index matrix `A(i, j) = i`.
//!
//! Every hidden convolution is followed by batch normalization and ReLU; the
//! hidden FC layer by ReLU. Output layers (last FC of each head, last row
//! block convolution) are linear and unnormalized.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::layers::{
    batchnorm_bwd, batchnorm_fwd_infer, batchnorm_fwd_train, conv2d_bwd, conv2d_fwd, conv_out_size,
    fc_bwd, fc_fwd, relu_bwd, relu_fwd, BnCache, ConvShape,
};
use crate::nn::Tensor;
use crate::{Error, Image, MotionCurve, Real, Result, RowMap};

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics momentum: `running = m * running + (1 - m) * batch`.
pub const BN_MOMENTUM: f64 = 0.9;

const BASE_CHANNELS: [usize; 4] = [3, 16, 32, 32];
const HEAD_CHANNELS: [usize; 4] = [32, 32, 16, 8];
const HEAD_STRIDE: usize = 2;
const FC_HIDDEN: usize = 256;
const ROW_CHANNELS: [usize; 6] = [3, 16, 32, 32, 16, 1];

/// One named tensor of the model. Batch-norm running statistics are stored
/// as non-trainable parameters so checkpoints carry them.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub trainable: bool,
}

impl<T> Param<T> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Forward-pass mode of batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics (required for a backward pass).
    Train,
    /// Normalize with the stored running statistics.
    Infer,
}

#[derive(Debug, Clone, Copy)]
struct BnSlots {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    shape: ConvShape,
    weight: usize,
    bias: usize,
    bn: Option<BnSlots>,
    relu: bool,
}

#[derive(Debug, Clone, Copy)]
struct FcLayer {
    din: usize,
    dout: usize,
    weight: usize,
    bias: usize,
    relu: bool,
}

#[derive(Debug, Clone)]
struct Head {
    convs: Vec<ConvLayer>,
    fcs: Vec<FcLayer>,
}

#[derive(Debug, Clone)]
struct Architecture {
    base: Vec<ConvLayer>,
    heads: [Head; 2],
    row: Vec<ConvLayer>,
}

struct Builder<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> Builder<T> {
    fn push(&mut self, name: String, shape: Vec<usize>, value: T, trainable: bool) -> usize {
        let len = shape.iter().product();
        self.params.push(Param {
            name,
            shape,
            data: vec![value; len],
            trainable,
        });
        self.params.len() - 1
    }

    fn conv(&mut self, prefix: &str, k: usize, shape: ConvShape, hidden: bool) -> ConvLayer {
        let weight = self.push(
            format!("{prefix}.conv{k}.weight"),
            vec![3, 3, shape.cin, shape.cout],
            T::zero(),
            true,
        );
        let bias = self.push(
            format!("{prefix}.conv{k}.bias"),
            vec![shape.cout],
            T::zero(),
            true,
        );
        let bn = hidden.then(|| {
            let c = shape.cout;
            BnSlots {
                gamma: self.push(format!("{prefix}.bn{k}.gamma"), vec![c], T::one(), true),
                beta: self.push(format!("{prefix}.bn{k}.beta"), vec![c], T::zero(), true),
                mean: self.push(
                    format!("{prefix}.bn{k}.running_mean"),
                    vec![c],
                    T::zero(),
                    false,
                ),
                var: self.push(
                    format!("{prefix}.bn{k}.running_var"),
                    vec![c],
                    T::one(),
                    false,
                ),
            }
        });
        ConvLayer {
            shape,
            weight,
            bias,
            bn,
            relu: hidden,
        }
    }

    fn fc(&mut self, prefix: &str, k: usize, din: usize, dout: usize, hidden: bool) -> FcLayer {
        FcLayer {
            din,
            dout,
            weight: self.push(
                format!("{prefix}.fc{k}.weight"),
                vec![din, dout],
                T::zero(),
                true,
            ),
            bias: self.push(format!("{prefix}.fc{k}.bias"), vec![dout], T::zero(), true),
            relu: hidden,
        }
    }

    fn head(&mut self, prefix: &str, r: usize) -> Head {
        let mut side = r;
        let convs = (0..3)
            .map(|k| {
                side = conv_out_size(side, HEAD_STRIDE);
                let shape = ConvShape {
                    cin: HEAD_CHANNELS[k],
                    cout: HEAD_CHANNELS[k + 1],
                    stride: HEAD_STRIDE,
                };
                self.conv(prefix, k, shape, true)
            })
            .collect();
        let flat = side * side * HEAD_CHANNELS[3];
        let fcs = vec![
            self.fc(prefix, 0, flat, FC_HIDDEN, true),
            self.fc(prefix, 1, FC_HIDDEN, r, false),
        ];
        Head { convs, fcs }
    }
}

fn build<T: Real>(r: usize) -> (Architecture, Vec<Param<T>>) {
    let mut b = Builder { params: Vec::new() };
    let base = (0..3)
        .map(|k| {
            let shape = ConvShape {
                cin: BASE_CHANNELS[k],
                cout: BASE_CHANNELS[k + 1],
                stride: 1,
            };
            b.conv("base", k, shape, true)
        })
        .collect();
    let heads = [b.head("tx_head", r), b.head("rz_head", r)];
    let row = (0..5)
        .map(|k| {
            let shape = ConvShape {
                cin: ROW_CHANNELS[k],
                cout: ROW_CHANNELS[k + 1],
                stride: 1,
            };
            b.conv("row_block", k, shape, k < 4)
        })
        .collect();
    (Architecture { base, heads, row }, b.params)
}

/// All tensors of the motion block and row block for image size `r`.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    r: usize,
    arch: Architecture,
    params: Vec<Param<T>>,
}

impl<T: Real> PartialEq for ModelParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.r == other.r && self.params == other.params
    }
}

impl<T: Real> ModelParams<T> {
    /// Every weight, bias, batch-norm scale and shift set to zero (running
    /// statistics at mean 0, variance 1).
    pub fn zeros(r: usize) -> Result<Self> {
        if r < 8 {
            return Err(Error::InvalidArgument(
                "model image size must be at least 8",
            ));
        }
        let (arch, mut params) = build::<T>(r);
        for p in params.iter_mut().filter(|p| p.trainable) {
            p.data.fill(T::zero());
        }
        Ok(Self { r, arch, params })
    }

    /// He-uniform weights (`U(-b, b)`, `b = sqrt(6 / fan_in)`) drawn in
    /// parameter order from a seeded ChaCha8 stream; biases and batch-norm
    /// shifts zero, batch-norm scales one.
    pub fn init(r: usize, seed: u64) -> Result<Self> {
        if r < 8 {
            return Err(Error::InvalidArgument(
                "model image size must be at least 8",
            ));
        }
        let (arch, mut params) = build::<T>(r);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in params.iter_mut().filter(|p| p.name.ends_with(".weight")) {
            let fan_in: usize = p.shape[..p.shape.len() - 1].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in &mut p.data {
                *v = T::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(Self { r, arch, params })
    }

    /// Rebuilds a model from named tensors (e.g. a checkpoint). Names,
    /// order and shapes must match the architecture for `r`.
    pub fn from_params(r: usize, params: Vec<Param<T>>) -> Result<Self> {
        let mut model = Self::zeros(r)?;
        if params.len() != model.params.len() {
            return Err(Error::dim(
                "model tensor count",
                model.params.len(),
                params.len(),
            ));
        }
        for (slot, p) in model.params.iter_mut().zip(params) {
            if slot.name != p.name || slot.shape != p.shape || slot.data.len() != p.data.len() {
                return Err(Error::InvalidArgument(
                    "model tensor name or shape mismatch",
                ));
            }
            if p.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("model tensor"));
            }
            slot.data = p.data;
        }
        Ok(model)
    }

    #[inline]
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(Param::len)
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            r: self.r,
            arch: self.arch.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of(v.as_f64())).collect(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }

    /// Folds the batch statistics recorded by a training-mode forward pass
    /// into the running statistics.
    pub fn commit_running_stats(&mut self, cache: &impl BatchStats<T>) {
        let m = T::of(BN_MOMENTUM);
        let one_m = T::one() - m;
        for (slots, bn) in cache.batch_stats() {
            for (run, &b) in self.params[slots.mean].data.iter_mut().zip(&bn.mean) {
                *run = m * *run + one_m * b;
            }
            for (run, &b) in self.params[slots.var].data.iter_mut().zip(&bn.var) {
                *run = m * *run + one_m * b;
            }
        }
    }

    fn data(&self, idx: usize) -> &[T] {
        &self.params[idx].data
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        x.check_shape([x.n, self.r, self.r, 3], "network input")?;
        if x.n == 0 {
            return Err(Error::InvalidArgument("empty batch"));
        }
        Ok(())
    }
}

/// Gradients aligned with [`ModelParams::params`]; non-trainable groups stay
/// zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub groups: Vec<Vec<T>>,
}

impl<T: Real> ModelGrads<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        Self {
            groups: params
                .params
                .iter()
                .map(|p| vec![T::zero(); p.len()])
                .collect(),
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.groups.iter_mut().flatten() {
            *g *= s;
        }
    }

    /// Name of the first group containing a non-finite entry.
    pub fn first_non_finite<'a>(&self, params: &'a ModelParams<T>) -> Option<&'a str> {
        self.groups
            .iter()
            .zip(&params.params)
            .find(|(g, _)| g.iter().any(|v| !v.is_finite()))
            .map(|(_, p)| p.name.as_str())
    }

    fn add(&mut self, idx: usize, g: &[T]) {
        for (a, &b) in self.groups[idx].iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// Activations recorded by one convolution layer.
#[derive(Debug, Clone)]
struct ConvRecord<T> {
    input: Tensor<T>,
    bn: Option<BnCache<T>>,
    output: Tensor<T>,
}

#[derive(Debug, Clone)]
struct FcRecord<T> {
    input: Tensor<T>,
    output: Tensor<T>,
}

#[derive(Debug, Clone)]
struct HeadRecord<T> {
    convs: Vec<ConvRecord<T>>,
    fcs: Vec<FcRecord<T>>,
}

/// Cached activations of [`motion_block_fwd`].
#[derive(Debug, Clone)]
pub struct MotionCache<T> {
    mode: Mode,
    base: Vec<ConvRecord<T>>,
    heads: Vec<HeadRecord<T>>,
}

/// Cached activations of [`row_block_fwd`].
#[derive(Debug, Clone)]
pub struct RowCache<T> {
    mode: Mode,
    convs: Vec<ConvRecord<T>>,
}

fn push_pattern<T: Real>(out: &mut Vec<bool>, t: &Tensor<T>) {
    out.extend(t.data.iter().map(|v| *v > T::zero()));
}

impl<T: Real> MotionCache<T> {
    /// On/off state of every ReLU unit, in forward order. Finite-difference
    /// probes use it to detect when a perturbation crossed a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for rec in self
            .base
            .iter()
            .chain(self.heads.iter().flat_map(|h| h.convs.iter()))
        {
            push_pattern(&mut out, &rec.output);
        }
        for head in &self.heads {
            if let Some((_, hidden)) = head.fcs.split_last() {
                for rec in hidden {
                    push_pattern(&mut out, &rec.output);
                }
            }
        }
        out
    }
}

impl<T: Real> RowCache<T> {
    /// On/off state of every ReLU unit, in forward order.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        if let Some((_, hidden)) = self.convs.split_last() {
            for rec in hidden {
                push_pattern(&mut out, &rec.output);
            }
        }
        out
    }
}

/// Source of batch statistics for [`ModelParams::commit_running_stats`].
pub trait BatchStats<T> {
    #[doc(hidden)]
    fn batch_stats(&self) -> Vec<(BnSlotsRef, &BnCache<T>)>;
}

/// Opaque handle to a batch-norm layer's running-statistic slots.
#[derive(Debug, Clone, Copy)]
pub struct BnSlotsRef {
    mean: usize,
    var: usize,
}

fn conv_stats<'a, T>(
    layers: &[ConvLayer],
    records: &'a [ConvRecord<T>],
    out: &mut Vec<(BnSlotsRef, &'a BnCache<T>)>,
) {
    for (l, rec) in layers.iter().zip(records) {
        if let (Some(s), Some(bn)) = (l.bn, rec.bn.as_ref()) {
            out.push((
                BnSlotsRef {
                    mean: s.mean,
                    var: s.var,
                },
                bn,
            ));
        }
    }
}

/// Pairs a cache with the layer table it was recorded against.
pub struct WithParams<'a, T, C> {
    params: &'a ModelParams<T>,
    cache: &'a C,
}

impl<T: Real> MotionCache<T> {
    pub fn stats<'a>(&'a self, params: &'a ModelParams<T>) -> WithParams<'a, T, Self> {
        WithParams {
            params,
            cache: self,
        }
    }
}

impl<T: Real> RowCache<T> {
    pub fn stats<'a>(&'a self, params: &'a ModelParams<T>) -> WithParams<'a, T, Self> {
        WithParams {
            params,
            cache: self,
        }
    }
}

impl<T: Real> BatchStats<T> for WithParams<'_, T, MotionCache<T>> {
    fn batch_stats(&self) -> Vec<(BnSlotsRef, &BnCache<T>)> {
        let arch = &self.params.arch;
        let mut out = Vec::new();
        conv_stats(&arch.base, &self.cache.base, &mut out);
        for (head, rec) in arch.heads.iter().zip(&self.cache.heads) {
            conv_stats(&head.convs, &rec.convs, &mut out);
        }
        out
    }
}

impl<T: Real> BatchStats<T> for WithParams<'_, T, RowCache<T>> {
    fn batch_stats(&self) -> Vec<(BnSlotsRef, &BnCache<T>)> {
        let mut out = Vec::new();
        conv_stats(&self.params.arch.row, &self.cache.convs, &mut out);
        out
    }
}

fn conv_layer_fwd<T: Real>(
    p: &ModelParams<T>,
    l: &ConvLayer,
    x: Tensor<T>,
    mode: Mode,
) -> Result<ConvRecord<T>> {
    let z = conv2d_fwd(&x, p.data(l.weight), p.data(l.bias), l.shape)?;
    let eps = T::of(BN_EPS);
    let (z, bn) = match (l.bn, mode) {
        (None, _) => (z, None),
        (Some(s), Mode::Train) => {
            let (y, cache) = batchnorm_fwd_train(&z, p.data(s.gamma), p.data(s.beta), eps)?;
            (y, Some(cache))
        }
        (Some(s), Mode::Infer) => {
            let y = batchnorm_fwd_infer(
                &z,
                p.data(s.gamma),
                p.data(s.beta),
                p.data(s.mean),
                p.data(s.var),
                eps,
            )?;
            (y, None)
        }
    };
    let output = if l.relu { relu_fwd(&z) } else { z };
    Ok(ConvRecord {
        input: x,
        bn,
        output,
    })
}

/// Backpropagates `dy` (gradient w.r.t. the layer output) through one
/// convolution layer; returns the input gradient when requested.
fn conv_layer_bwd<T: Real>(
    p: &ModelParams<T>,
    l: &ConvLayer,
    rec: &ConvRecord<T>,
    dy: Tensor<T>,
    grads: &mut ModelGrads<T>,
    need_dx: bool,
) -> Result<Option<Tensor<T>>> {
    let dy = if l.relu {
        relu_bwd(&rec.output, &dy)?
    } else {
        dy
    };
    let dz = match (l.bn, rec.bn.as_ref()) {
        (None, _) => dy,
        (Some(s), Some(cache)) => {
            let (dz, dgamma, dbeta) = batchnorm_bwd(&dy, cache, p.data(s.gamma))?;
            grads.add(s.gamma, &dgamma);
            grads.add(s.beta, &dbeta);
            dz
        }
        (Some(_), None) => return Err(Error::MissingCache),
    };
    let g = conv2d_bwd(&rec.input, p.data(l.weight), &dz, l.shape, need_dx)?;
    grads.add(l.weight, &g.dw);
    grads.add(l.bias, &g.db);
    Ok(g.dx)
}

fn conv_stack_fwd<T: Real>(
    p: &ModelParams<T>,
    layers: &[ConvLayer],
    x: Tensor<T>,
    mode: Mode,
) -> Result<Vec<ConvRecord<T>>> {
    let mut records: Vec<ConvRecord<T>> = Vec::with_capacity(layers.len());
    let mut cur = x;
    for l in layers {
        let rec = conv_layer_fwd(p, l, cur, mode)?;
        cur = rec.output.clone();
        records.push(rec);
    }
    Ok(records)
}

fn conv_stack_bwd<T: Real>(
    p: &ModelParams<T>,
    layers: &[ConvLayer],
    records: &[ConvRecord<T>],
    dy: Tensor<T>,
    grads: &mut ModelGrads<T>,
    need_dx: bool,
) -> Result<Option<Tensor<T>>> {
    let mut d = Some(dy);
    for (k, (l, rec)) in layers.iter().zip(records).enumerate().rev() {
        let dy = d.take().ok_or(Error::MissingCache)?;
        d = conv_layer_bwd(p, l, rec, dy, grads, k > 0 || need_dx)?;
    }
    Ok(d)
}

/// Per-row motion predicted for a batch: `tx` and `rz` are `n x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionOutput<T> {
    pub tx: Tensor<T>,
    pub rz: Tensor<T>,
}

impl<T: Real> MotionOutput<T> {
    /// The `b`-th sample as a [`MotionCurve`].
    pub fn curve(&self, b: usize) -> Result<MotionCurve<T>> {
        MotionCurve::new(self.tx.sample(b).to_vec(), self.rz.sample(b).to_vec())
    }
}

/// Motion block on a batch of `r x r x 3` images. Outputs are raw
/// (unbounded) pixels and radians.
pub fn motion_block_fwd<T: Real>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    mode: Mode,
) -> Result<(MotionOutput<T>, MotionCache<T>)> {
    params.check_input(x)?;
    let arch = &params.arch;
    let base = conv_stack_fwd(params, &arch.base, x.clone(), mode)?;
    let features = &base.last().ok_or(Error::MissingCache)?.output;
    let mut heads = Vec::with_capacity(2);
    let mut outs = Vec::with_capacity(2);
    for head in &arch.heads {
        let convs = conv_stack_fwd(params, &head.convs, features.clone(), mode)?;
        let mut cur = convs.last().ok_or(Error::MissingCache)?.output.clone();
        let mut fcs = Vec::with_capacity(head.fcs.len());
        for l in &head.fcs {
            let z = fc_fwd(&cur, params.data(l.weight), params.data(l.bias), l.dout)?;
            let output = if l.relu { relu_fwd(&z) } else { z };
            fcs.push(FcRecord {
                input: cur,
                output: output.clone(),
            });
            cur = output;
        }
        outs.push(cur);
        heads.push(HeadRecord { convs, fcs });
    }
    let rz = outs.pop().ok_or(Error::MissingCache)?;
    let tx = outs.pop().ok_or(Error::MissingCache)?;
    Ok((MotionOutput { tx, rz }, MotionCache { mode, base, heads }))
}

/// Accumulates parameter gradients of the motion block given gradients
/// w.r.t. its `tx` and `rz` outputs (each `n x r`).
pub fn motion_block_bwd<T: Real>(
    params: &ModelParams<T>,
    cache: &MotionCache<T>,
    d_tx: &Tensor<T>,
    d_rz: &Tensor<T>,
    grads: &mut ModelGrads<T>,
) -> Result<()> {
    if cache.mode != Mode::Train {
        return Err(Error::InvalidArgument(
            "backward pass needs a training-mode forward",
        ));
    }
    let arch = &params.arch;
    let mut d_features: Option<Tensor<T>> = None;
    for ((head, rec), d_out) in arch.heads.iter().zip(&cache.heads).zip([d_tx, d_rz]) {
        let last = rec.fcs.last().ok_or(Error::MissingCache)?;
        d_out.check_shape(last.output.shape(), "motion output gradient")?;
        let mut d = d_out.clone();
        for (l, fr) in head.fcs.iter().zip(&rec.fcs).rev() {
            let dz = if l.relu { relu_bwd(&fr.output, &d)? } else { d };
            let (dx, dw, db) = fc_bwd(&fr.input, params.data(l.weight), &dz)?;
            grads.add(l.weight, &dw);
            grads.add(l.bias, &db);
            debug_assert_eq!(dx.sample_len(), l.din);
            d = dx;
        }
        let df = conv_stack_bwd(params, &head.convs, &rec.convs, d, grads, true)?
            .ok_or(Error::MissingCache)?;
        match d_features.as_mut() {
            None => d_features = Some(df),
            Some(acc) => {
                for (a, b) in acc.data.iter_mut().zip(&df.data) {
                    *a += *b;
                }
            }
        }
    }
    let d = d_features.ok_or(Error::MissingCache)?;
    conv_stack_bwd(params, &arch.base, &cache.base, d, grads, false)?;
    Ok(())
}

/// Row block on a batch of `r x r x 3` images; returns the `n x r x r x 1`
/// residual that is added to `A(i, j) = i`.
pub fn row_block_fwd<T: Real>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, RowCache<T>)> {
    params.check_input(x)?;
    let convs = conv_stack_fwd(params, &params.arch.row, x.clone(), mode)?;
    let out = convs.last().ok_or(Error::MissingCache)?.output.clone();
    Ok((out, RowCache { mode, convs }))
}

/// Accumulates parameter gradients of the row block given the gradient
/// w.r.t. its residual output (equal to the gradient w.r.t. the row map).
pub fn row_block_bwd<T: Real>(
    params: &ModelParams<T>,
    cache: &RowCache<T>,
    d_residual: &Tensor<T>,
    grads: &mut ModelGrads<T>,
) -> Result<()> {
    if cache.mode != Mode::Train {
        return Err(Error::InvalidArgument(
            "backward pass needs a training-mode forward",
        ));
    }
    let last = cache.convs.last().ok_or(Error::MissingCache)?;
    d_residual.check_shape(last.output.shape(), "row block output gradient")?;
    conv_stack_bwd(
        params,
        &params.arch.row,
        &cache.convs,
        d_residual.clone(),
        grads,
        false,
    )?;
    Ok(())
}

/// Row maps `A + residual` for every sample of a row block output.
pub fn rowmaps_from_residual<T: Real>(residual: &Tensor<T>) -> Result<Vec<RowMap<T>>> {
    if residual.h != residual.w || residual.c != 1 {
        return Err(Error::dim("row block residual channels", 1, residual.c));
    }
    (0..residual.n)
        .map(|b| RowMap::from_residual(residual.h, residual.sample(b)))
        .collect()
}

/// Inference-mode motion estimate for one image.
pub fn predict_motion<T: Real>(params: &ModelParams<T>, img: &Image<T>) -> Result<MotionCurve<T>> {
    let x = image_input(params, img)?;
    let (out, _) = motion_block_fwd(params, &x, Mode::Infer)?;
    out.curve(0)
}

/// Inference-mode row map for one image.
pub fn predict_rowmap<T: Real>(params: &ModelParams<T>, img: &Image<T>) -> Result<RowMap<T>> {
    let x = image_input(params, img)?;
    let (res, _) = row_block_fwd(params, &x, Mode::Infer)?;
    RowMap::from_residual(params.r, &res.data)
}

fn image_input<T: Real>(params: &ModelParams<T>, img: &Image<T>) -> Result<Tensor<T>> {
    let r = img.side()?;
    if r != params.r {
        return Err(Error::dim("image size", params.r, r));
    }
    if img.channels() != 3 {
        return Err(Error::dim("image channels", 3, img.channels()));
    }
    Tensor::from_images(&[img])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::textured_image;

    fn batch(r: usize, n: usize) -> Tensor<f64> {
        let imgs: Vec<Image<f64>> = (0..n).map(|s| textured_image(s as u64, r, 3)).collect();
        let refs: Vec<&Image<f64>> = imgs.iter().collect();
        Tensor::from_images(&refs).unwrap()
    }

    #[test]
    fn zero_params_give_zero_motion_and_identity_rowmap() {
        let p = ModelParams::<f64>::zeros(16).unwrap();
        let img = textured_image(3, 16, 3);
        let m = predict_motion(&p, &img).unwrap();
        assert_eq!(m, MotionCurve::zeros(16));
        assert_eq!(predict_rowmap(&p, &img).unwrap(), RowMap::identity(16));
        let (out, _) = motion_block_fwd(&p, &batch(16, 2), Mode::Train).unwrap();
        assert!(out.tx.data.iter().chain(&out.rz.data).all(|&v| v == 0.0));
    }

    #[test]
    fn output_shapes() {
        for r in [32, 64] {
            let p = ModelParams::<f32>::init(r, 1).unwrap();
            let x = batch(r, 1).cast::<f32>();
            let (res, _) = row_block_fwd(&p, &x, Mode::Train).unwrap();
            assert_eq!(res.shape(), [1, r, r, 1]);
            let (m, _) = motion_block_fwd(&p, &x, Mode::Infer).unwrap();
            assert_eq!(m.tx.shape(), [1, 1, 1, r]);
            assert_eq!(m.rz.shape(), [1, 1, 1, r]);
            let fc = p.param("tx_head.fc1.weight").unwrap();
            assert_eq!(fc.shape, vec![FC_HIDDEN, r]);
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::<f32>::init(16, 9).unwrap();
        let b = ModelParams::<f32>::init(16, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ModelParams::<f32>::init(16, 10).unwrap());
        let x = batch(16, 1).cast::<f32>();
        let (ma, _) = motion_block_fwd(&a, &x, Mode::Train).unwrap();
        let (mb, _) = motion_block_fwd(&b, &x, Mode::Train).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn rejects_wrong_input() {
        let p = ModelParams::<f64>::zeros(16).unwrap();
        assert!(motion_block_fwd(&p, &batch(32, 1), Mode::Train).is_err());
        assert!(predict_rowmap(&p, &textured_image(1, 16, 1)).is_err());
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut p = ModelParams::<f64>::init(16, 2).unwrap();
        let (_, cache) = row_block_fwd(&p, &batch(16, 2), Mode::Train).unwrap();
        let before = p.param("row_block.bn0.running_var").unwrap().data.clone();
        let q = p.clone();
        p.commit_running_stats(&cache.stats(&q));
        let after = &p.param("row_block.bn0.running_var").unwrap().data;
        assert_ne!(&before, after);
        // momentum 0.9 from the initial value 1
        let m = &cache.convs[0].bn.as_ref().unwrap().var;
        for (a, v) in after.iter().zip(m) {
            assert!((a - (0.9 + 0.1 * v)).abs() < 1e-12);
        }
    }

    #[test]
    fn from_params_roundtrip_and_mismatch() {
        let p = ModelParams::<f32>::init(16, 4).unwrap();
        let q = ModelParams::from_params(16, p.params().to_vec()).unwrap();
        assert_eq!(p, q);
        assert!(ModelParams::from_params(32, p.params().to_vec()).is_err());
    }
}
