use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Image, Real, Result};

/// Batch of feature maps in `(batch, height, width, channels)` order.
///
/// Fully connected activations use `height = width = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(n: usize, h: usize, w: usize, c: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * h * w * c {
            return Err(Error::dim("tensor data length", n * h * w * c, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data"));
        }
        Ok(Self { n, h, w, c, data })
    }

    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![T::zero(); n * h * w * c],
        }
    }

    /// `n x features` matrix.
    pub fn matrix(n: usize, features: usize, data: Vec<T>) -> Result<Self> {
        Self::new(n, 1, 1, features, data)
    }

    /// Stacks images of identical shape into a batch.
    pub fn from_images(images: &[&Image<T>]) -> Result<Self> {
        let first = images
            .first()
            .ok_or(Error::InvalidArgument("empty batch"))?;
        let (h, w, c) = (first.height(), first.width(), first.channels());
        let mut data = Vec::with_capacity(images.len() * h * w * c);
        for img in images {
            first.check_same_shape(img, "batch image")?;
            data.extend_from_slice(img.data());
        }
        Ok(Self {
            n: images.len(),
            h,
            w,
            c,
            data,
        })
    }

    #[inline]
    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    #[inline]
    pub fn sample(&self, b: usize) -> &[T] {
        let l = self.sample_len();
        &self.data[b * l..(b + 1) * l]
    }

    #[inline]
    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let l = self.sample_len();
        &mut self.data[b * l..(b + 1) * l]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_shape(&self, shape: [usize; 4], what: &'static str) -> Result<()> {
        for (a, b) in self.shape().iter().zip(shape) {
            if *a != b {
                return Err(Error::dim(what, b, *a));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            n: self.n,
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
