//! Dense image carrier, centered pixel coordinates and visibility masks.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result};

/// Row-major `height x width x channels` intensity grid.
///
/// Used for GS, RS, rectified and regenerated images as well as for derived
/// planes such as Sobel responses (which may be negative). Every entry is
/// finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T = f32> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("image needs at least one channel"));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::dim("image data length", expected, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![T::zero(); height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds an image from `f(i, j, k)`; panics if `f` returns a non-finite value.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for k in 0..channels {
                    let v = f(i, j, k);
                    assert!(v.is_finite(), "non-finite intensity at ({i}, {j}, {k})");
                    data.push(v);
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers must keep entries finite.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    /// Side length of a square image.
    pub fn side(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.height)
        } else {
            Err(Error::NotSquare {
                height: self.height,
                width: self.width,
            })
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[(i * self.width + j) * self.channels + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        self.data[(i * self.width + j) * self.channels + k] = v;
    }

    #[inline]
    pub fn pixel(&self, i: usize, j: usize) -> &[T] {
        let o = (i * self.width + j) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, i: usize, j: usize) -> &mut [T] {
        let o = (i * self.width + j) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Center of the array in index units, `((h - 1) / 2, (w - 1) / 2)`.
    #[inline]
    pub fn center(&self) -> (T, T) {
        (
            T::of((self.height as f64 - 1.0) * 0.5),
            T::of((self.width as f64 - 1.0) * 0.5),
        )
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &Self, what: &'static str) -> Result<()> {
        if self.height != other.height {
            return Err(Error::dim(what, self.height, other.height));
        }
        if self.width != other.width {
            return Err(Error::dim(what, self.width, other.width));
        }
        if self.channels != other.channels {
            return Err(Error::dim(what, self.channels, other.channels));
        }
        Ok(())
    }

    /// Crop `size x size` pixels starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height {
            return Err(Error::dim("crop rows", self.height, top + height));
        }
        if left + width > self.width {
            return Err(Error::dim("crop columns", self.width, left + width));
        }
        Ok(Self::from_fn(height, width, self.channels, |i, j, k| {
            self.get(top + i, left + j, k)
        }))
    }

    /// Largest centered square crop of side `size`.
    pub fn center_crop(&self, size: usize) -> Result<Self> {
        if size > self.height || size > self.width {
            return Err(Error::ImageTooSmall {
                required: size,
                found: self.height.min(self.width),
            });
        }
        self.crop(
            (self.height - size) / 2,
            (self.width - size) / 2,
            size,
            size,
        )
    }

    /// Replicates a one-channel image into three channels; three-channel
    /// images are returned unchanged.
    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        Self::from_fn(self.height, self.width, 3, |i, j, _| self.get(i, j, 0))
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Multiplies each pixel (all channels) by the mask value.
    pub fn masked(&self, mask: &VisibilityMask) -> Result<Self> {
        mask.check_shape(self.height, self.width)?;
        let mut out = self.clone();
        let c = self.channels;
        for (p, &m) in mask.data().iter().enumerate() {
            if !m {
                out.data[p * c..(p + 1) * c].fill(T::zero());
            }
        }
        Ok(out)
    }

    /// Visibility mask of this image: `0` where the channel sum is exactly zero.
    pub fn visibility(&self) -> VisibilityMask {
        VisibilityMask::from_image(self)
    }
}

/// Centered continuous coordinate: `x` along the scanline (row) axis, `y`
/// along the row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord<T = f64> {
    pub x: T,
    pub y: T,
}

impl<T: Real> PixelCoord<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    /// Coordinate of array index `(i, j)` on an `h x w` grid.
    #[inline]
    pub fn from_index(i: T, j: T, height: usize, width: usize) -> Self {
        let (ci, cj) = half_extent::<T>(height, width);
        Self {
            x: i - ci,
            y: j - cj,
        }
    }

    /// Array index `(i, j)` of this coordinate on an `h x w` grid.
    #[inline]
    pub fn to_index(self, height: usize, width: usize) -> (T, T) {
        let (ci, cj) = half_extent::<T>(height, width);
        (self.x + ci, self.y + cj)
    }
}

#[inline]
pub(crate) fn half_extent<T: Real>(height: usize, width: usize) -> (T, T) {
    (
        T::of((height as f64 - 1.0) * 0.5),
        T::of((width as f64 - 1.0) * 0.5),
    )
}

/// Per-pixel 0/1 indicator, stored as `bool`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl VisibilityMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim("mask data length", height * width, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    /// `false` exactly where the channel sum of `img` is zero.
    pub fn from_image<T: Real>(img: &Image<T>) -> Self {
        let c = img.channels();
        let data = img
            .data()
            .chunks_exact(c)
            .map(|px| px.iter().copied().sum::<T>() != T::zero())
            .collect();
        Self {
            height: img.height(),
            width: img.width(),
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.width + j] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        other.check_shape(self.height, self.width)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument("mask crop out of range"));
        }
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(self.get(top + i, left + j));
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub(crate) fn check_shape(&self, height: usize, width: usize) -> Result<()> {
        if self.height != height {
            return Err(Error::dim("mask rows", height, self.height));
        }
        if self.width != width {
            return Err(Error::dim("mask columns", width, self.width));
        }
        Ok(())
    }
}
