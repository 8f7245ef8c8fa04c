//! Per-row camera motion: translation `t_x` (pixels) and in-plane rotation
//! `r_z` (radians) for every scanline, plus the row-motion maps.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, PixelCoord, Real, Result};

/// One `(t_x, r_z)` pair per image row.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionCurve<T = f64> {
    tx: Vec<T>,
    rz: Vec<T>,
}

impl<T: Real> MotionCurve<T> {
    pub fn new(tx: Vec<T>, rz: Vec<T>) -> Result<Self> {
        if tx.len() != rz.len() {
            return Err(Error::dim("motion curve r_z length", tx.len(), rz.len()));
        }
        if tx.is_empty() {
            return Err(Error::InvalidArgument(
                "motion curve needs at least one row",
            ));
        }
        if tx.iter().chain(&rz).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("motion curve"));
        }
        Ok(Self { tx, rz })
    }

    pub fn zeros(rows: usize) -> Self {
        Self {
            tx: vec![T::zero(); rows],
            rz: vec![T::zero(); rows],
        }
    }

    pub fn constant(rows: usize, tx: T, rz: T) -> Self {
        Self {
            tx: vec![tx; rows],
            rz: vec![rz; rows],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.tx.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.tx.is_empty()
    }

    #[inline]
    pub fn tx(&self) -> &[T] {
        &self.tx
    }

    #[inline]
    pub fn rz(&self) -> &[T] {
        &self.rz
    }

    pub fn into_parts(self) -> (Vec<T>, Vec<T>) {
        (self.tx, self.rz)
    }

    /// Motion at fractional row `x` (array index), see [`sample_motion_at`].
    #[inline]
    pub fn at(&self, x: T) -> (T, T) {
        sample_motion_at(self, x)
    }

    pub fn cast<U: Real>(&self) -> MotionCurve<U> {
        MotionCurve {
            tx: self.tx.iter().map(|v| U::of(v.as_f64())).collect(),
            rz: self.rz.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Rows `start..start + len` of this curve.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::dim("motion rows", self.len(), start + len));
        }
        Self::new(
            self.tx[start..start + len].to_vec(),
            self.rz[start..start + len].to_vec(),
        )
    }

    pub(crate) fn check_rows(&self, rows: usize) -> Result<()> {
        if self.len() != rows {
            return Err(Error::dim("motion curve rows", rows, self.len()));
        }
        Ok(())
    }
}

/// Linear-interpolation weights of a fractional row lookup.
///
/// The value at `x` is `(1 - w) * curve[lo] + w * curve[hi]`. `interior` is
/// false when `x` was clamped to an end row; the lookup is then constant in
/// `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowLookup<T> {
    pub lo: usize,
    pub hi: usize,
    pub w: T,
    pub interior: bool,
}

impl<T: Real> RowLookup<T> {
    pub fn new(rows: usize, x: T) -> Self {
        let last = rows - 1;
        if x.is_nan() || x <= T::zero() {
            return Self {
                lo: 0,
                hi: 0,
                w: T::zero(),
                interior: false,
            };
        }
        if x >= T::of(last as f64) {
            return Self {
                lo: last,
                hi: last,
                w: T::zero(),
                interior: false,
            };
        }
        let f = x.floor();
        let lo = f.to_usize().unwrap_or(0).min(last);
        let hi = (lo + 1).min(last);
        Self {
            lo,
            hi,
            w: x - f,
            interior: true,
        }
    }

    #[inline]
    pub fn eval(&self, values: &[T]) -> T {
        let a = values[self.lo];
        if self.w == T::zero() {
            a
        } else {
            a + (values[self.hi] - a) * self.w
        }
    }

    /// d value / d x.
    #[inline]
    pub fn slope(&self, values: &[T]) -> T {
        if self.interior {
            values[self.hi] - values[self.lo]
        } else {
            T::zero()
        }
    }
}

/// `(t_x, r_z)` at fractional row `x`: linear between adjacent rows, clamped
/// to the end rows outside `[0, r - 1]`.
pub fn sample_motion_at<T: Real>(curve: &MotionCurve<T>, x: T) -> (T, T) {
    let l = RowLookup::new(curve.len(), x);
    (l.eval(&curve.tx), l.eval(&curve.rz))
}

/// RS coordinate of a GS point seen by a row with motion `(t_x, r_z)`.
#[inline]
pub fn row_motion_forward<T: Real>(p_gs: PixelCoord<T>, tx: T, rz: T) -> PixelCoord<T> {
    let (s, c) = rz.sin_cos();
    PixelCoord {
        x: p_gs.x * c - p_gs.y * s + tx,
        y: p_gs.x * s + p_gs.y * c,
    }
}

/// GS coordinate imaged at RS point `p_rs` by a row with motion `(t_x, r_z)`;
/// exact inverse of [`row_motion_forward`].
#[inline]
pub fn row_motion_inverse<T: Real>(p_rs: PixelCoord<T>, tx: T, rz: T) -> PixelCoord<T> {
    let (s, c) = rz.sin_cos();
    let dx = p_rs.x - tx;
    PixelCoord {
        x: dx * c + p_rs.y * s,
        y: -dx * s + p_rs.y * c,
    }
}
