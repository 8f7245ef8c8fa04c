//! Bilinear resampling with zero fill outside the grid.
//!
//! Sampling positions here are array indices `(u, v)` (row, column), not
//! centered coordinates; [`bilinear_sample`] is the centered-coordinate entry
//! point.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Image, PixelCoord, Real};

/// Bilinear value at centered coordinate `p`, one entry per channel.
///
/// Neighbours that fall outside the image contribute zero, so a point whose
/// four neighbours are all outside samples to zero.
pub fn bilinear_sample<T: Real>(img: &Image<T>, p: PixelCoord<T>) -> Vec<T> {
    let (u, v) = p.to_index(img.height(), img.width());
    let mut out = vec![T::zero(); img.channels()];
    sample_into(img, u, v, &mut out);
    out
}

/// Integer corner and fractional offsets of a sampling position.
#[derive(Debug, Clone, Copy)]
struct Footprint<T> {
    i0: isize,
    j0: isize,
    a: T,
    b: T,
}

#[inline]
fn footprint<T: Real>(u: T, v: T) -> Footprint<T> {
    let fu = u.floor();
    let fv = v.floor();
    Footprint {
        i0: fu.to_isize().unwrap_or(isize::MIN / 2),
        j0: fv.to_isize().unwrap_or(isize::MIN / 2),
        a: u - fu,
        b: v - fv,
    }
}

#[inline]
fn texel<T: Real>(img: &Image<T>, i: isize, j: isize) -> Option<&[T]> {
    if i < 0 || j < 0 || i as usize >= img.height() || j as usize >= img.width() {
        None
    } else {
        Some(img.pixel(i as usize, j as usize))
    }
}

/// Writes the bilinear value at index position `(u, v)` into `out`
/// (`out.len() == channels`).
#[inline]
pub fn sample_into<T: Real>(img: &Image<T>, u: T, v: T, out: &mut [T]) {
    out.fill(T::zero());
    if !(u.is_finite() && v.is_finite()) {
        return;
    }
    let f = footprint(u, v);
    let one = T::one();
    let corners = [
        (0, 0, (one - f.a) * (one - f.b)),
        (0, 1, (one - f.a) * f.b),
        (1, 0, f.a * (one - f.b)),
        (1, 1, f.a * f.b),
    ];
    for (di, dj, w) in corners {
        if let Some(px) = texel(img, f.i0 + di, f.j0 + dj) {
            for (o, &p) in out.iter_mut().zip(px) {
                *o += w * p;
            }
        }
    }
}

/// Bilinear value plus its partial derivatives with respect to `u` and `v`.
///
/// The derivative is the one-sided (right) derivative on lattice lines, where
/// bilinear interpolation has a kink.
#[inline]
pub fn sample_with_grad<T: Real>(
    img: &Image<T>,
    u: T,
    v: T,
    out: &mut [T],
    d_u: &mut [T],
    d_v: &mut [T],
) {
    out.fill(T::zero());
    d_u.fill(T::zero());
    d_v.fill(T::zero());
    if !(u.is_finite() && v.is_finite()) {
        return;
    }
    let f = footprint(u, v);
    let one = T::one();
    // (di, dj, weight, d weight / du, d weight / dv)
    let corners = [
        (0, 0, (one - f.a) * (one - f.b), -(one - f.b), -(one - f.a)),
        (0, 1, (one - f.a) * f.b, -f.b, one - f.a),
        (1, 0, f.a * (one - f.b), one - f.b, -f.a),
        (1, 1, f.a * f.b, f.b, f.a),
    ];
    for (di, dj, w, wu, wv) in corners {
        if let Some(px) = texel(img, f.i0 + di, f.j0 + dj) {
            for (k, &p) in px.iter().enumerate() {
                out[k] += w * p;
                d_u[k] += wu * p;
                d_v[k] += wv * p;
            }
        }
    }
}
