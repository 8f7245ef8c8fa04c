//! Procedural test scenes.
//!
//! Blocky, building-like content: a smooth shaded background, soft-edged
//! facades and window grids. Intensities stay in `[1/255, 1]` so no pixel
//! is mistaken for an invalid (all-zero) one.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Image, Real};

const FLOOR: f64 = 1.0 / 255.0;

struct Facade {
    top: f64,
    left: f64,
    bottom: f64,
    right: f64,
    color: [f64; 3],
    window: Option<(f64, f64, [f64; 3])>,
}

fn wrap(v: f64, period: f64) -> f64 {
    v - period * (v / period).floor()
}

/// Smoothstep ramp of half-width `soft` around zero.
fn ramp(d: f64, soft: f64) -> f64 {
    let t = ((d / soft) * 0.5 + 0.5).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Seeded `size x size` scene with `channels` (1 or 3) channels.
pub fn textured_image<T: Real>(seed: u64, size: usize, channels: usize) -> Image<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a6e);
    let n = size as f64;
    let soft = (n / 64.0).max(1.0) * 1.5;

    let base: [f64; 3] = core::array::from_fn(|_| rng.gen_range(0.25..0.75));
    let tilt = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let f = rng.gen_range(1.0..3.0) * core::f64::consts::TAU / n;
            let a = rng.gen_range(0.0..core::f64::consts::TAU);
            (
                f * a.cos(),
                f * a.sin(),
                rng.gen_range(0.0..6.3),
                rng.gen_range(0.03..0.08),
            )
        })
        .collect();

    let count = rng.gen_range(5..9);
    let facades: Vec<Facade> = (0..count)
        .map(|_| {
            let w = rng.gen_range(0.15..0.45) * n;
            let h = rng.gen_range(0.25..0.8) * n;
            let left = rng.gen_range(-0.1..0.9) * n;
            let bottom = rng.gen_range(0.6..1.1) * n;
            let color = core::array::from_fn(|_| rng.gen_range(0.1..0.95));
            let window = rng.gen_bool(0.6).then(|| {
                let pitch = rng.gen_range(6.0..12.0) * (n / 64.0).max(1.0);
                (
                    pitch,
                    pitch * rng.gen_range(0.35..0.6),
                    core::array::from_fn(|_| rng.gen_range(0.05..0.9)),
                )
            });
            Facade {
                top: bottom - h,
                left,
                bottom,
                right: left + w,
                color,
                window,
            }
        })
        .collect();

    Image::from_fn(size, size, channels, |i, j, k| {
        let (x, y) = (i as f64, j as f64);
        let ch = if channels == 3 { k } else { 1 };
        let mut v = base[ch] + tilt.0 * (x / n - 0.5) + tilt.1 * (y / n - 0.5);
        for &(fx, fy, ph, amp) in &waves {
            v += amp * (fx * x + fy * y + ph).sin();
        }
        for f in &facades {
            let inside = ramp(x - f.top, soft)
                * ramp(f.bottom - x, soft)
                * ramp(y - f.left, soft)
                * ramp(f.right - y, soft);
            if inside <= 0.0 {
                continue;
            }
            let mut c = f.color[ch];
            if let Some((pitch, size, wc)) = f.window {
                let px = wrap(x - f.top, pitch);
                let py = wrap(y - f.left, pitch);
                let w = ramp(size - px, soft * 0.7)
                    * ramp(px - 1.0, soft * 0.7)
                    * ramp(size - py, soft * 0.7)
                    * ramp(py - 1.0, soft * 0.7);
                c = c * (1.0 - w) + wc[ch] * w;
            }
            v = v * (1.0 - inside) + c * inside;
        }
        T::of(v.clamp(FLOOR, 1.0))
    })
}
