//! GS/RS training pair synthesis.
//!
//! A clean image is center-cropped to `R = r + 2 pad`, distorted with a
//! random trajectory sampled over the `R` padded rows, and both images are
//! center-cropped back to `r`. The margin keeps the cropped RS interior
//! filled. Ground truth is re-expressed in cropped coordinates: the curve is
//! rows `pad..pad + r` of the padded curve, and the trajectory is the padded
//! one under `s_padded = alpha s + beta`.

use alloc::vec::Vec;

use crate::trajectory::{eval_trajectory, random_trajectory};
use crate::warp::warp_rs_from_gs;
use crate::{Error, Image, MotionCurve, MotionRanges, PolynomialTrajectory, Real, Result};

/// One synthesized training pair with its ground-truth motion.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample<T> {
    pub gs: Image<T>,
    pub rs: Image<T>,
    pub motion: MotionCurve<T>,
    pub trajectory: PolynomialTrajectory,
    pub seed: u64,
}

/// Margin added on each side before distortion: `ceil(r * 50 / 256)`.
pub fn dataset_pad(r: usize) -> usize {
    (r * 50).div_ceil(256)
}

/// Side of the padded working image.
pub fn padded_size(r: usize) -> usize {
    r + 2 * dataset_pad(r)
}

/// Per-sample seed for motion `motion_index` of image `image_index`.
pub fn sample_seed(seed: u64, image_index: usize, motion_index: usize) -> u64 {
    let mut z = seed
        ^ (image_index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ (motion_index as u64).wrapping_mul(0xAEF1_7502_108E_F2D9);
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Prepares a clean image: RGB, square, center-cropped to the padded size.
pub fn prepare_clean<T: Real>(clean: &Image<T>, r: usize) -> Result<Image<T>> {
    let big = padded_size(r);
    let side = clean.height().min(clean.width());
    if side < big {
        return Err(Error::ImageTooSmall {
            required: big,
            found: side,
        });
    }
    let rgb = clean.to_rgb();
    let top = (rgb.height() - big) / 2;
    let left = (rgb.width() - big) / 2;
    rgb.crop(top, left, big, big)
}

/// Distorts one prepared (padded) image with the trajectory drawn from
/// `seed`.
pub fn generate_sample<T: Real>(
    padded: &Image<T>,
    r: usize,
    seed: u64,
    ranges: MotionRanges,
) -> Result<TrainSample<T>> {
    let big = padded_size(r);
    let pad = dataset_pad(r);
    if padded.height() != big || padded.width() != big {
        return Err(Error::dim("padded clean image side", big, padded.height()));
    }
    let traj_big = random_trajectory(seed, ranges);
    let motion_big: MotionCurve<T> = eval_trajectory(&traj_big, big)?;
    let (rs_big, _) = warp_rs_from_gs(padded, &motion_big)?;
    let denom = (big - 1) as f64;
    let trajectory = traj_big.reparameterize((r - 1) as f64 / denom, pad as f64 / denom);
    Ok(TrainSample {
        gs: padded.crop(pad, pad, r, r)?,
        rs: rs_big.crop(pad, pad, r, r)?,
        motion: motion_big.slice(pad, r)?,
        trajectory,
        seed,
    })
}

/// `n_motions` distortions of every clean image, image-major order.
pub fn generate_dataset<T: Real>(
    clean_images: &[Image<T>],
    n_motions: usize,
    seed: u64,
    r: usize,
    ranges: MotionRanges,
) -> Result<Vec<TrainSample<T>>> {
    if r < 4 {
        return Err(Error::InvalidArgument("image size must be at least 4"));
    }
    let mut out = Vec::with_capacity(clean_images.len() * n_motions);
    for (a, clean) in clean_images.iter().enumerate() {
        let padded = prepare_clean(clean, r)?;
        for b in 0..n_motions {
            out.push(generate_sample(
                &padded,
                r,
                sample_seed(seed, a, b),
                ranges,
            )?);
        }
    }
    Ok(out)
}
