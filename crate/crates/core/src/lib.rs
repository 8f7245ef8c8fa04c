//! Rolling-shutter (RS) image formation and rectification.
//!
//! The crate is `no_std` (it needs `alloc`). It contains everything that is
//! pure computation:
//!
//! * [`image`], [`sample`], [`warp`]: the image carrier, bilinear resampling
//!   and the per-row motion warps (gather and scatter) with visibility masks.
//! * [`motion`], [`trajectory`]: per-row motion curves, polynomial trajectory
//!   fitting and random trajectory synthesis.
//! * [`rectifier`]: the fixed-point row-map solver and the gather
//!   rectification warp.
//! * [`nn`]: the layer kit and the motion/row blocks of the rectification
//!   network, with hand-written backward passes.
//! * [`train`]: losses, Adam, dataset synthesis, pretraining and end-to-end
//!   training.
//! * [`gradcheck`]: the finite-difference gradient suite.
//!
//! Coordinates follow one convention throughout: `x` is the scanline
//! (readout) axis, i.e. the array row `i`, and `y` is the in-row axis `j`.
//! Both are centered, `x = i - (h - 1) / 2`, `y = j - (w - 1) / 2`, so
//! in-plane rotation is about the image center.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
mod real;

pub mod gradcheck;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod rectifier;
pub mod sample;
pub mod synth;
pub mod train;
pub mod trajectory;
pub mod warp;

pub use error::{Error, Result};
pub use image::{Image, PixelCoord, VisibilityMask};
pub use motion::MotionCurve;
pub use real::Real;
pub use rectifier::RowMap;
pub use trajectory::{MotionRanges, PolynomialTrajectory};
