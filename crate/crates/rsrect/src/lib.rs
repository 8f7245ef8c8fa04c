//! File formats, dataset IO and the command implementations of the
//! `rsrect` tool, on top of the `no_std` computation crate `rsrect-core`.
//!
//! * [`png_io`]: 8-bit PNG load/save with zero reserved for invalid pixels.
//! * [`formats`]: motion CSV, trajectory JSON and the binary row map.
//! * [`checkpoint`]: network weights with a JSON header.
//! * [`manifest`]: dataset manifests and training logs.
//! * [`config`]: the TOML run configuration.
//! * [`commands`]: one function per subcommand.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod png_io;

pub use error::{Error, Result};
