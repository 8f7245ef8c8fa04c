//! The rectification network: a small layer kit with hand-written backward
//! passes, and the motion block and row block built from it.

pub mod layers;
pub mod model;
mod tensor;

pub use model::{
    motion_block_bwd, motion_block_fwd, predict_motion, predict_rowmap, row_block_bwd,
    row_block_fwd, rowmaps_from_residual, Mode, ModelGrads, ModelParams, MotionCache, MotionOutput,
    Param, RowCache,
};
pub use tensor::Tensor;
