//! Losses, the Adam optimizer, training-pair synthesis, motion pretraining
//! and end-to-end training.

pub mod adam;
pub mod dataset;
pub mod loss;
pub mod pipeline;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use dataset::{dataset_pad, generate_dataset, TrainSample};
pub use loss::{masked_mse, sobel_edges, total_loss, LossBreakdown, LossGrads, LossWeights};
pub use pipeline::{
    evaluate, loss_and_grads, pretrain_motion, rectify_with_model, train_end_to_end, MetricsRecord,
    PretrainConfig, PretrainRecord, TrainConfig,
};
