//! Convolutional beamforming network: model, training, data and weights.

mod checkpoint;
mod data;
mod model;
mod ops;
mod train;

pub use checkpoint::{read_weights, round_to_f32, write_weights, WEIGHTS_MAGIC};
pub use data::{
    extract_sample, infer_frame, masked_slab, read_dataset, depth_scale, slab, write_dataset, TrainingSample, DATASET_MAGIC, SCALE_HALF_WINDOW,
};
pub use model::{
    ArchSpec, BatchNorm, BatchStats, Conv, Gradients, Mode, NetworkParams, Norm, ReluMasks, BN_EPS, BN_MOMENTUM,
};
pub(crate) use model::Step;
pub use ops::{ConvGeom, Shape};
pub(crate) use ops::{concat_channels, conv_forward};
pub use train::{evaluate_loss, train, train_from, TrainConfig, TrainReport};
