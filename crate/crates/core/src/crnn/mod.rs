//! Convolutional recurrent network with exact analytic gradients.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod model;
pub mod network;
pub mod real;
pub mod train;

pub use checkpoint::{
    check_compatible, decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint,
};
pub use config::{FreqIntegration, LossVariant, ModelConfig, TrainConfig, KERNEL};
pub use loss::{balanced_weights, LossConfig};
pub use model::{build_model, BnRunning, OUTPUT_WEIGHT_STD, ConvParams, CrnnModel, GruParams, ParamSet, TensorMut, TensorRef};
pub use network::{batch_loss, ForwardCache, Mode, RunningStatsTracker, BN_EPSILON, BN_MOMENTUM};
pub use real::Real;
pub use train::{evaluate_loss, train, Adam, EarlyStopping, EpochRecord, StopDecision, TrainHistory};
