//! Sound event detection for rare animal calls in long field recordings.
//!
//! Stages: WAV ingest, log-mel features, spectrogram denoising, segmentation,
//! training-set resampling, a CRNN frame classifier, segment-based metrics,
//! a synthetic corpus generator and an experiment harness.

pub mod audio;
pub mod crnn;
pub mod denoise;
pub mod error;
pub mod eval;
pub mod features;
pub mod harness;
pub mod pipeline;
pub mod resample;
pub mod synth;

pub use audio::{AudioSignal, Event, EventList, TargetVector};
pub use crnn::{CrnnModel, FreqIntegration, LossConfig, LossVariant, ModelConfig, TrainConfig};
pub use denoise::{ClassMask, DenoiseConfig, Standardizer};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use features::{FeatureConfig, Spectrogram};
pub use pipeline::{PredictionVector, Segment, SegmentBatch, SegmentationMap};
pub use resample::ResampleConfig;
pub use synth::{SynthConfig, SynthCorpus};
