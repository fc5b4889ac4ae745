//! Experiment harness: configuration, the end-to-end pipeline run, the
//! two-round grid search and results export.

pub mod config;
pub mod data;
pub mod grid;
pub mod results;
pub mod run;

pub use config::{ArchSection, DataSection, LossSection, PipelineConfig, PipelineSection, ResampleSection};
pub use data::{features_of_signals, load_feature_set, load_split, prepare, preprocess, FeatureSet, Prepared, PreparedRecording, SplitFeatures};
pub use grid::{derive_seed, grid_points, run_grid, DenoiseSetting, GridOptions, GridPoint, GridSpec, Round};
pub use results::{export_results, ResultRow, ResultsTable, RowKind, SplitMetrics};
pub use run::{evaluate_split, predict_spectrogram, predict_split, run_model, run_pipeline, PipelineArtifacts, PipelineReport, RunOutcome, RunSpec, SplitReports};
