//! Stages 5 to 8 for one configuration, and the file-based pipeline run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ArchSection, LossSection, PipelineConfig, ResampleSection};
use super::data::{load_feature_set, prepare, Prepared, PreparedRecording};
use crate::crnn::{build_model, save_checkpoint, train, CrnnModel, LossConfig, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::features::Spectrogram;
use crate::pipeline::{concatenate_predictions, segment, write_predictions_csv, PredictionVector, SegmentBatch};
use crate::resample::resample;

/// Everything that varies between runs on the same prepared data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub arch: ArchSection,
    pub loss: LossSection,
    pub resample: ResampleSection,
    pub train: TrainConfig,
    pub segment_frames: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl RunSpec {
    pub fn from_pipeline(cfg: &PipelineConfig) -> Self {
        Self {
            arch: cfg.model.clone(),
            loss: cfg.loss.clone(),
            resample: cfg.resample.clone(),
            train: cfg.train.clone(),
            segment_frames: cfg.pipeline.segment_frames,
            threshold: cfg.pipeline.threshold,
            seed: cfg.seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitReports {
    /// `None` when the split has no positive frames.
    pub train: Option<EvalReport>,
    pub val: Option<EvalReport>,
    pub test: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: CrnnModel<f32>,
    pub history: TrainHistory,
    pub reports: SplitReports,
    pub test_predictions: Vec<PredictionVector>,
    pub train_segments: usize,
    pub val_segments: usize,
    pub test_segments: usize,
}

/// Independent sub-seeds of a run seed.
fn sub_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn segment_split(recs: &[PreparedRecording], seg_frames: usize) -> Result<Vec<SegmentBatch>> {
    recs.iter()
        .map(|r| {
            segment(&r.spectrogram, Some(&r.targets), seg_frames)
                .map(|(b, _)| b)
                .map_err(|e| e.in_stage("segment", &r.spectrogram.source_id))
        })
        .collect()
}

/// Frame probabilities of one prepared spectrogram on its own time axis.
pub fn predict_spectrogram(model: &CrnnModel<f32>, s: &Spectrogram, seg_frames: usize) -> Result<PredictionVector> {
    let id = &s.source_id;
    let (batch, map) = segment(s, None, seg_frames).map_err(|e| e.in_stage("segment", id))?;
    let preds = batch
        .segments
        .iter()
        .map(|g| model.predict(&g.data))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("predict", id))?;
    concatenate_predictions(&preds, &map).map_err(|e| e.in_stage("assemble", id))
}

/// Frame probabilities for every recording of a split.
pub fn predict_split(model: &CrnnModel<f32>, recs: &[PreparedRecording], seg_frames: usize) -> Result<Vec<PredictionVector>> {
    recs.iter().map(|r| predict_spectrogram(model, &r.spectrogram, seg_frames)).collect()
}

pub fn evaluate_split(preds: &[PredictionVector], recs: &[PreparedRecording], threshold: f64, hop: f64) -> Result<Option<EvalReport>> {
    let targets: Vec<_> = recs.iter().map(|r| r.targets.clone()).collect();
    match evaluate(preds, &targets, threshold, hop) {
        Ok(r) => Ok(Some(r)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e.in_stage("evaluate", "split")),
    }
}

/// Segments, resamples (training split only), trains and evaluates.
pub fn run_model(prep: &Prepared, spec: &RunSpec) -> Result<RunOutcome> {
    let seg = spec.segment_frames;
    let per_signal = segment_split(&prep.train, seg)?;
    let train_set = resample(&per_signal, &spec.resample.to_config(sub_seed(spec.seed, 1)))
        .map_err(|e| e.in_stage("resample", "train"))?;
    let val_set = SegmentBatch::concat(segment_split(&prep.val, seg)?);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "{} training and {} validation segments of {seg} frames",
            train_set.len(),
            val_set.len()
        )));
    }
    let (pos, neg) = train_set.frame_counts();
    if pos == 0 {
        return Err(Error::DegenerateCorpus("no positive frames in the training split".into()));
    }
    let config = spec.arch.model_config(seg, prep.bands);
    let model = build_model::<f32>(config, pos, neg, sub_seed(spec.seed, 2))?;
    let loss = LossConfig::new(spec.loss.variant, spec.loss.gamma, pos, neg);
    let tc = TrainConfig { seed: sub_seed(spec.seed, 3), ..spec.train.clone() };
    let (model, history) = train(model, &train_set, &val_set, &loss, &tc)?;

    let hop = prep.hop;
    let train_preds = predict_split(&model, &prep.train, seg)?;
    let val_preds = predict_split(&model, &prep.val, seg)?;
    let test_preds = predict_split(&model, &prep.test, seg)?;
    let reports = SplitReports {
        train: evaluate_split(&train_preds, &prep.train, spec.threshold, hop)?,
        val: evaluate_split(&val_preds, &prep.val, spec.threshold, hop)?,
        test: evaluate_split(&test_preds, &prep.test, spec.threshold, hop)?,
    };
    let test_segments = prep
        .test
        .iter()
        .map(|r| crate::pipeline::segment_starts(r.spectrogram.frames, seg).0.len())
        .sum();
    Ok(RunOutcome {
        model,
        history,
        reports,
        test_predictions: test_preds,
        train_segments: train_set.len(),
        val_segments: val_set.len(),
        test_segments,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub class: String,
    pub input_bands: usize,
    pub retained_bands: Option<Vec<usize>>,
    pub train_segments: usize,
    pub val_segments: usize,
    pub test_segments: usize,
    pub history: TrainHistory,
    pub reports: SplitReports,
}

/// Artifact locations written by [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    pub mask: Option<PathBuf>,
    pub standardizer: PathBuf,
    pub checkpoint: PathBuf,
    pub predictions: PathBuf,
    pub report: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs every stage from the configured data directories and persists the
/// mask, standardizer, checkpoint, test predictions and report under `out`.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<(PipelineReport, PipelineArtifacts)> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let features = load_feature_set(&cfg.data.train, &cfg.data.val, &cfg.data.test, &cfg.features)?;
    let prep = prepare(&features, &cfg.data.class, &cfg.denoise)?;
    let spec = RunSpec::from_pipeline(cfg);
    let outcome = run_model(&prep, &spec)?;

    let mask = match &prep.mask {
        Some(m) => {
            let p = out.join("mask.csv");
            m.save_csv(&p)?;
            Some(p)
        }
        None => None,
    };
    let standardizer = out.join("standardizer.json");
    write_json(&standardizer, &prep.standardizer)?;
    let checkpoint = out.join("model.ckpt");
    save_checkpoint(&outcome.model, &checkpoint)?;
    let predictions = out.join("predictions_test.csv");
    write_predictions_csv(&predictions, &outcome.test_predictions, Some(cfg.pipeline.threshold))?;
    let report = PipelineReport {
        class: cfg.data.class.clone(),
        input_bands: prep.bands,
        retained_bands: prep.mask.as_ref().map(|m| m.retained(cfg.denoise.mask_threshold)),
        train_segments: outcome.train_segments,
        val_segments: outcome.val_segments,
        test_segments: outcome.test_segments,
        history: outcome.history,
        reports: outcome.reports,
    };
    let report_path = out.join("report.json");
    write_json(&report_path, &report)?;
    Ok((
        report,
        PipelineArtifacts {
            mask,
            standardizer,
            checkpoint,
            predictions,
            report: report_path,
        },
    ))
}
