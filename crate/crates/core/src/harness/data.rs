//! Stages 1 to 4: ingest, features, targets, class mask, denoising and
//! standardization of the three data splits.

use std::fs;
use std::path::Path;

use crate::audio::{load_wav, parse_annotations, peak_normalize, rasterize_targets, AudioSignal, EventList, TargetVector};
use crate::denoise::{
    apply_standardizer, compute_class_mask, denoise, fit_standardizer, ClassMask, DenoiseConfig, MaskSource,
    Standardizer,
};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, LogMelExtractor, Spectrogram};

pub const ANNOTATIONS_FILE: &str = "annotations.csv";

/// Log-mel spectrograms and annotations of one split.
#[derive(Debug, Clone)]
pub struct SplitFeatures {
    pub spectrograms: Vec<Spectrogram>,
    pub events: EventList,
}

#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub train: SplitFeatures,
    pub val: SplitFeatures,
    pub test: SplitFeatures,
}

/// WAV files of `dir` in name order.
pub fn list_wavs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn features_of_signals(signals: &[AudioSignal], events: EventList, cfg: &FeatureConfig) -> Result<SplitFeatures> {
    let mut spectrograms = Vec::with_capacity(signals.len());
    let mut extractor: Option<(u32, LogMelExtractor)> = None;
    for sig in signals {
        if extractor.as_ref().is_none_or(|(sr, _)| *sr != sig.sample_rate) {
            let ex = LogMelExtractor::new(cfg, sig.sample_rate).map_err(|e| e.in_stage("features", &sig.source_id))?;
            extractor = Some((sig.sample_rate, ex));
        }
        let (_, ex) = extractor.as_ref().unwrap();
        let normalized = peak_normalize(sig.clone());
        spectrograms.push(ex.compute(&normalized).map_err(|e| e.in_stage("features", &sig.source_id))?);
    }
    Ok(SplitFeatures { spectrograms, events })
}

/// Reads every WAV in `dir` plus its annotation file (absent means no events).
pub fn load_split(dir: &Path, cfg: &FeatureConfig) -> Result<SplitFeatures> {
    let wavs = list_wavs(dir)?;
    if wavs.is_empty() {
        return Err(Error::EmptyCorpus(format!("no WAV files in {}", dir.display())));
    }
    let mut signals = Vec::with_capacity(wavs.len());
    for p in &wavs {
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        signals.push(load_wav(p).map_err(|e| e.in_stage("ingest", id))?);
    }
    let ann = dir.join(ANNOTATIONS_FILE);
    let events = if ann.exists() {
        parse_annotations(&ann).map_err(|e| e.in_stage("ingest", ANNOTATIONS_FILE))?
    } else {
        EventList::default()
    };
    for e in &events.events {
        if !signals.iter().any(|s| s.source_id == e.source_id) {
            log::warn!("annotation for unknown recording `{}` in {}", e.source_id, dir.display());
        }
    }
    features_of_signals(&signals, events, cfg)
}

pub fn load_feature_set(train: &Path, val: &Path, test: &Path, cfg: &FeatureConfig) -> Result<FeatureSet> {
    Ok(FeatureSet {
        train: load_split(train, cfg)?,
        val: load_split(val, cfg)?,
        test: load_split(test, cfg)?,
    })
}

/// A denoised, standardized recording with its frame targets.
#[derive(Debug, Clone)]
pub struct PreparedRecording {
    pub spectrogram: Spectrogram,
    pub targets: TargetVector,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Vec<PreparedRecording>,
    pub val: Vec<PreparedRecording>,
    pub test: Vec<PreparedRecording>,
    pub mask: Option<ClassMask>,
    pub standardizer: Standardizer,
    pub bands: usize,
    pub hop: f64,
}

fn targets_for(split: &SplitFeatures, class: &str) -> Vec<TargetVector> {
    split
        .spectrograms
        .iter()
        .map(|s| rasterize_targets(&split.events, &s.source_id, s.frames, s.hop, class))
        .collect()
}

/// Denoising with a previously computed mask, then standardization.
pub fn preprocess(s: &Spectrogram, mask: Option<&ClassMask>, standardizer: &Standardizer, cfg: &DenoiseConfig) -> Result<Spectrogram> {
    let d = denoise(s, mask, cfg).map_err(|e| e.in_stage("denoise", &s.source_id))?;
    Ok(apply_standardizer(&d, standardizer))
}

/// Mask from train and val events, denoising of every split, and a
/// standardizer fit on the training split only.
pub fn prepare(features: &FeatureSet, class: &str, cfg: &DenoiseConfig) -> Result<Prepared> {
    cfg.validate()?;
    let splits = [&features.train, &features.val, &features.test];
    let targets: Vec<Vec<TargetVector>> = splits.iter().map(|s| targets_for(s, class)).collect();

    let mask = if cfg.apply_frequency_removal {
        let mut sources = Vec::new();
        for (split, ys) in splits[..2].iter().zip(&targets[..2]) {
            for (s, y) in split.spectrograms.iter().zip(ys) {
                sources.push(MaskSource { spectrogram: s, targets: y, events: &split.events });
            }
        }
        let m = compute_class_mask(&sources, class, cfg.context).map_err(|e| e.in_stage("mask", class))?;
        if m.retained(cfg.mask_threshold).is_empty() {
            return Err(Error::DegenerateCorpus(format!(
                "class mask for `{class}` keeps no band at threshold {}",
                cfg.mask_threshold
            ))
            .in_stage("mask", class));
        }
        Some(m)
    } else {
        None
    };

    let mut denoised: Vec<Vec<Spectrogram>> = Vec::new();
    for split in splits {
        let mut out = Vec::with_capacity(split.spectrograms.len());
        for s in &split.spectrograms {
            out.push(denoise(s, mask.as_ref(), cfg).map_err(|e| e.in_stage("denoise", &s.source_id))?);
        }
        denoised.push(out);
    }
    let standardizer = fit_standardizer(denoised[0].iter()).map_err(|e| e.in_stage("standardize", "train"))?;
    let mut prepared: Vec<Vec<PreparedRecording>> = denoised
        .into_iter()
        .zip(targets)
        .map(|(specs, ys)| {
            specs
                .iter()
                .zip(ys)
                .map(|(s, y)| PreparedRecording { spectrogram: apply_standardizer(s, &standardizer), targets: y })
                .collect()
        })
        .collect();
    let test = prepared.pop().unwrap();
    let val = prepared.pop().unwrap();
    let train = prepared.pop().unwrap();
    let first = train
        .first()
        .ok_or_else(|| Error::EmptyCorpus("training split has no recordings".into()))?;
    let (bands, hop) = (first.spectrogram.bands, first.spectrogram.hop);
    Ok(Prepared { train, val, test, mask, standardizer, bands, hop })
}
