//! Spectrogram denoising: class-mask frequency removal, windowed spectral
//! subtraction and global z-standardization.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{event_frames, EventList, TargetVector};
use crate::error::{Error, Result};
use crate::features::Spectrogram;

/// Per-band association between band energy and event presence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMask {
    pub r: Vec<f64>,
    pub class_label: String,
    pub context_frames: usize,
    pub event_count: usize,
    /// Frequency labels of the bands `r` refers to.
    pub band_frequencies: Vec<f32>,
}

impl ClassMask {
    /// Band indices with `r[f] >= threshold`, in order.
    pub fn retained(&self, threshold: f64) -> Vec<usize> {
        self.r
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= threshold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("band_index,center_hz,r\n");
        for (i, (r, hz)) in self.r.iter().zip(&self.band_frequencies).enumerate() {
            s.push_str(&format!("{i},{hz},{r}\n"));
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Reads a mask CSV. Only `r` and the band labels are stored in the file.
    pub fn load_csv(path: impl AsRef<Path>, class_label: &str) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut r = Vec::new();
        let mut freqs = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let parse = |idx: usize| -> Result<f64> {
                rec.get(idx)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse {
                        row: i + 1,
                        message: format!("column {idx} is not a number"),
                    })
            };
            let band = parse(0)? as usize;
            if band != i {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("band_index {band} out of sequence"),
                });
            }
            freqs.push(parse(1)? as f32);
            r.push(parse(2)?);
        }
        Ok(Self {
            r,
            class_label: class_label.to_string(),
            context_frames: 0,
            event_count: 1,
            band_frequencies: freqs,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiseConfig {
    pub apply_frequency_removal: bool,
    pub apply_spectral_subtraction: bool,
    /// Minimum mask value for a band to be kept.
    pub mask_threshold: f64,
    /// Context added on both sides of each event when computing the mask, seconds.
    pub context: f64,
    /// Spectral subtraction window, seconds.
    pub subtraction_window: f64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            apply_frequency_removal: true,
            apply_spectral_subtraction: true,
            mask_threshold: 0.025,
            context: 60.0,
            subtraction_window: 180.0,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.subtraction_window > 0.0) {
            return Err(Error::Config("subtraction_window must be positive".into()));
        }
        if !(self.context >= 0.0) {
            return Err(Error::Config("context must be non-negative".into()));
        }
        Ok(())
    }
}

/// Pearson correlation of `xs` with `ys`; 0 when either has zero variance.
pub(crate) fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// One training recording as seen by mask estimation.
pub struct MaskSource<'a> {
    pub spectrogram: &'a Spectrogram,
    pub targets: &'a TargetVector,
    pub events: &'a EventList,
}

/// Per-event mask over the event's frames padded by `context_frames` on
/// both sides (clipped to the recording).
fn event_mask(
    s: &Spectrogram,
    y: &TargetVector,
    frames: std::ops::Range<usize>,
    context_frames: usize,
) -> Vec<f64> {
    let last = s.frames - 1;
    let end_frame = frames.end.saturating_sub(1).max(frames.start);
    let lo = frames.start.saturating_sub(context_frames).min(last);
    let hi = (end_frame + context_frames).min(last);
    let ys: Vec<f64> = y.values[lo..=hi].iter().map(|&v| f64::from(v)).collect();
    let mut column = vec![0.0; ys.len()];
    (0..s.bands)
        .map(|f| {
            for (k, t) in (lo..=hi).enumerate() {
                column[k] = f64::from(s.at(t, f));
            }
            pearson(&column, &ys)
        })
        .collect()
}

/// Averages per-event Pearson masks over every event of `class_label` in the corpus.
pub fn compute_class_mask(
    corpus: &[MaskSource<'_>],
    class_label: &str,
    context_seconds: f64,
) -> Result<ClassMask> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::EmptyCorpus("no recordings".into()))?;
    let bands = first.spectrogram.bands;
    let hop = first.spectrogram.hop;
    let context_frames = (context_seconds / hop).round() as usize;

    let mut sum = vec![0.0; bands];
    let mut count = 0usize;
    for src in corpus {
        let s = src.spectrogram;
        if s.bands != bands {
            return Err(Error::Shape(format!(
                "`{}` has {} bands, expected {bands}",
                s.source_id, s.bands
            )));
        }
        if src.targets.len() != s.frames {
            return Err(Error::Shape(format!(
                "`{}`: {} targets for {} frames",
                s.source_id,
                src.targets.len(),
                s.frames
            )));
        }
        for e in src.events.matching(&s.source_id, class_label) {
            let frames = event_frames(e.start, e.end, s.hop);
            if frames.start >= s.frames {
                continue;
            }
            let m = event_mask(s, src.targets, frames, context_frames);
            for (acc, v) in sum.iter_mut().zip(m) {
                *acc += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyCorpus(format!(
            "no events of class `{class_label}` in corpus"
        )));
    }
    Ok(ClassMask {
        r: sum.into_iter().map(|v| (v / count as f64).clamp(-1.0, 1.0)).collect(),
        class_label: class_label.to_string(),
        context_frames,
        event_count: count,
        band_frequencies: first.spectrogram.band_frequencies.clone(),
    })
}

/// Keeps the bands with `mask.r[f] >= threshold`.
pub fn apply_frequency_removal(s: &Spectrogram, mask: &ClassMask, threshold: f64) -> Result<Spectrogram> {
    if mask.r.len() != s.bands {
        return Err(Error::Shape(format!(
            "mask has {} bands, spectrogram {}",
            mask.r.len(),
            s.bands
        )));
    }
    let keep = mask.retained(threshold);
    if keep.is_empty() {
        return Err(Error::Config(format!(
            "mask threshold {threshold} removes every band"
        )));
    }
    let mut data = Vec::with_capacity(s.frames * keep.len());
    for t in 0..s.frames {
        let row = s.row(t);
        data.extend(keep.iter().map(|&f| row[f]));
    }
    Spectrogram::new(
        data,
        s.frames,
        keep.len(),
        s.hop,
        keep.iter().map(|&f| s.band_frequencies[f]).collect(),
        s.source_id.clone(),
    )
}

/// Number of frames in a subtraction window of `window` seconds.
pub fn subtraction_window_frames(window: f64, hop: f64) -> usize {
    ((window / hop) + 1e-9).floor().max(1.0) as usize
}

/// Subtracts each band's mean within consecutive non-overlapping windows.
/// The final window may be shorter and uses its own mean.
pub fn spectral_subtraction(s: &Spectrogram, window: f64) -> Result<Spectrogram> {
    if !(window > 0.0) {
        return Err(Error::Config("subtraction window must be positive".into()));
    }
    let w = subtraction_window_frames(window, s.hop);
    let mut out = s.clone();
    let f = s.bands;
    let mut means = vec![0.0f64; f];
    let mut start = 0;
    while start < s.frames {
        let end = (start + w).min(s.frames);
        means.iter_mut().for_each(|m| *m = 0.0);
        for t in start..end {
            for (m, &v) in means.iter_mut().zip(s.row(t)) {
                *m += f64::from(v);
            }
        }
        let n = (end - start) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        for t in start..end {
            let row = &mut out.data[t * f..(t + 1) * f];
            for (v, m) in row.iter_mut().zip(&means) {
                *v = (f64::from(*v) - m) as f32;
            }
        }
        start = end;
    }
    Ok(out)
}

/// Population mean and standard deviation over every entry of the corpus.
pub fn fit_standardizer<'a, I>(training: I) -> Result<Standardizer>
where
    I: IntoIterator<Item = &'a Spectrogram>,
{
    let specs: Vec<&Spectrogram> = training.into_iter().collect();
    let n: usize = specs.iter().map(|s| s.data.len()).sum();
    if n < 2 {
        return Err(Error::DegenerateCorpus(format!("{n} entries, need at least 2")));
    }
    let mean = specs
        .iter()
        .flat_map(|s| s.data.iter())
        .map(|&v| f64::from(v))
        .sum::<f64>()
        / n as f64;
    let var = specs
        .iter()
        .flat_map(|s| s.data.iter())
        .map(|&v| {
            let d = f64::from(v) - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::DegenerateCorpus("zero variance".into()));
    }
    Ok(Standardizer { mean, std })
}

pub fn apply_standardizer(s: &Spectrogram, z: &Standardizer) -> Spectrogram {
    let mut out = s.clone();
    for v in &mut out.data {
        *v = ((f64::from(*v) - z.mean) / z.std) as f32;
    }
    out
}

/// Frequency removal (if enabled and a mask is given) followed by spectral
/// subtraction (if enabled).
pub fn denoise(s: &Spectrogram, mask: Option<&ClassMask>, cfg: &DenoiseConfig) -> Result<Spectrogram> {
    let mut out = match (cfg.apply_frequency_removal, mask) {
        (true, Some(m)) => apply_frequency_removal(s, m, cfg.mask_threshold)?,
        (true, None) => {
            return Err(Error::Config(
                "frequency removal enabled but no class mask available".into(),
            ))
        }
        (false, _) => s.clone(),
    };
    if cfg.apply_spectral_subtraction {
        out = spectral_subtraction(&out, cfg.subtraction_window)?;
    }
    Ok(out)
}
