//! Log-mel spectrogram front end and the binary spectrogram file format.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioSignal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Analysis window length in seconds.
    pub frame_length: f64,
    /// Frame advance in seconds.
    pub hop_length: f64,
    pub n_mels: usize,
    /// FFT size in samples; `None` picks the next power of two at or above
    /// the window length.
    pub fft_size: Option<usize>,
    pub fmin: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_length: 0.040,
            hop_length: 0.020,
            n_mels: 80,
            fft_size: None,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
        }
    }
}

/// Sample-domain parameters of a [`FeatureConfig`] at a given rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedFeatures {
    pub win_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub sample_rate: u32,
}

impl ResolvedFeatures {
    pub fn hop_seconds(&self) -> f64 {
        self.hop_samples as f64 / f64::from(self.sample_rate)
    }
}

impl FeatureConfig {
    pub fn resolve(&self, sample_rate: u32) -> Result<ResolvedFeatures> {
        let sr = f64::from(sample_rate);
        let win = (self.frame_length * sr).round() as usize;
        let hop = (self.hop_length * sr).round() as usize;
        if hop == 0 || win == 0 {
            return Err(Error::Config(format!(
                "frame {win} / hop {hop} samples must be positive"
            )));
        }
        if self.hop_length > self.frame_length {
            return Err(Error::Config("hop_length exceeds frame_length".into()));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be at least 1".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        let fft_size = self.fft_size.unwrap_or_else(|| win.next_power_of_two());
        if fft_size < win {
            return Err(Error::Config(format!(
                "fft_size {fft_size} shorter than window {win}"
            )));
        }
        let nyquist = sr / 2.0;
        let fmax = self.fmax.unwrap_or(nyquist);
        if !(self.fmin >= 0.0 && self.fmin < fmax && fmax <= nyquist) {
            return Err(Error::Config(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got fmin {} fmax {fmax}",
                self.fmin
            )));
        }
        Ok(ResolvedFeatures {
            win_samples: win,
            hop_samples: hop,
            fft_size,
            fmin: self.fmin,
            fmax,
            sample_rate,
        })
    }
}

/// T x F time-major matrix of feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Vec<f32>,
    pub frames: usize,
    pub bands: usize,
    /// Seconds per frame.
    pub hop: f64,
    pub band_frequencies: Vec<f32>,
    pub source_id: String,
}

impl Spectrogram {
    pub fn new(
        data: Vec<f32>,
        frames: usize,
        bands: usize,
        hop: f64,
        band_frequencies: Vec<f32>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if data.len() != frames * bands {
            return Err(Error::Shape(format!(
                "{} values for a {frames}x{bands} spectrogram",
                data.len()
            )));
        }
        if band_frequencies.len() != bands {
            return Err(Error::Shape(format!(
                "{} band frequencies for {bands} bands",
                band_frequencies.len()
            )));
        }
        Ok(Self {
            data,
            frames,
            bands,
            hop,
            band_frequencies,
            source_id: source_id.into(),
        })
    }

    #[inline]
    pub fn at(&self, t: usize, f: usize) -> f32 {
        self.data[t * self.bands + f]
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.bands..(t + 1) * self.bands]
    }

    /// Copies `len` frames starting at `start`.
    pub fn frames_slice(&self, start: usize, len: usize) -> &[f32] {
        &self.data[start * self.bands..(start + len) * self.bands]
    }
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        F_SP * mel
    }
}

/// `n` frequencies evenly spaced on the mel scale from `fmin` to `fmax` inclusive.
pub fn mel_frequencies(n: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let lo = hz_to_mel(fmin);
    let hi = hz_to_mel(fmax);
    if n == 1 {
        return vec![fmin];
    }
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Slaney-normalized triangular mel filterbank, `n_mels x (fft_size/2 + 1)` row-major.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Vec<f64>,
    pub n_mels: usize,
    pub n_bins: usize,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, fft_size: usize, n_mels: usize, fmin: f64, fmax: f64) -> Self {
        let n_bins = fft_size / 2 + 1;
        let sr = f64::from(sample_rate);
        let fft_freqs: Vec<f64> = (0..n_bins).map(|k| k as f64 * sr / fft_size as f64).collect();
        let edges = mel_frequencies(n_mels + 2, fmin, fmax);
        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let enorm = 2.0 / (hi - lo);
            for (k, &f) in fft_freqs.iter().enumerate() {
                let lower = (f - lo) / (mid - lo);
                let upper = (hi - f) / (hi - mid);
                let w = lower.min(upper).max(0.0);
                weights[m * n_bins + k] = w * enorm;
            }
        }
        Self {
            weights,
            n_mels,
            n_bins,
        }
    }
}

/// Mirror index into `[0, len)` with numpy-style `reflect` (edge not repeated).
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Periodic Hann window of `win` samples, zero-padded and centred in `fft_size`.
fn padded_hann(win: usize, fft_size: usize) -> Vec<f64> {
    let mut w = vec![0.0; fft_size];
    let offset = (fft_size - win) / 2;
    for n in 0..win {
        w[offset + n] =
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos();
    }
    w
}

/// Reusable log-mel extractor for one sample rate and configuration.
pub struct LogMelExtractor {
    cfg: ResolvedFeatures,
    log_floor: f64,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    band_frequencies: Vec<f32>,
    fft: Arc<dyn rustfft::Fft<f64>>,
}

impl LogMelExtractor {
    pub fn new(config: &FeatureConfig, sample_rate: u32) -> Result<Self> {
        let cfg = config.resolve(sample_rate)?;
        let filterbank =
            MelFilterbank::new(sample_rate, cfg.fft_size, config.n_mels, cfg.fmin, cfg.fmax);
        let band_frequencies = mel_frequencies(config.n_mels, cfg.fmin, cfg.fmax)
            .into_iter()
            .map(|f| f as f32)
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            window: padded_hann(cfg.win_samples, cfg.fft_size),
            log_floor: config.log_floor,
            filterbank,
            band_frequencies,
            fft,
            cfg,
        })
    }

    pub fn resolved(&self) -> &ResolvedFeatures {
        &self.cfg
    }

    pub fn frame_count(&self, n_samples: usize) -> usize {
        n_samples / self.cfg.hop_samples + 1
    }

    pub fn compute(&self, signal: &AudioSignal) -> Result<Spectrogram> {
        if signal.sample_rate != self.cfg.sample_rate {
            return Err(Error::Config(format!(
                "extractor built for {} Hz, signal is {} Hz",
                self.cfg.sample_rate, signal.sample_rate
            )));
        }
        let x = &signal.samples;
        if x.is_empty() {
            return Err(Error::Config("empty signal".into()));
        }
        let n_fft = self.cfg.fft_size;
        let hop = self.cfg.hop_samples;
        let pad = (n_fft / 2) as isize;
        let frames = self.frame_count(x.len());
        let n_mels = self.filterbank.n_mels;
        let n_bins = self.filterbank.n_bins;

        let mut data = Vec::with_capacity(frames * n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut mag = vec![0.0f64; n_bins];
        for t in 0..frames {
            let origin = (t * hop) as isize - pad;
            for (n, slot) in buf.iter_mut().enumerate() {
                let w = self.window[n];
                let v = if w == 0.0 {
                    0.0
                } else {
                    f64::from(x[reflect_index(origin + n as isize, x.len())]) * w
                };
                *slot = Complex::new(v, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (m, c) in mag.iter_mut().zip(&buf) {
                *m = c.norm();
            }
            for m in 0..n_mels {
                let row = &self.filterbank.weights[m * n_bins..(m + 1) * n_bins];
                let e: f64 = row.iter().zip(&mag).map(|(w, v)| w * v).sum();
                data.push(e.max(self.log_floor).ln() as f32);
            }
        }
        Spectrogram::new(
            data,
            frames,
            n_mels,
            self.cfg.hop_seconds(),
            self.band_frequencies.clone(),
            signal.source_id.clone(),
        )
    }
}

/// Magnitude STFT -> Slaney mel filterbank -> natural log with a floor.
pub fn compute_log_mel(signal: &AudioSignal, config: &FeatureConfig) -> Result<Spectrogram> {
    LogMelExtractor::new(config, signal.sample_rate)?.compute(signal)
}

/// Indices of bands whose frequency label, truncated to whole Hz, lies in `[lo, hi]`.
///
/// Band labels are reported at integer-Hz resolution, so a band labelled
/// 152.7 Hz belongs to the range `[0, 152]`.
pub fn band_range(band_frequencies: &[f32], lo: f64, hi: f64) -> Vec<usize> {
    band_frequencies
        .iter()
        .enumerate()
        .filter(|(_, &f)| {
            let hz = f64::from(f).trunc();
            hz >= lo && hz <= hi
        })
        .map(|(i, _)| i)
        .collect()
}

const SPEC_MAGIC: &[u8; 4] = b"SPEC";
const SPEC_VERSION: u32 = 1;

pub fn encode_spectrogram(s: &Spectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * (s.bands + s.data.len()));
    out.extend_from_slice(SPEC_MAGIC);
    out.extend_from_slice(&SPEC_VERSION.to_le_bytes());
    out.extend_from_slice(&(s.frames as u32).to_le_bytes());
    out.extend_from_slice(&(s.bands as u32).to_le_bytes());
    out.extend_from_slice(&((s.hop * 1e6).round() as u32).to_le_bytes());
    for f in &s.band_frequencies {
        out.extend_from_slice(&f.to_le_bytes());
    }
    for v in &s.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_spectrogram(bytes: &[u8], source_id: impl Into<String>) -> Result<Spectrogram> {
    if bytes.len() < 20 {
        return Err(Error::format("SPEC header", "file shorter than header"));
    }
    if &bytes[0..4] != SPEC_MAGIC {
        return Err(Error::format("SPEC header", "bad magic"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != SPEC_VERSION {
        return Err(Error::unsupported("version", format!("spectrogram version {version}")));
    }
    let frames = u32_at(8) as usize;
    let bands = u32_at(12) as usize;
    let hop = f64::from(u32_at(16)) / 1e6;
    let expected = 20 + 4 * (bands + frames * bands);
    if bytes.len() != expected {
        return Err(Error::format(
            "data",
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let floats: Vec<f32> = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (freqs, data) = floats.split_at(bands);
    Spectrogram::new(data.to_vec(), frames, bands, hop, freqs.to_vec(), source_id)
}

pub fn save_spectrogram(s: &Spectrogram, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_spectrogram(s)).map_err(|e| Error::io(path, e))
}

pub fn load_spectrogram(path: impl AsRef<Path>) -> Result<Spectrogram> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_spectrogram(&bytes, id)
}
