//! Synthetic corpora of long noisy recordings with rare injected events.
//!
//! Each recording is stationary coloured noise whose spectral shape is drawn
//! per recording, plus non-overlapping events of the configured classes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{rasterize_targets, write_annotations, write_wav_pcm16, AudioSignal, Event, EventList};
use crate::error::{Error, Result};

/// Frame hop used to report realized prevalence.
const PREVALENCE_HOP: f64 = 0.020;
const MAX_PLACEMENT_TRIES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// Band-limited noise gated by a train of short pulses.
    PulseTrain,
    /// Harmonic tone stack with a linear fundamental sweep.
    HarmonicStack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventClassSpec {
    pub label: String,
    pub kind: EventKind,
    pub band_lo: f64,
    pub band_hi: f64,
    pub min_duration: f64,
    pub max_duration: f64,
    /// `None` derives the count from prevalence and mean duration.
    #[serde(default)]
    pub events_per_recording: Option<usize>,
    /// Target fraction of positive time per recording.
    pub prevalence: f64,
    /// Event power over in-band noise power, in dB.
    pub snr_db: f64,
}

/// Per-recording noise shape: gain in dB at frequency `f` is
/// `slope * log2(f / 1 kHz)` plus Gaussian bumps on a log-frequency axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub slope_db_per_octave: f64,
    /// Standard deviation of the slope across recordings.
    pub slope_std: f64,
    pub bumps: usize,
    /// Bump gains are uniform in `[-bump_gain_db, bump_gain_db]`.
    pub bump_gain_db: f64,
    /// Bump width in octaves (standard deviation).
    pub bump_width_octaves: f64,
    /// Standard deviation of the overall level across recordings, in dB.
    pub level_std_db: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            slope_db_per_octave: -3.0,
            slope_std: 1.5,
            bumps: 3,
            bump_gain_db: 6.0,
            bump_width_octaves: 0.5,
            level_std_db: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_recordings: usize,
    pub recording_seconds: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    pub classes: Vec<EventClassSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
    /// Source ids are `{prefix}{index:03}`.
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
}

fn default_sample_rate() -> u32 {
    16_000
}

fn default_prefix() -> String {
    "rec".into()
}

impl EventClassSpec {
    /// Low-frequency pulse trains.
    pub fn drumming(prevalence: f64, snr_db: f64) -> Self {
        Self {
            label: "drumming".into(),
            kind: EventKind::PulseTrain,
            band_lo: 40.0,
            band_hi: 140.0,
            min_duration: 0.3,
            max_duration: 1.0,
            events_per_recording: None,
            prevalence,
            snr_db,
        }
    }

    /// Mid-band harmonic calls.
    pub fn vocalization(prevalence: f64, snr_db: f64) -> Self {
        Self {
            label: "vocalization".into(),
            kind: EventKind::HarmonicStack,
            band_lo: 270.0,
            band_hi: 2000.0,
            min_duration: 0.8,
            max_duration: 3.0,
            events_per_recording: None,
            prevalence,
            snr_db,
        }
    }
}

impl SynthConfig {
    pub fn drumming_preset(n_recordings: usize, recording_seconds: f64, prevalence: f64, seed: u64) -> Self {
        Self {
            n_recordings,
            recording_seconds,
            sample_rate: default_sample_rate(),
            classes: vec![EventClassSpec::drumming(prevalence, 12.0)],
            noise: NoiseSpec::default(),
            seed,
            id_prefix: default_prefix(),
        }
    }

    pub fn vocalization_preset(n_recordings: usize, recording_seconds: f64, prevalence: f64, seed: u64) -> Self {
        Self {
            n_recordings,
            recording_seconds,
            sample_rate: default_sample_rate(),
            classes: vec![EventClassSpec::vocalization(prevalence, 6.0)],
            noise: NoiseSpec::default(),
            seed,
            id_prefix: default_prefix(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = f64::from(self.sample_rate) / 2.0;
        if self.sample_rate == 0 || !(self.recording_seconds > 0.0) {
            return Err(Error::Config("sample_rate and recording_seconds must be positive".into()));
        }
        let n = &self.noise;
        if n.slope_std < 0.0 || n.bump_gain_db < 0.0 || n.level_std_db < 0.0 || n.bump_width_octaves <= 0.0 {
            return Err(Error::Config("noise spread parameters must be non-negative".into()));
        }
        let mut total = 0.0;
        for c in &self.classes {
            if !(0.0 < c.band_lo && c.band_lo < c.band_hi && c.band_hi <= nyquist) {
                return Err(Error::Config(format!(
                    "class `{}`: band [{}, {}] Hz must satisfy 0 < lo < hi <= {nyquist}",
                    c.label, c.band_lo, c.band_hi
                )));
            }
            if !(c.min_duration > 0.0 && c.min_duration <= c.max_duration) {
                return Err(Error::Config(format!("class `{}`: invalid duration range", c.label)));
            }
            if !(c.prevalence > 0.0 && c.prevalence < 1.0) {
                return Err(Error::Config(format!(
                    "class `{}`: prevalence {} outside (0, 1)",
                    c.label, c.prevalence
                )));
            }
            if !c.snr_db.is_finite() {
                return Err(Error::Config(format!("class `{}`: snr_db must be finite", c.label)));
            }
            if self.count_for(c) > 0 {
                total += c.prevalence;
            }
        }
        if total >= 1.0 {
            return Err(Error::Config(format!("combined prevalence {total} leaves no room for events")));
        }
        Ok(())
    }

    fn count_for(&self, c: &EventClassSpec) -> usize {
        c.events_per_recording.unwrap_or_else(|| {
            let mean = 0.5 * (c.min_duration + c.max_duration);
            ((c.prevalence * self.recording_seconds / mean).round() as usize).max(1)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingInfo {
    pub source_id: String,
    pub noise_slope_db_per_octave: f64,
    pub noise_level_db: f64,
    /// `(center Hz, gain dB)` of each noise bump.
    pub noise_bumps: Vec<(f64, f64)>,
    pub events: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub recordings: Vec<RecordingInfo>,
    /// Positive-frame fraction per class at a 20 ms hop.
    pub realized_prevalence: BTreeMap<String, f64>,
    pub positive_seconds: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub recordings: Vec<AudioSignal>,
    pub events: EventList,
    pub manifest: SynthManifest,
}

struct NoiseShape {
    slope: f64,
    level_db: f64,
    bumps: Vec<(f64, f64)>,
    width: f64,
}

impl NoiseShape {
    fn gain_db(&self, f: f64) -> f64 {
        let lf = f.max(20.0).log2();
        let mut g = self.slope * (lf - 1000f64.log2()) + self.level_db;
        for &(fc, gain) in &self.bumps {
            let z = (lf - fc.log2()) / self.width;
            g += gain * (-0.5 * z * z).exp();
        }
        g
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Shapes white Gaussian noise by `gain(f)` in the frequency domain. Returns
/// the time signal and its spectrum (unnormalized forward transform).
fn shaped_noise(
    rng: &mut ChaCha8Rng,
    n: usize,
    sample_rate: f64,
    gain: impl Fn(f64) -> f64,
    planner: &mut FftPlanner<f64>,
) -> (Vec<f64>, Vec<Complex<f64>>) {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(gaussian(rng), 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * sample_rate / n as f64;
        *v *= gain(f);
    }
    let spectrum = buf.clone();
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    (buf.iter().map(|c| c.re * scale).collect(), spectrum)
}

/// Mean power of the time signal restricted to `[lo, hi]` Hz.
fn band_power(spectrum: &[Complex<f64>], sample_rate: f64, lo: f64, hi: f64) -> f64 {
    let n = spectrum.len();
    let mut acc = 0.0;
    for (k, v) in spectrum.iter().enumerate() {
        let f = k.min(n - k) as f64 * sample_rate / n as f64;
        if f >= lo && f <= hi {
            acc += v.norm_sqr();
        }
    }
    acc / (n as f64 * n as f64)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn hann(i: usize, n: usize) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()
}

fn pulse_train(rng: &mut ChaCha8Rng, n: usize, sr: f64, lo: f64, hi: f64, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let (carrier, _) = shaped_noise(rng, n, sr, |f| if f >= lo && f <= hi { 1.0 } else { 0.0 }, planner);
    let period = ((rng.random_range(0.045..0.075) * sr) as usize).max(2);
    let width = (period * 7 / 10).max(1);
    let offset = rng.random_range(0..period);
    carrier
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let phase = (i + offset) % period;
            if phase < width {
                c * hann(phase, width)
            } else {
                0.0
            }
        })
        .collect()
}

fn harmonic_stack(rng: &mut ChaCha8Rng, n: usize, sr: f64, lo: f64, hi: f64) -> Vec<f64> {
    let f_start = rng.random_range(lo..(2.0 * lo).min(hi));
    let sweep: f64 = rng.random_range(-0.3..0.3);
    let f_end = (f_start * (1.0 + sweep)).clamp(lo, hi);
    let top = f_start.max(f_end);
    let harmonics = ((hi / top).floor() as usize).max(1);
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let taper = ((0.01 * sr) as usize).clamp(1, n / 2 + 1);
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let f0 = f_start + (f_end - f_start) * i as f64 / n as f64;
        phase += std::f64::consts::TAU * f0 / sr;
        let mut v = 0.0;
        for (k, ph) in phases.iter().enumerate() {
            v += (phase * (k + 1) as f64 + ph).sin() / (k + 1) as f64;
        }
        let edge = i.min(n - 1 - i);
        let env = if edge < taper { 0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / taper as f64).cos() } else { 1.0 };
        out.push(v * env);
    }
    out
}

/// Draws `count` durations in the class range, then rescales them to sum
/// to `total` seconds.
fn durations(rng: &mut ChaCha8Rng, c: &EventClassSpec, count: usize, total: f64) -> Vec<f64> {
    let mut d: Vec<f64> = (0..count)
        .map(|_| {
            if c.max_duration > c.min_duration {
                rng.random_range(c.min_duration..c.max_duration)
            } else {
                c.min_duration
            }
        })
        .collect();
    let s: f64 = d.iter().sum();
    if s > 0.0 {
        d.iter_mut().for_each(|v| *v *= total / s);
    }
    d
}

/// Generates one recording; all randomness comes from stream `index` of the
/// master seed.
pub fn generate_recording(config: &SynthConfig, index: usize) -> Result<(AudioSignal, Vec<Event>, RecordingInfo)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let sr = f64::from(config.sample_rate);
    let n = (config.recording_seconds * sr).round() as usize;
    let source_id = format!("{}{index:03}", config.id_prefix);
    let ns = &config.noise;
    let mut planner = FftPlanner::new();

    let shape = NoiseShape {
        slope: ns.slope_db_per_octave + ns.slope_std * gaussian(&mut rng),
        level_db: ns.level_std_db * gaussian(&mut rng),
        bumps: (0..ns.bumps)
            .map(|_| {
                let lf = rng.random_range(50f64.log2()..(0.9 * sr / 2.0).log2());
                let g = if ns.bump_gain_db > 0.0 { rng.random_range(-ns.bump_gain_db..=ns.bump_gain_db) } else { 0.0 };
                (lf.exp2(), g)
            })
            .collect(),
        width: ns.bump_width_octaves,
    };
    let (mut samples, spectrum) =
        shaped_noise(&mut rng, n, sr, |f| 10f64.powf(shape.gain_db(f) / 20.0) * 0.05, &mut planner);

    // Event intervals in samples, non-overlapping across classes.
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut events = Vec::new();
    let mut counts = BTreeMap::new();
    for c in &config.classes {
        let count = config.count_for(c);
        counts.insert(c.label.clone(), count);
        if count == 0 {
            continue;
        }
        let total = c.prevalence * config.recording_seconds;
        let noise_power = band_power(&spectrum, sr, c.band_lo, c.band_hi);
        let amp = (noise_power * 10f64.powf(c.snr_db / 10.0)).sqrt();
        for d in durations(&mut rng, c, count, total) {
            let len = ((d * sr).round() as usize).max(1);
            if len >= n {
                return Err(Error::Config(format!(
                    "class `{}`: event of {d:.3} s does not fit a {} s recording",
                    c.label, config.recording_seconds
                )));
            }
            let mut start = None;
            for _ in 0..MAX_PLACEMENT_TRIES {
                let s = rng.random_range(0..=n - len);
                if taken.iter().all(|&(a, b)| s + len <= a || s >= b) {
                    start = Some(s);
                    break;
                }
            }
            let s = start.ok_or_else(|| {
                Error::Config(format!(
                    "class `{}`: cannot place {count} non-overlapping events in {} s",
                    c.label, config.recording_seconds
                ))
            })?;
            taken.push((s, s + len));
            let mut wave = match c.kind {
                EventKind::PulseTrain => pulse_train(&mut rng, len, sr, c.band_lo, c.band_hi, &mut planner),
                EventKind::HarmonicStack => harmonic_stack(&mut rng, len, sr, c.band_lo, c.band_hi),
            };
            let r = rms(&wave);
            if r > 0.0 {
                wave.iter_mut().for_each(|v| *v *= amp / r);
            }
            for (dst, v) in samples[s..s + len].iter_mut().zip(&wave) {
                *dst += v;
            }
            events.push(Event {
                source_id: source_id.clone(),
                start: s as f64 / sr,
                end: (s + len) as f64 / sr,
                class_label: c.label.clone(),
            });
        }
    }
    events.sort_by(|a, b| a.start.total_cmp(&b.start));

    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { 0.5 / peak } else { 1.0 };
    let signal = AudioSignal::new(samples.iter().map(|v| (v * gain) as f32).collect(), config.sample_rate, &source_id)?;
    let info = RecordingInfo {
        source_id,
        noise_slope_db_per_octave: shape.slope,
        noise_level_db: shape.level_db,
        noise_bumps: shape.bumps,
        events: counts,
    };
    Ok((signal, events, info))
}

pub fn generate_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut recordings = Vec::with_capacity(config.n_recordings);
    let mut all_events = Vec::new();
    let mut infos = Vec::new();
    for i in 0..config.n_recordings {
        let (sig, ev, info) = generate_recording(config, i)?;
        recordings.push(sig);
        all_events.extend(ev);
        infos.push(info);
    }
    let events = EventList::new(all_events)?;
    let mut realized = BTreeMap::new();
    let mut seconds = BTreeMap::new();
    for c in &config.classes {
        let mut pos = 0usize;
        let mut frames = 0usize;
        for r in &recordings {
            let t = (r.samples.len() as f64 / (PREVALENCE_HOP * f64::from(r.sample_rate))).floor() as usize + 1;
            pos += rasterize_targets(&events, &r.source_id, t, PREVALENCE_HOP, &c.label).positives();
            frames += t;
        }
        realized.insert(c.label.clone(), pos as f64 / frames.max(1) as f64);
        let secs: f64 = events.events.iter().filter(|e| e.class_label == c.label).map(|e| e.end - e.start).sum();
        seconds.insert(c.label.clone(), secs);
    }
    Ok(SynthCorpus {
        recordings,
        events,
        manifest: SynthManifest {
            config: config.clone(),
            recordings: infos,
            realized_prevalence: realized,
            positive_seconds: seconds,
        },
    })
}

/// Writes `{source_id}.wav` files, `annotations.csv` and `manifest.json`.
pub fn write_corpus(corpus: &SynthCorpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in &corpus.recordings {
        write_wav_pcm16(dir.join(format!("{}.wav", r.source_id)), &r.samples, r.sample_rate)?;
    }
    write_annotations(dir.join("annotations.csv"), &corpus.events)?;
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&corpus.manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(prevalence: f64) -> SynthConfig {
        SynthConfig::drumming_preset(3, 20.0, prevalence, 4)
    }

    #[test]
    fn prevalence_is_realized() {
        let c = generate_corpus(&small(0.02)).unwrap();
        let p = c.manifest.realized_prevalence["drumming"];
        assert!((p / 0.02 - 1.0).abs() < 0.2, "realized {p}");
        assert!((c.manifest.positive_seconds["drumming"] - 3.0 * 20.0 * 0.02).abs() < 1e-3);
    }

    #[test]
    fn zero_events_gives_empty_annotations() {
        let mut cfg = small(0.02);
        cfg.classes[0].events_per_recording = Some(0);
        let c = generate_corpus(&cfg).unwrap();
        assert!(c.events.is_empty());
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&c, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("annotations.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn regeneration_is_identical() {
        let a = generate_corpus(&small(0.01)).unwrap();
        let b = generate_corpus(&small(0.01)).unwrap();
        assert_eq!(a.recordings, b.recordings);
        assert_eq!(a.events, b.events);
        assert_eq!(a.manifest, b.manifest);
    }

    #[test]
    fn events_stay_inside_and_apart() {
        let mut cfg = small(0.05);
        cfg.classes.push(EventClassSpec::vocalization(0.05, 6.0));
        let c = generate_corpus(&cfg).unwrap();
        for r in &c.recordings {
            let mut ev: Vec<&Event> = c.events.events.iter().filter(|e| e.source_id == r.source_id).collect();
            ev.sort_by(|a, b| a.start.total_cmp(&b.start));
            for e in &ev {
                assert!(e.start >= 0.0 && e.end <= r.duration_seconds());
            }
            for w in ev.windows(2) {
                assert!(w[0].end <= w[1].start);
            }
        }
    }

    #[test]
    fn infeasible_layouts_are_config_errors() {
        let mut cfg = small(0.5);
        cfg.classes[0].events_per_recording = Some(1);
        cfg.classes.push(EventClassSpec::vocalization(0.49, 6.0));
        cfg.classes[1].events_per_recording = Some(1);
        cfg.classes[1].min_duration = 9.9;
        cfg.classes[1].max_duration = 9.9;
        assert!(matches!(generate_corpus(&cfg), Err(Error::Config(_))));
        assert!(matches!(generate_corpus(&small(1.0)), Err(Error::Config(_))));
        let mut cfg = small(0.1);
        cfg.classes[0].band_hi = 9000.0;
        assert!(matches!(generate_corpus(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn noise_gain_follows_slope() {
        let s = NoiseShape { slope: -3.0, level_db: 1.0, bumps: vec![], width: 0.5 };
        assert!((s.gain_db(2000.0) - (-2.0)).abs() < 1e-12);
        assert!((s.gain_db(500.0) - 4.0).abs() < 1e-12);
    }
}
