//! Two-round grid search: architecture and denoising first, then loss and
//! resampling at a fixed architecture.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ArchSection, LossSection, PipelineConfig, ResampleSection};
use super::data::{prepare, FeatureSet, Prepared};
use super::results::{ResultRow, ResultsTable, RowKind, SplitMetrics};
use super::run::{run_model, RunSpec};
use crate::crnn::{FreqIntegration, LossVariant};
use crate::denoise::DenoiseConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiseSetting {
    None,
    FreqRemoval,
    SpecSubtraction,
    Both,
}

impl DenoiseSetting {
    pub const ALL: [DenoiseSetting; 4] = [
        DenoiseSetting::None,
        DenoiseSetting::FreqRemoval,
        DenoiseSetting::SpecSubtraction,
        DenoiseSetting::Both,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DenoiseSetting::None => "none",
            DenoiseSetting::FreqRemoval => "freq-removal",
            DenoiseSetting::SpecSubtraction => "spec-subtraction",
            DenoiseSetting::Both => "both",
        }
    }

    pub fn apply(self, base: &DenoiseConfig) -> DenoiseConfig {
        let (fr, ss) = match self {
            DenoiseSetting::None => (false, false),
            DenoiseSetting::FreqRemoval => (true, false),
            DenoiseSetting::SpecSubtraction => (false, true),
            DenoiseSetting::Both => (true, true),
        };
        DenoiseConfig {
            apply_frequency_removal: fr,
            apply_spectral_subtraction: ss,
            ..base.clone()
        }
    }
}

impl fmt::Display for DenoiseSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DenoiseSetting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown denoise setting `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Round {
    /// Denoising x architecture at default loss and resampling.
    Architecture,
    /// Loss x resampling at a fixed architecture and denoising.
    LossResample,
}

impl Round {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Round::Architecture),
            2 => Ok(Round::LossResample),
            _ => Err(Error::Usage(format!("round must be 1 or 2, got {n}"))),
        }
    }
}

/// Search axes; defaults are the full vocalization-scale space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub denoise: Vec<DenoiseSetting>,
    pub channel_size: Vec<usize>,
    pub conv_depth: Vec<usize>,
    pub pool_size: Vec<usize>,
    pub freq_integration: Vec<FreqIntegration>,
    pub bidirectional: Vec<bool>,
    pub loss: Vec<LossVariant>,
    pub oversample: Vec<usize>,
    pub undersample: Vec<f64>,
    pub repetitions: usize,
    /// Round-2 architecture; usually the round-1 winner.
    pub fixed_arch: Option<ArchSection>,
    pub fixed_denoise: Option<DenoiseSetting>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            denoise: DenoiseSetting::ALL.to_vec(),
            channel_size: vec![32, 64, 96],
            conv_depth: vec![2, 3, 4],
            pool_size: vec![2, 3, 4, 5],
            freq_integration: FreqIntegration::ALL.to_vec(),
            bidirectional: vec![true, false],
            loss: LossVariant::ALL.to_vec(),
            oversample: vec![0, 2, 4, 8, 16],
            undersample: vec![0.0, 0.5, 0.75, 0.9, 0.95],
            repetitions: 5,
            fixed_arch: None,
            fixed_denoise: None,
        }
    }
}

impl GridSpec {
    /// Reduced axes for inputs with very few retained bands.
    pub fn reduced_band() -> Self {
        Self {
            conv_depth: vec![1, 2],
            pool_size: vec![2, 3],
            ..Self::default()
        }
    }
}

/// One hyperparameter combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub denoise: DenoiseSetting,
    pub arch: ArchSection,
    pub loss: LossVariant,
    pub oversample: usize,
    pub undersample: f64,
}

impl GridPoint {
    /// Stable textual key; feeds the per-run seed derivation.
    pub fn key(&self) -> String {
        let a = &self.arch;
        format!(
            "{}|{}|{}|{}|{}|{}|{}|{}|{}",
            self.denoise,
            a.conv_depth,
            a.channel_size,
            a.pool_size,
            a.freq_integration,
            a.bidirectional,
            self.loss,
            self.oversample,
            self.undersample
        )
    }
}

/// Round-1 defaults for loss and resampling.
pub const ROUND1_LOSS: LossVariant = LossVariant::Bce;
pub const ROUND1_OVERSAMPLE: usize = 2;
pub const ROUND1_UNDERSAMPLE: f64 = 0.75;

pub fn grid_points(spec: &GridSpec, round: Round) -> Result<Vec<GridPoint>> {
    let mut out = Vec::new();
    match round {
        Round::Architecture => {
            for &denoise in &spec.denoise {
                for &channel_size in &spec.channel_size {
                    for &conv_depth in &spec.conv_depth {
                        for &pool_size in &spec.pool_size {
                            for &freq_integration in &spec.freq_integration {
                                for &bidirectional in &spec.bidirectional {
                                    out.push(GridPoint {
                                        index: out.len(),
                                        denoise,
                                        arch: ArchSection { conv_depth, channel_size, pool_size, freq_integration, bidirectional },
                                        loss: ROUND1_LOSS,
                                        oversample: ROUND1_OVERSAMPLE,
                                        undersample: ROUND1_UNDERSAMPLE,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Round::LossResample => {
            let (arch, denoise) = match (&spec.fixed_arch, spec.fixed_denoise) {
                (Some(a), Some(d)) => (a.clone(), d),
                _ => {
                    return Err(Error::Usage(
                        "round 2 needs fixed_arch and fixed_denoise (e.g. the round-1 winner)".into(),
                    ))
                }
            };
            for &loss in &spec.loss {
                for &oversample in &spec.oversample {
                    for &undersample in &spec.undersample {
                        out.push(GridPoint { index: out.len(), denoise, arch: arch.clone(), loss, oversample, undersample });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// FNV-1a of `key`, mixed with the master seed and repetition.
pub fn derive_seed(master: u64, key: &str, repetition: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes().chain((repetition as u64).to_le_bytes()).chain(master.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct GridOptions {
    pub master_seed: u64,
    pub workers: usize,
    /// Wall-clock columns make tables differ between runs; off for
    /// reproducibility checks.
    pub record_wall_clock: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            master_seed: 0,
            workers: 1,
            record_wall_clock: true,
        }
    }
}

struct Job<'a> {
    point: &'a GridPoint,
    repetition: usize,
    prepared: &'a Prepared,
}

fn base_row(point: &GridPoint, kind: RowKind, seed: u64, input_bands: usize) -> ResultRow {
    ResultRow {
        point: point.index,
        kind,
        status: "ok".into(),
        denoise: point.denoise,
        conv_depth: point.arch.conv_depth,
        channel_size: point.arch.channel_size,
        pool_size: point.arch.pool_size,
        freq_integration: point.arch.freq_integration,
        bidirectional: point.arch.bidirectional,
        loss: point.loss,
        oversample: point.oversample,
        undersample: point.undersample,
        input_bands,
        seed,
        train: SplitMetrics::missing(),
        val: SplitMetrics::missing(),
        test: SplitMetrics::missing(),
        epochs: f64::NAN,
        wall_clock_s: f64::NAN,
    }
}

/// Runs every point `repetitions` times. Infeasible points and failed data
/// preparation produce `skipped` rows; they are never dropped.
pub fn run_grid(
    spec: &GridSpec,
    round: Round,
    features: &FeatureSet,
    base: &PipelineConfig,
    options: &GridOptions,
) -> Result<ResultsTable> {
    if spec.repetitions == 0 {
        return Err(Error::Config("grid.repetitions must be at least 1".into()));
    }
    let points = grid_points(spec, round)?;
    let mut prepared: BTreeMap<DenoiseSetting, std::result::Result<Prepared, String>> = BTreeMap::new();
    for p in &points {
        prepared.entry(p.denoise).or_insert_with(|| {
            prepare(features, &base.data.class, &p.denoise.apply(&base.denoise)).map_err(|e| e.to_string())
        });
    }

    let mut skipped: BTreeMap<usize, (String, usize)> = BTreeMap::new();
    let mut jobs = Vec::new();
    for p in &points {
        match &prepared[&p.denoise] {
            Err(msg) => {
                skipped.insert(p.index, (format!("skipped: {msg}"), 0));
            }
            Ok(prep) => {
                let cfg = p.arch.model_config(base.pipeline.segment_frames, prep.bands);
                if let Err(e) = cfg.validate() {
                    log::info!("grid point {} ({}) skipped: {e}", p.index, p.key());
                    skipped.insert(p.index, (format!("skipped: {e}"), prep.bands));
                    continue;
                }
                for repetition in 0..spec.repetitions {
                    jobs.push(Job { point: p, repetition, prepared: prep });
                }
            }
        }
    }

    let results: Mutex<Vec<Option<ResultRow>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let workers = options.workers.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() || failure.lock().unwrap().is_some() {
                    break;
                }
                match run_job(&jobs[i], base, options) {
                    Ok(row) => results.lock().unwrap()[i] = Some(row),
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e);
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let mut by_point: BTreeMap<usize, Vec<ResultRow>> = BTreeMap::new();
    for row in results.into_inner().unwrap().into_iter().flatten() {
        by_point.entry(row.point).or_default().push(row);
    }

    let mut table = ResultsTable::default();
    for p in &points {
        if let Some((reason, bands)) = skipped.remove(&p.index) {
            let mut row = base_row(p, RowKind::Skipped, 0, bands);
            row.status = reason;
            table.rows.push(row);
            continue;
        }
        let reps = by_point.remove(&p.index).unwrap_or_default();
        let mean = ResultsTable::mean_row(&reps).expect("at least one repetition");
        table.rows.extend(reps);
        table.rows.push(mean);
    }
    Ok(table)
}

fn run_job(job: &Job<'_>, base: &PipelineConfig, options: &GridOptions) -> Result<ResultRow> {
    let p = job.point;
    let seed = derive_seed(options.master_seed, &p.key(), job.repetition);
    let spec = RunSpec {
        arch: p.arch.clone(),
        loss: LossSection { variant: p.loss, gamma: base.loss.gamma },
        resample: ResampleSection {
            enabled: true,
            undersample_fraction: p.undersample,
            oversample_duplications: p.oversample,
        },
        train: base.train.clone(),
        segment_frames: base.pipeline.segment_frames,
        threshold: base.pipeline.threshold,
        seed,
    };
    let started = Instant::now();
    let outcome = run_model(job.prepared, &spec)?;
    let mut row = base_row(p, RowKind::Repetition(job.repetition), seed, job.prepared.bands);
    row.train = SplitMetrics::from_report(outcome.reports.train.as_ref());
    row.val = SplitMetrics::from_report(outcome.reports.val.as_ref());
    row.test = SplitMetrics::from_report(outcome.reports.test.as_ref());
    row.epochs = outcome.history.epochs.len() as f64;
    if options.record_wall_clock {
        row.wall_clock_s = started.elapsed().as_secs_f64();
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let spec = GridSpec { denoise: vec![DenoiseSetting::Both], ..GridSpec::default() };
        assert_eq!(grid_points(&spec, Round::Architecture).unwrap().len(), 216);
        let spec = GridSpec {
            fixed_arch: Some(ArchSection::default()),
            fixed_denoise: Some(DenoiseSetting::Both),
            ..GridSpec::default()
        };
        assert_eq!(grid_points(&spec, Round::LossResample).unwrap().len(), 100);
        let spec = GridSpec::default();
        assert!(matches!(grid_points(&spec, Round::LossResample), Err(Error::Usage(_))));
    }

    #[test]
    fn round_one_uses_default_loss_and_resampling() {
        let spec = GridSpec { denoise: vec![DenoiseSetting::None], ..GridSpec::default() };
        for p in grid_points(&spec, Round::Architecture).unwrap() {
            assert_eq!((p.loss, p.oversample, p.undersample), (LossVariant::Bce, 2, 0.75));
        }
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a = derive_seed(7, "x|1", 0);
        assert_eq!(a, derive_seed(7, "x|1", 0));
        assert_ne!(a, derive_seed(7, "x|1", 1));
        assert_ne!(a, derive_seed(8, "x|1", 0));
        assert_ne!(a, derive_seed(7, "x|2", 0));
    }

    #[test]
    fn denoise_settings_parse() {
        for d in DenoiseSetting::ALL {
            assert_eq!(d.as_str().parse::<DenoiseSetting>().unwrap(), d);
        }
        let c = DenoiseSetting::FreqRemoval.apply(&DenoiseConfig::default());
        assert!(c.apply_frequency_removal && !c.apply_spectral_subtraction);
    }
}
