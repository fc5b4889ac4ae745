use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rcs_core::crnn::{check_compatible, load_checkpoint};
use rcs_core::denoise::{ClassMask, Standardizer};
use rcs_core::eval::evaluate;
use rcs_core::features::save_spectrogram;
use rcs_core::harness::{
    export_results, load_feature_set, load_split, predict_spectrogram, prepare, preprocess, run_grid, run_pipeline,
    GridOptions, GridSpec, PipelineConfig, ResultsTable, Round, SplitFeatures,
};
use rcs_core::audio::rasterize_targets;
use rcs_core::pipeline::{read_predictions_csv, write_predictions_csv};
use rcs_core::synth::{generate_corpus, write_corpus, SynthConfig};

#[derive(Parser, Debug)]
#[command(name = "rcs", version, about = "Rare-call sound event detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Target class; overrides `data.class`.
    #[arg(long)]
    class: Option<String>,
    /// Master seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Drumming,
    Vocalization,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus: WAVs, annotations.csv and manifest.json.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "drumming")]
        preset: Preset,
        #[arg(long, default_value_t = 10)]
        recordings: usize,
        #[arg(long, default_value_t = 60.0)]
        seconds: f64,
        #[arg(long, default_value_t = 0.005)]
        prevalence: f64,
        /// In-band event-to-noise ratio in dB; preset default when absent.
        #[arg(long)]
        snr: Option<f64>,
        /// Write `train`, `val` and `test` subdirectories with these
        /// recording counts, e.g. `10,4,5`.
        #[arg(long, value_delimiter = ',')]
        splits: Option<Vec<usize>>,
    },
    /// Compute log-mel spectrograms of every split.
    Features {
        #[command(flatten)]
        common: Common,
    },
    /// Compute the class mask from the training and validation splits.
    Mask {
        #[command(flatten)]
        common: Common,
    },
    /// Denoise and standardize every split; writes the mask and standardizer.
    Denoise {
        #[command(flatten)]
        common: Common,
    },
    /// Run the full pipeline: train, predict the test split and evaluate.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Predict a directory of WAVs with artifacts written by `train`.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Directory holding model.ckpt, standardizer.json and mask.csv.
        #[arg(long)]
        model: PathBuf,
        /// WAV directory; defaults to `data.test`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Evaluate a prediction CSV against the annotations of a directory.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        /// Directory with the WAVs and annotations.csv; defaults to `data.test`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run one round of the grid search.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        round: u8,
        /// Concurrent runs; `RCS_WORKERS` takes precedence.
        #[arg(long)]
        workers: Option<usize>,
        /// Omit wall-clock times so that tables are reproducible.
        #[arg(long)]
        no_wall_clock: bool,
    },
    /// Convert a results table (JSON) to a flat CSV.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let path = common.config.as_ref().context("--config is required")?;
    let mut cfg = PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(c) = &common.class {
        cfg.data.class = c.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let out = common.out.clone().context("--out is required")?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// `RCS_WORKERS` wins over the flag.
fn resolve_workers(flag: Option<usize>) -> Result<usize> {
    match std::env::var("RCS_WORKERS") {
        Ok(v) => v.trim().parse().with_context(|| format!("RCS_WORKERS=`{v}` is not a count")),
        Err(_) => Ok(flag.unwrap_or(1)),
    }
}

fn synth(common: &Common, preset: Preset, recordings: usize, seconds: f64, prevalence: f64, snr: Option<f64>, splits: Option<Vec<usize>>) -> Result<()> {
    let out = out_dir(common)?;
    let seed = common.seed.unwrap_or(0);
    let make = |n: usize, seed: u64| -> Result<SynthConfig> {
        let mut c = match &common.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let mut c: SynthConfig = toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                c.n_recordings = n;
                c
            }
            None => match preset {
                Preset::Drumming => SynthConfig::drumming_preset(n, seconds, prevalence, seed),
                Preset::Vocalization => SynthConfig::vocalization_preset(n, seconds, prevalence, seed),
            },
        };
        c.seed = seed;
        if let Some(s) = snr {
            c.classes.iter_mut().for_each(|k| k.snr_db = s);
        }
        Ok(c)
    };
    // Splits use distinct seeds and id prefixes.
    let jobs: Vec<(PathBuf, usize, u64, Option<&str>)> = match splits {
        Some(n) if n.len() != 3 => bail!("--splits takes three counts (train,val,test), got {}", n.len()),
        Some(n) => vec![
            (out.join("train"), n[0], seed.wrapping_mul(3), Some("train")),
            (out.join("val"), n[1], seed.wrapping_mul(3).wrapping_add(1), Some("val")),
            (out.join("test"), n[2], seed.wrapping_mul(3).wrapping_add(2), Some("test")),
        ],
        None => vec![(out.clone(), recordings, seed, None)],
    };
    for (dir, n, s, prefix) in jobs {
        let mut cfg = make(n, s)?;
        if let Some(p) = prefix {
            cfg.id_prefix = p.to_string();
        }
        let corpus = generate_corpus(&cfg)?;
        write_corpus(&corpus, &dir)?;
        println!("{}: {} recordings, {} events", dir.display(), corpus.recordings.len(), corpus.events.len());
    }
    Ok(())
}

fn features(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = out_dir(common)?;
    for (name, dir) in [("train", &cfg.data.train), ("val", &cfg.data.val), ("test", &cfg.data.test)] {
        let split = load_split(dir, &cfg.features)?;
        let target = out.join(name);
        fs::create_dir_all(&target)?;
        for s in &split.spectrograms {
            save_spectrogram(s, target.join(format!("{}.spec", s.source_id)))?;
        }
        println!("{name}: {} spectrograms", split.spectrograms.len());
    }
    Ok(())
}

fn mask(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = out_dir(common)?;
    let fs_ = load_feature_set(&cfg.data.train, &cfg.data.val, &cfg.data.test, &cfg.features)?;
    let mut dn = cfg.denoise.clone();
    dn.apply_frequency_removal = true;
    let prep = prepare(&fs_, &cfg.data.class, &dn)?;
    let m = prep.mask.expect("frequency removal enabled");
    let path = out.join("mask.csv");
    m.save_csv(&path)?;
    println!("{} of {} bands retained at threshold {}: {:?}", m.retained(dn.mask_threshold).len(), m.r.len(), dn.mask_threshold, m.retained(dn.mask_threshold));
    println!("wrote {}", path.display());
    Ok(())
}

fn denoise_cmd(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = out_dir(common)?;
    let fs_ = load_feature_set(&cfg.data.train, &cfg.data.val, &cfg.data.test, &cfg.features)?;
    let prep = prepare(&fs_, &cfg.data.class, &cfg.denoise)?;
    if let Some(m) = &prep.mask {
        m.save_csv(out.join("mask.csv"))?;
    }
    write_json(&out.join("standardizer.json"), &prep.standardizer)?;
    for (name, recs) in [("train", &prep.train), ("val", &prep.val), ("test", &prep.test)] {
        let target = out.join(name);
        fs::create_dir_all(&target)?;
        for r in recs {
            save_spectrogram(&r.spectrogram, target.join(format!("{}.spec", r.spectrogram.source_id)))?;
        }
    }
    println!("{} bands after denoising; wrote {}", prep.bands, out.display());
    Ok(())
}

fn train_cmd(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = out_dir(common)?;
    let (report, artifacts) = run_pipeline(&cfg, &out)?;
    println!(
        "trained {} epochs (best {}), {} input bands",
        report.history.epochs.len(),
        report.history.best_epoch,
        report.input_bands
    );
    for (name, r) in [("train", &report.reports.train), ("val", &report.reports.val), ("test", &report.reports.test)] {
        match r {
            Some(r) => println!("{name}: AP_avg {:.4} F1_avg {:.4}", r.ap_avg, r.f1_avg),
            None => println!("{name}: no positive frames"),
        }
    }
    println!("report {}", artifacts.report.display());
    Ok(())
}

fn predict(common: &Common, model_dir: &Path, input: Option<&PathBuf>) -> Result<()> {
    let cfg = load_config(common)?;
    let out = out_dir(common)?;
    let model = load_checkpoint(model_dir.join("model.ckpt"))?;
    let standardizer: Standardizer = serde_json::from_str(
        &fs::read_to_string(model_dir.join("standardizer.json")).context("reading standardizer.json")?,
    )?;
    let mask = if cfg.denoise.apply_frequency_removal {
        Some(ClassMask::load_csv(model_dir.join("mask.csv"), &cfg.data.class)?)
    } else {
        None
    };
    let dir = input.unwrap_or(&cfg.data.test);
    let split = load_split(dir, &cfg.features)?;
    let mut preds = Vec::new();
    for s in &split.spectrograms {
        let p = preprocess(s, mask.as_ref(), &standardizer, &cfg.denoise)?;
        let expected = rcs_core::crnn::ModelConfig { input_bands: p.bands, input_frames: cfg.pipeline.segment_frames, ..model.config.clone() };
        check_compatible(&model, &expected)?;
        preds.push(predict_spectrogram(&model, &p, cfg.pipeline.segment_frames)?);
    }
    let path = out.join("predictions.csv");
    write_predictions_csv(&path, &preds, Some(cfg.pipeline.threshold))?;
    println!("{} recordings predicted; wrote {}", preds.len(), path.display());
    Ok(())
}

fn evaluate_cmd(common: &Common, predictions: &Path, input: Option<&PathBuf>) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = input.unwrap_or(&cfg.data.test);
    let split: SplitFeatures = load_split(dir, &cfg.features)?;
    let hop = split.spectrograms.first().map(|s| s.hop).context("no recordings")?;
    let preds = read_predictions_csv(predictions, hop)?;
    let mut targets = Vec::new();
    for p in &preds {
        let s = split
            .spectrograms
            .iter()
            .find(|s| s.source_id == p.source_id)
            .with_context(|| format!("no recording `{}` in {}", p.source_id, dir.display()))?;
        targets.push(rasterize_targets(&split.events, &s.source_id, s.frames, s.hop, &cfg.data.class));
    }
    let report = evaluate(&preds, &targets, cfg.pipeline.threshold, hop)?;
    println!(
        "AP frame {:.4} 5s {:.4} avg {:.4}; F1 frame {:.4} 5s {:.4} avg {:.4}",
        report.ap_frame, report.ap_5s, report.ap_avg, report.f1_frame, report.f1_5s, report.f1_avg
    );
    if let Some(out) = &common.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("evaluation.json"), &report)?;
    }
    Ok(())
}

fn grid(common: &Common, round: u8, workers: Option<usize>, no_wall_clock: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let out = out_dir(common)?;
    let round = Round::from_number(round)?;
    let spec: GridSpec = cfg.grid.clone().unwrap_or_default();
    let options = GridOptions {
        master_seed: cfg.seed,
        workers: resolve_workers(workers)?,
        record_wall_clock: !no_wall_clock,
    };
    let features = load_feature_set(&cfg.data.train, &cfg.data.val, &cfg.data.test, &cfg.features)?;
    let table = run_grid(&spec, round, &features, &cfg, &options)?;
    let n = match round {
        Round::Architecture => 1,
        Round::LossResample => 2,
    };
    write_json(&out.join(format!("results_round{n}.json")), &table)?;
    export_results(&table, out.join(format!("results_round{n}.csv")))?;
    let skipped = table.rows.iter().filter(|r| r.kind == rcs_core::harness::RowKind::Skipped).count();
    println!("{} rows, {} points skipped", table.rows.len(), skipped);
    match table.best(round) {
        Some(b) => println!(
            "best point {}: denoise {} depth {} channels {} pool {} {} bidirectional {} loss {} O {} U {} (val AP_avg {:.4}, test AP_avg {:.4})",
            b.point,
            b.denoise,
            b.conv_depth,
            b.channel_size,
            b.pool_size,
            b.freq_integration,
            b.bidirectional,
            b.loss,
            b.oversample,
            b.undersample,
            b.val.ap_avg,
            b.test.ap_avg
        ),
        None => println!("no point produced a defined metric"),
    }
    Ok(())
}

fn export(common: &Common, input: &Path) -> Result<()> {
    let table: ResultsTable =
        serde_json::from_str(&fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?)?;
    let out = out_dir(common)?;
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "results".into());
    let path = out.join(format!("{stem}.csv"));
    export_results(&table, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, preset, recordings, seconds, prevalence, snr, splits } => {
            synth(&common, preset, recordings, seconds, prevalence, snr, splits)
        }
        Command::Features { common } => features(&common),
        Command::Mask { common } => mask(&common),
        Command::Denoise { common } => denoise_cmd(&common),
        Command::Train { common } => train_cmd(&common),
        Command::Predict { common, model, input } => predict(&common, &model, input.as_ref()),
        Command::Evaluate { common, predictions, input } => evaluate_cmd(&common, &predictions, input.as_ref()),
        Command::Grid { common, round, workers, no_wall_clock } => grid(&common, round, workers, no_wall_clock),
        Command::Export { common, input } => export(&common, &input),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<rcs_core::Error>()
                .is_some_and(|c| matches!(c, rcs_core::Error::Config(_) | rcs_core::Error::Usage(_)));
            if usage {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
