use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rcs_core::audio::AudioSignal;
use rcs_core::crnn::{build_model, FreqIntegration, ModelConfig};
use rcs_core::denoise::spectral_subtraction;
use rcs_core::eval::average_precision;
use rcs_core::features::{compute_log_mel, FeatureConfig};

fn noise(n: usize) -> Vec<f32> {
    let mut state = 0x2545_f491u32;
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            (state as f32 / u32::MAX as f32) - 0.5
        })
        .collect()
}

fn log_mel(c: &mut Criterion) {
    let sig = AudioSignal::new(noise(16_000 * 10), 16_000, "bench").unwrap();
    let cfg = FeatureConfig::default();
    c.bench_function("log_mel_10s", |b| b.iter(|| compute_log_mel(black_box(&sig), &cfg).unwrap()));
}

fn subtraction(c: &mut Criterion) {
    let sig = AudioSignal::new(noise(16_000 * 60), 16_000, "bench").unwrap();
    let s = compute_log_mel(&sig, &FeatureConfig::default()).unwrap();
    c.bench_function("spectral_subtraction_60s", |b| b.iter(|| spectral_subtraction(black_box(&s), 3.0).unwrap()));
}

fn forward(c: &mut Criterion) {
    let cfg = ModelConfig {
        conv_depth: 2,
        channel_size: 32,
        pool_size: 2,
        freq_integration: FreqIntegration::GlobalAverage,
        bidirectional: true,
        input_frames: 500,
        input_bands: 80,
    };
    let model = build_model::<f32>(cfg, 1, 10, 0).unwrap();
    let x = noise(500 * 80);
    let mut g = c.benchmark_group("crnn");
    g.sample_size(10);
    g.bench_function("predict_500x80", |b| b.iter(|| model.predict(black_box(&x)).unwrap()));
    g.finish();
}

fn ap(c: &mut Criterion) {
    let scores: Vec<f64> = noise(100_000).iter().map(|&v| f64::from(v)).collect();
    let labels: Vec<u8> = scores.iter().map(|&s| u8::from(s > 0.3)).collect();
    c.bench_function("average_precision_100k", |b| b.iter(|| average_precision(black_box(&scores), &labels).unwrap()));
}

criterion_group!(benches, log_mel, subtraction, forward, ap);
criterion_main!(benches);
