#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcs_core::crnn::{batch_loss, build_model, CrnnModel, FreqIntegration, LossConfig, LossVariant, Mode, ModelConfig, Real};

pub fn tiny_config(integ: FreqIntegration, bidirectional: bool) -> ModelConfig {
    ModelConfig {
        conv_depth: 1,
        channel_size: 4,
        pool_size: 2,
        freq_integration: integ,
        bidirectional,
        input_frames: 8,
        input_bands: 6,
    }
}

pub struct GradCase {
    pub inputs: Vec<Vec<f32>>,
    pub targets: Vec<Vec<u8>>,
    pub loss: LossConfig,
}

pub fn grad_case(cfg: &ModelConfig, variant: LossVariant, batch: usize, seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.input_frames * cfg.input_bands;
    let inputs: Vec<Vec<f32>> = (0..batch).map(|_| (0..n).map(|_| rng.random_range(-1.5f32..1.5)).collect()).collect();
    let targets: Vec<Vec<u8>> = (0..batch)
        .map(|_| (0..cfg.input_frames).map(|_| u8::from(rng.random_bool(0.3))).collect())
        .collect();
    let pos = targets.iter().flatten().filter(|&&y| y == 1).count().max(1);
    let neg = (batch * cfg.input_frames - pos).max(1);
    GradCase { inputs, targets, loss: LossConfig::new(variant, 2.0, pos, neg) }
}

pub fn loss_of<T: Real>(m: &CrnnModel<T>, case: &GradCase, mode: Mode) -> f64 {
    let refs: Vec<&[f32]> = case.inputs.iter().map(Vec::as_slice).collect();
    let targets: Vec<&[u8]> = case.targets.iter().map(Vec::as_slice).collect();
    let cache = m.forward_batch(&refs, mode).unwrap();
    batch_loss(&cache.probs, &targets, &case.loss).0
}

/// Per-tensor comparison of analytic and central-difference gradients.
pub struct TensorCheck {
    pub name: String,
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub abs_error: f64,
}

/// Analytic gradients from a model of type `T`; numeric gradients from an
/// f64 copy of the same parameters with step `h`.
pub fn gradient_check<T: Real>(model: &CrnnModel<T>, case: &GradCase, mode: Mode, h: f64) -> Vec<TensorCheck> {
    let refs: Vec<&[f32]> = case.inputs.iter().map(Vec::as_slice).collect();
    let targets: Vec<&[u8]> = case.targets.iter().map(Vec::as_slice).collect();
    let cache = model.forward_batch(&refs, mode).unwrap();
    let (_, dlogits) = batch_loss(&cache.probs, &targets, &case.loss);
    let grads = model.backward(&cache, &dlogits);

    let mut probe: CrnnModel<f64> = model.cast();
    let names: Vec<String> = probe.params.tensors().into_iter().map(|t| t.name).collect();
    let mut out = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let len = probe.params.tensors()[ti].data.len();
        let mut numeric = vec![0.0; len];
        for i in 0..len {
            let orig = probe.params.tensors()[ti].data[i];
            probe.params.tensors_mut()[ti].data[i] = orig + h;
            let up = loss_of(&probe, case, mode);
            probe.params.tensors_mut()[ti].data[i] = orig - h;
            let down = loss_of(&probe, case, mode);
            probe.params.tensors_mut()[ti].data[i] = orig;
            numeric[i] = (up - down) / (2.0 * h);
        }
        let analytic: Vec<f64> = grads.tensors()[ti].data.iter().map(|v| v.f64()).collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let (an, nn, dn) = (norm(&analytic), norm(&numeric), norm(&diff));
        let rel = if an + nn == 0.0 { 0.0 } else { dn / (an + nn) };
        out.push(TensorCheck { name: name.clone(), rel_error: rel, analytic_norm: an, numeric_norm: nn, abs_error: dn });
    }
    out
}

/// A tensor passes when its relative error is below `rel_tol`, or when both
/// gradients are at the noise floor `abs_floor` (a conv bias followed by
/// batch normalization in training mode has an identically zero gradient).
pub fn check_passes(c: &TensorCheck, rel_tol: f64, abs_floor: f64) -> bool {
    c.rel_error < rel_tol || (c.analytic_norm < abs_floor && c.numeric_norm < abs_floor)
}

pub fn grad_model<T: Real>(cfg: ModelConfig, seed: u64) -> CrnnModel<T> {
    let mut m = build_model::<T>(cfg, 3, 13, seed).unwrap();
    // Non-trivial running statistics so the inference path is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for r in &mut m.running {
        for v in &mut r.mean {
            *v = T::of(rng.random_range(-0.3..0.3));
        }
        for v in &mut r.var {
            *v = T::of(rng.random_range(0.5..2.0));
        }
    }
    for cp in &mut m.params.convs {
        for v in cp.bias.iter_mut().chain(cp.beta.iter_mut()) {
            *v = T::of(rng.random_range(-0.2..0.2));
        }
        for v in &mut cp.gamma {
            *v = T::of(rng.random_range(0.7..1.3));
        }
    }
    for g in std::iter::once(&mut m.params.gru_fwd).chain(m.params.gru_bwd.as_mut()) {
        for v in g.input_bias.iter_mut().chain(g.recurrent_bias.iter_mut()) {
            *v = T::of(rng.random_range(-0.2..0.2));
        }
    }
    // Unit-scale output weights so upstream gradients are not tiny.
    let limit = (3.0 / m.params.out_weight.len() as f64).sqrt();
    for v in &mut m.params.out_weight {
        *v = T::of(rng.random_range(-limit..limit));
    }
    m.params.out_bias[0] = T::of(-0.4);
    m
}
