//! Parameter containers and initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, KERNEL};
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    /// `[KERNEL][KERNEL][in][out]`, row-major.
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// One GRU direction; gate order is update, reset, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<T> {
    /// `[input][3 * hidden]`
    pub kernel: Vec<T>,
    /// `[hidden][3 * hidden]`
    pub recurrent_kernel: Vec<T>,
    pub input_bias: Vec<T>,
    pub recurrent_bias: Vec<T>,
    pub input_dim: usize,
    pub hidden: usize,
}

/// Every trainable tensor. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub convs: Vec<ConvParams<T>>,
    pub gru_fwd: GruParams<T>,
    pub gru_bwd: Option<GruParams<T>>,
    pub out_weight: Vec<T>,
    pub out_bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrnnModel<T = f32> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    pub running: Vec<BnRunning<T>>,
}

/// Named tensor view used by checkpoints and gradient checks.
pub struct TensorRef<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [T],
}

pub struct TensorMut<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a mut Vec<T>,
}

impl<T: Real> ConvParams<T> {
    fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            kernel: vec![T::zero(); KERNEL * KERNEL * cin * cout],
            bias: vec![T::zero(); cout],
            gamma: vec![T::zero(); cout],
            beta: vec![T::zero(); cout],
            in_channels: cin,
            out_channels: cout,
        }
    }
}

impl<T: Real> GruParams<T> {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            kernel: vec![T::zero(); input_dim * 3 * hidden],
            recurrent_kernel: vec![T::zero(); hidden * 3 * hidden],
            input_bias: vec![T::zero(); 3 * hidden],
            recurrent_bias: vec![T::zero(); 3 * hidden],
            input_dim,
            hidden,
        }
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        let (d, h) = (self.input_dim, self.hidden);
        out.push(TensorRef { name: format!("{prefix}.kernel"), dims: vec![d, 3 * h], data: &self.kernel });
        out.push(TensorRef {
            name: format!("{prefix}.recurrent_kernel"),
            dims: vec![h, 3 * h],
            data: &self.recurrent_kernel,
        });
        out.push(TensorRef { name: format!("{prefix}.input_bias"), dims: vec![3 * h], data: &self.input_bias });
        out.push(TensorRef {
            name: format!("{prefix}.recurrent_bias"),
            dims: vec![3 * h],
            data: &self.recurrent_bias,
        });
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, T>>) {
        let (d, h) = (self.input_dim, self.hidden);
        out.push(TensorMut { name: format!("{prefix}.kernel"), dims: vec![d, 3 * h], data: &mut self.kernel });
        out.push(TensorMut {
            name: format!("{prefix}.recurrent_kernel"),
            dims: vec![h, 3 * h],
            data: &mut self.recurrent_kernel,
        });
        out.push(TensorMut {
            name: format!("{prefix}.input_bias"),
            dims: vec![3 * h],
            data: &mut self.input_bias,
        });
        out.push(TensorMut {
            name: format!("{prefix}.recurrent_bias"),
            dims: vec![3 * h],
            data: &mut self.recurrent_bias,
        });
    }
}

impl<T: Real> ParamSet<T> {
    /// Zero-filled parameters shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config.channel_size;
        let convs = (0..config.conv_depth)
            .map(|l| ConvParams::zeros(if l == 0 { 1 } else { c }, c))
            .collect();
        let d = config.integration_dim();
        let h = config.hidden_per_direction();
        Self {
            convs,
            gru_fwd: GruParams::zeros(d, h),
            gru_bwd: config.bidirectional.then(|| GruParams::zeros(d, h)),
            out_weight: vec![T::zero(); c],
            out_bias: vec![T::zero(); 1],
        }
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        for (l, cp) in self.convs.iter().enumerate() {
            let (ci, co) = (cp.in_channels, cp.out_channels);
            out.push(TensorRef { name: format!("conv{l}.kernel"), dims: vec![KERNEL, KERNEL, ci, co], data: &cp.kernel });
            out.push(TensorRef { name: format!("conv{l}.bias"), dims: vec![co], data: &cp.bias });
            out.push(TensorRef { name: format!("bn{l}.gamma"), dims: vec![co], data: &cp.gamma });
            out.push(TensorRef { name: format!("bn{l}.beta"), dims: vec![co], data: &cp.beta });
        }
        self.gru_fwd.tensors("gru_fwd", &mut out);
        if let Some(g) = &self.gru_bwd {
            g.tensors("gru_bwd", &mut out);
        }
        out.push(TensorRef { name: "output.weight".into(), dims: vec![self.out_weight.len()], data: &self.out_weight });
        out.push(TensorRef { name: "output.bias".into(), dims: vec![], data: &self.out_bias });
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut out = Vec::new();
        for (l, cp) in self.convs.iter_mut().enumerate() {
            let (ci, co) = (cp.in_channels, cp.out_channels);
            out.push(TensorMut { name: format!("conv{l}.kernel"), dims: vec![KERNEL, KERNEL, ci, co], data: &mut cp.kernel });
            out.push(TensorMut { name: format!("conv{l}.bias"), dims: vec![co], data: &mut cp.bias });
            out.push(TensorMut { name: format!("bn{l}.gamma"), dims: vec![co], data: &mut cp.gamma });
            out.push(TensorMut { name: format!("bn{l}.beta"), dims: vec![co], data: &mut cp.beta });
        }
        self.gru_fwd.tensors_mut("gru_fwd", &mut out);
        if let Some(g) = &mut self.gru_bwd {
            g.tensors_mut("gru_bwd", &mut out);
        }
        let n = self.out_weight.len();
        out.push(TensorMut { name: "output.weight".into(), dims: vec![n], data: &mut self.out_weight });
        out.push(TensorMut { name: "output.bias".into(), dims: vec![], data: &mut self.out_bias });
        out
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

impl<T: Real> CrnnModel<T> {
    /// All tensors including batch-norm running statistics, in checkpoint order.
    pub fn all_tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = self.params.tensors();
        for (l, r) in self.running.iter().enumerate() {
            out.push(TensorRef { name: format!("bn{l}.running_mean"), dims: vec![r.mean.len()], data: &r.mean });
            out.push(TensorRef { name: format!("bn{l}.running_var"), dims: vec![r.var.len()], data: &r.var });
        }
        out
    }

    pub fn all_tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut out = self.params.tensors_mut();
        for (l, r) in self.running.iter_mut().enumerate() {
            let n = r.mean.len();
            out.push(TensorMut { name: format!("bn{l}.running_mean"), dims: vec![n], data: &mut r.mean });
            out.push(TensorMut { name: format!("bn{l}.running_var"), dims: vec![n], data: &mut r.var });
        }
        out
    }

    /// Zero-initialized model with unit batch-norm scale and running variance.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::zeros(&config);
        for cp in &mut params.convs {
            cp.gamma.iter_mut().for_each(|g| *g = T::one());
        }
        let running = (0..config.conv_depth)
            .map(|_| BnRunning {
                mean: vec![T::zero(); config.channel_size],
                var: vec![T::one(); config.channel_size],
            })
            .collect();
        Ok(Self { config, params, running })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Converts element type, e.g. for an f64 gradient check of an f32 model.
    pub fn cast<U: Real>(&self) -> CrnnModel<U> {
        let mut out = CrnnModel::<U>::zeroed(self.config.clone()).expect("config already validated");
        for (dst, src) in out.all_tensors_mut().into_iter().zip(self.all_tensors()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d = U::of(s.f64());
            }
        }
        out
    }
}

fn fill_uniform<T: Real>(rng: &mut ChaCha8Rng, data: &mut [T], limit: f64) {
    for v in data {
        *v = T::of(rng.random_range(-limit..limit));
    }
}

/// Standard deviation of the output weights at initialization; keeps the
/// initial output close to `sigmoid(bias)` for any input.
pub const OUTPUT_WEIGHT_STD: f64 = 0.01;

/// Builds a model with fan-in uniform conv and recurrent weights, small
/// Gaussian output weights, zero biases, unit batch-norm scale and the
/// output bias set to `ln(pos / neg)`.
pub fn build_model<T: Real>(
    config: ModelConfig,
    train_pos_frames: usize,
    train_neg_frames: usize,
    seed: u64,
) -> Result<CrnnModel<T>> {
    if train_pos_frames == 0 || train_neg_frames == 0 {
        return Err(Error::Config(format!(
            "need positive and negative training frames, got {train_pos_frames} / {train_neg_frames}"
        )));
    }
    let mut model = CrnnModel::<T>::zeroed(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = &mut model.params;
    for cp in &mut p.convs {
        // He-uniform: the conv output feeds a ReLU.
        let fan_in = (KERNEL * KERNEL * cp.in_channels) as f64;
        fill_uniform(&mut rng, &mut cp.kernel, (6.0 / fan_in).sqrt());
    }
    let mut init_gru = |g: &mut GruParams<T>| {
        fill_uniform(&mut rng, &mut g.kernel, (3.0 / g.input_dim as f64).sqrt());
        fill_uniform(&mut rng, &mut g.recurrent_kernel, (3.0 / g.hidden as f64).sqrt());
    };
    init_gru(&mut p.gru_fwd);
    if let Some(g) = &mut p.gru_bwd {
        init_gru(g);
    }
    let normal = Normal::new(0.0, OUTPUT_WEIGHT_STD).expect("positive std");
    for v in &mut p.out_weight {
        *v = T::of(normal.sample(&mut rng));
    }
    p.out_bias[0] = T::of((train_pos_frames as f64 / train_neg_frames as f64).ln());
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crnn::config::FreqIntegration;

    fn cfg() -> ModelConfig {
        ModelConfig {
            conv_depth: 2,
            channel_size: 8,
            pool_size: 2,
            freq_integration: FreqIntegration::Flatten,
            bidirectional: true,
            input_frames: 10,
            input_bands: 8,
        }
    }

    #[test]
    fn output_bias_is_log_ratio() {
        let m = build_model::<f32>(cfg(), 1000, 99000, 1).unwrap();
        assert!((f64::from(m.params.out_bias[0]) - (1.0f64 / 99.0).ln()).abs() < 1e-6);
        assert!((f64::from(m.params.out_bias[0]) + 4.595).abs() < 1e-3);
    }

    #[test]
    fn shapes_follow_config() {
        let m = build_model::<f64>(cfg(), 1, 1, 0).unwrap();
        let names: Vec<(String, Vec<usize>)> =
            m.all_tensors().into_iter().map(|t| (t.name, t.dims)).collect();
        assert_eq!(names[0], ("conv0.kernel".into(), vec![5, 5, 1, 8]));
        assert_eq!(names[4], ("conv1.kernel".into(), vec![5, 5, 8, 8]));
        // flatten: 8 -> 4 -> 2 bands, 2 * 8 = 16 inputs, 4 units per direction
        assert!(names.contains(&("gru_fwd.kernel".into(), vec![16, 12])));
        assert!(names.contains(&("gru_bwd.recurrent_kernel".into(), vec![4, 12])));
        assert!(names.contains(&("output.bias".into(), vec![])));
        assert!(names.contains(&("bn1.running_var".into(), vec![8])));
        for t in m.all_tensors() {
            let n: usize = t.dims.iter().product();
            assert_eq!(n, t.data.len(), "{}", t.name);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_model::<f32>(cfg(), 0, 10, 0).is_err());
        let mut c = cfg();
        c.input_bands = 3;
        assert!(matches!(build_model::<f32>(c, 1, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let a = build_model::<f32>(cfg(), 3, 7, 11).unwrap();
        let b = build_model::<f32>(cfg(), 3, 7, 11).unwrap();
        let c = build_model::<f32>(cfg(), 3, 7, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
