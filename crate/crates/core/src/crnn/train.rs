//! Mini-batch Adam training with validation-loss early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::loss::LossConfig;
use super::model::{CrnnModel, ParamSet};
use super::network::{batch_loss, Mode, RunningStatsTracker};
use super::real::Real;
use crate::error::{Error, Result};
use crate::pipeline::{Segment, SegmentBatch};

/// Adam state; moment buffers follow `ParamSet::tensors` order.
pub struct Adam<T> {
    config: TrainConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamSet<T>, config: &TrainConfig) -> Self {
        let zeros: Vec<Vec<T>> = params.tensors().iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        Self {
            config: config.clone(),
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) {
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        let lr = T::of(c.learning_rate * bc2.sqrt() / bc1);
        let eps = T::of(c.epsilon * bc2.sqrt());
        let one = T::one();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p.data.iter_mut().zip(g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                *pi -= lr * *mi / (vi.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation loss; stops after `patience` epochs without
/// a strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// `epoch` is 1-based.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn targets_of(seg: &Segment) -> Result<&[u8]> {
    seg.targets
        .as_deref()
        .ok_or_else(|| Error::Usage(format!("segment of `{}` has no targets", seg.source_id)))
}

/// Mean per-frame loss of `batch` in inference mode.
pub fn evaluate_loss<T: Real>(
    model: &CrnnModel<T>,
    batch: &SegmentBatch,
    loss: &LossConfig,
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut frames = 0usize;
    for chunk in batch.segments.chunks(batch_size.max(1)) {
        let inputs: Vec<&[f32]> = chunk.iter().map(|s| s.data.as_slice()).collect();
        let targets: Vec<&[u8]> = chunk.iter().map(|s| targets_of(s)).collect::<Result<_>>()?;
        let cache = model.forward_batch(&inputs, Mode::Infer)?;
        let (l, _) = batch_loss(&cache.probs, &targets, loss);
        total += l * cache.probs.len() as f64;
        frames += cache.probs.len();
    }
    Ok(total / frames.max(1) as f64)
}

/// One optimizer step on `chunk`; returns the batch loss.
fn train_step<T: Real>(
    model: &mut CrnnModel<T>,
    adam: &mut Adam<T>,
    stats: &mut RunningStatsTracker,
    chunk: &[&Segment],
    loss: &LossConfig,
) -> Result<f64> {
    let inputs: Vec<&[f32]> = chunk.iter().map(|s| s.data.as_slice()).collect();
    let targets: Vec<&[u8]> = chunk.iter().map(|s| targets_of(s)).collect::<Result<_>>()?;
    let cache = model.forward_batch(&inputs, Mode::Train)?;
    let (l, dlogits) = batch_loss(&cache.probs, &targets, loss);
    let grads = model.backward(&cache, &dlogits);
    stats.observe(model, &cache);
    adam.step(&mut model.params, &grads);
    Ok(l)
}

/// Trains `model` and returns the parameters with the lowest validation loss.
pub fn train<T: Real>(
    mut model: CrnnModel<T>,
    train_set: &SegmentBatch,
    val_set: &SegmentBatch,
    loss: &LossConfig,
    config: &TrainConfig,
) -> Result<(CrnnModel<T>, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyCorpus("training and validation sets must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&model.params, config);
    let mut stats = RunningStatsTracker::new(&model);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut best = model.clone();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut frames = 0usize;
        for idx in order.chunks(config.batch_size) {
            let chunk: Vec<&Segment> = idx.iter().map(|&i| train_set.segments[i].as_ref()).collect();
            let n: usize = chunk.iter().map(|s| s.frames).sum();
            let l = train_step(&mut model, &mut adam, &mut stats, &chunk, loss)?;
            if !l.is_finite() || !model.params.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("non-finite training loss {l} or parameters"),
                });
            }
            sum += l * n as f64;
            frames += n;
        }
        let train_loss = sum / frames.max(1) as f64;
        let val_loss = evaluate_loss(&model, val_set, loss, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: format!("non-finite validation loss {val_loss}"),
            });
        }
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        history.epochs.push(EpochRecord { epoch, train_loss, val_loss });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_epoch = stopper.best_epoch();
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_stops_and_keeps_best_epoch() {
        let mut s = EarlyStopping::new(3);
        let losses = [1.0, 0.9, 0.95, 0.96, 0.97];
        let decisions: Vec<StopDecision> = losses.iter().enumerate().map(|(i, &l)| s.observe(i + 1, l)).collect();
        assert_eq!(
            decisions,
            vec![
                StopDecision::Improved,
                StopDecision::Improved,
                StopDecision::Continue,
                StopDecision::Continue,
                StopDecision::Stop
            ]
        );
        assert_eq!(s.best_epoch(), 2);
        assert_eq!(s.best_loss(), 0.9);
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut s = EarlyStopping::new(1);
        s.observe(1, 0.5);
        assert_eq!(s.observe(2, 0.5), StopDecision::Stop);
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        use crate::crnn::config::{FreqIntegration, ModelConfig};
        let cfg = ModelConfig {
            conv_depth: 1,
            channel_size: 2,
            pool_size: 2,
            freq_integration: FreqIntegration::GlobalAverage,
            bidirectional: false,
            input_frames: 3,
            input_bands: 4,
        };
        let mut p = ParamSet::<f64>::zeros(&cfg);
        let mut g = ParamSet::<f64>::zeros(&cfg);
        g.out_bias[0] = 3.0;
        g.out_weight[0] = -0.2;
        let mut adam = Adam::new(&p, &TrainConfig::default());
        adam.step(&mut p, &g);
        assert!((p.out_bias[0] + 1e-3).abs() < 1e-9);
        assert!((p.out_weight[0] - 1e-3).abs() < 1e-9);
        assert_eq!(p.out_weight[1], 0.0);
    }
}
