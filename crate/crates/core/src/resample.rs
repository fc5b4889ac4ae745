//! Training-time random undersampling of negative segments and duplication
//! of positive segments, per recording.

use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Segment, SegmentBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    /// Fraction of negative segments discarded, in `[0, 1]`.
    pub undersample_fraction: f64,
    /// Extra copies of every positive segment.
    pub oversample_duplications: usize,
    pub seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            undersample_fraction: 0.75,
            oversample_duplications: 2,
            seed: 0,
        }
    }
}

impl ResampleConfig {
    pub fn none() -> Self {
        Self {
            undersample_fraction: 0.0,
            oversample_duplications: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.undersample_fraction) {
            return Err(Error::Config(format!(
                "undersample_fraction {} outside [0, 1]",
                self.undersample_fraction
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.undersample_fraction == 0.0 && self.oversample_duplications == 0
    }
}

/// Splits a batch into segments containing at least one positive frame and
/// all-background segments.
pub fn split_pos_neg(batch: &SegmentBatch) -> Result<(Vec<Arc<Segment>>, Vec<Arc<Segment>>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in &batch.segments {
        match s.is_positive() {
            Some(true) => pos.push(Arc::clone(s)),
            Some(false) => neg.push(Arc::clone(s)),
            None => {
                return Err(Error::Usage(format!(
                    "segment of `{}` at frame {} has no targets",
                    s.source_id, s.start_frame
                )))
            }
        }
    }
    Ok((pos, neg))
}

/// Negatives kept out of `n` when discarding `fraction` of them (round half
/// up, with a tolerance so that e.g. `0.1 * 5` rounds as exactly 0.5).
pub fn kept_negatives(n: usize, fraction: f64) -> usize {
    let keep = (1.0 - fraction) * n as f64;
    ((keep + 0.5 + 1e-9).floor() as usize).min(n)
}

/// Resamples each recording's batch independently, then shuffles the union.
pub fn resample(per_signal: &[SegmentBatch], config: &ResampleConfig) -> Result<SegmentBatch> {
    config.validate()?;
    let mut out = Vec::new();
    for (i, batch) in per_signal.iter().enumerate() {
        let (pos, neg) = split_pos_neg(batch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(i as u64 + 1));
        let keep = kept_negatives(neg.len(), config.undersample_fraction);
        let mut chosen = index::sample(&mut rng, neg.len(), keep).into_vec();
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|j| Arc::clone(&neg[j])));
        for _ in 0..=config.oversample_duplications {
            out.extend(pos.iter().map(Arc::clone));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    out.shuffle(&mut rng);
    Ok(SegmentBatch { segments: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(id: &str, start: usize, positive: bool) -> Arc<Segment> {
        let mut t = vec![0u8; 4];
        if positive {
            t[2] = 1;
        }
        Arc::new(Segment {
            data: vec![start as f32; 4],
            frames: 4,
            bands: 1,
            targets: Some(t),
            source_id: id.into(),
            start_frame: start,
        })
    }

    fn batch(id: &str, n_pos: usize, n_neg: usize) -> SegmentBatch {
        let mut segments = Vec::new();
        for j in 0..n_pos + n_neg {
            segments.push(seg(id, j * 4, j < n_pos));
        }
        SegmentBatch { segments }
    }

    #[test]
    fn split_counts() {
        let (p, n) = split_pos_neg(&batch("a", 3, 7)).unwrap();
        assert_eq!((p.len(), n.len()), (3, 7));
        let mut b = batch("a", 1, 0);
        let mut s = (*b.segments[0]).clone();
        s.targets = None;
        b.segments[0] = Arc::new(s);
        assert!(matches!(split_pos_neg(&b), Err(Error::Usage(_))));
    }

    #[test]
    fn identity_settings_keep_the_multiset() {
        let input = [batch("a", 2, 5), batch("b", 1, 3)];
        let out = resample(&input, &ResampleConfig::none()).unwrap();
        let mut got: Vec<(String, usize)> =
            out.segments.iter().map(|s| (s.source_id.clone(), s.start_frame)).collect();
        got.sort();
        let mut want: Vec<(String, usize)> = input
            .iter()
            .flat_map(|b| b.segments.iter().map(|s| (s.source_id.clone(), s.start_frame)))
            .collect();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn counts_follow_the_rules() {
        let cfg = ResampleConfig {
            undersample_fraction: 0.75,
            oversample_duplications: 2,
            seed: 9,
        };
        let out = resample(&[batch("a", 3, 100)], &cfg).unwrap();
        let (p, n) = split_pos_neg(&out).unwrap();
        assert_eq!(p.len(), 9);
        assert_eq!(n.len(), 25);
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(kept_negatives(3, 0.5), 2);
        assert_eq!(kept_negatives(5, 0.9), 1);
        assert_eq!(kept_negatives(0, 0.5), 0);
        assert_eq!(kept_negatives(10, 1.0), 0);
    }

    #[test]
    fn rejects_fraction_out_of_range() {
        let cfg = ResampleConfig { undersample_fraction: 1.5, ..Default::default() };
        assert!(resample(&[], &cfg).is_err());
    }
}
