//! Segment-based evaluation: average precision and F1 at frame resolution,
//! after max-pooling to 5 s blocks, and their average.

use serde::{Deserialize, Serialize};

use crate::audio::TargetVector;
use crate::error::{Error, Result};
use crate::pipeline::PredictionVector;

/// Length of the coarse evaluation block in seconds.
pub const COARSE_BLOCK_SECONDS: f64 = 5.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_binary(pred: &[u8], truth: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in pred.iter().zip(truth) {
            match (p == 1, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap_frame: f64,
    pub ap_5s: f64,
    pub ap_avg: f64,
    pub f1_frame: f64,
    pub f1_5s: f64,
    pub f1_avg: f64,
    pub counts_frame: Confusion,
    pub counts_5s: Confusion,
    pub threshold: f64,
    pub frame_hop: f64,
    pub pool_frames: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "ap_frame,ap_5s,ap_avg,f1_frame,f1_5s,f1_avg,tp_frame,fp_frame,fn_frame,tn_frame,tp_5s,fp_5s,fn_5s,tn_5s,threshold";

    pub fn csv_row(&self) -> String {
        let (a, b) = (self.counts_frame, self.counts_5s);
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.ap_frame,
            self.ap_5s,
            self.ap_avg,
            self.f1_frame,
            self.f1_5s,
            self.f1_avg,
            a.tp,
            a.fp,
            a.fn_,
            a.tn,
            b.tp,
            b.fp,
            b.fn_,
            b.tn,
            self.threshold
        )
    }
}

/// Non-overlapping max pooling; the final window may be shorter.
pub fn pool_max<T: Copy + PartialOrd>(v: &[T], pool: usize) -> Vec<T> {
    assert!(pool >= 1, "pool must be at least 1");
    v.chunks(pool)
        .map(|w| {
            w.iter()
                .copied()
                .fold(w[0], |m, x| if x > m { x } else { m })
        })
        .collect()
}

/// Step-wise area under the precision-recall curve, thresholds at the
/// distinct scores in descending order.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut ap = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// `2TP / (2TP + FP + FN)`, 0 when the denominator is 0.
pub fn f1(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            pred.len(),
            truth.len()
        )));
    }
    Ok(Confusion::from_binary(pred, truth).f1())
}

pub fn pool_frames_for(frame_hop: f64) -> usize {
    ((COARSE_BLOCK_SECONDS / frame_hop).round() as usize).max(1)
}

/// Evaluates concatenated predictions against concatenated targets.
pub fn evaluate(
    predictions: &[PredictionVector],
    targets: &[TargetVector],
    threshold: f64,
    frame_hop: f64,
) -> Result<EvalReport> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} prediction vectors vs {} target vectors",
            predictions.len(),
            targets.len()
        )));
    }
    let mut scores: Vec<f64> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    for (p, y) in predictions.iter().zip(targets) {
        if p.p.len() != y.len() {
            return Err(Error::Shape(format!(
                "`{}`: {} predictions vs {} targets",
                p.source_id,
                p.p.len(),
                y.len()
            )));
        }
        scores.extend(p.p.iter().map(|&v| f64::from(v)));
        labels.extend_from_slice(&y.values);
    }
    evaluate_concatenated(&scores, &labels, threshold, frame_hop)
}

pub fn evaluate_concatenated(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
    frame_hop: f64,
) -> Result<EvalReport> {
    let pool = pool_frames_for(frame_hop);
    let ap_frame = average_precision(scores, labels)?;
    let binary: Vec<u8> = scores.iter().map(|&s| u8::from(s > threshold)).collect();
    let counts_frame = Confusion::from_binary(&binary, labels);

    let pooled_scores = pool_max(scores, pool);
    let pooled_labels = pool_max(labels, pool);
    let ap_5s = average_precision(&pooled_scores, &pooled_labels)?;
    let pooled_binary: Vec<u8> = pooled_scores.iter().map(|&s| u8::from(s > threshold)).collect();
    let counts_5s = Confusion::from_binary(&pooled_binary, &pooled_labels);

    let (f1_frame, f1_5s) = (counts_frame.f1(), counts_5s.f1());
    Ok(EvalReport {
        ap_frame,
        ap_5s,
        ap_avg: (ap_frame + ap_5s) / 2.0,
        f1_frame,
        f1_5s,
        f1_avg: (f1_frame + f1_5s) / 2.0,
        counts_frame,
        counts_5s,
        threshold,
        frame_hop,
        pool_frames: pool,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_examples() {
        assert_eq!(pool_max(&[0u8, 0, 1, 0], 2), vec![0, 1]);
        let mut v = vec![0u8; 500];
        v[300] = 1;
        assert_eq!(pool_max(&v, 250), vec![0, 1]);
        assert_eq!(pool_max(&[3.0, 1.0, 2.0], 1), vec![3.0, 1.0, 2.0]);
        assert_eq!(pool_max(&[1.0, 5.0, 2.0], 2), vec![5.0, 2.0]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let ap = average_precision(&[0.9, 0.8, 0.1], &[1, 0, 1]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        let n = 7;
        let scores: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 / n as f64).collect();
        let mut labels = vec![0u8; n];
        labels[n - 1] = 1;
        assert!((average_precision(&scores, &labels).unwrap() - 1.0 / n as f64).abs() < 1e-12);
        assert!(matches!(
            average_precision(&[0.3, 0.2], &[0, 0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn tied_scores_form_one_threshold() {
        // All tied: single PR point at recall 1 with precision = prevalence.
        let ap = average_precision(&[0.5; 4], &[1, 0, 0, 0]).unwrap();
        assert!((ap - 0.25).abs() < 1e-12);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(f1(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(f1(&[0, 0, 0], &[1, 0, 1]).unwrap(), 0.0);
        assert_eq!(f1(&[0, 0], &[0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let y: Vec<u8> = (0..1000).map(|t| u8::from((300..320).contains(&t))).collect();
        let p = PredictionVector {
            p: y.iter().map(|&v| f32::from(v)).collect(),
            hop: 0.02,
            source_id: "r".into(),
        };
        let r = evaluate(&[p], &[TargetVector { values: y, hop: 0.02 }], 0.5, 0.02).unwrap();
        assert_eq!(r.pool_frames, 250);
        for v in [r.ap_frame, r.ap_5s, r.ap_avg, r.f1_frame, r.f1_5s, r.f1_avg] {
            assert_eq!(v, 1.0);
        }
    }
}
