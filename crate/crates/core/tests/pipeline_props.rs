use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use rcs_core::pipeline::{binarize, concatenate_predictions, segment, PredictionVector, Segment, SegmentBatch, MAX_TAIL_OVERLAP};
use rcs_core::resample::{kept_negatives, resample, ResampleConfig};
use rcs_core::features::Spectrogram;
use rcs_core::TargetVector;

fn spec(frames: usize) -> Spectrogram {
    let data = (0..frames * 2).map(|i| i as f32).collect();
    Spectrogram::new(data, frames, 2, 0.02, vec![100.0, 200.0], "r").unwrap()
}

proptest! {
    #[test]
    fn segment_then_concatenate_reproduces_targets(frames in 1usize..3000, seg in 1usize..700, bits in prop::collection::vec(any::<bool>(), 3000)) {
        let s = spec(frames);
        let y = TargetVector { values: bits[..frames].iter().map(|&b| u8::from(b)).collect(), hop: 0.02 };
        let (batch, map) = segment(&s, Some(&y), seg).unwrap();
        let preds: Vec<Vec<f32>> = batch.segments.iter().map(|g| g.targets.as_ref().unwrap().iter().map(|&v| f32::from(v)).collect()).collect();
        let p = concatenate_predictions(&preds, &map).unwrap();
        prop_assert_eq!(p.p.len(), frames);
        for t in 0..map.covered_frames() {
            prop_assert_eq!(p.p[t], f32::from(y.values[t]));
        }
        for t in map.covered_frames()..frames {
            prop_assert_eq!(p.p[t], 0.0);
        }
    }

    #[test]
    fn segment_count_follows_overlap_rule(frames in 1usize..5000, seg in 1usize..800) {
        let (batch, map) = segment(&spec(frames), None, seg).unwrap();
        let full = frames / seg;
        let rem = frames % seg;
        let tail = rem > 0 && full > 0 && ((seg - rem) as f64) < MAX_TAIL_OVERLAP * seg as f64;
        prop_assert_eq!(batch.len(), full + usize::from(tail));
        prop_assert!(map.starts.iter().all(|&st| st + seg <= frames));
    }

    #[test]
    fn binarization_is_monotone_in_threshold(p in prop::collection::vec(0.0f32..1.0, 1..200), lo in 0.0f64..1.0, step in 0.0f64..0.5) {
        let pv = PredictionVector { p, hop: 0.02, source_id: "r".into() };
        let a = binarize(&pv, lo);
        let b = binarize(&pv, lo + step);
        prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| y <= x));
    }

    #[test]
    fn resampling_changes_only_multiplicities(
        layout in prop::collection::vec((0usize..6, 0usize..12), 1..5),
        o in 0usize..5,
        u in prop::sample::select(vec![0.0, 0.5, 0.75, 0.9, 0.95, 1.0]),
        seed in any::<u64>(),
    ) {
        let per_signal: Vec<SegmentBatch> = layout
            .iter()
            .enumerate()
            .map(|(i, &(pos, neg))| SegmentBatch {
                segments: (0..pos + neg)
                    .map(|j| {
                        let mut t = vec![0u8; 3];
                        if j < pos {
                            t[0] = 1;
                        }
                        Arc::new(Segment { data: vec![(i * 100 + j) as f32; 3], frames: 3, bands: 1, targets: Some(t), source_id: format!("s{i}"), start_frame: j * 3 })
                    })
                    .collect(),
            })
            .collect();
        let cfg = ResampleConfig { undersample_fraction: u, oversample_duplications: o, seed };
        let out = resample(&per_signal, &cfg).unwrap();

        let originals: HashMap<(String, usize), &Arc<Segment>> = per_signal
            .iter()
            .flat_map(|b| b.segments.iter())
            .map(|s| ((s.source_id.clone(), s.start_frame), s))
            .collect();
        for s in &out.segments {
            let orig = originals[&(s.source_id.clone(), s.start_frame)];
            prop_assert_eq!(&**s, &**orig);
        }
        let pos_before: usize = layout.iter().map(|l| l.0).sum();
        let pos_after = out.segments.iter().filter(|s| s.is_positive() == Some(true)).count();
        prop_assert_eq!(pos_after, (o + 1) * pos_before);
        let neg_want: usize = layout.iter().map(|l| kept_negatives(l.1, u)).sum();
        prop_assert_eq!(out.len() - pos_after, neg_want);

        let again = resample(&per_signal, &cfg).unwrap();
        let key = |b: &SegmentBatch| b.segments.iter().map(|s| (s.source_id.clone(), s.start_frame)).collect::<Vec<_>>();
        prop_assert_eq!(key(&out), key(&again));
    }
}

#[test]
fn kept_negatives_rounds_half_up() {
    assert_eq!(kept_negatives(10, 0.75), 3);
    assert_eq!(kept_negatives(5, 0.9), 1);
    assert_eq!(kept_negatives(3, 0.5), 2);
    assert_eq!(kept_negatives(7, 1.0), 0);
    assert_eq!(kept_negatives(7, 0.0), 7);
}
