use proptest::prelude::*;
use rcs_core::eval::{average_precision, evaluate, evaluate_concatenated, f1, pool_max};
use rcs_core::pipeline::PredictionVector;
use rcs_core::TargetVector;

fn labelled(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (prop::collection::vec(0.0f64..1.0, n), prop::collection::vec(any::<bool>(), n)).prop_map(|(s, y)| {
        let mut y: Vec<u8> = y.into_iter().map(u8::from).collect();
        y[0] = 1;
        (s, y)
    })
}

proptest! {
    #[test]
    fn ap_is_invariant_under_monotone_transforms((scores, labels) in (1usize..400).prop_flat_map(labelled), k in 1u32..5) {
        // Grid scores keep both transforms strictly monotone in floating point.
        let fine: Vec<f64> = scores.iter().map(|s| (s * 1000.0).floor() / 1000.0).collect();
        let coarse: Vec<f64> = scores.iter().map(|s| (s * 8.0).floor() / 8.0).collect();
        for s in [&fine, &coarse] {
            let base = average_precision(s, &labels).unwrap();
            let t1: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() + 1.0).collect();
            let t2: Vec<f64> = s.iter().map(|v| v.powi(2 * k as i32 + 1) * 0.5).collect();
            prop_assert_eq!(average_precision(&t1, &labels).unwrap(), base);
            prop_assert_eq!(average_precision(&t2, &labels).unwrap(), base);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }

    #[test]
    fn f1_is_bounded_and_one_only_on_exact_match((scores, labels) in (1usize..300).prop_flat_map(labelled), c in 0.05f64..0.95) {
        let pred: Vec<u8> = scores.iter().map(|&s| u8::from(s > c)).collect();
        let v = f1(&pred, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v == 1.0, pred == labels);
        prop_assert_eq!(f1(&labels, &labels).unwrap(), 1.0);
    }

    #[test]
    fn coarse_pooling_keeps_detected_events(
        n_blocks in 1usize..8,
        events in prop::collection::vec((0usize..2000, 1usize..250), 1..6),
        hits in prop::collection::vec(0usize..250, 6),
    ) {
        let pool = 250;
        let n = n_blocks * pool;
        let mut truth = vec![0u8; n];
        let mut pred = vec![0u8; n];
        let mut spans = Vec::new();
        for (i, &(start, len)) in events.iter().enumerate() {
            let start = start % n;
            let end = (start + len).min(n);
            truth[start..end].iter_mut().for_each(|v| *v = 1);
            pred[start + hits[i] % (end - start)] = 1;
            spans.push((start, end));
        }
        let (pt, pp) = (pool_max(&truth, pool), pool_max(&pred, pool));
        for (start, end) in spans {
            let detected = (start / pool..=(end - 1) / pool).any(|b| pp[b] == 1 && pt[b] == 1);
            prop_assert!(detected);
        }
    }

    #[test]
    fn evaluating_recordings_equals_evaluating_their_concatenation(
        lens in prop::collection::vec(1usize..600, 1..5),
        seed_scores in prop::collection::vec(0.0f32..1.0, 2400),
        seed_labels in prop::collection::vec(any::<bool>(), 2400),
    ) {
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        let (mut all_s, mut all_y) = (Vec::new(), Vec::new());
        let mut off = 0;
        for (i, &len) in lens.iter().enumerate() {
            let p: Vec<f32> = seed_scores[off..off + len].to_vec();
            let mut y: Vec<u8> = seed_labels[off..off + len].iter().map(|&b| u8::from(b)).collect();
            if i == 0 {
                y[0] = 1;
            }
            all_s.extend(p.iter().map(|&v| f64::from(v)));
            all_y.extend_from_slice(&y);
            preds.push(PredictionVector { p, hop: 0.02, source_id: format!("r{i}") });
            targets.push(TargetVector { values: y, hop: 0.02 });
            off += len;
        }
        let a = evaluate(&preds, &targets, 0.5, 0.02).unwrap();
        let b = evaluate_concatenated(&all_s, &all_y, 0.5, 0.02).unwrap();
        prop_assert_eq!(&a, &b);

        // Frame-level results depend only on the multiset of pairs.
        preds.reverse();
        targets.reverse();
        let r = evaluate(&preds, &targets, 0.5, 0.02).unwrap();
        prop_assert_eq!(r.ap_frame, a.ap_frame);
        prop_assert_eq!(r.counts_frame, a.counts_frame);
    }
}
