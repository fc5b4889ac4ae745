use proptest::prelude::*;
use rcs_core::audio::rasterize_targets;
use rcs_core::features::{compute_log_mel, FeatureConfig};
use rcs_core::synth::{generate_corpus, EventClassSpec, SynthConfig};

fn config(n: usize, seconds: f64, prevalence: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        n_recordings: n,
        recording_seconds: seconds,
        sample_rate: 8000,
        classes: vec![EventClassSpec::drumming(prevalence, 10.0), EventClassSpec::vocalization(prevalence, 5.0)],
        noise: Default::default(),
        seed,
        id_prefix: "p".into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn events_stay_inside_their_recordings(
        n in 1usize..4,
        seconds in 5.0f64..20.0,
        prevalence in 0.01f64..0.2,
        seed in any::<u64>(),
    ) {
        let cfg = config(n, seconds, prevalence, seed);
        let corpus = generate_corpus(&cfg).unwrap();
        prop_assert_eq!(corpus.recordings.len(), n);
        for rec in &corpus.recordings {
            prop_assert_eq!(rec.samples.len(), (seconds * 8000.0).round() as usize);
            prop_assert!(rec.samples.iter().all(|v| v.is_finite()));
        }
        let duration = corpus.recordings[0].samples.len() as f64 / 8000.0;
        for e in &corpus.events.events {
            prop_assert!(corpus.recordings.iter().any(|r| r.source_id == e.source_id));
            prop_assert!(cfg.classes.iter().any(|c| c.label == e.class_label));
            prop_assert!(e.start >= 0.0 && e.start < e.end && e.end <= duration + 1e-9);
        }
        let again = generate_corpus(&cfg).unwrap();
        prop_assert_eq!(&again.events, &corpus.events);
        prop_assert_eq!(&again.recordings[0].samples, &corpus.recordings[0].samples);
    }
}

#[test]
fn events_raise_energy_in_their_band() {
    let mut cfg = config(4, 60.0, 0.05, 21);
    cfg.sample_rate = 16000;
    cfg.classes = vec![EventClassSpec::drumming(0.05, 10.0)];
    let corpus = generate_corpus(&cfg).unwrap();
    let fc = FeatureConfig::default();
    let mut margins = Vec::new();
    for rec in &corpus.recordings {
        let s = compute_log_mel(rec, &fc).unwrap();
        let y = rasterize_targets(&corpus.events, &rec.source_id, s.frames, s.hop, "drumming");
        let bands: Vec<usize> = (0..s.bands).filter(|&f| (40.0..=140.0).contains(&s.band_frequencies[f])).collect();
        assert!(!bands.is_empty());
        let (mut on, mut off, mut n_on, mut n_off) = (0.0f64, 0.0f64, 0usize, 0usize);
        for t in 0..s.frames {
            let e: f64 = bands.iter().map(|&f| f64::from(s.at(t, f))).sum::<f64>() / bands.len() as f64;
            if y.values[t] == 1 {
                on += e;
                n_on += 1;
            } else {
                off += e;
                n_off += 1;
            }
        }
        assert!(n_on > 0 && n_off > 0);
        margins.push(on / n_on as f64 - off / n_off as f64);
    }
    // Natural-log units; gaps between pulses pull the frame average below the
    // nominal signal-to-noise ratio.
    assert!(margins.iter().all(|&m| m > 0.5), "margins {margins:?}");
}
