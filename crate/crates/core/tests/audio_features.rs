use proptest::prelude::*;
use rcs_core::audio::{decode_wav, load_wav, peak_normalize, rasterize_targets, write_wav_pcm16, AudioSignal, Event, EventList};
use rcs_core::features::{compute_log_mel, FeatureConfig};

fn event(start: f64, len: f64) -> Event {
    Event {
        source_id: "r".into(),
        start,
        end: start + len,
        class_label: "c".into(),
    }
}

fn events_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..9.0, 0.001f64..2.0), 0..8)
}

proptest! {
    #[test]
    fn rasterization_is_or_of_single_events(spans in events_strategy(), extra in (0.0f64..9.0, 0.001f64..2.0)) {
        let evs: Vec<Event> = spans.iter().map(|&(s, l)| event(s, l)).collect();
        let all = rasterize_targets(&EventList::new(evs.clone()).unwrap(), "r", 500, 0.02, "c");
        let mut or = vec![0u8; 500];
        for e in &evs {
            let one = rasterize_targets(&EventList::new(vec![e.clone()]).unwrap(), "r", 500, 0.02, "c");
            for (o, v) in or.iter_mut().zip(&one.values) {
                *o |= v;
            }
        }
        prop_assert_eq!(&all.values, &or);

        let mut more = evs;
        more.push(event(extra.0, extra.1));
        let grown = rasterize_targets(&EventList::new(more).unwrap(), "r", 500, 0.02, "c");
        prop_assert!(all.values.iter().zip(&grown.values).all(|(a, b)| b >= a));
    }

    #[test]
    fn peak_normalize_is_idempotent(samples in prop::collection::vec(-3.0f32..3.0, 1..300)) {
        let s = AudioSignal::new(samples, 8000, "x").unwrap();
        let once = peak_normalize(s);
        let twice = peak_normalize(once.clone());
        prop_assert_eq!(once.samples, twice.samples);
    }
}

fn noise(n: usize, seed: u32) -> Vec<f32> {
    let mut state = seed.wrapping_mul(2_654_435_761).wrapping_add(1);
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            (state as f32 / u32::MAX as f32) - 0.5
        })
        .collect()
}

#[test]
fn pcm16_files_agree_with_hound() {
    let dir = tempfile::tempdir().unwrap();
    let samples = noise(4000, 3);

    let ours = dir.path().join("ours.wav");
    write_wav_pcm16(&ours, &samples, 16000).unwrap();
    let mut r = hound::WavReader::open(&ours).unwrap();
    assert_eq!(r.spec().sample_rate, 16000);
    assert_eq!(r.spec().bits_per_sample, 16);
    let read: Vec<i16> = r.samples::<i16>().map(Result::unwrap).collect();
    let want: Vec<i16> = samples.iter().map(|&s| (s * 32767.0).round() as i16).collect();
    assert_eq!(read, want);

    let theirs = dir.path().join("theirs.wav");
    let spec = hound::WavSpec { channels: 1, sample_rate: 22050, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(&theirs, spec).unwrap();
    for &v in &want {
        w.write_sample(v).unwrap();
    }
    w.finalize().unwrap();
    let sig = load_wav(&theirs).unwrap();
    assert_eq!(sig.sample_rate, 22050);
    assert_eq!(sig.samples.len(), want.len());
    for (a, &b) in sig.samples.iter().zip(&want) {
        assert_eq!(*a, f32::from(b) / 32768.0);
    }
}

#[test]
fn stereo_24_bit_and_float_files_agree_with_hound() {
    let dir = tempfile::tempdir().unwrap();
    let left = noise(1000, 5);
    let right = noise(1000, 6);

    let p24 = dir.path().join("s24.wav");
    let spec = hound::WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 24, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(&p24, spec).unwrap();
    let to24 = |v: f32| (v * 8_388_607.0).round() as i32;
    for (&l, &r) in left.iter().zip(&right) {
        w.write_sample(to24(l)).unwrap();
        w.write_sample(to24(r)).unwrap();
    }
    w.finalize().unwrap();
    let sig = decode_wav(&std::fs::read(&p24).unwrap(), "s24").unwrap();
    for (i, v) in sig.samples.iter().enumerate() {
        let want = (f64::from(to24(left[i])) + f64::from(to24(right[i]))) / 2.0 / 8_388_608.0;
        assert!((f64::from(*v) - want).abs() < 1e-6, "sample {i}");
    }

    let pf = dir.path().join("f32.wav");
    let spec = hound::WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 32, sample_format: hound::SampleFormat::Float };
    let mut w = hound::WavWriter::create(&pf, spec).unwrap();
    for &v in &left {
        w.write_sample(v).unwrap();
    }
    w.finalize().unwrap();
    assert_eq!(load_wav(&pf).unwrap().samples, left);
}

fn sig(samples: Vec<f32>) -> AudioSignal {
    AudioSignal::new(samples, 16000, "s").unwrap()
}

#[test]
fn one_hop_shift_moves_frames_by_one() {
    let cfg = FeatureConfig::default();
    let hop = 320;
    let x = noise(16000, 9);
    let mut shifted = vec![0.0f32; hop];
    shifted.extend_from_slice(&x);
    let a = compute_log_mel(&sig(x), &cfg).unwrap();
    let b = compute_log_mel(&sig(shifted), &cfg).unwrap();
    // Skip frames whose window touches either edge's reflection padding.
    for t in 2..a.frames - 2 {
        for f in 0..a.bands {
            let (u, v) = (a.at(t, f), b.at(t + 1, f));
            assert!((u - v).abs() < 1e-3, "frame {t} band {f}: {u} vs {v}");
        }
    }
}

#[test]
fn louder_signal_raises_every_value_above_the_floor() {
    let cfg = FeatureConfig::default();
    let floor = cfg.log_floor.ln() as f32;
    let mut x = noise(8000, 11);
    x[..2000].iter_mut().for_each(|v| *v = 0.0);
    let quiet = compute_log_mel(&sig(x.clone()), &cfg).unwrap();
    let loud = compute_log_mel(&sig(x.iter().map(|v| v * 1.5).collect()), &cfg).unwrap();
    let mut above = 0;
    for (q, l) in quiet.data.iter().zip(&loud.data) {
        if *q > floor {
            above += 1;
            assert!(l > q);
        } else {
            assert!(*l >= *q);
        }
    }
    assert!(above > 0);
}

#[test]
fn features_are_bit_identical_across_calls() {
    let cfg = FeatureConfig::default();
    let x = noise(12345, 13);
    let a = compute_log_mel(&sig(x.clone()), &cfg).unwrap();
    let b = compute_log_mel(&sig(x), &cfg).unwrap();
    assert!(a.data.iter().zip(&b.data).all(|(u, v)| u.to_bits() == v.to_bits()));
}
