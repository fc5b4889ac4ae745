//! Recording ingest: WAV decoding, peak normalization, annotation tables and
//! per-frame target rasterization.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono time-domain recording.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioSignal {
    pub fn new(samples: Vec<f32>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Config("signal has no samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// One annotated call interval, `[start, end)` in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub source_id: String,
    pub start: f64,
    pub end: f64,
    pub class_label: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventList {
    pub events: Vec<Event>,
}

impl EventList {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if !(e.end > e.start) || e.start < 0.0 {
                return Err(Error::Validation {
                    row: Some(i + 1),
                    message: format!("invalid interval [{}, {})", e.start, e.end),
                });
            }
        }
        Ok(Self { events })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events of `class_label` annotated on `source_id`.
    pub fn matching<'a>(
        &'a self,
        source_id: &'a str,
        class_label: &'a str,
    ) -> impl Iterator<Item = &'a Event> + 'a {
        self.events
            .iter()
            .filter(move |e| e.source_id == source_id && e.class_label == class_label)
    }

    pub fn for_source(&self, source_id: &str) -> EventList {
        EventList {
            events: self
                .events
                .iter()
                .filter(|e| e.source_id == source_id)
                .cloned()
                .collect(),
        }
    }
}

/// Per-frame binary presence of the target class.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetVector {
    pub values: Vec<u8>,
    pub hop: f64,
}

impl TargetVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_wav(&bytes, source_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SampleFormat {
    Int,
    Float,
}

struct WavFormat {
    format: SampleFormat,
    channels: u16,
    sample_rate: u32,
    bits: u16,
    block_align: u16,
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes an in-memory RIFF/WAVE file, downmixing stereo to mono by averaging.
pub fn decode_wav(bytes: &[u8], source_id: impl Into<String>) -> Result<AudioSignal> {
    if bytes.len() < 12 {
        return Err(Error::format("RIFF header", "file shorter than 12 bytes"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::format("RIFF header", "missing `RIFF` magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::format("RIFF header", "missing `WAVE` form type"));
    }

    let mut fmt: Option<WavFormat> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.saturating_add(size);
        if id == b"data" {
            // Tolerate writers that leave a stale size on the data chunk.
            data = Some(&bytes[body_start..body_end.min(bytes.len())]);
        } else if body_end > bytes.len() {
            return Err(Error::format(
                String::from_utf8_lossy(id).into_owned(),
                "chunk extends past end of file",
            ));
        }
        if id == b"fmt " {
            if size < 16 {
                return Err(Error::format("fmt ", format!("chunk size {size} < 16")));
            }
            let b = &bytes[body_start..body_end];
            let mut tag = read_u16(b, 0);
            if tag == 0xFFFE {
                if size < 26 {
                    return Err(Error::format("fmt ", "extensible format without sub-format"));
                }
                tag = read_u16(b, 24);
            }
            let format = match tag {
                1 => SampleFormat::Int,
                3 => SampleFormat::Float,
                other => {
                    return Err(Error::unsupported(
                        "audio_format",
                        format!("format tag {other:#06x} (only PCM and IEEE float are read)"),
                    ))
                }
            };
            fmt = Some(WavFormat {
                format,
                channels: read_u16(b, 2),
                sample_rate: read_u32(b, 4),
                block_align: read_u16(b, 12),
                bits: read_u16(b, 14),
            });
        }
        pos = body_end + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| Error::format("fmt ", "missing fmt chunk"))?;
    let data = data.ok_or_else(|| Error::format("data", "missing data chunk"))?;

    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(Error::unsupported(
            "channels",
            format!("{} channels (mono or stereo only)", fmt.channels),
        ));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::format("sample_rate", "sample rate is zero"));
    }
    match (fmt.format, fmt.bits) {
        (SampleFormat::Int, 8 | 16 | 24) | (SampleFormat::Float, 32) => {}
        (f, b) => {
            return Err(Error::unsupported(
                "bits_per_sample",
                format!("{b}-bit {f:?} samples"),
            ))
        }
    }
    let bytes_per_sample = usize::from(fmt.bits / 8);
    let frame_bytes = bytes_per_sample * usize::from(fmt.channels);
    if usize::from(fmt.block_align) != frame_bytes {
        return Err(Error::format(
            "block_align",
            format!("expected {frame_bytes}, header says {}", fmt.block_align),
        ));
    }

    let decode = |s: &[u8]| -> f32 {
        match (fmt.format, fmt.bits) {
            (SampleFormat::Int, 8) => (f32::from(s[0]) - 128.0) / 128.0,
            (SampleFormat::Int, 16) => f32::from(i16::from_le_bytes([s[0], s[1]])) / 32768.0,
            (SampleFormat::Int, 24) => {
                let v = i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8;
                v as f32 / 8_388_608.0
            }
            _ => f32::from_le_bytes([s[0], s[1], s[2], s[3]]),
        }
    };

    let samples: Vec<f32> = data
        .chunks_exact(frame_bytes)
        .map(|frame| {
            if fmt.channels == 1 {
                decode(frame)
            } else {
                let l = decode(&frame[..bytes_per_sample]);
                let r = decode(&frame[bytes_per_sample..]);
                (l + r) * 0.5
            }
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::format("data", "data chunk holds no complete sample frames"));
    }
    AudioSignal::new(samples, fmt.sample_rate, source_id)
}

/// Writes a mono 16-bit PCM WAV file. Samples are clipped to [-1, 1].
pub fn write_wav_pcm16(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let data_len = (samples.len() * 2) as u32;
    let mut buf = Vec::with_capacity(44 + samples.len() * 2);
    buf.extend_from_slice(b"RIFF");
    buf.extend_from_slice(&(36 + data_len).to_le_bytes());
    buf.extend_from_slice(b"WAVE");
    buf.extend_from_slice(b"fmt ");
    buf.extend_from_slice(&16u32.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes());
    buf.extend_from_slice(&sample_rate.to_le_bytes());
    buf.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    buf.extend_from_slice(&2u16.to_le_bytes());
    buf.extend_from_slice(&16u16.to_le_bytes());
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Scales the signal so its peak absolute amplitude is 1. All-zero input is
/// returned unchanged.
pub fn peak_normalize(mut signal: AudioSignal) -> AudioSignal {
    let peak = signal.peak();
    if peak > 0.0 {
        for s in &mut signal.samples {
            *s /= peak;
        }
    }
    signal
}

const ANNOTATION_HEADER: [&str; 4] = ["recording_id", "start_seconds", "end_seconds", "class"];

pub fn parse_annotations(path: impl AsRef<Path>) -> Result<EventList> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations_str(&text)
}

/// Parses the annotation CSV (`recording_id,start_seconds,end_seconds,class`).
/// Row numbers in errors count data rows from 1.
pub fn parse_annotations_str(text: &str) -> Result<EventList> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ANNOTATION_HEADER {
        return Err(Error::format(
            "header",
            format!("expected `{}`, found `{}`", ANNOTATION_HEADER.join(","), names.join(",")),
        ));
    }

    let mut events = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != 4 {
            return Err(Error::Parse {
                row,
                message: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let time = |idx: usize, name: &str| -> Result<f64> {
            let v: f64 = record[idx].parse().map_err(|_| Error::Parse {
                row,
                message: format!("{name} `{}` is not a number", &record[idx]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("{name} `{}` is not finite", &record[idx]),
                });
            }
            Ok(v)
        };
        let start = time(1, "start_seconds")?;
        let end = time(2, "end_seconds")?;
        if start < 0.0 {
            return Err(Error::Validation {
                row: Some(row),
                message: format!("start {start} is negative"),
            });
        }
        if end <= start {
            return Err(Error::Validation {
                row: Some(row),
                message: format!("end {end} is not after start {start}"),
            });
        }
        events.push(Event {
            source_id: record[0].to_string(),
            start,
            end,
            class_label: record[3].to_string(),
        });
    }
    Ok(EventList { events })
}

pub fn write_annotations(path: impl AsRef<Path>, events: &EventList) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ANNOTATION_HEADER)?;
    for e in &events.events {
        w.write_record([
            e.source_id.as_str(),
            &format!("{}", e.start),
            &format!("{}", e.end),
            e.class_label.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// First frame index whose start instant `t * hop` is `>= seconds`.
pub(crate) fn first_frame_at_or_after(seconds: f64, hop: f64) -> usize {
    let mut t = (seconds / hop).floor().max(0.0) as usize;
    t = t.saturating_sub(1);
    while (t as f64) * hop < seconds {
        t += 1;
    }
    t
}

/// Frames `t` with `t * hop` in `[start, end)`, not clipped to any length.
pub(crate) fn event_frames(start: f64, end: f64, hop: f64) -> std::ops::Range<usize> {
    first_frame_at_or_after(start, hop)..first_frame_at_or_after(end, hop)
}

/// Marks frame `t` positive iff its start instant `t * hop` lies in `[start, end)`
/// of some event of `class_label` on `source_id`.
pub fn rasterize_targets(
    events: &EventList,
    source_id: &str,
    frame_count: usize,
    hop: f64,
    class_label: &str,
) -> TargetVector {
    let mut values = vec![0u8; frame_count];
    if hop > 0.0 {
        for e in events.matching(source_id, class_label) {
            let frames = event_frames(e.start, e.end, hop);
            let hi = frames.end.min(frame_count);
            for v in values.iter_mut().take(hi).skip(frames.start) {
                *v = 1;
            }
        }
    }
    TargetVector { values, hop }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_bytes(channels: u16, bits: u16, tag: u16, payload: &[u8]) -> Vec<u8> {
        let block = channels * bits / 8;
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + payload.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVE");
        b.extend_from_slice(b"fmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&tag.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&16000u32.to_le_bytes());
        b.extend_from_slice(&(16000 * u32::from(block)).to_le_bytes());
        b.extend_from_slice(&block.to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn stereo_downmix_is_symmetric() {
        let mut p = Vec::new();
        p.extend_from_slice(&16384i16.to_le_bytes());
        p.extend_from_slice(&(-16384i16).to_le_bytes());
        let s = decode_wav(&wav_bytes(2, 16, 1, &p), "x").unwrap();
        assert_eq!(s.samples, vec![0.0]);
    }

    #[test]
    fn full_scale_negative_maps_to_minus_one() {
        let s = decode_wav(&wav_bytes(1, 16, 1, &(-32768i16).to_le_bytes()), "x").unwrap();
        assert_eq!(s.samples, vec![-1.0]);
        assert_eq!(s.sample_rate, 16000);
    }

    #[test]
    fn decodes_8_24_and_float() {
        let s = decode_wav(&wav_bytes(1, 8, 1, &[0, 128, 255]), "x").unwrap();
        assert_eq!(s.samples, vec![-1.0, 0.0, 127.0 / 128.0]);
        let s = decode_wav(&wav_bytes(1, 24, 1, &[0x00, 0x00, 0x80, 0xff, 0xff, 0x7f]), "x").unwrap();
        assert_eq!(s.samples[0], -1.0);
        assert!((s.samples[1] - 8_388_607.0 / 8_388_608.0).abs() < 1e-7);
        let s = decode_wav(&wav_bytes(1, 32, 3, &0.25f32.to_le_bytes()), "x").unwrap();
        assert_eq!(s.samples, vec![0.25]);
    }

    #[test]
    fn malformed_and_unsupported_name_the_field() {
        let mut b = wav_bytes(1, 16, 1, &[0, 0]);
        b[0] = b'X';
        assert!(matches!(decode_wav(&b, "x"), Err(Error::Format { field, .. }) if field == "RIFF header"));

        let b = wav_bytes(3, 16, 1, &[0; 6]);
        assert!(matches!(decode_wav(&b, "x"), Err(Error::Unsupported { field, .. }) if field == "channels"));

        let b = wav_bytes(1, 32, 1, &[0; 4]);
        assert!(matches!(decode_wav(&b, "x"), Err(Error::Unsupported { field, .. }) if field == "bits_per_sample"));

        let b = wav_bytes(1, 16, 2, &[0; 2]);
        assert!(matches!(decode_wav(&b, "x"), Err(Error::Unsupported { field, .. }) if field == "audio_format"));

        assert!(matches!(decode_wav(b"RIFF", "x"), Err(Error::Format { .. })));
    }

    #[test]
    fn normalize_examples() {
        let s = AudioSignal::new(vec![0.5, -0.25], 16000, "a").unwrap();
        assert_eq!(peak_normalize(s).samples, vec![1.0, -0.5]);
        let z = AudioSignal::new(vec![0.0; 3], 16000, "a").unwrap();
        assert_eq!(peak_normalize(z).samples, vec![0.0; 3]);
    }

    #[test]
    fn annotation_rows() {
        let ev = parse_annotations_str(
            "recording_id,start_seconds,end_seconds,class\n rec1 , 3.0 ,4.5, drumming\n",
        )
        .unwrap();
        assert_eq!(
            ev.events,
            vec![Event {
                source_id: "rec1".into(),
                start: 3.0,
                end: 4.5,
                class_label: "drumming".into()
            }]
        );

        let err = parse_annotations_str(
            "recording_id,start_seconds,end_seconds,class\nrec1,1,2,voc\nrec1,5.0,5.0,voc\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation { row: Some(2), .. }), "{err}");

        let err = parse_annotations_str(
            "recording_id,start_seconds,end_seconds,class\nrec1,abc,2,voc\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }), "{err}");
    }

    #[test]
    fn twenty_nine_rows_give_twenty_nine_events() {
        let mut text = String::from("recording_id,start_seconds,end_seconds,class\n");
        for i in 0..29 {
            text.push_str(&format!("r{},{}.0,{}.5,drumming\n", i % 4, i, i));
        }
        assert_eq!(parse_annotations_str(&text).unwrap().len(), 29);
    }

    fn ev(start: f64, end: f64) -> Event {
        Event {
            source_id: "r".into(),
            start,
            end,
            class_label: "c".into(),
        }
    }

    #[test]
    fn rasterize_examples() {
        let empty = EventList::default();
        assert_eq!(rasterize_targets(&empty, "r", 10, 0.02, "c").values, vec![0; 10]);

        let one = EventList::new(vec![ev(0.1, 0.15)]).unwrap();
        let t = rasterize_targets(&one, "r", 10, 0.02, "c");
        assert_eq!(t.values, vec![0, 0, 0, 0, 0, 1, 1, 1, 0, 0]);

        let full = EventList::new(vec![ev(0.0, 0.2)]).unwrap();
        assert_eq!(rasterize_targets(&full, "r", 10, 0.02, "c").values, vec![1; 10]);

        // Other class and other source are ignored; out-of-range clipped.
        let mut other = ev(0.0, 0.2);
        other.class_label = "d".into();
        let mut far = ev(5.0, 9.0);
        far.source_id = "r".into();
        let l = EventList::new(vec![other, far]).unwrap();
        assert_eq!(rasterize_targets(&l, "r", 10, 0.02, "c").values, vec![0; 10]);
    }
}
