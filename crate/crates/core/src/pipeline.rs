//! Fixed-length segmentation, prediction reassembly and binarization.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::audio::TargetVector;
use crate::error::{Error, Result};
use crate::features::Spectrogram;

/// A final segment is kept only if it shares less than this fraction of its
/// frames with the penultimate one.
pub const MAX_TAIL_OVERLAP: f64 = 0.75;

/// One fixed-length patch of a spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// `frames x bands`, time-major.
    pub data: Vec<f32>,
    pub frames: usize,
    pub bands: usize,
    pub targets: Option<Vec<u8>>,
    pub source_id: String,
    pub start_frame: usize,
}

impl Segment {
    pub fn is_positive(&self) -> Option<bool> {
        self.targets.as_ref().map(|t| t.iter().any(|&v| v == 1))
    }
}

/// Segments are shared so that oversampling duplicates references, not data.
#[derive(Debug, Clone, Default)]
pub struct SegmentBatch {
    pub segments: Vec<Arc<Segment>>,
}

impl SegmentBatch {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Positive and negative frame counts over all target patches.
    pub fn frame_counts(&self) -> (usize, usize) {
        let mut pos = 0;
        let mut total = 0;
        for s in &self.segments {
            if let Some(t) = &s.targets {
                pos += t.iter().filter(|&&v| v == 1).count();
                total += t.len();
            }
        }
        (pos, total - pos)
    }

    pub fn concat(batches: impl IntoIterator<Item = SegmentBatch>) -> SegmentBatch {
        SegmentBatch {
            segments: batches.into_iter().flat_map(|b| b.segments).collect(),
        }
    }
}

/// How one recording was cut into segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap {
    pub source_id: String,
    pub total_frames: usize,
    pub seg_frames: usize,
    pub hop: f64,
    pub starts: Vec<usize>,
    /// Frames shared between the final and the penultimate segment.
    pub tail_overlap: usize,
    /// First uncovered frame when the tail was discarded.
    pub discarded_from: Option<usize>,
}

impl SegmentationMap {
    pub fn covered_frames(&self) -> usize {
        self.discarded_from.unwrap_or(self.total_frames)
    }
}

/// Start frames for `total` frames cut into `seg` frame segments.
pub fn segment_starts(total: usize, seg: usize) -> (Vec<usize>, usize, Option<usize>) {
    let full = total / seg;
    let mut starts: Vec<usize> = (0..full).map(|j| j * seg).collect();
    let rem = total % seg;
    if rem == 0 {
        return (starts, 0, None);
    }
    if full == 0 {
        return (starts, 0, Some(0));
    }
    let overlap = seg - rem;
    if (overlap as f64) < MAX_TAIL_OVERLAP * seg as f64 {
        starts.push(total - seg);
        (starts, overlap, None)
    } else {
        (starts, 0, Some(full * seg))
    }
}

pub fn segment(
    s: &Spectrogram,
    y: Option<&TargetVector>,
    seg_frames: usize,
) -> Result<(SegmentBatch, SegmentationMap)> {
    if seg_frames == 0 {
        return Err(Error::Config("segment length must be at least one frame".into()));
    }
    if let Some(y) = y {
        if y.len() != s.frames {
            return Err(Error::Shape(format!(
                "`{}`: {} targets for {} frames",
                s.source_id,
                y.len(),
                s.frames
            )));
        }
    }
    let (starts, tail_overlap, discarded_from) = segment_starts(s.frames, seg_frames);
    let segments = starts
        .iter()
        .map(|&start| {
            Arc::new(Segment {
                data: s.frames_slice(start, seg_frames).to_vec(),
                frames: seg_frames,
                bands: s.bands,
                targets: y.map(|y| y.values[start..start + seg_frames].to_vec()),
                source_id: s.source_id.clone(),
                start_frame: start,
            })
        })
        .collect();
    Ok((
        SegmentBatch { segments },
        SegmentationMap {
            source_id: s.source_id.clone(),
            total_frames: s.frames,
            seg_frames,
            hop: s.hop,
            starts,
            tail_overlap,
            discarded_from,
        },
    ))
}

/// Per-frame class probabilities for one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    pub p: Vec<f32>,
    pub hop: f64,
    pub source_id: String,
}

/// Writes segment predictions back onto the recording's time axis. Later
/// segments overwrite earlier ones on overlapping frames; uncovered frames are 0.
pub fn concatenate_predictions(
    segment_preds: &[Vec<f32>],
    map: &SegmentationMap,
) -> Result<PredictionVector> {
    if segment_preds.len() != map.starts.len() {
        return Err(Error::Assembly(format!(
            "`{}`: {} predictions for {} segments",
            map.source_id,
            segment_preds.len(),
            map.starts.len()
        )));
    }
    let mut p = vec![0.0f32; map.total_frames];
    for (pred, &start) in segment_preds.iter().zip(&map.starts) {
        if pred.len() != map.seg_frames {
            return Err(Error::Assembly(format!(
                "`{}`: prediction of length {} for {}-frame segment",
                map.source_id,
                pred.len(),
                map.seg_frames
            )));
        }
        p[start..start + map.seg_frames].copy_from_slice(pred);
    }
    Ok(PredictionVector {
        p,
        hop: map.hop,
        source_id: map.source_id.clone(),
    })
}

/// `1` where `p > threshold`.
pub fn binarize(p: &PredictionVector, threshold: f64) -> TargetVector {
    TargetVector {
        values: p.p.iter().map(|&v| u8::from(f64::from(v) > threshold)).collect(),
        hop: p.hop,
    }
}

/// Writes `source_id,frame_index,probability` rows, plus `label` when a
/// threshold is given.
pub fn write_predictions_csv(
    path: impl AsRef<Path>,
    preds: &[PredictionVector],
    threshold: Option<f64>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(if threshold.is_some() {
        "source_id,frame_index,probability,label\n"
    } else {
        "source_id,frame_index,probability\n"
    });
    for pv in preds {
        for (t, &v) in pv.p.iter().enumerate() {
            match threshold {
                Some(c) => out.push_str(&format!(
                    "{},{t},{v},{}\n",
                    pv.source_id,
                    u8::from(f64::from(v) > c)
                )),
                None => out.push_str(&format!("{},{t},{v}\n", pv.source_id)),
            }
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a prediction CSV written by [`write_predictions_csv`], grouping rows by source.
pub fn read_predictions_csv(path: impl AsRef<Path>, hop: f64) -> Result<Vec<PredictionVector>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let mut out: Vec<PredictionVector> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let id = rec.get(0).unwrap_or_default().to_string();
        let t: usize = rec.get(1).and_then(|v| v.parse().ok()).ok_or(Error::Parse {
            row,
            message: "frame_index is not an integer".into(),
        })?;
        let p: f32 = rec.get(2).and_then(|v| v.parse().ok()).ok_or(Error::Parse {
            row,
            message: "probability is not a number".into(),
        })?;
        if out.last().map(|pv| pv.source_id != id).unwrap_or(true) {
            out.push(PredictionVector { p: Vec::new(), hop, source_id: id });
        }
        let pv = out.last_mut().unwrap();
        if t != pv.p.len() {
            return Err(Error::Parse {
                row,
                message: format!("frame_index {t} out of sequence"),
            });
        }
        pv.p.push(p);
    }
    Ok(out)
}
