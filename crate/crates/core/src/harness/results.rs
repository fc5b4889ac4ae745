use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ArchSection;
use super::grid::{DenoiseSetting, Round};
use crate::crnn::{FreqIntegration, LossVariant};
use crate::error::{Error, Result};
use crate::eval::EvalReport;

/// NaN is stored as `null` in JSON and read back as NaN.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// AP and F1 of one split; NaN when undefined or not run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    #[serde(with = "nan_as_null")]
    pub ap_frame: f64,
    #[serde(with = "nan_as_null")]
    pub ap_5s: f64,
    #[serde(with = "nan_as_null")]
    pub ap_avg: f64,
    #[serde(with = "nan_as_null")]
    pub f1_frame: f64,
    #[serde(with = "nan_as_null")]
    pub f1_5s: f64,
    #[serde(with = "nan_as_null")]
    pub f1_avg: f64,
}

impl SplitMetrics {
    pub fn missing() -> Self {
        Self::from_array([f64::NAN; 6])
    }

    pub fn from_report(r: Option<&EvalReport>) -> Self {
        match r {
            Some(r) => Self::from_array([r.ap_frame, r.ap_5s, r.ap_avg, r.f1_frame, r.f1_5s, r.f1_avg]),
            None => Self::missing(),
        }
    }

    fn as_array(&self) -> [f64; 6] {
        [self.ap_frame, self.ap_5s, self.ap_avg, self.f1_frame, self.f1_5s, self.f1_avg]
    }

    fn from_array(a: [f64; 6]) -> Self {
        Self { ap_frame: a[0], ap_5s: a[1], ap_avg: a[2], f1_frame: a[3], f1_5s: a[4], f1_avg: a[5] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Repetition(usize),
    Mean,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub point: usize,
    pub kind: RowKind,
    pub status: String,
    pub denoise: DenoiseSetting,
    pub conv_depth: usize,
    pub channel_size: usize,
    pub pool_size: usize,
    pub freq_integration: FreqIntegration,
    pub bidirectional: bool,
    pub loss: LossVariant,
    pub oversample: usize,
    pub undersample: f64,
    pub input_bands: usize,
    pub seed: u64,
    pub train: SplitMetrics,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
    #[serde(with = "nan_as_null")]
    pub epochs: f64,
    #[serde(with = "nan_as_null")]
    pub wall_clock_s: f64,
}

impl ResultRow {
    pub fn arch(&self) -> ArchSection {
        ArchSection {
            conv_depth: self.conv_depth,
            channel_size: self.channel_size,
            pool_size: self.pool_size,
            freq_integration: self.freq_integration,
            bidirectional: self.bidirectional,
        }
    }

    fn numeric(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(20);
        for m in [&self.train, &self.val, &self.test] {
            v.extend(m.as_array());
        }
        v.push(self.epochs);
        v.push(self.wall_clock_s);
        v
    }

    fn set_numeric(&mut self, v: &[f64]) {
        self.train = SplitMetrics::from_array(v[0..6].try_into().unwrap());
        self.val = SplitMetrics::from_array(v[6..12].try_into().unwrap());
        self.test = SplitMetrics::from_array(v[12..18].try_into().unwrap());
        self.epochs = v[18];
        self.wall_clock_s = v[19];
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

const SPLITS: [&str; 3] = ["train", "val", "test"];
const METRICS: [&str; 6] = ["ap_frame", "ap_5s", "ap_avg", "f1_frame", "f1_5s", "f1_avg"];

fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

impl ResultsTable {
    /// Arithmetic mean of the repetition rows of one point.
    pub fn mean_row(reps: &[ResultRow]) -> Option<ResultRow> {
        let first = reps.first()?;
        let n = reps.len() as f64;
        let mut acc = vec![0.0; 20];
        for r in reps {
            for (a, v) in acc.iter_mut().zip(r.numeric()) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        let mut row = first.clone();
        row.kind = RowKind::Mean;
        row.status = "mean".into();
        row.seed = 0;
        row.set_numeric(&acc);
        Some(row)
    }

    pub fn means(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Mean)
    }

    /// Every mean row equals the mean of its repetition rows.
    pub fn verify_means(&self) -> Result<()> {
        for (i, m) in self.rows.iter().enumerate().filter(|(_, r)| r.kind == RowKind::Mean) {
            let reps: Vec<ResultRow> = self
                .rows
                .iter()
                .filter(|r| r.point == m.point && matches!(r.kind, RowKind::Repetition(_)))
                .cloned()
                .collect();
            let want = Self::mean_row(&reps)
                .ok_or_else(|| Error::Validation { row: Some(i + 1), message: "mean row without repetitions".into() })?;
            if !want.numeric().iter().zip(m.numeric()).all(|(a, b)| same(*a, b)) {
                return Err(Error::Validation {
                    row: Some(i + 1),
                    message: format!("mean row of point {} differs from its repetitions", m.point),
                });
            }
        }
        Ok(())
    }

    /// Best mean row: validation AP_avg in round 1, test AP_avg in round 2.
    pub fn best(&self, round: Round) -> Option<&ResultRow> {
        let key = |r: &ResultRow| match round {
            Round::Architecture => r.val.ap_avg,
            Round::LossResample => r.test.ap_avg,
        };
        self.means()
            .filter(|r| !key(r).is_nan())
            .fold(None, |best: Option<&ResultRow>, r| match best {
                Some(b) if key(b) >= key(r) => Some(b),
                _ => Some(r),
            })
    }

    pub fn header() -> Vec<String> {
        let mut h: Vec<String> = [
            "point",
            "repetition",
            "status",
            "denoise",
            "conv_depth",
            "channel_size",
            "pool_size",
            "freq_integration",
            "bidirectional",
            "loss",
            "oversample",
            "undersample",
            "input_bands",
            "seed",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for s in SPLITS {
            for m in METRICS {
                h.push(format!("{s}_{m}"));
            }
        }
        h.push("epochs".into());
        h.push("wall_clock_s".into());
        h
    }

    fn record(r: &ResultRow) -> Vec<String> {
        let rep = match r.kind {
            RowKind::Repetition(i) => i.to_string(),
            RowKind::Mean => "mean".into(),
            RowKind::Skipped => String::new(),
        };
        let mut v = vec![
            r.point.to_string(),
            rep,
            r.status.clone(),
            r.denoise.to_string(),
            r.conv_depth.to_string(),
            r.channel_size.to_string(),
            r.pool_size.to_string(),
            r.freq_integration.to_string(),
            r.bidirectional.to_string(),
            r.loss.to_string(),
            r.oversample.to_string(),
            r.undersample.to_string(),
            r.input_bands.to_string(),
            r.seed.to_string(),
        ];
        v.extend(r.numeric().iter().map(|x| if x.is_nan() { String::new() } else { x.to_string() }));
        v
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::header())?;
        for r in &self.rows {
            w.write_record(Self::record(r))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Flat CSV, one hyperparameter per column. Refuses empty tables and
/// inconsistent mean rows.
pub fn export_results(table: &ResultsTable, path: impl AsRef<Path>) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::EmptyCorpus("results table has no rows".into()));
    }
    table.verify_means()?;
    let path = path.as_ref();
    std::fs::write(path, table.to_csv_string()?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(point: usize, i: usize, ap: f64) -> ResultRow {
        let mut m = SplitMetrics::missing();
        m.ap_avg = ap;
        ResultRow {
            point,
            kind: RowKind::Repetition(i),
            status: "ok".into(),
            denoise: DenoiseSetting::Both,
            conv_depth: 2,
            channel_size: 96,
            pool_size: 2,
            freq_integration: FreqIntegration::GlobalAverage,
            bidirectional: true,
            loss: LossVariant::Bce,
            oversample: 2,
            undersample: 0.75,
            input_bands: 5,
            seed: i as u64,
            train: m,
            val: m,
            test: m,
            epochs: 10.0 + i as f64,
            wall_clock_s: f64::NAN,
        }
    }

    fn table() -> ResultsTable {
        let mut t = ResultsTable::default();
        for p in 0..2 {
            let reps: Vec<ResultRow> = (0..5).map(|i| rep(p, i, 0.1 * (i + p) as f64)).collect();
            let mean = ResultsTable::mean_row(&reps).unwrap();
            t.rows.extend(reps);
            t.rows.push(mean);
        }
        t
    }

    #[test]
    fn export_has_twelve_rows_and_every_axis() {
        let t = table();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        export_results(&t, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 13);
        let header = text.lines().next().unwrap();
        for col in ["denoise", "channel_size", "conv_depth", "pool_size", "freq_integration", "bidirectional", "loss", "oversample", "undersample"] {
            assert!(header.split(',').any(|h| h == col), "{col}");
        }
        export_results(&t, dir.path().join("again.csv")).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(dir.path().join("again.csv")).unwrap());
    }

    #[test]
    fn mean_rows_are_checked() {
        let mut t = table();
        assert!((t.rows[5].val.ap_avg - 0.2).abs() < 1e-12);
        t.rows[5].val.ap_avg = 0.9;
        assert!(matches!(t.verify_means(), Err(Error::Validation { .. })));
        assert!(export_results(&ResultsTable::default(), "/nonexistent/x.csv").is_err());
    }

    #[test]
    fn json_round_trip_keeps_missing_metrics() {
        let t = table();
        let back: ResultsTable = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert!(back.rows[0].wall_clock_s.is_nan() && back.rows[0].train.ap_frame.is_nan());
        assert_eq!(back.to_csv_string().unwrap(), t.to_csv_string().unwrap());
    }

    #[test]
    fn best_uses_round_key() {
        let t = table();
        assert_eq!(t.best(Round::Architecture).unwrap().point, 1);
        assert_eq!(t.best(Round::LossResample).unwrap().point, 1);
    }
}
