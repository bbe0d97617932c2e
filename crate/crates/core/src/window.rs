//! Labeled sliding windows, the chronological train/test split and
//! train-only standardization.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use libm::sqrt;

use crate::error::{Error, Result};
use crate::features::{numeric_mask, EnrichedSeries, FeatureSetSpec, ALL_DIM};

/// A `rows x cols` feature matrix (row-major) ending at the forecast time,
/// labeled with "medication taken in the next hour" at its final row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub participant_id: u32,
    pub start_ts: i64,
    pub end_ts: i64,
    pub label: bool,
    /// Produced by oversampling rather than cut from a series.
    pub synthetic: bool,
    pub spec: FeatureSetSpec,
    pub rows: usize,
    pub data: Vec<f64>,
}

impl LabeledWindow {
    pub fn cols(&self) -> usize {
        self.spec.dim()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Projects a full (H+L+K) window onto `spec`.
    pub fn project(&self, spec: FeatureSetSpec) -> Result<LabeledWindow> {
        if !self.spec.is_full() {
            return Err(Error::shape("a full H+L+K window", self.spec));
        }
        let idx = spec.column_indices();
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(idx.iter().map(|&i| row[i]));
        }
        Ok(LabeledWindow { spec, data, ..self.clone() })
    }

    pub fn size_bytes(&self) -> usize {
        self.data.len() * core::mem::size_of::<f64>() + core::mem::size_of::<Self>()
    }
}

/// Window length and hop, in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub len: usize,
    pub hop: usize,
}

impl WindowConfig {
    /// `hop = len * (1 - overlap)`, rounded.
    pub fn with_overlap(len: usize, overlap: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::config("overlap", "must lie in [0, 1)"));
        }
        let hop = libm::round(len as f64 * (1.0 - overlap)) as usize;
        Self::new(len, hop)
    }

    pub fn new(len: usize, hop: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::config("window_len", "must be at least 1"));
        }
        if hop == 0 {
            return Err(Error::config("window_hop", "must be at least 1"));
        }
        Ok(WindowConfig { len, hop })
    }

    /// Number of complete windows in a series of `n` samples.
    pub fn count(&self, n: usize) -> usize {
        if n < self.len {
            0
        } else {
            (n - self.len) / self.hop + 1
        }
    }
}

impl Default for WindowConfig {
    /// 1800 samples (3600 s of duty-cycled data) with 50% overlap.
    fn default() -> Self {
        WindowConfig { len: 1800, hop: 900 }
    }
}

/// Cuts windows of `cfg.len` samples every `cfg.hop` samples; a partial
/// trailing window is discarded. Labels come from each window's final row.
pub fn slide_windows(series: &EnrichedSeries, spec: FeatureSetSpec, cfg: WindowConfig) -> Vec<LabeledWindow> {
    let n = series.records.len();
    let count = cfg.count(n);
    let idx = spec.column_indices();
    let mut row = [0.0; ALL_DIM];
    (0..count)
        .map(|w| {
            let start = w * cfg.hop;
            let recs = &series.records[start..start + cfg.len];
            let mut data = Vec::with_capacity(cfg.len * idx.len());
            for r in recs {
                r.write_all(&mut row);
                data.extend(idx.iter().map(|&i| row[i]));
            }
            let last = recs[cfg.len - 1];
            LabeledWindow {
                participant_id: series.participant_id,
                start_ts: recs[0].ts_utc,
                end_ts: last.ts_utc,
                label: last.med_next_hour,
                synthetic: false,
                spec,
                rows: cfg.len,
                data,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    /// Participants with fewer than two windows.
    pub excluded_participants: Vec<u32>,
}

/// Per participant, the first `ceil(train_frac * n)` windows by start time
/// go to train and the rest to test.
pub fn chronological_split(windows: Vec<LabeledWindow>, train_frac: f64) -> Result<Split> {
    if !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(Error::config("train_frac", "must lie in (0, 1]"));
    }
    let mut by_participant: BTreeMap<u32, Vec<LabeledWindow>> = BTreeMap::new();
    for w in windows {
        by_participant.entry(w.participant_id).or_default().push(w);
    }
    let mut split = Split::default();
    for (pid, mut ws) in by_participant {
        if ws.len() < 2 {
            split.excluded_participants.push(pid);
            continue;
        }
        ws.sort_by_key(|w| w.start_ts);
        let n_train = libm::ceil(train_frac * ws.len() as f64) as usize;
        let test = ws.split_off(n_train.min(ws.len()));
        split.train.extend(ws);
        split.test.extend(test);
    }
    Ok(split)
}

/// Per-column mean and standard deviation, fit on training rows only.
/// Boolean and one-hot columns pass through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub numeric: Vec<bool>,
}

/// Streaming mean/variance accumulator (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ColumnStats {
    pub fn new(cols: usize) -> Self {
        ColumnStats { count: 0, mean: alloc::vec![0.0; cols], m2: alloc::vec![0.0; cols] }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(row) {
            let d = x - *m;
            *m += d / n;
            *m2 += d * (x - *m);
        }
    }

    pub fn push_window(&mut self, w: &LabeledWindow) {
        for r in 0..w.rows {
            self.push_row(w.row(r));
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Standardizer over full-layout columns.
    pub fn finish(&self) -> Standardizer {
        let mask = numeric_mask();
        let n = self.count.max(1) as f64;
        let std = self
            .m2
            .iter()
            .map(|&m2| {
                let s = sqrt(m2 / n);
                if s > 1e-12 { s } else { 1.0 }
            })
            .collect();
        Standardizer { mean: self.mean.clone(), std, numeric: mask.to_vec() }
    }
}

impl Standardizer {
    /// Fits on full-layout training windows.
    pub fn fit(train: &[LabeledWindow]) -> Result<Self> {
        let mut stats = ColumnStats::new(ALL_DIM);
        for w in train {
            if !w.spec.is_full() {
                return Err(Error::shape("full H+L+K windows", w.spec));
            }
            stats.push_window(w);
        }
        if stats.count() == 0 {
            return Err(Error::Argument("cannot fit a standardizer on zero rows".into()));
        }
        Ok(stats.finish())
    }

    /// Standardizes the numeric columns of a window of any spec in place.
    pub fn apply(&self, w: &mut LabeledWindow) {
        let idx = w.spec.column_indices();
        let c = idx.len();
        for r in 0..w.rows {
            for (j, &col) in idx.iter().enumerate() {
                if self.numeric[col] {
                    let x = &mut w.data[r * c + j];
                    *x = (*x - self.mean[col]) / self.std[col];
                }
            }
        }
    }

    pub fn describe(&self) -> alloc::string::String {
        format!("{} columns, {} numeric", self.mean.len(), self.numeric.iter().filter(|&&b| b).count())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::EnrichedRecord;
    use alloc::vec;

    fn series(n: usize) -> EnrichedSeries {
        let rec = |i: usize| EnrichedRecord {
            ts_utc: i as i64 * 2,
            ts_local: i as i64 * 2,
            h: [i as f64; 14],
            last_med_event: false,
            last_prescribed_time: -1.0,
            last_event_hour: -1.0,
            day_of_week: 0,
            hour_of_day: 0,
            med_in_last: [false; 5],
            relative_ts_utc: 10.0,
            relative_ts_local: 10.0,
            next_prescribed_hour: 3,
            med_next_hour: i.is_multiple_of(7),
        };
        EnrichedSeries { participant_id: 4, records: (0..n).map(rec).collect(), excluded: 0 }
    }

    #[test]
    fn window_counts() {
        let cfg = WindowConfig::default();
        let s = series(3_600);
        let w = slide_windows(&s, FeatureSetSpec::H, cfg);
        assert_eq!(w.len(), 3);
        assert_eq!(w.iter().map(|w| w.start_ts).collect::<Vec<_>>(), vec![0, 1_800, 3_600]);
        assert!(w.iter().all(|w| w.rows == 1_800 && w.data.len() == 1_800 * 14));
        assert!(slide_windows(&series(1_799), FeatureSetSpec::H, cfg).is_empty());
    }

    #[test]
    fn window_count_matches_enumeration() {
        for len in [3, 7, 10] {
            for hop in [1, 2, 5] {
                let cfg = WindowConfig::new(len, hop).unwrap();
                for n in 0..60 {
                    let mut count = 0;
                    let mut start = 0;
                    while start + len <= n {
                        count += 1;
                        start += hop;
                    }
                    assert_eq!(cfg.count(n), count);
                    assert_eq!(slide_windows(&series(n), FeatureSetSpec::LOC, cfg).len(), count);
                }
            }
        }
    }

    #[test]
    fn label_is_final_row_target() {
        let cfg = WindowConfig::new(8, 4).unwrap();
        let s = series(40);
        for w in slide_windows(&s, FeatureSetSpec::HLK, cfg) {
            let last = s.records.iter().find(|r| r.ts_utc == w.end_ts).unwrap();
            assert_eq!(w.label, last.med_next_hour);
        }
    }

    #[test]
    fn overlap_to_hop() {
        assert_eq!(WindowConfig::with_overlap(1_800, 0.5).unwrap().hop, 900);
        assert!(WindowConfig::with_overlap(10, 1.0).is_err());
    }

    fn windows(pid: u32, n: usize) -> Vec<LabeledWindow> {
        (0..n)
            .map(|i| LabeledWindow {
                participant_id: pid,
                start_ts: i as i64 * 100,
                end_ts: i as i64 * 100 + 99,
                label: false,
                synthetic: false,
                spec: FeatureSetSpec::LOC,
                rows: 1,
                data: vec![0.0, 0.0],
            })
            .collect()
    }

    #[test]
    fn split_is_chronological() {
        let mut ws = windows(1, 10);
        ws.reverse();
        ws.extend(windows(2, 1));
        let s = chronological_split(ws, 0.8).unwrap();
        assert_eq!(s.train.len(), 8);
        assert_eq!(s.test.len(), 2);
        assert_eq!(s.excluded_participants, vec![2]);
        let latest_train = s.train.iter().map(|w| w.start_ts).max().unwrap();
        assert!(s.test.iter().all(|w| w.start_ts >= latest_train));
    }

    #[test]
    fn standardizer_uses_only_numeric_columns() {
        let s = series(20);
        let cfg = WindowConfig::new(5, 5).unwrap();
        let ws = slide_windows(&s, FeatureSetSpec::HLK, cfg);
        let st = Standardizer::fit(&ws).unwrap();
        let mut w = ws[0].clone();
        st.apply(&mut w);
        // hour one-hot for hour 0 stays exactly 1.
        assert_eq!(w.row(0)[14 + 10], 1.0);
        // H channel 0 standardized: values 0..20 have mean 9.5.
        assert!((w.row(0)[0] - (0.0 - 9.5) / st.std[0]).abs() < 1e-12);
        let mut p = ws[0].project(FeatureSetSpec::HK).unwrap();
        st.apply(&mut p);
        assert_eq!(p.row(0)[0], w.row(0)[0]);
    }
}
