//! Feature derivation: high-resolution sensor channels (H), low-resolution
//! event and calendar columns (L), future-knowledge columns derived from the
//! prescription schedule (K), and the "medication next hour" target.
//!
//! Column layout of a full record (79 columns):
//!
//! | block | columns                                                       | dim |
//! |-------|---------------------------------------------------------------|-----|
//! | H     | 14 sensor channels                                            | 14  |
//! | L     | last_med_event, last_prescribed_time, last_event_hour,        | 39  |
//! |       | day-of-week one-hot (7), hour-of-day one-hot (24),            |     |
//! |       | med_in_last_{2,3,6,12,24}h                                    |     |
//! | K     | relative_ts_utc, relative_ts_local, next_prescribed_hour (24) | 26  |

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::merge::{merge_streams, MergedRecord, MergedSeries};
use crate::record::{EventLog, SensorStream, CHANNEL_NAMES, LAT_CHANNEL, LON_CHANNEL, N_CHANNELS};
use crate::time::{day_of_week, hour_of_day, SECS_PER_HOUR};

pub const H_DIM: usize = 14;
pub const L_DIM: usize = 39;
pub const K_DIM: usize = 26;
pub const ALL_DIM: usize = H_DIM + L_DIM + K_DIM;

const L_START: usize = H_DIM;
const K_START: usize = H_DIM + L_DIM;

/// Look-back horizons of the `med_in_last_*` flags, in hours.
pub const LOOKBACK_HOURS: [i64; 5] = [2, 3, 6, 12, 24];

const WEEKDAYS: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];

/// Names of all 79 columns in layout order.
pub fn column_names() -> Vec<String> {
    let mut names: Vec<String> = CHANNEL_NAMES.iter().map(|s| String::from(*s)).collect();
    names.push("last_med_event".into());
    names.push("last_prescribed_time".into());
    names.push("last_event_hour".into());
    names.extend(WEEKDAYS.iter().map(|d| format!("day_of_week_{d}")));
    names.extend((0..24).map(|h| format!("hour_of_day_{h:02}")));
    names.extend(LOOKBACK_HOURS.iter().map(|h| format!("med_in_last_{h}h")));
    names.push("relative_ts_utc".into());
    names.push("relative_ts_local".into());
    names.extend((0..24).map(|h| format!("next_prescribed_hour_{h:02}")));
    names
}

/// Whether each of the 79 columns is numeric (standardized) rather than a
/// boolean or one-hot indicator.
pub fn numeric_mask() -> [bool; ALL_DIM] {
    let mut m = [false; ALL_DIM];
    m[..H_DIM].iter_mut().for_each(|x| *x = true);
    m[L_START + 1] = true; // last_prescribed_time
    m[L_START + 2] = true; // last_event_hour
    m[K_START] = true;
    m[K_START + 1] = true;
    m
}

/// One sample with every derived column and the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnrichedRecord {
    pub ts_utc: i64,
    pub ts_local: i64,
    pub h: [f64; N_CHANNELS],
    /// The most recent prescribed dose has been taken.
    pub last_med_event: bool,
    /// Seconds since the most recent prescribed time, -1 if none.
    pub last_prescribed_time: f64,
    /// Local hour of the most recent taken dose, -1 if none.
    pub last_event_hour: f64,
    pub day_of_week: u8,
    pub hour_of_day: u8,
    pub med_in_last: [bool; 5],
    pub relative_ts_utc: f64,
    pub relative_ts_local: f64,
    pub next_prescribed_hour: u8,
    /// Target: some dose is taken in `(ts, ts + 3600]`.
    pub med_next_hour: bool,
}

impl EnrichedRecord {
    /// Writes all 79 columns.
    pub fn write_all(&self, out: &mut [f64]) {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        out[..ALL_DIM].fill(0.0);
        out[..H_DIM].copy_from_slice(&self.h);
        out[L_START] = b(self.last_med_event);
        out[L_START + 1] = self.last_prescribed_time;
        out[L_START + 2] = self.last_event_hour;
        out[L_START + 3 + self.day_of_week as usize] = 1.0;
        out[L_START + 10 + self.hour_of_day as usize] = 1.0;
        for (i, &f) in self.med_in_last.iter().enumerate() {
            out[L_START + 34 + i] = b(f);
        }
        out[K_START] = self.relative_ts_utc;
        out[K_START + 1] = self.relative_ts_local;
        out[K_START + 2 + self.next_prescribed_hour as usize] = 1.0;
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = alloc::vec![0.0; ALL_DIM];
        self.write_all(&mut v);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedSeries {
    pub participant_id: u32,
    pub records: Vec<EnrichedRecord>,
    /// Records skipped because no prescribed dose followed them.
    pub excluded: usize,
}

/// Precomputed event timeline for feature derivation.
struct Timeline<'a> {
    log: &'a EventLog,
    prescribed: Vec<i64>,
    taken: Vec<i64>,
}

impl<'a> Timeline<'a> {
    fn new(log: &'a EventLog) -> Self {
        Timeline { log, prescribed: log.prescribed_times(), taken: log.taken_times() }
    }

    fn enrich(&self, r: &MergedRecord, next_prescribed: i64) -> EnrichedRecord {
        let s = &r.sample;
        let t = s.ts_utc;
        let offset = s.ts_local - s.ts_utc;
        // Latest prescribed dose at or before t, and whether it was taken by t.
        let last_dose = self.prescribed.partition_point(|&p| p <= t).checked_sub(1);
        let last_med_event = last_dose
            .and_then(|i| self.log.events()[i].taken_ts)
            .is_some_and(|taken| taken <= t);
        let last_prescribed_time = r.prev_prescribed_ts.map_or(-1.0, |p| (t - p) as f64);
        let last_event_hour = r.prev_event_ts.map_or(-1.0, |e| hour_of_day(e + offset) as f64);
        let mut med_in_last = [false; 5];
        for (flag, h) in med_in_last.iter_mut().zip(LOOKBACK_HOURS) {
            *flag = r.prev_event_ts.is_some_and(|e| e > t - h * SECS_PER_HOUR);
        }
        let med_next_hour = r.next_event_ts.is_some_and(|e| e <= t + SECS_PER_HOUR);
        debug_assert_eq!(r.prev_event_ts, self.taken[..self.taken.partition_point(|&x| x <= t)].last().copied());
        EnrichedRecord {
            ts_utc: t,
            ts_local: s.ts_local,
            h: s.channels(),
            last_med_event,
            last_prescribed_time,
            last_event_hour,
            day_of_week: day_of_week(s.ts_local) as u8,
            hour_of_day: hour_of_day(s.ts_local) as u8,
            med_in_last,
            relative_ts_utc: (next_prescribed - t) as f64,
            relative_ts_local: ((next_prescribed + offset) - s.ts_local) as f64,
            next_prescribed_hour: hour_of_day(next_prescribed + offset) as u8,
            med_next_hour,
        }
    }
}

/// Enriches every merged record. Records without a following prescribed
/// dose are excluded and counted.
pub fn derive_features(merged: &MergedSeries) -> Result<EnrichedSeries> {
    if merged.records.is_empty() {
        return Err(Error::Argument(format!("participant {}: merged series is empty", merged.participant_id)));
    }
    let tl = Timeline::new(&merged.events);
    let mut excluded = 0;
    let records = merged
        .records
        .iter()
        .filter_map(|r| match r.next_prescribed_ts {
            Some(p) => Some(tl.enrich(r, p)),
            None => {
                excluded += 1;
                None
            }
        })
        .collect();
    Ok(EnrichedSeries { participant_id: merged.participant_id, records, excluded })
}

/// Declarative choice of feature blocks.
///
/// | spec  | forecaster                           | dim |
/// |-------|--------------------------------------|-----|
/// | H+L   | sensor + event history               | 53  |
/// | H+L+K | sensor + event history + knowledge   | 79  |
/// | H     | sensor only                          | 14  |
/// | H+K   | sensor + future knowledge            | 40  |
/// | Loc   | latitude and longitude only          | 2   |
/// | Loc+K | location + future knowledge          | 28  |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureSetSpec {
    pub include_h: bool,
    pub include_l: bool,
    pub include_k: bool,
    /// Restricts H to latitude and longitude.
    pub loc_only: bool,
}

impl FeatureSetSpec {
    pub const H: Self = Self::new(true, false, false, false);
    pub const HK: Self = Self::new(true, false, true, false);
    pub const HL: Self = Self::new(true, true, false, false);
    pub const HLK: Self = Self::new(true, true, true, false);
    pub const LOC: Self = Self::new(true, false, false, true);
    pub const LOC_K: Self = Self::new(true, false, true, true);

    pub const fn new(include_h: bool, include_l: bool, include_k: bool, loc_only: bool) -> Self {
        FeatureSetSpec { include_h, include_l, include_k, loc_only }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.include_h || self.include_l || self.include_k) {
            return Err(Error::config("features", "at least one of H, L, K must be selected"));
        }
        if self.loc_only && !self.include_h {
            return Err(Error::config("features", "Loc restricts H and therefore requires it"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        let h = match (self.include_h, self.loc_only) {
            (false, _) => 0,
            (true, true) => 2,
            (true, false) => H_DIM,
        };
        h + if self.include_l { L_DIM } else { 0 } + if self.include_k { K_DIM } else { 0 }
    }

    /// Indices into the full 79-column layout, in output order.
    pub fn column_indices(&self) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        if self.include_h {
            if self.loc_only {
                idx.extend([LAT_CHANNEL, LON_CHANNEL]);
            } else {
                idx.extend(0..H_DIM);
            }
        }
        if self.include_l {
            idx.extend(L_START..K_START);
        }
        if self.include_k {
            idx.extend(K_START..ALL_DIM);
        }
        idx
    }

    pub fn column_names(&self) -> Vec<String> {
        let all = column_names();
        self.column_indices().into_iter().map(|i| all[i].clone()).collect()
    }

    pub fn is_full(&self) -> bool {
        *self == Self::HLK
    }
}

impl fmt::Display for FeatureSetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<&str> = Vec::new();
        if self.include_h {
            parts.push(if self.loc_only { "Loc" } else { "H" });
        }
        if self.include_l {
            parts.push("L");
        }
        if self.include_k {
            parts.push("K");
        }
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for FeatureSetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = FeatureSetSpec::new(false, false, false, false);
        for part in s.split('+').map(str::trim) {
            let seen = match part {
                "H" => core::mem::replace(&mut spec.include_h, true),
                "L" => core::mem::replace(&mut spec.include_l, true),
                "K" => core::mem::replace(&mut spec.include_k, true),
                "Loc" | "LOC" | "loc" => {
                    spec.loc_only = true;
                    core::mem::replace(&mut spec.include_h, true)
                }
                _ => return Err(Error::config("features", format!("unknown feature block `{part}` in `{s}`"))),
            };
            if seen {
                return Err(Error::config("features", format!("block `{part}` repeated in `{s}`")));
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// A row-major matrix of selected columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    pub n_rows: usize,
    pub data: Vec<f64>,
    pub targets: Vec<bool>,
}

/// Projects an enriched series onto the columns of `spec`.
pub fn select_features(series: &EnrichedSeries, spec: FeatureSetSpec) -> Result<FeatureMatrix> {
    spec.validate()?;
    let idx = spec.column_indices();
    let mut row = [0.0; ALL_DIM];
    let mut data = Vec::with_capacity(series.records.len() * idx.len());
    for r in &series.records {
        r.write_all(&mut row);
        data.extend(idx.iter().map(|&i| row[i]));
    }
    Ok(FeatureMatrix {
        columns: spec.column_names(),
        n_rows: series.records.len(),
        data,
        targets: series.records.iter().map(|r| r.med_next_hour).collect(),
    })
}

/// Result of [`audit_leakage`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LeakageReport {
    pub records_checked: usize,
    /// `(ts_utc, column index)` of every L or K column that changed when
    /// future taken events were removed.
    pub violations: Vec<(i64, usize)>,
}

impl LeakageReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.records_checked > 0
    }
}

/// Checks that no L or K column depends on taken events after the record's
/// own timestamp. For each cut time, every taken event after the cut is
/// erased, the prefix is re-merged and re-derived, and the L/K columns of
/// every record at or before the cut must be unchanged.
pub fn audit_leakage(sensor: &SensorStream, events: &EventLog, participant_id: u32, cuts: usize) -> Result<LeakageReport> {
    let merged = merge_streams(participant_id, sensor, events.clone())?;
    let full = derive_features(&merged)?;
    let n = full.records.len();
    let mut report = LeakageReport::default();
    let mut a = [0.0; ALL_DIM];
    let mut b = [0.0; ALL_DIM];
    for c in 1..=cuts {
        let cut_idx = (n * c / (cuts + 1)).min(n - 1);
        let cut = full.records[cut_idx].ts_utc;
        let stripped = EventLog::new(
            events
                .events()
                .iter()
                .map(|e| {
                    let mut e = *e;
                    e.taken_ts = e.taken_ts.filter(|&t| t <= cut);
                    e
                })
                .collect(),
        );
        let m = merge_streams(participant_id, sensor, stripped)?;
        let redone = derive_features(&m)?;
        for (orig, new) in full.records[..=cut_idx].iter().zip(&redone.records) {
            debug_assert_eq!(orig.ts_utc, new.ts_utc);
            orig.write_all(&mut a);
            new.write_all(&mut b);
            report.records_checked += 1;
            for col in L_START..ALL_DIM {
                if a[col].to_bits() != b[col].to_bits() {
                    report.violations.push((orig.ts_utc, col));
                }
            }
        }
    }
    Ok(report)
}
