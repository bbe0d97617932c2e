//! Raw per-participant records: duty-cycled sensor samples and per-dose
//! medication events.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::time::{day_index, SECS_PER_DAY};

/// Number of high-resolution sensor channels.
pub const N_CHANNELS: usize = 14;

/// Channel names in canonical column order.
pub const CHANNEL_NAMES: [&str; N_CHANNELS] = [
    "yaw", "pitch", "roll", "rot_x", "rot_y", "rot_z", "acc_x", "acc_y", "acc_z", "lat", "lon",
    "altitude", "h_accuracy", "speed",
];

pub const LAT_CHANNEL: usize = 9;
pub const LON_CHANNEL: usize = 10;

/// One sensor reading. Angles in radians, rotation rates in rad/s,
/// acceleration in g, coordinates in degrees, altitude and accuracy in
/// meters, speed in m/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSample {
    pub ts_utc: i64,
    pub ts_local: i64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub rot_x: f64,
    pub rot_y: f64,
    pub rot_z: f64,
    pub acc_x: f64,
    pub acc_y: f64,
    pub acc_z: f64,
    pub lat: f64,
    pub lon: f64,
    pub altitude: f64,
    pub h_accuracy: f64,
    pub speed: f64,
}

impl SensorSample {
    pub fn channels(&self) -> [f64; N_CHANNELS] {
        [
            self.yaw,
            self.pitch,
            self.roll,
            self.rot_x,
            self.rot_y,
            self.rot_z,
            self.acc_x,
            self.acc_y,
            self.acc_z,
            self.lat,
            self.lon,
            self.altitude,
            self.h_accuracy,
            self.speed,
        ]
    }

    pub fn from_channels(ts_utc: i64, ts_local: i64, c: [f64; N_CHANNELS]) -> Self {
        SensorSample {
            ts_utc,
            ts_local,
            yaw: c[0],
            pitch: c[1],
            roll: c[2],
            rot_x: c[3],
            rot_y: c[4],
            rot_z: c[5],
            acc_x: c[6],
            acc_y: c[7],
            acc_z: c[8],
            lat: c[9],
            lon: c[10],
            altitude: c[11],
            h_accuracy: c[12],
            speed: c[13],
        }
    }
}

/// A timestamp-sorted sensor stream for one participant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorStream {
    samples: Vec<SensorSample>,
}

impl SensorStream {
    /// Validates ordering and coordinate ranges. Row numbers in errors are
    /// zero-based sample indices.
    pub fn new(samples: Vec<SensorSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if i > 0 && s.ts_utc <= samples[i - 1].ts_utc {
                let reason = if s.ts_utc == samples[i - 1].ts_utc {
                    format!("duplicate timestamp {}", s.ts_utc)
                } else {
                    format!("timestamp {} precedes {}", s.ts_utc, samples[i - 1].ts_utc)
                };
                return Err(Error::Data { row: i, reason });
            }
            if !(-90.0..=90.0).contains(&s.lat) || !(-180.0..=180.0).contains(&s.lon) {
                return Err(Error::Data {
                    row: i,
                    reason: format!("coordinates ({}, {}) out of range", s.lat, s.lon),
                });
            }
        }
        Ok(SensorStream { samples })
    }

    pub fn samples(&self) -> &[SensorSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<SensorSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Local-minus-UTC offset taken from the first sample.
    pub fn utc_offset(&self) -> Option<i64> {
        self.samples.first().map(|s| s.ts_local - s.ts_utc)
    }
}

/// One prescribed dose. `day` is the local calendar day index; a missed
/// dose has no `taken_ts`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MedicationEvent {
    pub day: i64,
    pub taken_ts: Option<i64>,
    pub prescribed_ts: i64,
}

impl MedicationEvent {
    /// Checks that the prescribed and taken times fall on `day` in local time.
    pub fn check(&self, utc_offset: i64) -> core::result::Result<(), String> {
        if day_index(self.prescribed_ts + utc_offset) != self.day {
            return Err(format!("prescribed_ts {} is not on day {}", self.prescribed_ts, self.day));
        }
        if let Some(t) = self.taken_ts {
            if day_index(t + utc_offset) != self.day {
                return Err(format!("taken_ts {t} is not on day {}", self.day));
            }
        }
        Ok(())
    }
}

/// The study span of one participant and their fixed daily schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudySpan {
    pub first_day: i64,
    /// Inclusive.
    pub last_day: i64,
    /// Prescribed times as local seconds after midnight, sorted.
    pub dose_seconds: Vec<i64>,
    pub utc_offset: i64,
}

impl StudySpan {
    pub fn n_days(&self) -> usize {
        (self.last_day - self.first_day + 1).max(0) as usize
    }

    pub fn prescribed_ts(&self, day: i64, second_of_day: i64) -> i64 {
        day * SECS_PER_DAY + second_of_day - self.utc_offset
    }
}

/// All prescribed doses of one participant, sorted by prescribed time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    events: Vec<MedicationEvent>,
}

impl EventLog {
    /// Builds a log from events already covering every dose (e.g. generator
    /// output). Sorts by prescribed time.
    pub fn new(mut events: Vec<MedicationEvent>) -> Self {
        events.sort_by_key(|e| (e.prescribed_ts, e.day));
        EventLog { events }
    }

    /// Builds a complete log from recorded rows. Days (or doses) absent from
    /// `records` but inside the span are missed doses whose prescribed time
    /// is reconstructed from the schedule. `records` are validated; row
    /// numbers in errors are zero-based record indices.
    pub fn complete(records: Vec<MedicationEvent>, span: &StudySpan) -> Result<Self> {
        let mut by_time: BTreeMap<i64, MedicationEvent> = BTreeMap::new();
        for (row, r) in records.into_iter().enumerate() {
            r.check(span.utc_offset).map_err(|reason| Error::Data { row, reason })?;
            if r.day < span.first_day || r.day > span.last_day {
                return Err(Error::Data {
                    row,
                    reason: format!("day {} outside study span {}..={}", r.day, span.first_day, span.last_day),
                });
            }
            if by_time.insert(r.prescribed_ts, r).is_some() {
                return Err(Error::Data {
                    row,
                    reason: format!("duplicate dose prescribed at {}", r.prescribed_ts),
                });
            }
        }
        for day in span.first_day..=span.last_day {
            for &sec in &span.dose_seconds {
                let p = span.prescribed_ts(day, sec);
                by_time.entry(p).or_insert(MedicationEvent { day, taken_ts: None, prescribed_ts: p });
            }
        }
        Ok(EventLog { events: by_time.into_values().collect() })
    }

    pub fn events(&self) -> &[MedicationEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn taken_count(&self) -> usize {
        self.events.iter().filter(|e| e.taken_ts.is_some()).count()
    }

    /// Sorted taken timestamps.
    pub fn taken_times(&self) -> Vec<i64> {
        let mut t: Vec<i64> = self.events.iter().filter_map(|e| e.taken_ts).collect();
        t.sort_unstable();
        t
    }

    /// Sorted prescribed timestamps.
    pub fn prescribed_times(&self) -> Vec<i64> {
        self.events.iter().map(|e| e.prescribed_ts).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample(ts: i64) -> SensorSample {
        SensorSample::from_channels(ts, ts, [0.0; N_CHANNELS])
    }

    #[test]
    fn stream_rejects_out_of_order() {
        let err = SensorStream::new(vec![sample(1), sample(3), sample(2)]).unwrap_err();
        assert!(matches!(err, Error::Data { row: 2, .. }));
        let err = SensorStream::new(vec![sample(1), sample(1)]).unwrap_err();
        assert!(matches!(err, Error::Data { row: 1, .. }));
    }

    #[test]
    fn stream_rejects_bad_coordinates() {
        let mut s = sample(1);
        s.lat = 91.0;
        assert!(SensorStream::new(vec![s]).is_err());
    }

    fn span(days: i64) -> StudySpan {
        StudySpan { first_day: 100, last_day: 100 + days - 1, dose_seconds: vec![9 * 3600], utc_offset: 0 }
    }

    #[test]
    fn absent_days_are_missed_doses() {
        let sp = span(14);
        let recs: Vec<_> = (0..12)
            .map(|d| {
                let p = sp.prescribed_ts(100 + d, 9 * 3600);
                MedicationEvent { day: 100 + d, taken_ts: Some(p + 60), prescribed_ts: p }
            })
            .collect();
        let log = EventLog::complete(recs, &sp).unwrap();
        assert_eq!(log.len(), 14);
        assert_eq!(log.events().iter().filter(|e| e.taken_ts.is_none()).count(), 2);
    }

    #[test]
    fn empty_records_give_all_missed() {
        let log = EventLog::complete(vec![], &span(5)).unwrap();
        assert_eq!(log.len(), 5);
        assert_eq!(log.taken_count(), 0);
    }

    #[test]
    fn taken_on_wrong_day_is_rejected() {
        let sp = span(3);
        let p = sp.prescribed_ts(100, 9 * 3600);
        let bad = MedicationEvent { day: 100, taken_ts: Some(p + SECS_PER_DAY), prescribed_ts: p };
        assert!(matches!(EventLog::complete(vec![bad], &sp), Err(Error::Data { row: 0, .. })));
    }
}
