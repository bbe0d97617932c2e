//! Joins a sensor stream with an event log: every sample learns the
//! previous and next taken event and the previous and next prescribed time.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::record::{EventLog, SensorSample, SensorStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergedRecord {
    pub sample: SensorSample,
    /// Latest taken time `<= ts_utc`.
    pub prev_event_ts: Option<i64>,
    /// Latest prescribed time `<= ts_utc`.
    pub prev_prescribed_ts: Option<i64>,
    /// Earliest taken time `> ts_utc`.
    pub next_event_ts: Option<i64>,
    /// Earliest prescribed time `> ts_utc`. Always set on records produced
    /// by [`merge_streams`].
    pub next_prescribed_ts: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedSeries {
    pub participant_id: u32,
    pub records: Vec<MergedRecord>,
    pub events: EventLog,
    /// Samples dropped because no prescribed dose follows them.
    pub dropped_after_last_dose: usize,
}

/// Index of the last element `<= t`.
fn last_at_or_before(sorted: &[i64], t: i64) -> Option<i64> {
    let i = sorted.partition_point(|&x| x <= t);
    i.checked_sub(1).map(|i| sorted[i])
}

/// First element `> t`.
fn first_after(sorted: &[i64], t: i64) -> Option<i64> {
    sorted.get(sorted.partition_point(|&x| x <= t)).copied()
}

/// Merges by binary search over the event timeline. Samples at or after the
/// final prescribed dose are dropped.
pub fn merge_streams(participant_id: u32, sensor: &SensorStream, events: EventLog) -> Result<MergedSeries> {
    let s = sensor.samples();
    let prescribed = events.prescribed_times();
    let taken = events.taken_times();
    let (Some(first), Some(last)) = (s.first(), s.last()) else {
        return Err(Error::Merge(format!("participant {participant_id}: empty sensor stream")));
    };
    let (Some(&p0), Some(&p1)) = (prescribed.first(), prescribed.last()) else {
        return Err(Error::Merge(format!("participant {participant_id}: empty event log")));
    };
    // Nothing to merge when every sample is at or after the final dose.
    if first.ts_utc >= p1 {
        return Err(Error::Merge(format!(
            "participant {participant_id}: sensor span [{}, {}] does not overlap events [{p0}, {p1}]",
            first.ts_utc, last.ts_utc
        )));
    }
    let mut records = Vec::with_capacity(s.len());
    let mut dropped = 0;
    for sample in s {
        let t = sample.ts_utc;
        let next_prescribed_ts = first_after(&prescribed, t);
        if next_prescribed_ts.is_none() {
            dropped += 1;
            continue;
        }
        records.push(MergedRecord {
            sample: *sample,
            prev_event_ts: last_at_or_before(&taken, t),
            prev_prescribed_ts: last_at_or_before(&prescribed, t),
            next_event_ts: first_after(&taken, t),
            next_prescribed_ts,
        });
    }
    Ok(MergedSeries { participant_id, records, events, dropped_after_last_dose: dropped })
}
