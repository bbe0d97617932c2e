//! Synthetic cohorts: participants with a fixed daily medication schedule,
//! duty-cycled 14-channel sensor streams and adherence events drawn from a
//! logistic model over context that is visible in the sensor stream.
//!
//! Context per dose:
//! * away from home (a day-level home/away state, visible in lat/lon),
//! * a late night before the dose day (high motion between 00:00 and 02:00),
//! * weekend,
//! * how late in the day the dose is prescribed.

use alloc::vec::Vec;

use libm::{cos, exp, fabs, round, sqrt};
use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::record::{EventLog, MedicationEvent, SensorSample, SensorStream, StudySpan};
use crate::rng::{self, tag};
use crate::time::{day_index, weekday_of_day, SECS_PER_DAY, SECS_PER_HOUR};

/// Seconds between the starts of consecutive duty-cycle blocks.
pub const BLOCK_SECS: i64 = 10;
/// Samples recorded at 1 Hz at the start of each block.
pub const SAMPLES_PER_BLOCK: i64 = 5;
pub const SAMPLES_PER_DAY: usize = (SECS_PER_DAY / BLOCK_SECS * SAMPLES_PER_BLOCK) as usize;

/// Radius around the home center inside which every home sample lies.
pub const HOME_RADIUS_M: f64 = 200.0;
const LOCATION_JITTER_M: f64 = 15.0;
const METERS_PER_DEG_LAT: f64 = 111_320.0;

/// Taken doses never stray further than this from the prescribed time.
pub const MAX_TIMING_NOISE_MIN: f64 = 45.0;

/// Mean absolute deviation of acceleration magnitude from 1 g above which a
/// 00:00-02:00 period counts as a late night.
const LATE_NIGHT_ACTIVITY: f64 = 0.08;

/// Logistic weights on the planted context features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdherenceWeights {
    pub is_away: f64,
    pub is_late_night: f64,
    pub weekday: f64,
    pub hours_to_prescribed: f64,
}

impl AdherenceWeights {
    pub const ZERO: Self = AdherenceWeights { is_away: 0.0, is_late_night: 0.0, weekday: 0.0, hours_to_prescribed: 0.0 };
}

impl Default for AdherenceWeights {
    fn default() -> Self {
        AdherenceWeights { is_away: -2.0, is_late_night: -1.5, weekday: -0.5, hours_to_prescribed: -0.5 }
    }
}

/// Systematic offset and uniform jitter of taken times around the
/// prescribed time, in minutes. `|offset| + jitter <= 45`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseTiming {
    pub offset_min: f64,
    pub jitter_min: f64,
}

impl Default for DoseTiming {
    fn default() -> Self {
        DoseTiming { offset_min: 0.0, jitter_min: MAX_TIMING_NOISE_MIN }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortConfig {
    pub n_participants: usize,
    pub days_per_participant: usize,
    /// 1 or 2.
    pub doses_per_day: u8,
    pub base_adherence: f64,
    pub context_effect_strength: f64,
    pub seed: u64,
    /// Local day index of the first study day.
    pub start_day: i64,
    pub utc_offset_s: i64,
    pub first_participant_id: u32,
    pub weights: AdherenceWeights,
    pub timing: DoseTiming,
    /// Mean per-weekday probability of spending the day away from home.
    pub away_rate: f64,
    /// Mean per-night probability of staying up until 02:00.
    pub late_night_rate: f64,
    /// When set, every participant shares this weight vector exactly.
    pub exact_weights: bool,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_participants: 22,
            days_per_participant: 14,
            doses_per_day: 1,
            base_adherence: 0.85,
            context_effect_strength: 1.0,
            seed: 0,
            start_day: crate::time::days_from_civil(2024, 1, 1),
            utc_offset_s: -7 * SECS_PER_HOUR,
            first_participant_id: 1,
            weights: AdherenceWeights::default(),
            timing: DoseTiming::default(),
            away_rate: 0.2,
            late_night_rate: 0.25,
            exact_weights: false,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_participants < 1 {
            return Err(Error::config("n_participants", "must be at least 1"));
        }
        if self.days_per_participant < 2 {
            return Err(Error::config("days_per_participant", "must be at least 2"));
        }
        if !matches!(self.doses_per_day, 1 | 2) {
            return Err(Error::config("doses_per_day", "must be 1 or 2"));
        }
        if !unit(self.base_adherence) {
            return Err(Error::config("base_adherence", "must lie in [0, 1]"));
        }
        if !(self.context_effect_strength >= 0.0 && self.context_effect_strength.is_finite()) {
            return Err(Error::config("context_effect_strength", "must be finite and >= 0"));
        }
        let t = self.timing;
        if !(t.jitter_min >= 0.0 && fabs(t.offset_min) + t.jitter_min <= MAX_TIMING_NOISE_MIN) {
            return Err(Error::config("timing", "needs jitter >= 0 and |offset| + jitter <= 45 minutes"));
        }
        if !unit(self.away_rate) {
            return Err(Error::config("away_rate", "must lie in [0, 1]"));
        }
        if !unit(self.late_night_rate) {
            return Err(Error::config("late_night_rate", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn span(&self, profile: &BehaviorProfile) -> StudySpan {
        StudySpan {
            first_day: self.start_day,
            last_day: self.start_day + self.days_per_participant as i64 - 1,
            dose_seconds: profile.prescribed_hours.iter().map(|&h| h as i64 * SECS_PER_HOUR).collect(),
            utc_offset: profile.utc_offset_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorProfile {
    pub participant_id: u32,
    /// Distinct, sorted, each in `0..24`.
    pub prescribed_hours: Vec<u8>,
    pub home: (f64, f64),
    pub away: (f64, f64),
    pub home_altitude: f64,
    pub away_altitude: f64,
    pub away_probability_by_weekday: [f64; 7],
    pub late_propensity: f64,
    pub weights: AdherenceWeights,
    pub timing: DoseTiming,
    pub utc_offset_s: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    pub profile: BehaviorProfile,
    pub sensor_seed: u64,
    pub event_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub config: CohortConfig,
    pub participants: Vec<Participant>,
}

impl Cohort {
    /// Generates the sensor stream and event log of participant `index`.
    pub fn generate(&self, index: usize) -> (SensorStream, EventLog) {
        let p = &self.participants[index];
        let sensor = gen_sensor_stream(&p.profile, &self.config, p.sensor_seed);
        let events = gen_adherence_events(&p.profile, &sensor, &self.config, p.event_seed);
        (sensor, events)
    }
}

fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn normal(rng: &mut impl RngCore) -> f64 {
    StandardNormal.sample(rng)
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = libm::pow(10.0, decimals as f64);
    round(x * scale) / scale
}

pub fn gen_cohort(config: &CohortConfig) -> Result<Cohort> {
    config.validate()?;
    let participants = (0..config.n_participants)
        .map(|i| {
            let id = config.first_participant_id + i as u32;
            let profile = gen_profile(config, id);
            Participant {
                profile,
                sensor_seed: rng::derive(config.seed, &[tag::SENSOR, id as u64]),
                event_seed: rng::derive(config.seed, &[tag::EVENTS, id as u64]),
            }
        })
        .collect();
    Ok(Cohort { config: config.clone(), participants })
}

fn gen_profile(config: &CohortConfig, id: u32) -> BehaviorProfile {
    let mut r = rng::rng(config.seed, &[tag::PROFILE, id as u64]);
    let first = r.random_range(0..24u8);
    let mut prescribed_hours = alloc::vec![first];
    if config.doses_per_day == 2 {
        prescribed_hours.push((first + r.random_range(8..=14u8)) % 24);
        prescribed_hours.sort_unstable();
    }
    let home = (round_to(uniform(&mut r, 33.2, 33.6), 7), round_to(uniform(&mut r, -112.2, -111.8), 7));
    let bearing = uniform(&mut r, 0.0, core::f64::consts::TAU);
    let dist = uniform(&mut r, 0.3, 0.6);
    let away = (
        round_to(home.0 + dist * libm::sin(bearing), 7),
        round_to(home.1 + dist * cos(bearing), 7),
    );
    let mut away_probability_by_weekday = [0.0; 7];
    for (wd, p) in away_probability_by_weekday.iter_mut().enumerate() {
        let weekend = if wd >= 5 { 1.5 } else { 1.0 };
        *p = (config.away_rate * weekend * uniform(&mut r, 0.6, 1.4)).clamp(0.0, 1.0);
    }
    let late_propensity = (config.late_night_rate * uniform(&mut r, 0.6, 1.4)).clamp(0.0, 1.0);
    let weights = if config.exact_weights {
        config.weights
    } else {
        let mut j = || uniform(&mut r, 0.75, 1.25);
        let w = config.weights;
        AdherenceWeights {
            is_away: w.is_away * j(),
            is_late_night: w.is_late_night * j(),
            weekday: w.weekday * j(),
            hours_to_prescribed: w.hours_to_prescribed * j(),
        }
    };
    BehaviorProfile {
        participant_id: id,
        prescribed_hours,
        home,
        away,
        home_altitude: round_to(uniform(&mut r, 300.0, 400.0), 2),
        away_altitude: round_to(uniform(&mut r, 200.0, 900.0), 2),
        away_probability_by_weekday,
        late_propensity,
        weights,
        timing: config.timing,
        utc_offset_s: config.utc_offset_s,
    }
}

/// Day-level behavior drawn before the samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayPlan {
    pub away: bool,
    /// Awake and active from 00:00 to 02:00 of this day.
    pub late_night: bool,
}

/// Day plans for `days` consecutive days starting at `start_day`.
pub fn gen_day_plans(profile: &BehaviorProfile, start_day: i64, days: usize, seed: u64) -> Vec<DayPlan> {
    let mut r = rng::rng(seed, &[0]);
    (0..days as i64)
        .map(|d| {
            let wd = weekday_of_day(start_day + d);
            let away = r.random::<f64>() < profile.away_probability_by_weekday[wd];
            let late_night = r.random::<f64>() < profile.late_propensity;
            DayPlan { away, late_night }
        })
        .collect()
}

/// Generates `config.days_per_participant` days of duty-cycled samples:
/// within every 10 s block the first 5 seconds are recorded at 1 Hz.
pub fn gen_sensor_stream(profile: &BehaviorProfile, config: &CohortConfig, seed: u64) -> SensorStream {
    let days = config.days_per_participant;
    let plans = gen_day_plans(profile, config.start_day, days, seed);
    let mut r = rng::rng(seed, &[1]);
    let deg_lat = LOCATION_JITTER_M / METERS_PER_DEG_LAT;
    let clamp_m = 3.0 * LOCATION_JITTER_M;
    let mut samples = Vec::with_capacity(days * SAMPLES_PER_DAY);
    for (d, plan) in plans.iter().enumerate() {
        let day = config.start_day + d as i64;
        let (center, alt) = if plan.away {
            (profile.away, profile.away_altitude)
        } else {
            (profile.home, profile.home_altitude)
        };
        let deg_lon = LOCATION_JITTER_M / (METERS_PER_DEG_LAT * cos(center.0.to_radians()));
        for block in 0..SECS_PER_DAY / BLOCK_SECS {
            for k in 0..SAMPLES_PER_BLOCK {
                let sec = block * BLOCK_SECS + k;
                let ts_local = day * SECS_PER_DAY + sec;
                let hour = sec / SECS_PER_HOUR;
                let late = plan.late_night && hour < 2;
                let asleep = !late && !(7..23).contains(&hour);
                let act = if late {
                    0.35
                } else if asleep {
                    0.02
                } else {
                    0.25
                };
                let mut n = || normal(&mut r);
                let yaw = round_to(0.8 * (act + 0.05) * n(), 6);
                let pitch = round_to(0.5 * (act + 0.05) * n(), 6);
                let roll = round_to(0.5 * (act + 0.05) * n(), 6);
                let rot = [round_to(2.0 * act * n(), 6), round_to(2.0 * act * n(), 6), round_to(2.0 * act * n(), 6)];
                let acc = [round_to(act * n(), 6), round_to(act * n(), 6), round_to(1.0 + act * n(), 6)];
                let jn = (LOCATION_JITTER_M * n()).clamp(-clamp_m, clamp_m) / LOCATION_JITTER_M;
                let je = (LOCATION_JITTER_M * n()).clamp(-clamp_m, clamp_m) / LOCATION_JITTER_M;
                let lat = round_to(center.0 + jn * deg_lat, 7);
                let lon = round_to(center.1 + je * deg_lon, 7);
                let altitude = round_to(alt + 3.0 * n(), 3);
                let h_accuracy = round_to(5.0 + fabs(5.0 * n()), 3);
                let speed = if asleep { 0.0 } else { round_to((0.6 + 0.5 * n()).max(0.0), 3) };
                samples.push(SensorSample {
                    ts_utc: ts_local - profile.utc_offset_s,
                    ts_local,
                    yaw,
                    pitch,
                    roll,
                    rot_x: rot[0],
                    rot_y: rot[1],
                    rot_z: rot[2],
                    acc_x: acc[0],
                    acc_y: acc[1],
                    acc_z: acc[2],
                    lat,
                    lon,
                    altitude,
                    h_accuracy,
                    speed,
                });
            }
        }
    }
    SensorStream::new(samples).expect("generator emits a valid stream")
}

/// Context features of one prescribed dose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseContext {
    pub is_away: bool,
    pub is_late_night: bool,
    pub is_weekend: bool,
    /// `(hour - 12) / 12`, in `[-1, 1)`.
    pub hours_to_prescribed: f64,
}

pub fn distance_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dy = (a.0 - b.0) * METERS_PER_DEG_LAT;
    let dx = (a.1 - b.1) * METERS_PER_DEG_LAT * cos(a.0.to_radians());
    sqrt(dx * dx + dy * dy)
}

/// Reads the dose context off the sensor stream: location at the sample
/// nearest the prescribed time and motion between 00:00 and 02:00.
pub fn dose_context(profile: &BehaviorProfile, sensor: &SensorStream, prescribed_ts: i64) -> DoseContext {
    let s = sensor.samples();
    let local = prescribed_ts + profile.utc_offset_s;
    let day = day_index(local);
    let nearest = match s.binary_search_by_key(&prescribed_ts, |x| x.ts_utc) {
        Ok(i) => i,
        Err(i) => i.min(s.len().saturating_sub(1)),
    };
    let is_away = s.get(nearest).is_some_and(|x| distance_m((x.lat, x.lon), profile.home) > HOME_RADIUS_M);
    let night_start = day * SECS_PER_DAY - profile.utc_offset_s;
    let night_end = night_start + 2 * SECS_PER_HOUR;
    let lo = s.partition_point(|x| x.ts_utc < night_start);
    let hi = s.partition_point(|x| x.ts_utc < night_end);
    let is_late_night = hi > lo && {
        let dev: f64 = s[lo..hi]
            .iter()
            .map(|x| fabs(sqrt(x.acc_x * x.acc_x + x.acc_y * x.acc_y + x.acc_z * x.acc_z) - 1.0))
            .sum();
        dev / (hi - lo) as f64 > LATE_NIGHT_ACTIVITY
    };
    let hour = local.rem_euclid(SECS_PER_DAY) / SECS_PER_HOUR;
    DoseContext {
        is_away,
        is_late_night,
        is_weekend: weekday_of_day(day) >= 5,
        hours_to_prescribed: (hour as f64 - 12.0) / 12.0,
    }
}

/// Probability that a dose with context `ctx` is taken.
pub fn adherence_probability(base: f64, strength: f64, w: &AdherenceWeights, ctx: &DoseContext) -> f64 {
    if base >= 1.0 {
        return 1.0;
    }
    if base <= 0.0 {
        return 0.0;
    }
    let b = |x: bool| if x { 1.0 } else { 0.0 };
    let z = libm::log(base / (1.0 - base))
        + strength
            * (w.is_away * b(ctx.is_away)
                + w.is_late_night * b(ctx.is_late_night)
                + w.weekday * b(ctx.is_weekend)
                + w.hours_to_prescribed * ctx.hours_to_prescribed);
    1.0 / (1.0 + exp(-z))
}

/// One event per prescribed dose of every study day. Taken doses get a
/// timestamp within the configured timing band around the prescribed time,
/// clamped to the same local day; skipped doses carry no timestamp.
pub fn gen_adherence_events(
    profile: &BehaviorProfile,
    sensor: &SensorStream,
    config: &CohortConfig,
    seed: u64,
) -> EventLog {
    let span = config.span(profile);
    let mut r = rng::rng(seed, &[0]);
    let mut events = Vec::with_capacity(span.n_days() * span.dose_seconds.len());
    for day in span.first_day..=span.last_day {
        for &sec in &span.dose_seconds {
            let prescribed_ts = span.prescribed_ts(day, sec);
            let ctx = dose_context(profile, sensor, prescribed_ts);
            let p = adherence_probability(config.base_adherence, config.context_effect_strength, &profile.weights, &ctx);
            let u: f64 = r.random();
            let noise: f64 = uniform(&mut r, -1.0, 1.0);
            let taken_ts = (u < p).then(|| {
                let shift = (profile.timing.offset_min + profile.timing.jitter_min * noise) * 60.0;
                let day_start = day * SECS_PER_DAY - span.utc_offset;
                (prescribed_ts + round(shift) as i64).clamp(day_start, day_start + SECS_PER_DAY - 1)
            });
            events.push(MedicationEvent { day, taken_ts, prescribed_ts });
        }
    }
    EventLog::new(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, days: usize) -> CohortConfig {
        CohortConfig { n_participants: n, days_per_participant: days, seed: 11, ..Default::default() }
    }

    #[test]
    fn deterministic() {
        let c = small(3, 2);
        assert_eq!(gen_cohort(&c).unwrap(), gen_cohort(&c).unwrap());
    }

    #[test]
    fn one_dose_each() {
        let c = CohortConfig { n_participants: 22, doses_per_day: 1, ..small(22, 2) };
        let cohort = gen_cohort(&c).unwrap();
        assert_eq!(cohort.participants.len(), 22);
        assert!(cohort.participants.iter().all(|p| p.profile.prescribed_hours.len() == 1));
    }

    #[test]
    fn two_doses_are_distinct() {
        let c = CohortConfig { doses_per_day: 2, ..small(30, 2) };
        for p in gen_cohort(&c).unwrap().participants {
            let h = &p.profile.prescribed_hours;
            assert_eq!(h.len(), 2);
            assert!(h[0] < h[1] && h[1] < 24);
        }
    }

    #[test]
    fn seeds_change_schedules() {
        let a = gen_cohort(&CohortConfig { seed: 1, ..small(22, 2) }).unwrap();
        let b = gen_cohort(&CohortConfig { seed: 2, ..small(22, 2) }).unwrap();
        let hours = |c: &Cohort| c.participants.iter().map(|p| p.profile.prescribed_hours.clone()).collect::<Vec<_>>();
        assert_ne!(hours(&a), hours(&b));
    }

    #[test]
    fn invalid_config_names_field() {
        let bad = CohortConfig { days_per_participant: 1, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { field: "days_per_participant", .. })));
        let bad = CohortConfig { base_adherence: 1.5, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { field: "base_adherence", .. })));
        let bad = CohortConfig { doses_per_day: 3, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { field: "doses_per_day", .. })));
        let bad = CohortConfig { n_participants: 0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { field: "n_participants", .. })));
    }

    #[test]
    fn one_day_has_43200_duty_cycled_samples() {
        let c = small(1, 2);
        let cohort = gen_cohort(&c).unwrap();
        let s = gen_sensor_stream(&cohort.participants[0].profile, &CohortConfig { days_per_participant: 1, ..c }, 5);
        assert_eq!(s.len(), 43_200);
        let mut per_block = alloc::collections::BTreeMap::new();
        for x in s.samples() {
            *per_block.entry(x.ts_utc.div_euclid(BLOCK_SECS)).or_insert(0) += 1;
            assert!(x.ts_utc.rem_euclid(BLOCK_SECS) < SAMPLES_PER_BLOCK);
        }
        assert_eq!(per_block.len(), 8_640);
        assert!(per_block.values().all(|&n| n == 5));
    }

    #[test]
    fn never_away_stays_home() {
        let c = CohortConfig { away_rate: 0.0, ..small(1, 3) };
        let cohort = gen_cohort(&c).unwrap();
        let p = &cohort.participants[0].profile;
        let s = gen_sensor_stream(p, &c, 9);
        assert!(s.samples().iter().all(|x| distance_m((x.lat, x.lon), p.home) <= HOME_RADIUS_M));
    }

    #[test]
    fn saturated_adherence() {
        let all = CohortConfig { base_adherence: 1.0, weights: AdherenceWeights::ZERO, ..small(1, 4) };
        let cohort = gen_cohort(&all).unwrap();
        let (_, ev) = cohort.generate(0);
        assert_eq!(ev.len(), 4);
        assert_eq!(ev.taken_count(), 4);

        let none = CohortConfig { base_adherence: 0.0, ..all };
        let (_, ev) = gen_cohort(&none).unwrap().generate(0);
        assert_eq!(ev.taken_count(), 0);
    }

    #[test]
    fn taken_times_respect_timing_band_and_day() {
        let c = CohortConfig { doses_per_day: 2, base_adherence: 1.0, ..small(4, 6) };
        let cohort = gen_cohort(&c).unwrap();
        for i in 0..4 {
            let (_, ev) = cohort.generate(i);
            for e in ev.events() {
                let t = e.taken_ts.unwrap();
                assert!((t - e.prescribed_ts).abs() <= 45 * 60);
                e.check(c.utc_offset_s).unwrap();
            }
        }
    }
}
