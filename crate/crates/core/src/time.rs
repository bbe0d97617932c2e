//! Integer-second clock helpers. All timestamps are seconds since the Unix
//! epoch; local time is UTC plus a fixed per-participant offset.

pub const SECS_PER_HOUR: i64 = 3_600;
pub const SECS_PER_DAY: i64 = 86_400;

/// Local calendar day index (days since 1970-01-01) of a local timestamp.
pub fn day_index(ts_local: i64) -> i64 {
    ts_local.div_euclid(SECS_PER_DAY)
}

/// Hour of day in `0..24` of a local timestamp.
pub fn hour_of_day(ts_local: i64) -> usize {
    (ts_local.rem_euclid(SECS_PER_DAY) / SECS_PER_HOUR) as usize
}

/// Day of week with Monday = 0. 1970-01-01 was a Thursday.
pub fn day_of_week(ts_local: i64) -> usize {
    weekday_of_day(day_index(ts_local))
}

pub fn weekday_of_day(day: i64) -> usize {
    (day + 3).rem_euclid(7) as usize
}

/// Days since the epoch for a proleptic Gregorian date.
pub fn days_from_civil(year: i64, month: u32, day: u32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let m = month as i64;
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) + 2) / 5 + day as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

/// Inverse of [`days_from_civil`].
pub fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let y = yoe + era * 400 + if m <= 2 { 1 } else { 0 };
    (y, m, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_is_thursday() {
        assert_eq!(day_of_week(0), 3);
        // 2024-01-01 was a Monday.
        assert_eq!(weekday_of_day(days_from_civil(2024, 1, 1)), 0);
    }

    #[test]
    fn civil_round_trip() {
        for d in [-1000, 0, 19_723, 20_000, 60_000] {
            let (y, m, dd) = civil_from_days(d);
            assert_eq!(days_from_civil(y, m, dd), d);
        }
        assert_eq!(days_from_civil(2024, 1, 1), 19_723);
    }

    #[test]
    fn negative_local_times() {
        assert_eq!(hour_of_day(-1), 23);
        assert_eq!(day_index(-1), -1);
    }
}
