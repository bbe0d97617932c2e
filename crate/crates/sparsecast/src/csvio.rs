//! Sensor, event and participant CSV files.
//!
//! Writers emit the canonical form (shortest round-trip float formatting,
//! `\n` line endings), so reading and rewriting a canonical file reproduces
//! it byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sparsecast_core::record::{StudySpan, CHANNEL_NAMES, N_CHANNELS};
use sparsecast_core::time::{civil_from_days, days_from_civil, SECS_PER_HOUR};
use sparsecast_core::{Error as CoreError, EventLog, MedicationEvent, SensorSample, SensorStream};

use crate::error::{Error, IoContext, Result};

pub const SENSOR_HEADER: [&str; N_CHANNELS + 2] = [
    "ts_utc", "ts_local", "yaw", "pitch", "roll", "rot_x", "rot_y", "rot_z", "acc_x", "acc_y", "acc_z", "lat", "lon",
    "altitude", "h_accuracy", "speed",
];
pub const EVENT_HEADER: [&str; 3] = ["date", "taken_ts", "prescribed_ts"];
pub const PARTICIPANT_HEADER: [&str; 5] = ["participant_id", "prescribed_hours", "utc_offset_s", "first_day", "last_day"];

/// A failure at a one-based file line.
type LineError = (usize, CoreError);

fn data(line: usize, reason: impl Into<String>) -> LineError {
    (line, CoreError::Data { row: line, reason: reason.into() })
}

fn row_error(path: &Path) -> impl Fn(LineError) -> Error + '_ {
    move |(line, source)| Error::Row { path: path.to_path_buf(), line, source }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).at(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).at(path)?))
}

/// Maps each required column to its position in the header.
fn column_map(headers: &csv::ByteRecord, required: &[&str]) -> Result<Vec<usize>, LineError> {
    required
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name.as_bytes())
                .ok_or_else(|| (1, CoreError::Schema { column: (*name).to_string() }))
        })
        .collect()
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(r)
}

fn field<'a>(rec: &'a csv::ByteRecord, idx: usize, name: &str, line: usize) -> Result<&'a str, LineError> {
    let raw = rec.get(idx).ok_or_else(|| data(line, format!("missing `{name}`")))?;
    std::str::from_utf8(raw).map_err(|_| data(line, format!("`{name}` is not UTF-8")))
}

fn parse<T: std::str::FromStr>(rec: &csv::ByteRecord, idx: usize, name: &str, line: usize) -> Result<T, LineError> {
    let s = field(rec, idx, name, line)?;
    s.parse().map_err(|_| data(line, format!("`{name}` = {s:?} is not a number")))
}

pub fn parse_sensor<R: Read>(r: R) -> Result<SensorStream, LineError> {
    let mut rdr = reader(r);
    let headers = rdr.byte_headers().map_err(|e| data(1, e.to_string()))?.clone();
    let cols = column_map(&headers, &SENSOR_HEADER)?;
    let mut samples = Vec::new();
    let mut rec = csv::ByteRecord::new();
    let mut line = 1;
    while rdr.read_byte_record(&mut rec).map_err(|e| data(line + 1, e.to_string()))? {
        line += 1;
        let mut ch = [0.0; N_CHANNELS];
        for (i, c) in ch.iter_mut().enumerate() {
            *c = parse(&rec, cols[i + 2], CHANNEL_NAMES[i], line)?;
        }
        samples.push(SensorSample::from_channels(parse(&rec, cols[0], "ts_utc", line)?, parse(&rec, cols[1], "ts_local", line)?, ch));
    }
    SensorStream::new(samples).map_err(|e| match e {
        CoreError::Data { row, reason } => data(row + 2, reason),
        other => (1, other),
    })
}

pub fn write_sensor<W: Write>(mut w: W, stream: &SensorStream) -> std::io::Result<()> {
    writeln!(w, "{}", SENSOR_HEADER.join(","))?;
    for s in stream.samples() {
        write!(w, "{},{}", s.ts_utc, s.ts_local)?;
        for c in s.channels() {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn format_date(day: i64) -> String {
    let (y, m, d) = civil_from_days(day);
    format!("{y:04}-{m:02}-{d:02}")
}

pub fn parse_date(s: &str) -> Option<i64> {
    let mut it = s.splitn(3, '-');
    let (y, m, d) = (it.next()?.parse().ok()?, it.next()?.parse().ok()?, it.next()?.parse().ok()?);
    if s.len() != 10 || !(1..=12).contains(&m) || !(1..=31).contains(&d) {
        return None;
    }
    let day = days_from_civil(y, m, d);
    // Rejects e.g. 2024-02-31.
    (civil_from_days(day) == (y, m, d)).then_some(day)
}

/// Reads recorded doses and completes them over `span`.
pub fn parse_events<R: Read>(r: R, span: &StudySpan) -> Result<EventLog, LineError> {
    let mut rdr = reader(r);
    let headers = rdr.byte_headers().map_err(|e| data(1, e.to_string()))?.clone();
    let cols = column_map(&headers, &EVENT_HEADER)?;
    let mut records = Vec::new();
    let mut rec = csv::ByteRecord::new();
    let mut line = 1;
    while rdr.read_byte_record(&mut rec).map_err(|e| data(line + 1, e.to_string()))? {
        line += 1;
        let date = field(&rec, cols[0], "date", line)?;
        let day = parse_date(date).ok_or_else(|| data(line, format!("`date` = {date:?} is not YYYY-MM-DD")))?;
        let taken = field(&rec, cols[1], "taken_ts", line)?;
        let taken_ts = if taken.is_empty() {
            None
        } else {
            Some(taken.parse().map_err(|_| data(line, format!("`taken_ts` = {taken:?} is not an integer")))?)
        };
        if field(&rec, cols[2], "prescribed_ts", line)?.is_empty() {
            return Err(data(line, "`prescribed_ts` is missing"));
        }
        let prescribed_ts = parse(&rec, cols[2], "prescribed_ts", line)?;
        records.push(MedicationEvent { day, taken_ts, prescribed_ts });
    }
    EventLog::complete(records, span).map_err(|e| match e {
        CoreError::Data { row, reason } => data(row + 2, reason),
        other => (1, other),
    })
}

/// Writes every dose, missed ones with an empty `taken_ts`.
pub fn write_events<W: Write>(mut w: W, log: &EventLog) -> std::io::Result<()> {
    writeln!(w, "{}", EVENT_HEADER.join(","))?;
    for e in log.events() {
        let taken = e.taken_ts.map(|t| t.to_string()).unwrap_or_default();
        writeln!(w, "{},{taken},{}", format_date(e.day), e.prescribed_ts)?;
    }
    w.flush()
}

/// Schedule and span of one participant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticipantRow {
    pub participant_id: u32,
    pub prescribed_hours: Vec<u8>,
    pub span: StudySpan,
}

pub fn parse_participants<R: Read>(r: R) -> Result<Vec<ParticipantRow>, LineError> {
    let mut rdr = reader(r);
    let headers = rdr.byte_headers().map_err(|e| data(1, e.to_string()))?.clone();
    let cols = column_map(&headers, &PARTICIPANT_HEADER)?;
    let mut out = Vec::new();
    let mut rec = csv::ByteRecord::new();
    let mut line = 1;
    while rdr.read_byte_record(&mut rec).map_err(|e| data(line + 1, e.to_string()))? {
        line += 1;
        let hours_field = field(&rec, cols[1], "prescribed_hours", line)?;
        let hours: Vec<u8> = hours_field
            .split(';')
            .map(|h| h.parse().ok().filter(|h| *h < 24))
            .collect::<Option<_>>()
            .ok_or_else(|| data(line, format!("`prescribed_hours` = {hours_field:?} must be hours 0-23 joined by ';'")))?;
        let day = |idx: usize, name: &str| -> Result<i64, LineError> {
            let s = field(&rec, cols[idx], name, line)?;
            parse_date(s).ok_or_else(|| data(line, format!("`{name}` = {s:?} is not YYYY-MM-DD")))
        };
        let (first_day, last_day) = (day(3, "first_day")?, day(4, "last_day")?);
        if last_day < first_day {
            return Err(data(line, "`last_day` precedes `first_day`"));
        }
        out.push(ParticipantRow {
            participant_id: parse(&rec, cols[0], "participant_id", line)?,
            span: StudySpan {
                first_day,
                last_day,
                dose_seconds: hours.iter().map(|&h| h as i64 * SECS_PER_HOUR).collect(),
                utc_offset: parse(&rec, cols[2], "utc_offset_s", line)?,
            },
            prescribed_hours: hours,
        });
    }
    Ok(out)
}

pub fn write_participants<W: Write>(mut w: W, rows: &[ParticipantRow]) -> std::io::Result<()> {
    writeln!(w, "{}", PARTICIPANT_HEADER.join(","))?;
    for r in rows {
        let hours: Vec<String> = r.prescribed_hours.iter().map(u8::to_string).collect();
        writeln!(
            w,
            "{},{},{},{},{}",
            r.participant_id,
            hours.join(";"),
            r.span.utc_offset,
            format_date(r.span.first_day),
            format_date(r.span.last_day)
        )?;
    }
    w.flush()
}

pub fn load_sensor_csv(path: &Path) -> Result<SensorStream> {
    parse_sensor(open(path)?).map_err(row_error(path))
}

pub fn load_event_csv(path: &Path, span: &StudySpan) -> Result<EventLog> {
    parse_events(open(path)?, span).map_err(row_error(path))
}

pub fn load_participants_csv(path: &Path) -> Result<Vec<ParticipantRow>> {
    parse_participants(open(path)?).map_err(row_error(path))
}

pub fn save_sensor_csv(path: &Path, stream: &SensorStream) -> Result<()> {
    write_sensor(create(path)?, stream).at(path)
}

pub fn save_event_csv(path: &Path, log: &EventLog) -> Result<()> {
    write_events(create(path)?, log).at(path)
}

pub fn save_participants_csv(path: &Path, rows: &[ParticipantRow]) -> Result<()> {
    write_participants(create(path)?, rows).at(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SENSOR: &str = "ts_utc,ts_local,yaw,pitch,roll,rot_x,rot_y,rot_z,acc_x,acc_y,acc_z,lat,lon,altitude,h_accuracy,speed\n";

    fn sensor_rows(ts: &[i64]) -> String {
        let mut s = SENSOR.to_string();
        for t in ts {
            s += &format!("{t},{},0.1,-0.2,0.3,0,0,0,0.01,0,1,33.75,-84.39,300,5,0\n", t - 25200);
        }
        s
    }

    fn span(days: i64) -> StudySpan {
        let first = days_from_civil(2024, 1, 1);
        StudySpan { first_day: first, last_day: first + days - 1, dose_seconds: vec![9 * 3600], utc_offset: -25200 }
    }

    #[test]
    fn ten_rows_parse_and_round_trip() {
        let text = sensor_rows(&(0..10).map(|i| 1_000 + i).collect::<Vec<_>>());
        let s = parse_sensor(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 10);
        let mut out = Vec::new();
        write_sensor(&mut out, &s).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let text = sensor_rows(&[1]).replace(",speed", "").replace(",5,0\n", ",5\n");
        let (line, e) = parse_sensor(text.as_bytes()).unwrap_err();
        assert_eq!(line, 1);
        assert_eq!(e, CoreError::Schema { column: "speed".into() });
    }

    #[test]
    fn out_of_order_rows_name_first_violation() {
        let text = sensor_rows(&[10, 11, 9, 8]);
        let (line, e) = parse_sensor(text.as_bytes()).unwrap_err();
        // Header is line 1, so the third sample sits on line 4.
        assert_eq!(line, 4);
        assert!(matches!(e, CoreError::Data { .. }));
    }

    #[test]
    fn extra_columns_are_ignored() {
        let text = sensor_rows(&[1, 2]).replace("speed\n", "speed,v_accuracy\n").replace(",5,0\n", ",5,0,7\n");
        assert_eq!(parse_sensor(text.as_bytes()).unwrap().len(), 2);
    }

    #[test]
    fn absent_days_become_missed_doses() {
        let sp = span(14);
        let mut text = "date,taken_ts,prescribed_ts\n".to_string();
        for d in 0..12 {
            let day = sp.first_day + d;
            let p = sp.prescribed_ts(day, 9 * 3600);
            text += &format!("{},{},{p}\n", format_date(day), p + 60);
        }
        let log = parse_events(text.as_bytes(), &sp).unwrap();
        assert_eq!(log.len(), 14);
        assert_eq!(log.len() - log.taken_count(), 2);
    }

    #[test]
    fn empty_file_over_five_days_is_all_missed() {
        let log = parse_events("date,taken_ts,prescribed_ts\n".as_bytes(), &span(5)).unwrap();
        assert_eq!((log.len(), log.taken_count()), (5, 0));
    }

    #[test]
    fn missing_prescribed_time_is_data_error() {
        let text = "date,taken_ts,prescribed_ts\n2024-01-01,1704124800,\n";
        let (line, e) = parse_events(text.as_bytes(), &span(3)).unwrap_err();
        assert_eq!(line, 2);
        assert!(matches!(e, CoreError::Data { .. }));
    }

    #[test]
    fn event_file_round_trips() {
        let sp = span(3);
        let p = |d| sp.prescribed_ts(sp.first_day + d, 9 * 3600);
        let text = format!(
            "date,taken_ts,prescribed_ts\n2024-01-01,{},{}\n2024-01-02,,{}\n2024-01-03,{},{}\n",
            p(0) - 300,
            p(0),
            p(1),
            p(2) + 900,
            p(2)
        );
        let log = parse_events(text.as_bytes(), &sp).unwrap();
        let mut out = Vec::new();
        write_events(&mut out, &log).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn dates_parse_strictly() {
        assert_eq!(parse_date("2024-01-01"), Some(19723));
        assert_eq!(parse_date("2024-02-30"), None);
        assert_eq!(parse_date("2024-1-01"), None);
        assert_eq!(format_date(19723), "2024-01-01");
    }

    #[test]
    fn participants_round_trip() {
        let rows = vec![ParticipantRow { participant_id: 3, prescribed_hours: vec![8, 20], span: StudySpan { dose_seconds: vec![8 * 3600, 20 * 3600], ..span(7) } }];
        let mut out = Vec::new();
        write_participants(&mut out, &rows).unwrap();
        assert_eq!(parse_participants(out.as_slice()).unwrap(), rows);
    }
}
