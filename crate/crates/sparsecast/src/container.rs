//! Binary window container.
//!
//! ```text
//! magic    8 bytes  "SCWINDOW"
//! version  u32 LE
//! hlen     u32 LE   length of the header text
//! header   UTF-8    lines `key=value`: spec, rows, cols, count, columns
//! meta     count × (participant_id u32, start_ts i64, end_ts i64, synthetic u8)
//! payload  count × rows × cols f32 LE, row-major per window
//! labels   count × u8 (0 or 1)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sparsecast_core::{FeatureSetSpec, LabeledWindow};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 8] = b"SCWINDOW";
pub const VERSION: u32 = 1;

/// Header fields of a container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub spec: FeatureSetSpec,
    pub rows: usize,
    pub count: usize,
}

pub fn write_windows<W: Write>(mut w: W, spec: FeatureSetSpec, rows: usize, windows: &[LabeledWindow]) -> std::io::Result<()> {
    let cols = spec.dim();
    if let Some(bad) = windows.iter().find(|x| x.spec != spec || x.rows != rows) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("window of {} x {} ({}) in a {rows} x {cols} ({spec}) container", bad.rows, bad.cols(), bad.spec),
        ));
    }
    let header = format!(
        "spec={spec}\nrows={rows}\ncols={cols}\ncount={}\ncolumns={}\n",
        windows.len(),
        spec.column_names().join(",")
    );
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    for x in windows {
        w.write_all(&x.participant_id.to_le_bytes())?;
        w.write_all(&x.start_ts.to_le_bytes())?;
        w.write_all(&x.end_ts.to_le_bytes())?;
        w.write_all(&[x.synthetic as u8])?;
    }
    for x in windows {
        for &v in &x.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    let labels: Vec<u8> = windows.iter().map(|x| x.label as u8).collect();
    w.write_all(&labels)?;
    w.flush()
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn bad(reason: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, reason.into())
}

pub fn read_header<R: Read>(r: &mut R) -> std::io::Result<Header> {
    if &read_array::<8, _>(r)? != MAGIC {
        return Err(bad("not a window container"));
    }
    let version = u32::from_le_bytes(read_array(r)?);
    if version != VERSION {
        return Err(bad(format!("unsupported container version {version}")));
    }
    let hlen = u32::from_le_bytes(read_array(r)?) as usize;
    let mut text = vec![0u8; hlen];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| bad("header is not UTF-8"))?;
    let get = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            .ok_or_else(|| bad(format!("header lacks `{key}`")))
    };
    let spec: FeatureSetSpec = get("spec")?.parse().map_err(|e| bad(format!("{e}")))?;
    let num = |key: &str| get(key)?.parse::<usize>().map_err(|_| bad(format!("`{key}` is not a count")));
    let (rows, cols, count) = (num("rows")?, num("cols")?, num("count")?);
    if cols != spec.dim() {
        return Err(bad(format!("{cols} columns do not match {spec} ({})", spec.dim())));
    }
    if get("columns")?.split(',').count() != cols {
        return Err(bad("column name count does not match `cols`"));
    }
    Ok(Header { spec, rows, count })
}

pub fn read_windows<R: Read>(mut r: R) -> std::io::Result<(Header, Vec<LabeledWindow>)> {
    let h = read_header(&mut r)?;
    let cols = h.spec.dim();
    let mut windows = Vec::with_capacity(h.count);
    for _ in 0..h.count {
        let participant_id = u32::from_le_bytes(read_array(&mut r)?);
        let start_ts = i64::from_le_bytes(read_array(&mut r)?);
        let end_ts = i64::from_le_bytes(read_array(&mut r)?);
        let synthetic = match read_array::<1, _>(&mut r)?[0] {
            0 => false,
            1 => true,
            b => return Err(bad(format!("synthetic flag {b}"))),
        };
        windows.push(LabeledWindow { participant_id, start_ts, end_ts, label: false, synthetic, spec: h.spec, rows: h.rows, data: Vec::new() });
    }
    let mut buf = vec![0u8; h.rows * cols * 4];
    for w in &mut windows {
        r.read_exact(&mut buf)?;
        w.data = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    }
    let mut labels = vec![0u8; h.count];
    r.read_exact(&mut labels)?;
    for (w, &l) in windows.iter_mut().zip(&labels) {
        w.label = match l {
            0 => false,
            1 => true,
            b => return Err(bad(format!("label byte {b}"))),
        };
    }
    if r.read(&mut [0u8])? != 0 {
        return Err(bad("trailing bytes after labels"));
    }
    Ok((h, windows))
}

pub fn save(path: &Path, spec: FeatureSetSpec, rows: usize, windows: &[LabeledWindow]) -> Result<()> {
    let f = File::create(path).at(path)?;
    write_windows(BufWriter::new(f), spec, rows, windows).at(path)
}

pub fn load(path: &Path) -> Result<Vec<LabeledWindow>> {
    let f = File::open(path).at(path)?;
    read_windows(BufReader::new(f)).map(|(_, w)| w).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData | std::io::ErrorKind::UnexpectedEof => Error::format(path, e.to_string()),
        _ => Error::io(path, e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(i: u32, spec: FeatureSetSpec, rows: usize) -> LabeledWindow {
        LabeledWindow {
            participant_id: i,
            start_ts: 100 * i as i64,
            end_ts: 100 * i as i64 + 99,
            label: i.is_multiple_of(2),
            synthetic: i == 3,
            spec,
            rows,
            data: (0..rows * spec.dim()).map(|k| k as f64 * 0.25 - i as f64).collect(),
        }
    }

    #[test]
    fn round_trip_of_f32_exact_values() {
        let ws: Vec<_> = (0..4).map(|i| window(i, FeatureSetSpec::LOC_K, 5)).collect();
        let mut buf = Vec::new();
        write_windows(&mut buf, FeatureSetSpec::LOC_K, 5, &ws).unwrap();
        let (h, back) = read_windows(buf.as_slice()).unwrap();
        assert_eq!(h, Header { spec: FeatureSetSpec::LOC_K, rows: 5, count: 4 });
        assert_eq!(back, ws);
    }

    #[test]
    fn payload_is_narrowed_to_f32() {
        let mut w = window(1, FeatureSetSpec::LOC, 1);
        w.data = vec![0.1, 1.0 / 3.0];
        let mut buf = Vec::new();
        write_windows(&mut buf, FeatureSetSpec::LOC, 1, &[w]).unwrap();
        let (_, back) = read_windows(buf.as_slice()).unwrap();
        assert_eq!(back[0].data, [0.1f32 as f64, (1.0f32 / 3.0) as f64]);
    }

    #[test]
    fn empty_container_keeps_shape() {
        let mut buf = Vec::new();
        write_windows(&mut buf, FeatureSetSpec::HK, 1800, &[]).unwrap();
        let (h, back) = read_windows(buf.as_slice()).unwrap();
        assert_eq!((h.rows, h.spec.dim(), back.len()), (1800, 40, 0));
    }

    #[test]
    fn truncated_or_mixed_input_is_rejected() {
        let ws: Vec<_> = (0..2).map(|i| window(i, FeatureSetSpec::LOC, 3)).collect();
        let mut buf = Vec::new();
        write_windows(&mut buf, FeatureSetSpec::LOC, 3, &ws).unwrap();
        assert!(read_windows(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_windows(buf.as_slice()).is_err());
        assert!(write_windows(Vec::new(), FeatureSetSpec::H, 3, &ws).is_err());
    }
}
