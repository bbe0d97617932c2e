//! Weight files and the on-disk checkpoint store.
//!
//! A weight file is a text header terminated by `end\n`, followed by the
//! parameters, first moments and second moments as little-endian f64. The
//! header records a SHA-256 of that payload.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use sparsecast_core::neural::{Arch, CnnArch, LstmArch, ModelKind, ModelState};
use sparsecast_core::trainer::CheckpointStore;
use sparsecast_core::Error as CoreError;

use crate::error::{Error, IoContext, Result};

pub const FORMAT: &str = "sparsecast-weights";
pub const VERSION: u32 = 1;

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn payload(state: &ModelState) -> Vec<u8> {
    state.params.iter().chain(&state.m).chain(&state.v).flat_map(|x| x.to_le_bytes()).collect()
}

pub fn encode(state: &ModelState) -> Vec<u8> {
    let body = payload(state);
    let mut h = format!("{FORMAT}\nversion={VERSION}\nkind={}\n", state.arch.kind());
    match state.arch {
        Arch::Lstm(a) => h += &format!("input_dim={}\nhidden={}\n", a.input_dim, a.hidden),
        Arch::Cnn(a) => {
            h += &format!(
                "input_dim={}\nwindow={}\nkernel={}\nstride={}\nfilters={}\npointwise={}\n",
                a.input_dim, a.window, a.kernel, a.stride, a.filters, a.pointwise_layers
            )
        }
    }
    h += &format!(
        "params={}\nstep={}\nphase={}\nseed={}\nsha256={}\nend\n",
        state.params.len(),
        state.step,
        state.phase,
        state.seed,
        hex(&Sha256::digest(&body))
    );
    let mut out = h.into_bytes();
    out.extend(body);
    out
}

/// Header values, kept even when the payload turns out to be corrupt.
#[derive(Debug, Clone, Default)]
pub struct HeaderInfo {
    pub phase: Option<u32>,
}

pub fn decode<R: BufRead>(mut r: R, info: &mut HeaderInfo) -> std::result::Result<ModelState, String> {
    let mut fields = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
            return Err("header ends before `end`".into());
        }
        let l = line.trim_end_matches('\n');
        if l == "end" {
            break;
        }
        if fields.is_empty() && l != FORMAT {
            return Err("not a weight file".into());
        }
        if let Some((k, v)) = l.split_once('=') {
            fields.push((k.to_string(), v.to_string()));
        } else if l != FORMAT {
            return Err(format!("malformed header line {l:?}"));
        } else {
            fields.push((l.to_string(), String::new()));
        }
        if fields.len() > 64 {
            return Err("header too long".into());
        }
    }
    let get = |k: &str| fields.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str()).ok_or(format!("header lacks `{k}`"));
    let num = |k: &str| get(k)?.parse::<u64>().map_err(|_| format!("`{k}` is not an integer"));
    info.phase = num("phase").ok().map(|p| p as u32);
    if num("version")? != VERSION as u64 {
        return Err(format!("unsupported weight file version {}", get("version")?));
    }
    let f = num("input_dim")? as usize;
    let kind: ModelKind = get("kind")?.parse().map_err(|e: CoreError| e.to_string())?;
    let arch = match kind {
        ModelKind::Lstm => Arch::Lstm(LstmArch::with_hidden(f, num("hidden")? as usize)),
        ModelKind::Cnn => {
            let mut a = CnnArch::with_dims(f, num("window")? as usize, num("kernel")? as usize, num("stride")? as usize)
                .map_err(|e| e.to_string())?;
            a.filters = num("filters")? as usize;
            a.pointwise_layers = num("pointwise")? as usize;
            Arch::Cnn(a)
        }
    };
    let n = num("params")? as usize;
    if n != arch.param_count() {
        return Err(format!("{n} parameters recorded, {arch} has {}", arch.param_count()));
    }
    let mut body = Vec::with_capacity(3 * n * 8);
    r.read_to_end(&mut body).map_err(|e| e.to_string())?;
    if body.len() != 3 * n * 8 {
        return Err(format!("payload is {} bytes, expected {}", body.len(), 3 * n * 8));
    }
    if hex(&Sha256::digest(&body)) != get("sha256")? {
        return Err("payload checksum mismatch".into());
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect();
    let state = ModelState {
        arch,
        params: values[..n].to_vec(),
        m: values[n..2 * n].to_vec(),
        v: values[2 * n..].to_vec(),
        seed: num("seed")?,
        step: num("step")?,
        phase: num("phase")? as u32,
    };
    state.validate().map_err(|e| e.to_string())?;
    Ok(state)
}

/// Writes through a temporary file and a rename so a crash never leaves a
/// half-written file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).at(&tmp)?;
        f.write_all(bytes).at(&tmp)?;
        f.sync_all().at(&tmp)?;
    }
    fs::rename(&tmp, path).at(path)
}

pub fn save_weights(path: &Path, state: &ModelState) -> Result<()> {
    write_atomic(path, &encode(state))
}

pub fn load_weights(path: &Path) -> Result<ModelState> {
    let f = File::open(path).at(path)?;
    decode(BufReader::new(f), &mut HeaderInfo::default()).map_err(|reason| Error::format(path, reason))
}

/// Checkpoint store backed by one weight file.
#[derive(Debug, Clone)]
pub struct FileStore {
    pub path: PathBuf,
}

impl FileStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileStore { path: path.into() }
    }
}

impl CheckpointStore for FileStore {
    fn save(&mut self, state: &ModelState) -> sparsecast_core::Result<()> {
        save_weights(&self.path, state).map_err(|e| CoreError::Store(e.to_string()))
    }

    fn load(&self) -> sparsecast_core::Result<Option<ModelState>> {
        let f = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(CoreError::Store(format!("{}: {e}", self.path.display()))),
        };
        let mut info = HeaderInfo::default();
        decode(BufReader::new(f), &mut info).map(Some).map_err(|reason| CoreError::Resume {
            phase: info.phase.unwrap_or(0) as usize,
            reason: format!("{}: {reason}", self.path.display()),
        })
    }
}
