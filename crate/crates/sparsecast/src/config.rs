//! Run configuration: a flat `key = value` file with `[section]` headers.
//!
//! ```text
//! seed = 7
//!
//! [paths]
//! data_dir = data
//!
//! [cohort]
//! participants = 27
//! ```
//!
//! `#` and `;` start comments. Relative paths resolve against the config
//! file's directory. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sparsecast_core::balance::AdasynConfig;
use sparsecast_core::cohort::{AdherenceWeights, CohortConfig, DoseTiming};
use sparsecast_core::neural::{Hyper, ModelKind};
use sparsecast_core::pipeline::PrepareConfig;
use sparsecast_core::trainer::Schedule;
use sparsecast_core::window::WindowConfig;
use sparsecast_core::FeatureSetSpec;

use crate::error::{Error, IoContext, Result};

/// Parsed `section.key -> (value, line)` pairs.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    pub path: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let err = |line, reason: String| Error::Config { path: path.to_path_buf(), line, reason };
        let mut section = String::new();
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split(['#', ';']).next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            if let Some(rest) = l.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err(line, format!("unterminated section header {l:?}")))?;
                let name = name.trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(err(line, format!("invalid section name {name:?}")));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| err(line, format!("expected `key = value`, found {l:?}")))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(err(line, "empty key".into()));
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            if let Some((_, first)) = entries.insert(key.clone(), (v.trim().to_string(), line)) {
                return Err(err(line, format!("`{key}` already set on line {first}")));
            }
        }
        Ok(KeyValues { path: path.to_path_buf(), entries })
    }

    fn err(&self, key: &str, reason: impl Into<String>) -> Error {
        let line = self.entries.get(key).map_or(0, |(_, l)| *l);
        Error::Config { path: self.path.clone(), line, reason: format!("`{key}`: {}", reason.into()) }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.err(key, format!("cannot parse {v:?}"))),
        }
    }

    pub fn list_or<T: std::str::FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|x| x.trim().parse().map_err(|_| self.err(key, format!("cannot parse list item {:?}", x.trim()))))
                .collect(),
        }
    }

    fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(self.err(k, "unknown key")),
            None => Ok(()),
        }
    }
}

const KNOWN: &[&str] = &[
    "seed",
    "paths.data_dir",
    "paths.prepared_dir",
    "paths.checkpoint_dir",
    "paths.report_dir",
    "cohort.participants",
    "cohort.days",
    "cohort.doses_per_day",
    "cohort.base_adherence",
    "cohort.context_effect_strength",
    "cohort.away_rate",
    "cohort.late_night_rate",
    "cohort.dose_offset_min",
    "cohort.dose_jitter_min",
    "cohort.exact_weights",
    "cohort.first_participant_id",
    "cohort.weights",
    "features.sets",
    "window.length",
    "window.hop",
    "window.train_fraction",
    "schedule.train_chunks",
    "schedule.test_chunks",
    "schedule.orderings",
    "model.kind",
    "model.learning_rate",
    "model.batch_size",
    "model.epochs",
    "balance.k",
    "balance.beta",
];

#[derive(Debug, Clone)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub prepared_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source_path: PathBuf,
    pub source_text: String,
    pub seed: u64,
    pub paths: Paths,
    pub cohort: CohortConfig,
    pub specs: Vec<FeatureSetSpec>,
    pub prepare: PrepareConfig,
    pub schedule: Schedule,
    pub orderings: usize,
    pub kind: ModelKind,
    pub hyper: Hyper,
    pub adasyn: AdasynConfig,
}

impl RunConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("cannot read config: {e}"),
        })?;
        Self::parse(path, &text, seed_override)
    }

    pub fn parse(path: &Path, text: &str, seed_override: Option<u64>) -> Result<Self> {
        let kv = KeyValues::parse(path, text)?;
        kv.check_known(KNOWN)?;
        let seed = match (seed_override, kv.get("seed")) {
            (Some(s), _) => s,
            (None, Some(_)) => kv.parse_or("seed", 0u64)?,
            (None, None) => {
                return Err(Error::Config { path: path.to_path_buf(), line: 0, reason: "`seed` is required (set it or pass --seed)".into() })
            }
        };
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let dir = |key: &str, default: &str| base.join(kv.get(key).unwrap_or(default));
        let paths = Paths {
            data_dir: dir("paths.data_dir", "data"),
            prepared_dir: dir("paths.prepared_dir", "prepared"),
            checkpoint_dir: dir("paths.checkpoint_dir", "checkpoints"),
            report_dir: dir("paths.report_dir", "reports"),
        };

        let schedule = Schedule::default();
        let train_sizes = kv.list_or("schedule.train_chunks", schedule.train_sizes)?;
        let test_sizes = kv.list_or("schedule.test_chunks", train_sizes.clone())?;
        let schedule = Schedule { train_sizes, test_sizes };

        let d = CohortConfig::default();
        let w = d.weights;
        let weights = kv.list_or("cohort.weights", vec![w.is_away, w.is_late_night, w.weekday, w.hours_to_prescribed])?;
        if weights.len() != 4 {
            return Err(kv.err("cohort.weights", "needs 4 values: away, late night, weekday, hours to prescribed"));
        }
        let cohort = CohortConfig {
            n_participants: kv.parse_or("cohort.participants", schedule.total_train())?,
            days_per_participant: kv.parse_or("cohort.days", d.days_per_participant)?,
            doses_per_day: kv.parse_or("cohort.doses_per_day", d.doses_per_day)?,
            base_adherence: kv.parse_or("cohort.base_adherence", d.base_adherence)?,
            context_effect_strength: kv.parse_or("cohort.context_effect_strength", d.context_effect_strength)?,
            away_rate: kv.parse_or("cohort.away_rate", d.away_rate)?,
            late_night_rate: kv.parse_or("cohort.late_night_rate", d.late_night_rate)?,
            timing: DoseTiming {
                offset_min: kv.parse_or("cohort.dose_offset_min", d.timing.offset_min)?,
                jitter_min: kv.parse_or("cohort.dose_jitter_min", d.timing.jitter_min)?,
            },
            exact_weights: kv.parse_or("cohort.exact_weights", d.exact_weights)?,
            weights: AdherenceWeights { is_away: weights[0], is_late_night: weights[1], weekday: weights[2], hours_to_prescribed: weights[3] },
            first_participant_id: kv.parse_or("cohort.first_participant_id", d.first_participant_id)?,
            seed,
            ..d
        };
        cohort.validate()?;

        let specs: Vec<FeatureSetSpec> = match kv.get("features.sets") {
            None => vec![FeatureSetSpec::H, FeatureSetSpec::HK, FeatureSetSpec::HL, FeatureSetSpec::HLK],
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|e| kv.err("features.sets", format!("{e}"))))
                .collect::<Result<_>>()?,
        };
        if specs.is_empty() {
            return Err(kv.err("features.sets", "no feature sets"));
        }
        for s in &specs {
            s.validate()?;
        }

        let dw = WindowConfig::default();
        let window = WindowConfig::new(kv.parse_or("window.length", dw.len)?, kv.parse_or("window.hop", dw.hop)?)?;
        let prepare = PrepareConfig { window, train_frac: kv.parse_or("window.train_fraction", 0.8)? };

        let kind: ModelKind = kv.parse_or("model.kind", ModelKind::Lstm)?;
        let dh = Hyper::for_kind(kind);
        let hyper = Hyper {
            learning_rate: kv.parse_or("model.learning_rate", dh.learning_rate)?,
            batch_size: kv.parse_or("model.batch_size", dh.batch_size)?,
            epochs: kv.parse_or("model.epochs", dh.epochs)?,
            ..dh
        };
        hyper.validate()?;
        let adasyn = AdasynConfig { k: kv.parse_or("balance.k", 5)?, beta: kv.parse_or("balance.beta", 1.0)?, seed };
        adasyn.validate()?;

        let cfg = RunConfig {
            source_path: path.to_path_buf(),
            source_text: text.to_string(),
            seed,
            paths,
            cohort,
            specs,
            prepare,
            orderings: kv.parse_or("schedule.orderings", 1)?,
            schedule,
            kind,
            hyper,
            adasyn,
        };
        cfg.schedule.validate()?;
        if cfg.orderings == 0 {
            return Err(kv.err("schedule.orderings", "must be at least 1"));
        }
        if cfg.cohort.n_participants < cfg.schedule.total_train() {
            return Err(kv.err(
                "cohort.participants",
                format!("the schedule trains {} participants but the cohort has {}", cfg.schedule.total_train(), cfg.cohort.n_participants),
            ));
        }
        Ok(cfg)
    }

    /// Participants trained on, then held out, by id.
    pub fn pools(&self, ids: &[u32]) -> (Vec<u32>, Vec<u32>) {
        let n = self.schedule.total_train().min(ids.len());
        (ids[..n].to_vec(), ids[n..].to_vec())
    }

    pub fn ensure_dirs(&self) -> Result<()> {
        for d in [&self.paths.data_dir, &self.paths.prepared_dir, &self.paths.checkpoint_dir, &self.paths.report_dir] {
            std::fs::create_dir_all(d).at(d)?;
        }
        Ok(())
    }
}
