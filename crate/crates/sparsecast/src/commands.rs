//! The six commands. Each reads from the configured directories, writes
//! only to them, and records a manifest of its config, seeds and outputs.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use sparsecast_core::ablation::{run_ablation, AblationPlan, AblationReport, AblationRow};
use sparsecast_core::balance::AdasynConfig;
use sparsecast_core::cohort::gen_cohort;
use sparsecast_core::features::column_names;
use sparsecast_core::pipeline::{balance_chunk, window_participant, CohortSource, ParticipantWindows, PreparedCohort, Stage};
use sparsecast_core::rng::{self, tag};
use sparsecast_core::trainer::{self, incremental_train, CheckpointStore, ChunkSource, Phase, PhaseReport, TrainOptions};
use sparsecast_core::window::Standardizer;
use sparsecast_core::{Error as CoreError, FeatureSetSpec, LabeledWindow, ModelState};

use crate::config::RunConfig;
use crate::csvio::{self, ParticipantRow};
use crate::error::{Error, IoContext, Result};
use crate::runlog::{confusion_json, metrics_json, phase_json, RunLog};
use crate::weights::{self, FileStore};
use crate::{container, report};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Prepare,
    Train,
    Evaluate,
    Ablate,
    Personalize,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Prepare => "prepare",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
            Command::Personalize => "personalize",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub participants: Vec<u32>,
    /// Replaces `paths.data_dir`.
    pub out: Option<PathBuf>,
}

/// Loads the config and runs one command, writing progress lines to `log`.
pub fn run(inv: &Invocation, log: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(&inv.config, inv.seed)?;
    if let Some(out) = &inv.out {
        cfg.paths.data_dir = out.clone();
    }
    cfg.ensure_dirs()?;
    let mut m = Manifest::new(inv.command, &cfg);
    match inv.command {
        Command::Synth => synth(&cfg, &mut m, log)?,
        Command::Prepare => prepare(&cfg, &mut m, log)?,
        Command::Train => train(&cfg, &mut m, log)?,
        Command::Evaluate => evaluate(&cfg, &mut m, log)?,
        Command::Ablate => ablate(&cfg, &mut m, log)?,
        Command::Personalize => personalize(&cfg, &inv.participants, &mut m, log)?,
    }
    let path = cfg.paths.report_dir.join(format!("manifest_{}.json", inv.command.name()));
    m.write(&path)?;
    say(log, format_args!("{}: done, manifest at {}", inv.command.name(), path.display()));
    Ok(())
}

fn say(log: &mut dyn Write, args: std::fmt::Arguments<'_>) {
    let _ = writeln!(log, "{args}");
}

/// File-name form of a spec: `H+K` becomes `h_k`.
pub fn slug(spec: FeatureSetSpec) -> String {
    spec.to_string().to_ascii_lowercase().replace('+', "_")
}

pub fn sensor_file(id: u32) -> String {
    format!("sensor_p{id:03}.csv")
}

pub fn event_file(id: u32) -> String {
    format!("events_p{id:03}.csv")
}

pub const PARTICIPANTS_FILE: &str = "participants.csv";
pub const PREPARED_FILE: &str = "prepared.json";
pub const STANDARDIZER_FILE: &str = "standardizer.csv";
pub const RUNLOG_FILE: &str = "runlog.jsonl";
pub const LOCK_FILE: &str = ".lock";

pub fn participant_container(dir: &Path, id: u32, train: bool) -> PathBuf {
    dir.join(format!("p{id:03}_{}.scw", if train { "train" } else { "test" }))
}

pub fn chunk_container(dir: &Path, spec: FeatureSetSpec, phase: usize, train: bool) -> PathBuf {
    dir.join("chunks").join(slug(spec)).join(format!("phase{}_{}.scw", phase + 1, if train { "train" } else { "test" }))
}

pub fn checkpoint_path(cfg: &RunConfig, spec: FeatureSetSpec) -> PathBuf {
    cfg.paths.checkpoint_dir.join(format!("{}.weights", slug(spec)))
}

/// Seed of the model trained by `train`; equals ordering 0 of `ablate`.
pub fn model_seed(cfg: &RunConfig) -> u64 {
    rng::derive(cfg.seed, &[0])
}

// ---------------------------------------------------------------- manifest

struct Manifest {
    command: Command,
    config_path: PathBuf,
    config_text: String,
    seeds: BTreeMap<&'static str, u64>,
    artifacts: Vec<PathBuf>,
    notes: serde_json::Map<String, serde_json::Value>,
}

impl Manifest {
    fn new(command: Command, cfg: &RunConfig) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("global", cfg.seed);
        Manifest {
            command,
            config_path: cfg.source_path.clone(),
            config_text: cfg.source_text.clone(),
            seeds,
            artifacts: Vec::new(),
            notes: serde_json::Map::new(),
        }
    }

    fn artifact(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut artifacts = Vec::new();
        for p in &self.artifacts {
            let bytes = std::fs::read(p).at(p)?;
            artifacts.push(json!({
                "path": p.display().to_string(),
                "bytes": bytes.len(),
                "sha256": weights::hex(&Sha256::digest(&bytes)),
            }));
        }
        let doc = json!({
            "command": self.command.name(),
            "tool_version": env!("CARGO_PKG_VERSION"),
            "config_path": self.config_path.display().to_string(),
            "config": self.config_text,
            "seeds": self.seeds,
            "artifacts": artifacts,
            "notes": self.notes,
        });
        let text = serde_json::to_string_pretty(&doc).expect("json values serialize");
        weights::write_atomic(path, text.as_bytes())
    }
}

// ---------------------------------------------------------------- lock

/// Exclusive claim on a checkpoint directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked { path }),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

// ---------------------------------------------------------------- synth

fn synth(cfg: &RunConfig, m: &mut Manifest, log: &mut dyn Write) -> Result<()> {
    let cohort = gen_cohort(&cfg.cohort)?;
    let dir = &cfg.paths.data_dir;
    let mut rows = Vec::with_capacity(cohort.participants.len());
    for (i, p) in cohort.participants.iter().enumerate() {
        let id = p.profile.participant_id;
        let (sensor, events) = cohort.generate(i);
        let sp = dir.join(sensor_file(id));
        let ep = dir.join(event_file(id));
        csvio::save_sensor_csv(&sp, &sensor)?;
        csvio::save_event_csv(&ep, &events)?;
        say(log, format_args!("participant {id}: {} samples, {} of {} doses taken", sensor.len(), events.taken_count(), events.len()));
        m.artifact(sp);
        m.artifact(ep);
        rows.push(ParticipantRow {
            participant_id: id,
            prescribed_hours: p.profile.prescribed_hours.clone(),
            span: cohort.config.span(&p.profile),
        });
    }
    let pp = dir.join(PARTICIPANTS_FILE);
    csvio::save_participants_csv(&pp, &rows)?;
    m.artifact(pp);
    Ok(())
}

// ---------------------------------------------------------------- prepare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseIds {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

/// Summary of a prepared directory, read back by downstream commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedMeta {
    pub window_len: usize,
    pub window_hop: usize,
    pub train_fraction: f64,
    pub participants: Vec<u32>,
    pub excluded: Vec<u32>,
    pub specs: Vec<String>,
    pub phases: Vec<PhaseIds>,
    pub warnings: Vec<String>,
}

impl PreparedMeta {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let path = cfg.paths.prepared_dir.join(PREPARED_FILE);
        if !path.exists() {
            return Err(Error::MissingArtifact { what: "prepared windows", path, command: "prepare" });
        }
        let text = std::fs::read_to_string(&path).at(&path)?;
        let meta: PreparedMeta = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if meta.window_len != cfg.prepare.window.len || meta.window_hop != cfg.prepare.window.hop {
            return Err(Error::MissingArtifact { what: "windows prepared with the configured window length and hop", path, command: "prepare" });
        }
        Ok(meta)
    }

    fn phases(&self) -> Vec<Phase> {
        self.phases.iter().map(|p| Phase { train: p.train.clone(), test: p.test.clone() }).collect()
    }

    fn require_spec(&self, cfg: &RunConfig, spec: FeatureSetSpec) -> Result<()> {
        if self.specs.iter().any(|s| s.parse::<FeatureSetSpec>().ok() == Some(spec)) {
            Ok(())
        } else {
            Err(Error::MissingArtifact {
                what: "balanced chunks for every configured feature set",
                path: cfg.paths.prepared_dir.join("chunks").join(slug(spec)),
                command: "prepare",
            })
        }
    }
}

fn save_standardizer(path: &Path, s: &Standardizer) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let names = column_names();
    w.write_record(["column", "mean", "std", "numeric"]).map_err(|e| Error::format(path, e.to_string()))?;
    for (i, name) in names.iter().enumerate() {
        w.write_record([name.clone(), s.mean[i].to_string(), s.std[i].to_string(), s.numeric[i].to_string()])
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().at(path)
}

fn load_standardizer(path: &Path) -> Result<Standardizer> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut s = Standardizer { mean: Vec::new(), std: Vec::new(), numeric: Vec::new() };
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let bad = || Error::format(path, format!("bad row {:?}", rec));
        s.mean.push(rec.get(1).and_then(|x| x.parse().ok()).ok_or_else(bad)?);
        s.std.push(rec.get(2).and_then(|x| x.parse().ok()).ok_or_else(bad)?);
        s.numeric.push(rec.get(3).and_then(|x| x.parse().ok()).ok_or_else(bad)?);
    }
    if s.mean.len() != column_names().len() {
        return Err(Error::format(path, format!("expected {} columns, found {}", column_names().len(), s.mean.len())));
    }
    Ok(s)
}

fn prepare(cfg: &RunConfig, m: &mut Manifest, log: &mut dyn Write) -> Result<()> {
    let data = &cfg.paths.data_dir;
    let pp = data.join(PARTICIPANTS_FILE);
    if !pp.exists() {
        return Err(Error::MissingArtifact { what: "participant table", path: pp, command: "synth" });
    }
    let rows = csvio::load_participants_csv(&pp)?;
    let mut participants = BTreeMap::new();
    let mut excluded = Vec::new();
    for row in &rows {
        let id = row.participant_id;
        let sensor = csvio::load_sensor_csv(&data.join(sensor_file(id)))?;
        let events = csvio::load_event_csv(&data.join(event_file(id)), &row.span)?;
        match window_participant(id, &sensor, events, &cfg.prepare)? {
            Some(w) => {
                say(log, format_args!("participant {id}: {} train and {} test windows", w.train.len(), w.test.len()));
                participants.insert(id, w);
            }
            None => {
                say(log, format_args!("participant {id}: fewer than two windows, excluded"));
                excluded.push(id);
            }
        }
    }
    let cohort = PreparedCohort::from_windows(participants, excluded, cfg.prepare.window)?;
    let dir = &cfg.paths.prepared_dir;
    for (id, p) in &cohort.participants {
        for (train, windows) in [(true, &p.train), (false, &p.test)] {
            let path = participant_container(dir, *id, train);
            container::save(&path, FeatureSetSpec::HLK, cfg.prepare.window.len, windows)?;
            m.artifact(path);
        }
    }
    let sp = dir.join(STANDARDIZER_FILE);
    save_standardizer(&sp, &cohort.standardizer)?;
    m.artifact(sp);

    let ids = cohort.ids();
    let (train_pool, test_pool) = cfg.pools(&ids);
    let phases = cfg.schedule.assign(&train_pool, &test_pool, cfg.seed, 0)?;
    let mut warnings = Vec::new();
    for &spec in &cfg.specs {
        std::fs::create_dir_all(chunk_container(dir, spec, 0, true).parent().expect("chunk path has a parent"))
            .at(dir.join("chunks"))?;
        let mut src = CohortSource::new(&cohort, phases.clone(), spec, cfg.adasyn);
        for phase in 0..phases.len() {
            for train in [true, false] {
                let w = if train { src.load_train(phase)? } else { src.load_test(phase)? };
                let path = chunk_container(dir, spec, phase, train);
                container::save(&path, spec, cfg.prepare.window.len, &w)?;
                m.artifact(path);
            }
        }
        debug_assert!(src.trace.iter().position(|s| *s == Stage::Split) < src.trace.iter().position(|s| *s == Stage::Balance));
        for w in src.warnings {
            say(log, format_args!("{spec}: {w}"));
            warnings.push(format!("{spec}: {w}"));
        }
    }
    let meta = PreparedMeta {
        window_len: cfg.prepare.window.len,
        window_hop: cfg.prepare.window.hop,
        train_fraction: cfg.prepare.train_frac,
        participants: ids,
        excluded: cohort.excluded.clone(),
        specs: cfg.specs.iter().map(|s| s.to_string()).collect(),
        phases: phases.iter().map(|p| PhaseIds { train: p.train.clone(), test: p.test.clone() }).collect(),
        warnings,
    };
    let mp = dir.join(PREPARED_FILE);
    weights::write_atomic(&mp, serde_json::to_string_pretty(&meta).expect("serializable").as_bytes())?;
    m.artifact(mp);
    m.seeds.insert("balance", cfg.adasyn.seed);
    m.notes.insert("excluded_participants".into(), json!(cohort.excluded));
    Ok(())
}

/// Reads the standardized participant containers back into memory.
pub fn load_prepared_cohort(cfg: &RunConfig, meta: &PreparedMeta) -> Result<PreparedCohort> {
    let dir = &cfg.paths.prepared_dir;
    let mut participants = BTreeMap::new();
    for &id in &meta.participants {
        participants.insert(
            id,
            ParticipantWindows {
                participant_id: id,
                train: container::load(&participant_container(dir, id, true))?,
                test: container::load(&participant_container(dir, id, false))?,
                excluded_records: 0,
                dropped_after_last_dose: 0,
            },
        );
    }
    Ok(PreparedCohort {
        participants,
        excluded: meta.excluded.clone(),
        standardizer: load_standardizer(&dir.join(STANDARDIZER_FILE))?,
        window: cfg.prepare.window,
        trace: vec![Stage::Merge, Stage::Derive, Stage::Window, Stage::Split, Stage::Standardize],
    })
}

// ---------------------------------------------------------------- train

/// Phase chunks read from the containers written by `prepare`.
struct FileChunks {
    dir: PathBuf,
    spec: FeatureSetSpec,
    phases: Vec<Phase>,
    error: Option<Error>,
}

impl FileChunks {
    fn load(&mut self, phase: usize, train: bool) -> sparsecast_core::Result<Vec<LabeledWindow>> {
        container::load(&chunk_container(&self.dir, self.spec, phase, train)).map_err(|e| {
            let msg = e.to_string();
            self.error = Some(e);
            CoreError::Store(msg)
        })
    }
}

impl ChunkSource for FileChunks {
    fn n_phases(&self) -> usize {
        self.phases.len()
    }

    fn phase(&self, phase: usize) -> &Phase {
        &self.phases[phase]
    }

    fn load_train(&mut self, phase: usize) -> sparsecast_core::Result<Vec<LabeledWindow>> {
        self.load(phase, true)
    }

    fn load_test(&mut self, phase: usize) -> sparsecast_core::Result<Vec<LabeledWindow>> {
        self.load(phase, false)
    }
}

/// Checkpoint store that reports every save.
struct LoggedStore<'a> {
    inner: FileStore,
    spec: FeatureSetSpec,
    n_phases: usize,
    log: &'a mut dyn Write,
}

impl CheckpointStore for LoggedStore<'_> {
    fn save(&mut self, state: &ModelState) -> sparsecast_core::Result<()> {
        self.inner.save(state)?;
        say(self.log, format_args!("{}: phase {}/{} checkpointed", self.spec, state.phase, self.n_phases));
        Ok(())
    }

    fn load(&self) -> sparsecast_core::Result<Option<ModelState>> {
        self.inner.load()
    }
}

fn to_row(ordering: u64, r: &PhaseReport) -> AblationRow {
    AblationRow {
        ordering,
        phase: r.phase,
        spec: r.spec,
        cumulative_train_participants: r.cumulative_train_participants,
        test_participants: r.test_participants,
        train_windows: r.train_windows,
        test_windows: r.test_windows,
        final_loss: r.epoch_losses.last().copied().unwrap_or(f64::NAN),
        confusion: r.confusion,
        metrics: r.metrics,
    }
}

fn fmt_losses(losses: &[f64]) -> String {
    losses.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>().join(" ")
}

fn train(cfg: &RunConfig, m: &mut Manifest, log: &mut dyn Write) -> Result<()> {
    let meta = PreparedMeta::load(cfg)?;
    let _lock = DirLock::acquire(&cfg.paths.checkpoint_dir)?;
    let runlog = RunLog::new(cfg.paths.report_dir.join(RUNLOG_FILE));
    let seed = model_seed(cfg);
    let init_seed = rng::derive(seed, &[tag::INIT]);
    let mut rows = Vec::new();
    for &spec in &cfg.specs {
        meta.require_spec(cfg, spec)?;
        let ckpt = checkpoint_path(cfg, spec);
        let store = FileStore::new(&ckpt);
        if let Some(prior) = store.load()? {
            if prior.seed != init_seed || prior.arch.kind() != cfg.kind || prior.arch.input_dim() != spec.dim() {
                return Err(CoreError::Compatibility(format!(
                    "{} holds a different model (seed, kind or feature set); remove it to train from scratch",
                    ckpt.display()
                ))
                .into());
            }
        }
        let mut src = FileChunks { dir: cfg.paths.prepared_dir.clone(), spec, phases: meta.phases(), error: None };
        let mut store = LoggedStore { inner: store, spec, n_phases: meta.phases.len(), log: &mut *log };
        let opts = TrainOptions { evaluate: true, ..TrainOptions::default() };
        let out = incremental_train(&mut src, &mut store, cfg.kind, &cfg.hyper, seed, &opts)
            .map_err(|e| src.error.take().unwrap_or(Error::Core(e)))?;
        if out.resumed_from > 0 {
            say(log, format_args!("{spec}: resumed after phase {}", out.resumed_from));
        }
        for r in &out.reports {
            say(
                log,
                format_args!(
                    "{spec}: phase {} ({}-{}), {} windows, epoch loss [{}], test macro-F1 {:.3}",
                    r.phase + 1,
                    r.cumulative_train_participants,
                    r.test_participants,
                    r.train_windows,
                    fmt_losses(&r.epoch_losses),
                    r.metrics.macro_f1
                ),
            );
            runlog.append(&phase_json("train_phase", r))?;
            rows.push(to_row(0, r));
        }
        m.artifact(ckpt);
    }
    let pc = cfg.paths.report_dir.join("train.csv");
    let lc = cfg.paths.report_dir.join("train_long.csv");
    report::write_phase_csv(&pc, &rows)?;
    report::write_long_csv(&lc, "train:", &rows)?;
    m.artifact(pc);
    m.artifact(lc);
    m.seeds.insert("model", seed);
    m.seeds.insert("init", init_seed);
    m.seeds.insert("balance", cfg.adasyn.seed);
    Ok(())
}

// ---------------------------------------------------------------- evaluate

fn load_trained(cfg: &RunConfig, spec: FeatureSetSpec, n_phases: usize) -> Result<ModelState> {
    let path = checkpoint_path(cfg, spec);
    let state = FileStore::new(&path).load()?.ok_or(Error::MissingArtifact { what: "trained checkpoint", path: path.clone(), command: "train" })?;
    if (state.phase as usize) < n_phases {
        return Err(Error::MissingArtifact { what: "checkpoint of all training phases", path, command: "train" });
    }
    Ok(state)
}

fn gather(cfg: &RunConfig, ids: &[u32], train: bool, spec: FeatureSetSpec) -> Result<Vec<LabeledWindow>> {
    let mut out = Vec::new();
    for &id in ids {
        let path = participant_container(&cfg.paths.prepared_dir, id, train);
        if !path.exists() {
            return Err(CoreError::Usage(format!("participant {id} is not in the prepared cohort")).into());
        }
        for w in container::load(&path)? {
            out.push(if spec.is_full() { w } else { w.project(spec)? });
        }
    }
    Ok(out)
}

struct ScoreRow {
    spec: FeatureSetSpec,
    scope: String,
    participants: String,
    windows: usize,
    confusion: sparsecast_core::metrics::Confusion,
    metrics: sparsecast_core::metrics::Metrics,
}

fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["spec", "scope", "participants", "windows", "tp", "fp", "fn", "tn", "accuracy", "macro_precision", "macro_recall", "macro_f1"])
        .map_err(err)?;
    for r in rows {
        let (c, s) = (&r.confusion, &r.metrics);
        w.write_record([
            r.spec.to_string(),
            r.scope.clone(),
            r.participants.clone(),
            r.windows.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
            s.accuracy.to_string(),
            s.macro_precision.to_string(),
            s.macro_recall.to_string(),
            s.macro_f1.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().at(path)
}

fn write_scores_long(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["series", "scope", "metric", "value"]).map_err(err)?;
    for r in rows {
        let s = &r.metrics;
        for (name, v) in [("accuracy", s.accuracy), ("macro_precision", s.macro_precision), ("macro_recall", s.macro_recall), ("macro_f1", s.macro_f1)] {
            w.write_record([r.spec.to_string(), r.scope.clone(), name.to_string(), v.to_string()]).map_err(err)?;
        }
    }
    w.flush().at(path)
}

fn join_ids(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(";")
}

fn evaluate(cfg: &RunConfig, m: &mut Manifest, log: &mut dyn Write) -> Result<()> {
    let meta = PreparedMeta::load(cfg)?;
    let n = meta.phases.len();
    let last = meta.phases.last().expect("prepare writes at least one phase").clone();
    let mut rows = Vec::new();
    for &spec in &cfg.specs {
        meta.require_spec(cfg, spec)?;
        let state = load_trained(cfg, spec, n)?;
        let test = container::load(&chunk_container(&cfg.paths.prepared_dir, spec, n - 1, false))?;
        if !test.is_empty() {
            let (c, s) = trainer::evaluate(&state, &test)?;
            say(log, format_args!("{spec}: final test chunk, {} windows, accuracy {:.3}, macro-F1 {:.3}", test.len(), s.accuracy, s.macro_f1));
            rows.push(ScoreRow { spec, scope: "final_test_chunk".into(), participants: join_ids(&last.test), windows: test.len(), confusion: c, metrics: s });
        }
        for &id in &last.test {
            let w = gather(cfg, &[id], false, spec)?;
            if w.is_empty() {
                continue;
            }
            let (c, s) = trainer::evaluate(&state, &w)?;
            rows.push(ScoreRow { spec, scope: "participant".into(), participants: id.to_string(), windows: w.len(), confusion: c, metrics: s });
        }
    }
    let pc = cfg.paths.report_dir.join("evaluate.csv");
    let lc = cfg.paths.report_dir.join("evaluate_long.csv");
    write_scores(&pc, &rows)?;
    write_scores_long(&lc, &rows)?;
    m.artifact(pc);
    m.artifact(lc);
    Ok(())
}

// ---------------------------------------------------------------- ablate

/// Builds the plan `ablate` runs.
pub fn ablation_plan(cfg: &RunConfig, ids: &[u32]) -> AblationPlan {
    let (train_pool, test_pool) = cfg.pools(ids);
    AblationPlan {
        specs: cfg.specs.clone(),
        schedule: cfg.schedule.clone(),
        train_pool,
        test_pool,
        kind: cfg.kind,
        hyper: cfg.hyper,
        adasyn: cfg.adasyn,
        seed: cfg.seed,
        orderings: (0..cfg.orderings as u64).collect(),
    }
}

/// A base feature set, its +K partner and their paired test.
pub type KComparison = (FeatureSetSpec, FeatureSetSpec, Option<report::PairedTest>);

/// Writes the ablation CSVs into `dir`, returning their paths.
pub fn write_ablation_reports(dir: &Path, report: &AblationReport) -> Result<(Vec<PathBuf>, Vec<KComparison>)> {
    let paths = ["ablation.csv", "ablation_wide.csv", "ablation_long.csv", "k_test.csv"].map(|f| dir.join(f));
    report::write_phase_csv(&paths[0], &report.rows)?;
    report::write_wide_csv(&paths[1], report)?;
    report::write_long_csv(&paths[2], "ablation:", &report.rows)?;
    let tests = report::write_k_tests(&paths[3], report)?;
    Ok((paths.to_vec(), tests))
}

fn ablate(cfg: &RunConfig, m: &mut Manifest, log: &mut dyn Write) -> Result<()> {
    let meta = PreparedMeta::load(cfg)?;
    let cohort = load_prepared_cohort(cfg, &meta)?;
    let plan = ablation_plan(cfg, &cohort.ids());
    say(log, format_args!("ablating {} feature sets over {} orderings", plan.specs.len(), plan.orderings.len()));
    let result = run_ablation(&cohort, &plan)?;
    let runlog = RunLog::new(cfg.paths.report_dir.join(RUNLOG_FILE));
    for r in &result.rows {
        runlog.append(&json!({
            "event": "ablation_phase",
            "ordering": r.ordering,
            "phase": r.phase,
            "spec": r.spec.to_string(),
            "cumulative_train_participants": r.cumulative_train_participants,
            "test_participants": r.test_participants,
            "final_loss": r.final_loss,
            "confusion": confusion_json(&r.confusion),
            "metrics": metrics_json(&r.metrics),
        }))?;
    }
    for &o in &plan.orderings {
        let finals: Vec<String> =
            plan.specs.iter().map(|s| format!("{s} {:.3}", result.final_f1(*s, o).unwrap_or(f64::NAN))).collect();
        say(log, format_args!("ordering {o}: final macro-F1 {}", finals.join(", ")));
    }
    let (paths, tests) = write_ablation_reports(&cfg.paths.report_dir, &result)?;
    for (base, with_k, t) in &tests {
        if let Some(t) = t {
            say(log, format_args!("{with_k} vs {base}: mean F1 difference {:.3}, t = {:.3}, p = {:.5} ({})", t.mean_diff, t.t, t.p_value, report::TEST_NAME));
        }
    }
    paths.into_iter().for_each(|p| m.artifact(p));
    m.seeds.insert("balance", cfg.adasyn.seed);
    for &o in &plan.orderings {
        m.notes.insert(format!("model_seed_ordering_{o}"), json!(rng::derive(cfg.seed, &[o])));
    }
    Ok(())
}

// ---------------------------------------------------------------- personalize

fn balanced(windows: Vec<LabeledWindow>, adasyn: &AdasynConfig, stream: u64, log: &mut dyn Write) -> Result<Vec<LabeledWindow>> {
    if windows.is_empty() {
        return Ok(windows);
    }
    let cfg = AdasynConfig { seed: rng::derive(adasyn.seed, &[stream, tag::PERSONALIZE]), ..*adasyn };
    let out = balance_chunk(windows, &cfg)?;
    if let Some(w) = out.warning {
        say(log, format_args!("{w}"));
    }
    Ok(out.windows)
}

fn personalize(cfg: &RunConfig, ids: &[u32], m: &mut Manifest, log: &mut dyn Write) -> Result<()> {
    if ids.is_empty() {
        return Err(CoreError::Usage("personalize needs --participants a,b,c".into()).into());
    }
    let meta = PreparedMeta::load(cfg)?;
    let _lock = DirLock::acquire(&cfg.paths.checkpoint_dir)?;
    let runlog = RunLog::new(cfg.paths.report_dir.join(RUNLOG_FILE));
    let tag_ids = ids.iter().map(u32::to_string).collect::<Vec<_>>().join("-");
    let mut rows = Vec::new();
    for &spec in &cfg.specs {
        let state = load_trained(cfg, spec, meta.phases.len())?;
        let train = balanced(gather(cfg, ids, true, spec)?, &cfg.adasyn, tag::BALANCE_TRAIN, log)?;
        let test = balanced(gather(cfg, ids, false, spec)?, &cfg.adasyn, tag::BALANCE_TEST, log)?;
        if test.is_empty() {
            return Err(CoreError::Argument(format!("participants {tag_ids} have no test windows")).into());
        }
        let (c0, before) = trainer::evaluate(&state, &test)?;
        let session = trainer::personalize(&state, &train, &cfg.hyper, cfg.seed)?;
        let (c1, after) = trainer::evaluate(&session.state, &test)?;
        say(
            log,
            format_args!(
                "{spec}: personalized on {} windows, epoch loss [{}], macro-F1 {:.3} -> {:.3}",
                train.len(),
                fmt_losses(&session.epoch_losses),
                before.macro_f1,
                after.macro_f1
            ),
        );
        let path = cfg.paths.checkpoint_dir.join(format!("personalized_{}_p{tag_ids}.weights", slug(spec)));
        weights::save_weights(&path, &session.state)?;
        m.artifact(path);
        runlog.append(&json!({
            "event": "personalize",
            "spec": spec.to_string(),
            "participants": ids,
            "train_windows": train.len(),
            "test_windows": test.len(),
            "epoch_losses": session.epoch_losses,
            "before": metrics_json(&before),
            "after": metrics_json(&after),
        }))?;
        let who = join_ids(ids);
        rows.push(ScoreRow { spec, scope: "before".into(), participants: who.clone(), windows: test.len(), confusion: c0, metrics: before });
        rows.push(ScoreRow { spec, scope: "after".into(), participants: who, windows: test.len(), confusion: c1, metrics: after });
    }
    let pc = cfg.paths.report_dir.join("personalize.csv");
    let lc = cfg.paths.report_dir.join("personalize_long.csv");
    write_scores(&pc, &rows)?;
    write_scores_long(&lc, &rows)?;
    m.artifact(pc);
    m.artifact(lc);
    m.seeds.insert("personalize", rng::derive(cfg.seed, &[tag::PERSONALIZE]));
    m.notes.insert("participants".into(), json!(ids));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug(FeatureSetSpec::HLK), "h_l_k");
        assert_eq!(slug(FeatureSetSpec::LOC_K), "loc_k");
        assert_eq!(sensor_file(7), "sensor_p007.csv");
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(Error::Locked { .. })));
        drop(lock);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn standardizer_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let n = column_names().len();
        let s = Standardizer {
            mean: (0..n).map(|i| i as f64 * 0.1).collect(),
            std: (0..n).map(|i| 1.0 + i as f64 / 7.0).collect(),
            numeric: (0..n).map(|i| i % 3 == 0).collect(),
        };
        let p = dir.path().join("s.csv");
        save_standardizer(&p, &s).unwrap();
        assert_eq!(load_standardizer(&p).unwrap(), s);
    }
}
