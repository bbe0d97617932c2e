//! Chunked training with a checkpoint after every phase, the participant
//! schedule, and retraining on a target group.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::features::FeatureSetSpec;
use crate::metrics::{confusion_from_probs, macro_metrics, Confusion, Metrics};
use crate::neural::loss::bce_term;
use crate::neural::{adam_step, sigmoid, Arch, Hyper, ModelKind, ModelState};
use crate::rng::{self, tag};
use crate::window::LabeledWindow;

/// Participant chunk sizes per phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub train_sizes: Vec<usize>,
    pub test_sizes: Vec<usize>,
}

/// Participants assigned to one phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phase {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { train_sizes: alloc::vec![1, 4, 4, 4, 4, 5], test_sizes: alloc::vec![1, 4, 4, 4, 4, 5] }
    }
}

impl Schedule {
    pub fn new(train_sizes: Vec<usize>, test_sizes: Vec<usize>) -> Result<Self> {
        let s = Schedule { train_sizes, test_sizes };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_sizes.is_empty() {
            return Err(Error::config("schedule", "needs at least one phase"));
        }
        if self.train_sizes.contains(&0) {
            return Err(Error::config("schedule", "every phase needs at least one participant"));
        }
        if self.test_sizes.len() != self.train_sizes.len() {
            return Err(Error::config(
                "test_schedule",
                format!("{} test sizes for {} phases", self.test_sizes.len(), self.train_sizes.len()),
            ));
        }
        Ok(())
    }

    pub fn n_phases(&self) -> usize {
        self.train_sizes.len()
    }

    pub fn total_train(&self) -> usize {
        self.train_sizes.iter().sum()
    }

    /// Cumulative training participants after each phase.
    pub fn cumulative(&self) -> Vec<usize> {
        self.train_sizes
            .iter()
            .scan(0, |acc, &n| {
                *acc += n;
                Some(*acc)
            })
            .collect()
    }

    /// Shuffles both pools by `ordering` and cuts them into phases. Training
    /// chunks are disjoint. With an empty test pool each phase is tested on
    /// its own chunk; otherwise phase `i` is tested on the first
    /// `test_sizes[i]` participants of the shuffled test pool.
    pub fn assign(&self, train_pool: &[u32], test_pool: &[u32], seed: u64, ordering: u64) -> Result<Vec<Phase>> {
        self.validate()?;
        if train_pool.len() != self.total_train() {
            return Err(Error::config(
                "schedule",
                format!("chunk sizes sum to {} but {} training participants are available", self.total_train(), train_pool.len()),
            ));
        }
        let distinct: BTreeSet<_> = train_pool.iter().chain(test_pool).collect();
        if distinct.len() != train_pool.len() + test_pool.len() {
            return Err(Error::config("participants", "participant ids must be distinct across pools"));
        }
        if let Some(&max) = self.test_sizes.iter().max() {
            if !test_pool.is_empty() && max > test_pool.len() {
                return Err(Error::config("test_schedule", format!("needs {max} test participants, have {}", test_pool.len())));
            }
        }
        let mut train = train_pool.to_vec();
        let mut test = test_pool.to_vec();
        train.shuffle(&mut rng::rng(seed, &[tag::ORDER, ordering, 0]));
        test.shuffle(&mut rng::rng(seed, &[tag::ORDER, ordering, 1]));
        let mut phases = Vec::with_capacity(self.n_phases());
        let mut start = 0;
        for (&n, &m) in self.train_sizes.iter().zip(&self.test_sizes) {
            let chunk = train[start..start + n].to_vec();
            start += n;
            let tested = if test.is_empty() { chunk.clone() } else { test[..m].to_vec() };
            phases.push(Phase { train: chunk, test: tested });
        }
        Ok(phases)
    }
}

/// Result of one training session.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub state: ModelState,
    /// Mean batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch order for one epoch.
pub fn batch_order(n: usize, session_seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng(session_seed, &[tag::SHUFFLE, epoch as u64]));
    idx
}

/// Mean loss and gradient over the windows at `batch` indices; windows are
/// processed one at a time so no activations outlive their backward pass.
pub fn batch_gradient(state: &ModelState, windows: &[LabeledWindow], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
    let n = batch.len() as f64;
    let mut grads = alloc::vec![0.0; state.params.len()];
    let mut loss = 0.0;
    for &i in batch {
        let w = &windows[i];
        state.arch.check_window(w)?;
        let (z, trace) = state.arch.forward_one(&state.params, &w.data, w.rows);
        let p = sigmoid(z);
        let (l, dp) = bce_term(p, w.label);
        loss += l;
        let dlogit = dp / n * p * (1.0 - p);
        if dlogit != 0.0 {
            state.arch.backward_one(&state.params, &w.data, &trace, dlogit, &mut grads);
        }
    }
    Ok((loss / n, grads))
}

fn check_compatible(state: &ModelState, chunk: &[LabeledWindow]) -> Result<()> {
    let w = &chunk[0];
    if w.cols() != state.arch.input_dim() {
        return Err(Error::Compatibility(format!(
            "model expects {} features but the chunk has {} ({})",
            state.arch.input_dim(),
            w.cols(),
            w.spec
        )));
    }
    if let Arch::Cnn(a) = state.arch {
        if a.window != w.rows {
            return Err(Error::Compatibility(format!("CNN expects {}-row windows, chunk has {}", a.window, w.rows)));
        }
    }
    Ok(())
}

/// Trains `hyper.epochs` passes over `chunk`, starting from `prior` or from
/// a fresh model seeded by `seed`. Zero epochs return the prior unchanged.
pub fn train_session(
    prior: Option<ModelState>,
    kind: ModelKind,
    chunk: &[LabeledWindow],
    hyper: &Hyper,
    seed: u64,
) -> Result<Session> {
    if chunk.is_empty() {
        return Err(Error::Argument("training chunk is empty".into()));
    }
    if hyper.epochs > 0 {
        hyper.validate()?;
    }
    let mut state = match prior {
        Some(s) => {
            if s.arch.kind() != kind {
                return Err(Error::Compatibility(format!("checkpoint holds a {} model, not {kind}", s.arch.kind())));
            }
            s
        }
        None => ModelState::new(Arch::new(kind, chunk[0].cols(), chunk[0].rows)?, seed),
    };
    check_compatible(&state, chunk)?;
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let order = batch_order(chunk.len(), seed, epoch);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(hyper.batch_size) {
            let (loss, grads) = batch_gradient(&state, chunk, batch)?;
            adam_step(&mut state, &grads, hyper)?;
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(Session { state, epoch_losses })
}

/// Continues training a copy of `state` on the target participants only.
pub fn personalize(state: &ModelState, target_train: &[LabeledWindow], hyper: &Hyper, seed: u64) -> Result<Session> {
    if target_train.is_empty() {
        return Err(Error::Argument("personalization needs target training windows".into()));
    }
    let session_seed = rng::derive(seed, &[tag::PERSONALIZE]);
    train_session(Some(state.clone()), state.arch.kind(), target_train, hyper, session_seed)
}

pub fn evaluate(state: &ModelState, windows: &[LabeledWindow]) -> Result<(Confusion, Metrics)> {
    let probs = state.predict(windows)?;
    let labels: Vec<bool> = windows.iter().map(|w| w.label).collect();
    let c = confusion_from_probs(&probs, &labels)?;
    Ok((c, macro_metrics(&c)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    /// Zero-based.
    pub phase: usize,
    pub spec: FeatureSetSpec,
    pub cumulative_train_participants: usize,
    pub test_participants: usize,
    pub train_windows: usize,
    pub test_windows: usize,
    pub epoch_losses: Vec<f64>,
    pub confusion: Confusion,
    pub metrics: Metrics,
}

/// Supplies one phase's windows at a time.
pub trait ChunkSource {
    fn n_phases(&self) -> usize;
    fn phase(&self, phase: usize) -> &Phase;
    fn load_train(&mut self, phase: usize) -> Result<Vec<LabeledWindow>>;
    fn load_test(&mut self, phase: usize) -> Result<Vec<LabeledWindow>>;
}

/// Persists the model after each phase.
pub trait CheckpointStore {
    fn save(&mut self, state: &ModelState) -> Result<()>;
    /// The latest checkpoint, if any. Corruption is a resume error.
    fn load(&self) -> Result<Option<ModelState>>;
}

#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    pub latest: Option<ModelState>,
    pub saves: usize,
}

impl CheckpointStore for MemoryStore {
    fn save(&mut self, state: &ModelState) -> Result<()> {
        self.latest = Some(state.clone());
        self.saves += 1;
        Ok(())
    }

    fn load(&self) -> Result<Option<ModelState>> {
        Ok(self.latest.clone())
    }
}

/// Resident window bytes, tracked at every load and release.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryProbe {
    pub current: usize,
    pub peak: usize,
    /// Largest single chunk seen.
    pub max_chunk: usize,
}

impl MemoryProbe {
    fn load(&mut self, windows: &[LabeledWindow]) -> usize {
        let bytes = windows.iter().map(LabeledWindow::size_bytes).sum();
        self.current += bytes;
        self.peak = self.peak.max(self.current);
        self.max_chunk = self.max_chunk.max(bytes);
        bytes
    }

    fn release(&mut self, bytes: usize) {
        self.current -= bytes;
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Upper bound on one chunk's window bytes.
    pub memory_budget: Option<usize>,
    /// Returns after checkpointing this many phases, simulating a crash.
    pub stop_after_phase: Option<usize>,
    pub evaluate: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub reports: Vec<PhaseReport>,
    pub memory: MemoryProbe,
    /// Phase the run started from (non-zero after a resume).
    pub resumed_from: usize,
    pub finished: bool,
}

pub fn session_seed(seed: u64, phase: usize) -> u64 {
    rng::derive(seed, &[tag::SHUFFLE, phase as u64])
}

/// Trains phase after phase, checkpointing after each. A checkpoint already
/// in `store` is resumed from the phase it recorded.
pub fn incremental_train(
    source: &mut dyn ChunkSource,
    store: &mut dyn CheckpointStore,
    kind: ModelKind,
    hyper: &Hyper,
    seed: u64,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let n = source.n_phases();
    if n == 0 {
        return Err(Error::Argument("no training phases".into()));
    }
    let mut state = store.load()?;
    let resumed_from = state.as_ref().map_or(0, |s| s.phase as usize);
    if resumed_from > n {
        return Err(Error::Resume { phase: resumed_from, reason: format!("checkpoint is past the last phase ({n})") });
    }
    let mut seen: BTreeSet<u32> = (0..resumed_from).flat_map(|p| source.phase(p).train.clone()).collect();
    let mut memory = MemoryProbe::default();
    let mut reports = Vec::new();
    for phase in resumed_from..n {
        let train = source.load_train(phase)?;
        let train_bytes = memory.load(&train);
        if let Some(budget) = opts.memory_budget {
            if train_bytes > budget {
                return Err(Error::Training(format!("phase {phase} chunk needs {train_bytes} bytes, budget is {budget}")));
            }
        }
        let init_seed = rng::derive(seed, &[tag::INIT]);
        let prior = match state.take() {
            Some(s) => Some(s),
            None => {
                let w = train.first().ok_or_else(|| Error::Training(format!("phase {phase} has no training windows")))?;
                Some(ModelState::new(Arch::new(kind, w.cols(), w.rows)?, init_seed))
            }
        };
        let session = train_session(prior, kind, &train, hyper, session_seed(seed, phase))
            .map_err(|e| match e {
                Error::Argument(r) => Error::Training(format!("phase {phase}: {r}")),
                other => other,
            })?;
        let spec = train[0].spec;
        let train_windows = train.len();
        drop(train);
        memory.release(train_bytes);

        let mut trained = session.state;
        trained.phase = phase as u32 + 1;
        store.save(&trained)?;
        seen.extend(source.phase(phase).train.iter().copied());

        if opts.evaluate {
            let test = source.load_test(phase)?;
            let test_bytes = memory.load(&test);
            let (confusion, metrics) = if test.is_empty() {
                (Confusion::default(), Metrics::default())
            } else {
                evaluate(&trained, &test)?
            };
            reports.push(PhaseReport {
                phase,
                spec,
                cumulative_train_participants: seen.len(),
                test_participants: source.phase(phase).test.len(),
                train_windows,
                test_windows: test.len(),
                epoch_losses: session.epoch_losses,
                confusion,
                metrics,
            });
            drop(test);
            memory.release(test_bytes);
        }
        state = Some(trained);
        if opts.stop_after_phase == Some(phase + 1) && phase + 1 < n {
            let state = state.expect("set above");
            return Ok(TrainOutcome { state, reports, memory, resumed_from, finished: false });
        }
    }
    let state = match state {
        Some(s) => s,
        None => store.load()?.ok_or_else(|| Error::Resume { phase: n, reason: "no checkpoint after the final phase".into() })?,
    };
    Ok(TrainOutcome { state, reports, memory, resumed_from, finished: true })
}

/// Chunks held in memory, for tests and small cohorts.
#[derive(Debug, Clone)]
pub struct VecSource {
    pub phases: Vec<Phase>,
    pub train: Vec<Vec<LabeledWindow>>,
    pub test: Vec<Vec<LabeledWindow>>,
}

impl ChunkSource for VecSource {
    fn n_phases(&self) -> usize {
        self.train.len()
    }

    fn phase(&self, phase: usize) -> &Phase {
        &self.phases[phase]
    }

    fn load_train(&mut self, phase: usize) -> Result<Vec<LabeledWindow>> {
        Ok(self.train[phase].clone())
    }

    fn load_test(&mut self, phase: usize) -> Result<Vec<LabeledWindow>> {
        Ok(self.test.get(phase).cloned().unwrap_or_default())
    }
}
