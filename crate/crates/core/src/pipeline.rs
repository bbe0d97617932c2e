//! Cohort preparation: merge, derive, window, split and standardize each
//! participant, then serve per-phase chunks that are projected and balanced
//! on demand.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::balance::{adasyn, AdasynConfig};
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::features::{derive_features, FeatureSetSpec};
use crate::merge::merge_streams;
use crate::record::{EventLog, SensorStream};
use crate::rng::{self, tag};
use crate::trainer::{ChunkSource, Phase};
use crate::window::{chronological_split, slide_windows, ColumnStats, LabeledWindow, Standardizer, WindowConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepareConfig {
    pub window: WindowConfig,
    pub train_frac: f64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig { window: WindowConfig::default(), train_frac: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Merge,
    Derive,
    Window,
    Split,
    Standardize,
    Balance,
}

/// Train and test windows of one participant, full width.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantWindows {
    pub participant_id: u32,
    pub train: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    pub excluded_records: usize,
    pub dropped_after_last_dose: usize,
}

/// Merge, derive, window and split one participant. `None` when the
/// participant has fewer than two windows.
pub fn window_participant(
    participant_id: u32,
    sensor: &SensorStream,
    events: EventLog,
    cfg: &PrepareConfig,
) -> Result<Option<ParticipantWindows>> {
    let merged = merge_streams(participant_id, sensor, events)?;
    let dropped = merged.dropped_after_last_dose;
    let series = derive_features(&merged)?;
    drop(merged);
    let windows = slide_windows(&series, FeatureSetSpec::HLK, cfg.window);
    let excluded_records = series.excluded;
    drop(series);
    let split = chronological_split(windows, cfg.train_frac)?;
    if !split.excluded_participants.is_empty() {
        return Ok(None);
    }
    Ok(Some(ParticipantWindows {
        participant_id,
        train: split.train,
        test: split.test,
        excluded_records,
        dropped_after_last_dose: dropped,
    }))
}

#[derive(Debug, Clone)]
pub struct PreparedCohort {
    pub participants: BTreeMap<u32, ParticipantWindows>,
    /// Participants with fewer than two windows.
    pub excluded: Vec<u32>,
    pub standardizer: Standardizer,
    pub window: WindowConfig,
    /// Order in which the stages ran.
    pub trace: Vec<Stage>,
}

impl PreparedCohort {
    /// Standardizes with statistics of every participant's train windows.
    pub fn from_windows(mut participants: BTreeMap<u32, ParticipantWindows>, excluded: Vec<u32>, window: WindowConfig) -> Result<Self> {
        let mut stats = ColumnStats::new(FeatureSetSpec::HLK.dim());
        for p in participants.values() {
            p.train.iter().for_each(|w| stats.push_window(w));
        }
        if stats.count() == 0 {
            return Err(Error::Argument("no participant produced training windows".into()));
        }
        let standardizer = stats.finish();
        for p in participants.values_mut() {
            p.train.iter_mut().chain(p.test.iter_mut()).for_each(|w| standardizer.apply(w));
        }
        let trace = alloc::vec![Stage::Merge, Stage::Derive, Stage::Window, Stage::Split, Stage::Standardize];
        Ok(PreparedCohort { participants, excluded, standardizer, window, trace })
    }

    pub fn ids(&self) -> Vec<u32> {
        self.participants.keys().copied().collect()
    }

    fn gather(&self, ids: &[u32], train: bool, spec: FeatureSetSpec) -> Result<Vec<LabeledWindow>> {
        let mut out = Vec::new();
        for id in ids {
            let p = self
                .participants
                .get(id)
                .ok_or_else(|| Error::Argument(format!("participant {id} is not in the prepared cohort")))?;
            for w in if train { &p.train } else { &p.test } {
                out.push(if spec.is_full() { w.clone() } else { w.project(spec)? });
            }
        }
        Ok(out)
    }
}

/// Generates and prepares every participant of a synthetic cohort, one at a
/// time.
pub fn prepare_cohort(cohort: &Cohort, cfg: &PrepareConfig) -> Result<PreparedCohort> {
    let mut participants = BTreeMap::new();
    let mut excluded = Vec::new();
    for (i, p) in cohort.participants.iter().enumerate() {
        let (sensor, events) = cohort.generate(i);
        let pid = p.profile.participant_id;
        match window_participant(pid, &sensor, events, cfg)? {
            Some(w) => {
                participants.insert(pid, w);
            }
            None => excluded.push(pid),
        }
    }
    PreparedCohort::from_windows(participants, excluded, cfg.window)
}

/// Outcome of balancing one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedChunk {
    pub windows: Vec<LabeledWindow>,
    pub k_used: Option<usize>,
    pub warning: Option<String>,
}

/// ADASYN with a fallback for small chunks: with fewer than `k + 1`
/// minority windows `k` shrinks to `minority - 1`; with fewer than two, or
/// a single class, the chunk is returned unbalanced.
pub fn balance_chunk(windows: Vec<LabeledWindow>, cfg: &AdasynConfig) -> Result<BalancedChunk> {
    let pos = windows.iter().filter(|w| w.label).count();
    let minority = pos.min(windows.len() - pos);
    if minority < 2 {
        let warning = Some(format!("{minority} minority windows of {}: left unbalanced", windows.len()));
        return Ok(BalancedChunk { windows, k_used: None, warning });
    }
    let (k, warning) = if minority < cfg.k + 1 {
        (minority - 1, Some(format!("only {minority} minority windows: k reduced from {} to {}", cfg.k, minority - 1)))
    } else {
        (cfg.k, None)
    };
    let b = adasyn(&windows, &AdasynConfig { k, ..*cfg })?;
    Ok(BalancedChunk { windows: b.windows, k_used: Some(k), warning })
}

/// Serves phase chunks of a prepared cohort for one feature set.
#[derive(Debug)]
pub struct CohortSource<'a> {
    pub cohort: &'a PreparedCohort,
    pub phases: Vec<Phase>,
    pub spec: FeatureSetSpec,
    pub adasyn: AdasynConfig,
    /// Balance the test chunk as well as the training chunk.
    pub balance_test: bool,
    pub warnings: Vec<String>,
    pub trace: Vec<Stage>,
}

impl<'a> CohortSource<'a> {
    pub fn new(cohort: &'a PreparedCohort, phases: Vec<Phase>, spec: FeatureSetSpec, adasyn: AdasynConfig) -> Self {
        CohortSource { cohort, phases, spec, adasyn, balance_test: true, warnings: Vec::new(), trace: cohort.trace.clone() }
    }

    fn balanced(&mut self, windows: Vec<LabeledWindow>, phase: usize, stream: u64) -> Result<Vec<LabeledWindow>> {
        if windows.is_empty() {
            return Ok(windows);
        }
        let cfg = AdasynConfig { seed: rng::derive(self.adasyn.seed, &[stream, phase as u64]), ..self.adasyn };
        let out = balance_chunk(windows, &cfg)?;
        if let Some(w) = out.warning {
            self.warnings.push(format!("phase {phase}: {w}"));
        }
        self.trace.push(Stage::Balance);
        Ok(out.windows)
    }
}

impl ChunkSource for CohortSource<'_> {
    fn n_phases(&self) -> usize {
        self.phases.len()
    }

    fn phase(&self, phase: usize) -> &Phase {
        &self.phases[phase]
    }

    fn load_train(&mut self, phase: usize) -> Result<Vec<LabeledWindow>> {
        let w = self.cohort.gather(&self.phases[phase].train, true, self.spec)?;
        self.balanced(w, phase, tag::BALANCE_TRAIN)
    }

    fn load_test(&mut self, phase: usize) -> Result<Vec<LabeledWindow>> {
        let w = self.cohort.gather(&self.phases[phase].test, false, self.spec)?;
        if self.balance_test {
            self.balanced(w, phase, tag::BALANCE_TEST)
        } else {
            Ok(w)
        }
    }
}
