//! Independent models per feature set, trained over the same schedule and
//! participant orderings.

use alloc::format;
use alloc::vec::Vec;

use crate::balance::AdasynConfig;
use crate::error::{Error, Result};
use crate::features::FeatureSetSpec;
use crate::metrics::{Confusion, Metrics};
use crate::neural::{Hyper, ModelKind};
use crate::pipeline::{CohortSource, PreparedCohort};
use crate::rng;
use crate::trainer::{incremental_train, MemoryStore, Schedule, TrainOptions};

#[derive(Debug, Clone)]
pub struct AblationPlan {
    pub specs: Vec<FeatureSetSpec>,
    pub schedule: Schedule,
    pub train_pool: Vec<u32>,
    /// Held-out participants; empty means each phase is tested on its own chunk.
    pub test_pool: Vec<u32>,
    pub kind: ModelKind,
    pub hyper: Hyper,
    pub adasyn: AdasynConfig,
    pub seed: u64,
    /// Participant orderings to repeat the schedule under.
    pub orderings: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub ordering: u64,
    pub phase: usize,
    pub spec: FeatureSetSpec,
    pub cumulative_train_participants: usize,
    pub test_participants: usize,
    pub train_windows: usize,
    pub test_windows: usize,
    pub final_loss: f64,
    pub confusion: Confusion,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn phases(&self) -> usize {
        self.rows.iter().map(|r| r.phase + 1).max().unwrap_or(0)
    }

    pub fn f1_series(&self, spec: FeatureSetSpec, ordering: u64) -> Vec<f64> {
        self.rows.iter().filter(|r| r.spec == spec && r.ordering == ordering).map(|r| r.metrics.macro_f1).collect()
    }

    pub fn final_f1(&self, spec: FeatureSetSpec, ordering: u64) -> Option<f64> {
        self.f1_series(spec, ordering).last().copied()
    }

    /// Mean metrics per (phase, spec) over orderings.
    pub fn mean_by_phase(&self, spec: FeatureSetSpec) -> Vec<Metrics> {
        (0..self.phases())
            .map(|phase| {
                let rows: Vec<_> = self.rows.iter().filter(|r| r.spec == spec && r.phase == phase).collect();
                let n = rows.len().max(1) as f64;
                let sum = |f: fn(&Metrics) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
                Metrics {
                    accuracy: sum(|m| m.accuracy),
                    macro_precision: sum(|m| m.macro_precision),
                    macro_recall: sum(|m| m.macro_recall),
                    macro_f1: sum(|m| m.macro_f1),
                }
            })
            .collect()
    }
}

/// Trains one model per (ordering, spec) and records every phase.
pub fn run_ablation(cohort: &PreparedCohort, plan: &AblationPlan) -> Result<AblationReport> {
    if plan.specs.is_empty() {
        return Err(Error::config("features", "at least one feature set is required"));
    }
    if plan.orderings.is_empty() {
        return Err(Error::config("orderings", "at least one participant ordering is required"));
    }
    for spec in &plan.specs {
        spec.validate()?;
    }
    let mut report = AblationReport::default();
    for &ordering in &plan.orderings {
        let phases = plan.schedule.assign(&plan.train_pool, &plan.test_pool, plan.seed, ordering)?;
        for &spec in &plan.specs {
            let mut source = CohortSource::new(cohort, phases.clone(), spec, plan.adasyn);
            let mut store = MemoryStore::default();
            let opts = TrainOptions { evaluate: true, ..TrainOptions::default() };
            let model_seed = rng::derive(plan.seed, &[ordering]);
            let out = incremental_train(&mut source, &mut store, plan.kind, &plan.hyper, model_seed, &opts)
                .map_err(|e| match e {
                    Error::Training(r) => Error::Training(format!("{spec}, ordering {ordering}: {r}")),
                    other => other,
                })?;
            report.rows.extend(out.reports.into_iter().map(|r| AblationRow {
                ordering,
                phase: r.phase,
                spec,
                cumulative_train_participants: r.cumulative_train_participants,
                test_participants: r.test_participants,
                train_windows: r.train_windows,
                test_windows: r.test_windows,
                final_loss: r.epoch_losses.last().copied().unwrap_or(f64::NAN),
                confusion: r.confusion,
                metrics: r.metrics,
            }));
        }
    }
    Ok(report)
}
