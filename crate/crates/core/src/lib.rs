//! Core algorithms for knowledge-guided sparse-event forecasting.
//!
//! The crate is `no_std` (with `alloc`) so that the numerical pieces can be
//! embedded anywhere; file formats, checkpoints on disk and the command line
//! live in the `sparsecast` companion crate.
//!
//! Pipeline, in order:
//!
//! 1. [`cohort`] synthesizes participants, duty-cycled sensor streams and
//!    medication event logs.
//! 2. [`merge`] joins a sensor stream with its event log so that every
//!    sample knows the previous and next medication event.
//! 3. [`features`] derives the high-resolution (H), low-resolution (L) and
//!    future-knowledge (K) columns plus the "medication next hour" target.
//! 4. [`window`] cuts labeled sliding windows, splits them chronologically
//!    and standardizes numeric columns.
//! 5. [`balance`] oversamples the minority class with ADASYN.
//! 6. [`neural`] holds the LSTM and CNN forecasters, loss, optimizer and
//!    gradient checking.
//! 7. [`pipeline`] prepares a cohort and serves balanced per-phase chunks.
//! 8. [`trainer`] runs incremental chunked training and personalization.
//! 9. [`metrics`] and [`ablation`] score models and drive feature ablations.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod ablation;
pub mod balance;
pub mod cohort;
pub mod error;
pub mod features;
pub mod merge;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod record;
pub mod rng;
pub mod time;
pub mod trainer;
pub mod window;

pub use error::{Error, Result};
pub use features::FeatureSetSpec;
pub use neural::{Arch, CnnArch, Hyper, LstmArch, ModelKind, ModelState};
pub use record::{EventLog, MedicationEvent, SensorSample, SensorStream};
pub use window::LabeledWindow;
