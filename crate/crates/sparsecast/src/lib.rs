//! File formats, checkpoints and the command-line pipeline around
//! `sparsecast-core`.
//!
//! Artifacts:
//!
//! * sensor and event CSVs plus a participant table ([`csvio`]),
//! * binary window containers ([`container`]),
//! * weight files, which double as checkpoints ([`weights`]),
//! * a JSON-lines run log ([`runlog`]) and report CSVs ([`report`]).

pub mod commands;
pub mod config;
pub mod container;
pub mod csvio;
pub mod error;
pub mod report;
pub mod runlog;
pub mod weights;

pub use error::{Error, Result};
