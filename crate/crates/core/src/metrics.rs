//! Binary confusion counts and macro-averaged scores.

use alloc::format;

use crate::error::{Error, Result};

pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

pub fn threshold(prob: f64) -> bool {
    prob >= THRESHOLD
}

pub fn confusion(predictions: &[bool], labels: &[bool]) -> Result<Confusion> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", predictions.len()), labels.len()));
    }
    if predictions.is_empty() {
        return Err(Error::Argument("no predictions to score".into()));
    }
    let mut c = Confusion::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        c.add(p, y);
    }
    Ok(c)
}

/// Confusion of thresholded probabilities.
pub fn confusion_from_probs(probs: &[f64], labels: &[bool]) -> Result<Confusion> {
    let preds: alloc::vec::Vec<bool> = probs.iter().map(|&p| threshold(p)).collect();
    confusion(&preds, labels)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Precision, recall and F1 of each class, averaged without weights.
/// Undefined ratios count as zero.
pub fn macro_metrics(c: &Confusion) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Argument("empty confusion matrix".into()));
    }
    let (p1, r1) = (ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_));
    let (p0, r0) = (ratio(c.tn, c.tn + c.fn_), ratio(c.tn, c.tn + c.fp));
    Ok(Metrics {
        accuracy: ratio(c.tp + c.tn, total),
        macro_precision: (p0 + p1) / 2.0,
        macro_recall: (r0 + r1) / 2.0,
        macro_f1: (f1(p0, r0) + f1(p1, r1)) / 2.0,
    })
}
