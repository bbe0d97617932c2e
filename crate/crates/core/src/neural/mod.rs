//! Tiny forecasters trained from scratch: a single-layer LSTM with a sigmoid
//! head, and a strided CNN with an input skip connection.
//!
//! Parameters live in one flat `Vec<f64>`; each architecture documents its
//! layout. Forward passes return a per-window trace that the matching
//! backward pass consumes.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::window::LabeledWindow;

pub mod adam;
pub mod cnn;
pub mod gradcheck;
pub mod loss;
pub mod lstm;

pub use adam::adam_step;
pub use cnn::CnnArch;
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::bce_loss;
pub use lstm::LstmArch;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lstm,
    Cnn,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Cnn => "cnn",
        })
    }
}

impl core::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(ModelKind::Lstm),
            "cnn" => Ok(ModelKind::Cnn),
            _ => Err(Error::config("model", format!("unknown model kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Lstm(LstmArch),
    Cnn(CnnArch),
}

/// Per-window activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Trace {
    Lstm(lstm::LstmTrace),
    Cnn(cnn::CnnTrace),
}

impl Trace {
    /// Appends whether each relu unit is active.
    pub fn relu_pattern(&self, out: &mut Vec<bool>) {
        if let Trace::Cnn(t) = self {
            out.extend(t.maps.iter().flatten().map(|&a| a > 0.0));
            out.push(t.dense_pre > 0.0);
        }
    }
}

impl Arch {
    /// The default architecture of `kind` for `input_dim` features and
    /// `window` rows.
    pub fn new(kind: ModelKind, input_dim: usize, window: usize) -> Result<Self> {
        match kind {
            ModelKind::Lstm => Ok(Arch::Lstm(LstmArch::new(input_dim))),
            ModelKind::Cnn => CnnArch::for_window(input_dim, window).map(Arch::Cnn),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Arch::Lstm(_) => ModelKind::Lstm,
            Arch::Cnn(_) => ModelKind::Cnn,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Arch::Lstm(a) => a.input_dim,
            Arch::Cnn(a) => a.input_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Arch::Lstm(a) => a.param_count(),
            Arch::Cnn(a) => a.param_count(),
        }
    }

    pub fn init(&self, seed: u64) -> Vec<f64> {
        match self {
            Arch::Lstm(a) => a.init(seed),
            Arch::Cnn(a) => a.init(seed),
        }
    }

    /// Checks that a window can be fed to this architecture.
    pub fn check_window(&self, w: &LabeledWindow) -> Result<()> {
        if w.cols() != self.input_dim() {
            return Err(Error::shape(
                format!("{} feature columns", self.input_dim()),
                format!("{} ({})", w.cols(), w.spec),
            ));
        }
        if let Arch::Cnn(a) = self {
            if w.rows != a.window {
                return Err(Error::shape(format!("{} rows", a.window), w.rows));
            }
        }
        if w.rows == 0 {
            return Err(Error::shape("at least one row", 0));
        }
        Ok(())
    }

    /// Returns the pre-sigmoid output and the trace.
    pub fn forward_one(&self, params: &[f64], x: &[f64], rows: usize) -> (f64, Trace) {
        match self {
            Arch::Lstm(a) => {
                let (z, t) = a.forward(params, x, rows);
                (z, Trace::Lstm(t))
            }
            Arch::Cnn(a) => {
                let (z, t) = a.forward(params, x);
                (z, Trace::Cnn(t))
            }
        }
    }

    /// Accumulates `dlogit * d(logit)/d(params)` into `grads`.
    pub fn backward_one(&self, params: &[f64], x: &[f64], trace: &Trace, dlogit: f64, grads: &mut [f64]) {
        match (self, trace) {
            (Arch::Lstm(a), Trace::Lstm(t)) => a.backward(params, x, t, dlogit, grads),
            (Arch::Cnn(a), Trace::Cnn(t)) => a.backward(params, x, t, dlogit, grads),
            _ => unreachable!("trace kind always matches the architecture that produced it"),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Lstm(a) => write!(f, "lstm(F={}, h={})", a.input_dim, a.hidden),
            Arch::Cnn(a) => write!(
                f,
                "cnn(F={}, window={}, kernel={}, stride={}, filters={}, pointwise={})",
                a.input_dim, a.window, a.kernel, a.stride, a.filters, a.pointwise_layers
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Hyper {
    /// 10 epochs for the LSTM, 38 for the CNN.
    pub fn for_kind(kind: ModelKind) -> Self {
        Hyper {
            epochs: match kind {
                ModelKind::Lstm => 10,
                ModelKind::Cnn => 38,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive and finite"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::config("beta1", "moment decay rates must lie in [0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::config("epsilon", "must be positive"));
        }
        Ok(())
    }
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { learning_rate: 1e-3, batch_size: 32, epochs: 10, beta1: 0.9, beta2: 0.999, epsilon: 1e-7 }
    }
}

/// Architecture, parameters and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub arch: Arch,
    pub params: Vec<f64>,
    /// First-moment estimates.
    pub m: Vec<f64>,
    /// Second-moment estimates.
    pub v: Vec<f64>,
    pub seed: u64,
    /// Optimizer steps taken.
    pub step: u64,
    /// Training phases completed.
    pub phase: u32,
}

impl ModelState {
    pub fn new(arch: Arch, seed: u64) -> Self {
        let params = arch.init(seed);
        let n = params.len();
        ModelState { arch, params, m: alloc::vec![0.0; n], v: alloc::vec![0.0; n], seed, step: 0, phase: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.arch.param_count();
        if self.params.len() != n || self.m.len() != n || self.v.len() != n {
            return Err(Error::shape(format!("{n} parameters"), self.params.len()));
        }
        if !self.params.iter().chain(&self.m).chain(&self.v).all(|x| x.is_finite()) {
            return Err(Error::Training("non-finite value in model state".into()));
        }
        Ok(())
    }

    /// FNV-1a over the parameter bits; detects a cache used after an update.
    pub fn fingerprint(&self) -> u64 {
        self.params.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, p| (h ^ p.to_bits()).wrapping_mul(0x0100_0000_01b3))
    }

    /// Probabilities for a batch of windows.
    pub fn predict(&self, windows: &[LabeledWindow]) -> Result<Vec<f64>> {
        windows
            .iter()
            .map(|w| {
                self.arch.check_window(w)?;
                Ok(sigmoid(self.arch.forward_one(&self.params, &w.data, w.rows).0))
            })
            .collect()
    }
}

/// Forward activations of a batch, bound to the state that produced them.
#[derive(Debug, Clone)]
pub struct ForwardCache<'a> {
    pub probs: Vec<f64>,
    windows: &'a [LabeledWindow],
    traces: Vec<Trace>,
    step: u64,
    fingerprint: u64,
}

/// Forward pass over a batch; probabilities lie strictly inside (0, 1)
/// except where the logit saturates f64.
pub fn forward<'a>(state: &ModelState, batch: &'a [LabeledWindow]) -> Result<ForwardCache<'a>> {
    let mut probs = Vec::with_capacity(batch.len());
    let mut traces = Vec::with_capacity(batch.len());
    for w in batch {
        state.arch.check_window(w)?;
        let (z, t) = state.arch.forward_one(&state.params, &w.data, w.rows);
        probs.push(sigmoid(z));
        traces.push(t);
    }
    Ok(ForwardCache { probs, windows: batch, traces, step: state.step, fingerprint: state.fingerprint() })
}

/// Parameter gradients given `dL/dp` for every window of the batch.
pub fn backward(state: &ModelState, cache: &ForwardCache<'_>, upstream: &[f64]) -> Result<Vec<f64>> {
    if cache.step != state.step || cache.fingerprint != state.fingerprint() {
        return Err(Error::Usage("forward cache is stale: parameters changed since the forward pass".into()));
    }
    if upstream.len() != cache.probs.len() {
        return Err(Error::shape(format!("{} upstream gradients", cache.probs.len()), upstream.len()));
    }
    let mut grads = alloc::vec![0.0; state.params.len()];
    for ((w, t), (&p, &g)) in cache.windows.iter().zip(&cache.traces).zip(cache.probs.iter().zip(upstream)) {
        let dlogit = g * p * (1.0 - p);
        if dlogit != 0.0 {
            state.arch.backward_one(&state.params, &w.data, t, dlogit, &mut grads);
        }
    }
    Ok(grads)
}

/// LSTM-specific entry points.
pub fn lstm_forward<'a>(state: &ModelState, batch: &'a [LabeledWindow]) -> Result<ForwardCache<'a>> {
    match state.arch {
        Arch::Lstm(_) => forward(state, batch),
        Arch::Cnn(_) => Err(Error::Usage("lstm_forward called on a CNN state".into())),
    }
}

pub fn lstm_backward(state: &ModelState, cache: &ForwardCache<'_>, upstream: &[f64]) -> Result<Vec<f64>> {
    match state.arch {
        Arch::Lstm(_) => backward(state, cache, upstream),
        Arch::Cnn(_) => Err(Error::Usage("lstm_backward called on a CNN state".into())),
    }
}

pub fn cnn_forward<'a>(state: &ModelState, batch: &'a [LabeledWindow]) -> Result<ForwardCache<'a>> {
    match state.arch {
        Arch::Cnn(_) => forward(state, batch),
        Arch::Lstm(_) => Err(Error::Usage("cnn_forward called on an LSTM state".into())),
    }
}

pub fn cnn_backward(state: &ModelState, cache: &ForwardCache<'_>, upstream: &[f64]) -> Result<Vec<f64>> {
    match state.arch {
        Arch::Cnn(_) => backward(state, cache, upstream),
        Arch::Lstm(_) => Err(Error::Usage("cnn_backward called on an LSTM state".into())),
    }
}

/// Mean BCE loss and its parameter gradient over a batch.
pub fn loss_and_grad(state: &ModelState, batch: &[LabeledWindow]) -> Result<(f64, Vec<f64>)> {
    let cache = forward(state, batch)?;
    let labels: Vec<bool> = batch.iter().map(|w| w.label).collect();
    let (loss, upstream) = bce_loss(&cache.probs, &labels)?;
    let grads = backward(state, &cache, &upstream)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureSetSpec;

    fn window(spec: FeatureSetSpec, rows: usize, seed: u64) -> LabeledWindow {
        use rand::Rng;
        let mut r = crate::rng::rng(seed, &[]);
        LabeledWindow {
            participant_id: 1,
            start_ts: 0,
            end_ts: 0,
            label: seed.is_multiple_of(2),
            synthetic: false,
            spec,
            rows,
            data: (0..rows * spec.dim()).map(|_| r.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn zero_parameters_give_one_half() {
        for arch in [Arch::Lstm(LstmArch::new(14)), Arch::Cnn(CnnArch::for_window(14, 120).unwrap())] {
            let mut s = ModelState::new(arch, 1);
            s.params.iter_mut().for_each(|p| *p = 0.0);
            let rows = if let Arch::Cnn(a) = arch { a.window } else { 50 };
            let batch: Vec<_> = (0..3).map(|i| window(FeatureSetSpec::H, rows, i)).collect();
            let probs = s.predict(&batch).unwrap();
            assert_eq!(probs.len(), 3);
            assert!(probs.iter().all(|&p| p == 0.5));
        }
    }

    #[test]
    fn outputs_in_open_unit_interval() {
        let s = ModelState::new(Arch::Lstm(LstmArch::new(2)), 3);
        let batch: Vec<_> = (0..8).map(|i| window(FeatureSetSpec::LOC, 30, i)).collect();
        assert!(s.predict(&batch).unwrap().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let s = ModelState::new(Arch::Lstm(LstmArch::new(14)), 3);
        let w = window(FeatureSetSpec::HK, 10, 1);
        assert!(matches!(s.predict(&[w]), Err(Error::Shape { .. })));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut s = ModelState::new(Arch::Lstm(LstmArch::new(2)), 3);
        let batch = [window(FeatureSetSpec::LOC, 5, 2)];
        let cache = forward(&s, &batch).unwrap();
        s.params[0] += 1.0;
        assert!(matches!(backward(&s, &cache, &[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let s = ModelState::new(Arch::Lstm(LstmArch::new(2)), 3);
        let batch = [window(FeatureSetSpec::LOC, 5, 2), window(FeatureSetSpec::LOC, 5, 3)];
        let cache = lstm_forward(&s, &batch).unwrap();
        assert!(lstm_backward(&s, &cache, &[0.0, 0.0]).unwrap().iter().all(|&g| g == 0.0));
        assert!(cnn_forward(&s, &batch).is_err());
    }

    #[test]
    fn threshold_invariant_under_monotone_logit_rescaling() {
        // sigmoid(a*z) >= 0.5 iff z >= 0 for a > 0.
        for z in [-3.0, -1e-9, 0.0, 1e-9, 2.5] {
            for a in [0.1, 1.0, 7.0] {
                assert_eq!(sigmoid(z) >= 0.5, sigmoid(a * z) >= 0.5);
            }
        }
    }
}
