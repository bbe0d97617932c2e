//! Central finite-difference check of the analytic gradients.

use alloc::vec::Vec;
use rand::Rng;

use super::loss::bce_term;
use super::{sigmoid, Arch, CnnArch, LstmArch, ModelKind, Trace};
use crate::error::Result;

pub const STEP: f64 = 1e-5;
/// Floor on the relative-error denominator, so that gradients that are zero
/// up to round-off are compared absolutely.
pub const DENOM_FLOOR: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub n_params: usize,
    /// Parameters whose finite difference crossed a relu kink and so has no
    /// derivative to compare against.
    pub skipped_at_kinks: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Backward kernel signature: `(arch, params, input, trace, dlogit, grads)`.
pub type BackwardFn<'a> = dyn Fn(&Arch, &[f64], &[f64], &Trace, f64, &mut [f64]) + 'a;

/// Architecture used by [`grad_check`]: the full-size LSTM, and a CNN
/// with a 12-row window.
pub fn small_arch(kind: ModelKind, input_dim: usize) -> Result<Arch> {
    Ok(match kind {
        ModelKind::Lstm => Arch::Lstm(LstmArch::new(input_dim)),
        ModelKind::Cnn => Arch::Cnn(CnnArch::with_dims(input_dim, 12, 4, 2)?),
    })
}

/// Two 12-row windows, random parameters.
pub fn grad_check(kind: ModelKind, input_dim: usize, seed: u64) -> Result<GradCheckReport> {
    let arch = small_arch(kind, input_dim)?;
    Ok(grad_check_with(&arch, 12, seed, &|a, p, x, t, d, g| a.backward_one(p, x, t, d, g)))
}

pub fn grad_check_with(arch: &Arch, rows: usize, seed: u64, backward: &BackwardFn<'_>) -> GradCheckReport {
    let mut rng = crate::rng::rng(seed, &[]);
    let f = arch.input_dim();
    let mut params: Vec<f64> = (0..arch.param_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
    if let Arch::Cnn(a) = arch {
        // Keep the relu head active so its weights receive gradient.
        let dense_bias = a.param_count() - a.window * a.input_dim - 2;
        params[dense_bias] = 1.0;
    }
    let samples: Vec<(Vec<f64>, bool)> =
        (0..2).map(|i| ((0..rows * f).map(|_| rng.random_range(-1.0..1.0)).collect(), i == 0)).collect();
    let n = samples.len() as f64;

    // Loss and the on/off pattern of every relu unit.
    let loss = |p: &[f64]| -> (f64, Vec<bool>) {
        let mut pattern = Vec::new();
        let mut total = 0.0;
        for (x, y) in &samples {
            let (z, trace) = arch.forward_one(p, x, rows);
            total += bce_term(sigmoid(z), *y).0;
            trace.relu_pattern(&mut pattern);
        }
        (total / n, pattern)
    };

    let mut analytic = alloc::vec![0.0; params.len()];
    for (x, y) in &samples {
        let (z, trace) = arch.forward_one(&params, x, rows);
        let p = sigmoid(z);
        let dlogit = bce_term(p, *y).1 / n * p * (1.0 - p);
        backward(arch, &params, x, &trace, dlogit, &mut analytic);
    }

    let base_pattern = loss(&params).1;
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: 0, n_params: params.len(), skipped_at_kinks: 0 };
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + STEP;
        let (up, up_pattern) = loss(&params);
        params[i] = orig - STEP;
        let (down, down_pattern) = loss(&params);
        params[i] = orig;
        if up_pattern != base_pattern || down_pattern != base_pattern {
            report.skipped_at_kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(DENOM_FLOOR);
        let err = (analytic[i] - numeric).abs() / denom;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_param = i;
        }
    }
    report
}
