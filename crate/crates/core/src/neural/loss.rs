use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

/// Loss and `dloss/dprob` of one sample. The clamp has zero gradient
/// outside its range.
pub fn bce_term(p: f64, label: bool) -> (f64, f64) {
    let q = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let inside = q == p;
    if label {
        (-libm::log(q), if inside { -1.0 / q } else { 0.0 })
    } else {
        (-libm::log(1.0 - q), if inside { 1.0 / (1.0 - q) } else { 0.0 })
    }
}

/// Mean binary cross-entropy and its gradient with respect to each
/// probability.
pub fn bce_loss(probs: &[f64], labels: &[bool]) -> Result<(f64, Vec<f64>)> {
    if probs.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", probs.len()), labels.len()));
    }
    if probs.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let n = probs.len() as f64;
    let mut total = 0.0;
    let grads = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let (l, g) = bce_term(p, y);
            total += l;
            g / n
        })
        .collect();
    Ok((total / n, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_probability_costs_ln2() {
        for y in [false, true] {
            let (l, _) = bce_loss(&[0.5], &[y]).unwrap();
            assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_prediction_is_clamped() {
        let (l, g) = bce_loss(&[1.0, 0.0], &[true, false]).unwrap();
        let expected = -(1.0f64 - 1e-7).ln();
        assert!((l - expected).abs() < 1e-20);
        assert!(l > 0.0 && l < 1.1e-7);
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn mean_of_per_sample_losses() {
        let p = [0.9, 0.2, 0.6, 0.3];
        let y = [true, false, false, true];
        let hand = (-(0.9f64).ln() - (0.8f64).ln() - (0.4f64).ln() - (0.3f64).ln()) / 4.0;
        let (l, g) = bce_loss(&p, &y).unwrap();
        assert!((l - hand).abs() < 1e-15);
        assert!((g[0] - (-1.0 / 0.9 / 4.0)).abs() < 1e-15);
        assert!((g[2] - (1.0 / 0.4 / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        assert!(matches!(bce_loss(&[0.5], &[]), Err(Error::Shape { .. })));
    }
}
