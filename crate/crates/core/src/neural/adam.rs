use alloc::format;

use super::{Hyper, ModelState};
use crate::error::{Error, Result};

/// One bias-corrected adaptive-moment update.
pub fn adam_step(state: &mut ModelState, grads: &[f64], hyper: &Hyper) -> Result<()> {
    if grads.len() != state.params.len() {
        return Err(Error::shape(format!("{} gradients", state.params.len()), grads.len()));
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(Error::Training(format!("non-finite gradient at step {}", state.step)));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - libm::pow(b1, t as f64);
    let c2 = 1.0 - libm::pow(b2, t as f64);
    for (((p, m), v), &g) in state.params.iter_mut().zip(&mut state.m).zip(&mut state.v).zip(grads) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= hyper.learning_rate * m_hat / (libm::sqrt(v_hat) + hyper.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Arch, LstmArch};
    use alloc::vec;

    fn state(n_params_of_f: usize) -> ModelState {
        ModelState::new(Arch::Lstm(LstmArch::new(n_params_of_f)), 5)
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut s = state(1);
        s.m.iter_mut().for_each(|m| *m = 1.0);
        s.v.iter_mut().for_each(|v| *v = 1.0);
        let before = s.params.clone();
        let h = Hyper::default();
        let zeros = vec![0.0; before.len()];
        // A nonzero first moment still moves parameters, so only check the
        // pure decay after clearing it.
        s.m.iter_mut().for_each(|m| *m = 0.0);
        adam_step(&mut s, &zeros, &h).unwrap();
        assert_eq!(s.params, before);
        assert!(s.v.iter().all(|&v| (v - 0.999).abs() < 1e-15));
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = state(1);
        let before = s.params.clone();
        let grads: alloc::vec::Vec<f64> = (0..before.len()).map(|i| if i % 2 == 0 { 0.3 } else { -2.0 }).collect();
        let h = Hyper::default();
        adam_step(&mut s, &grads, &h).unwrap();
        for ((a, b), g) in s.params.iter().zip(&before).zip(&grads) {
            let step = b - a;
            assert!((step - h.learning_rate * g.signum()).abs() < 1e-8);
        }
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // Minimize (x - 3)^2 from x = 2.9 with the default rate.
        let mut s = state(1);
        s.params = vec![2.9];
        s.m = vec![0.0];
        s.v = vec![0.0];
        let h = Hyper { learning_rate: 1e-2, ..Hyper::default() };
        // 100 steps at rate 1e-2 can cover at most 1.0; start inside reach.
        for _ in 0..100 {
            let g = 2.0 * (s.params[0] - 3.0);
            adam_step(&mut s, &[g], &h).unwrap();
        }
        assert!((s.params[0] - 3.0).abs() < 1e-3, "{}", s.params[0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut s = state(1);
        let mut g = vec![0.0; s.params.len()];
        g[0] = f64::NAN;
        assert!(adam_step(&mut s, &g, &Hyper::default()).is_err());
        assert_eq!(s.step, 0);
    }
}
