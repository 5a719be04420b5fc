//! Adam optimizer with bias correction (beta1 = 0.9, beta2 = 0.999,
//! epsilon = 1e-8), applied to named parameter blocks.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// One moment pair per parameter block, sized by `block_lens`.
    pub fn new(block_lens: &[usize]) -> Self {
        AdamState {
            step: 0,
            first_moment: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Apply one update. `params` and `grads` must line up with the block
    /// layout given at construction; a non-finite gradient aborts and names
    /// the offending block.
    pub fn apply(
        &mut self,
        params: &mut [(String, &mut Vec<f64>)],
        grads: &[Vec<f64>],
        learning_rate: f64,
    ) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam: {} parameter blocks, {} gradient blocks, state has {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for ((name, _), grad) in params.iter().zip(grads.iter()) {
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Train(format!(
                    "non-finite gradient in parameter block '{name}' at step {}",
                    self.step + 1
                )));
            }
        }

        self.step += 1;
        let bias1 = 1.0 - BETA1.powi(self.step as i32);
        let bias2 = 1.0 - BETA2.powi(self.step as i32);
        for (((_, block), grad), (m, v)) in params.iter_mut().zip(grads.iter()).zip(
            self.first_moment
                .iter_mut()
                .zip(self.second_moment.iter_mut()),
        ) {
            for (((p, &g), m), v) in block
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_block(values: &[f64]) -> Vec<f64> {
        values.to_vec()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = one_block(&[1.0, -2.0, 3.0]);
        let mut state = AdamState::new(&[3]);
        state
            .apply(&mut [("w".into(), &mut p)], &[vec![0.0, 0.0, 0.0]], 0.001)
            .unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // With bias correction, the first update is
        //   lr * g / (|g| * sqrt(1) + eps') ~= lr * sign(g).
        let g = 0.37;
        let mut p = one_block(&[0.0]);
        let mut state = AdamState::new(&[1]);
        state
            .apply(&mut [("w".into(), &mut p)], &[vec![g]], 0.001)
            .unwrap();
        let m_hat = (1.0 - BETA1) * g / (1.0 - BETA1);
        let v_hat = (1.0 - BETA2) * g * g / (1.0 - BETA2);
        let expected = -0.001 * m_hat / (v_hat.sqrt() + EPSILON);
        assert_abs_diff_eq!(p[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], -0.001, epsilon = 1e-7);
    }

    #[test]
    fn identical_calls_from_identical_state_agree() {
        let run = || {
            let mut p = one_block(&[0.5, -0.5]);
            let mut state = AdamState::new(&[2]);
            for _ in 0..10 {
                state
                    .apply(&mut [("w".into(), &mut p)], &[vec![0.1, -0.3]], 0.01)
                    .unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nan_gradient_names_the_block() {
        let mut p = one_block(&[0.0]);
        let mut state = AdamState::new(&[1]);
        let err = state
            .apply(
                &mut [("expr.weights".into(), &mut p)],
                &[vec![f64::NAN]],
                0.001,
            )
            .unwrap_err();
        assert!(err.to_string().contains("expr.weights"));
    }
}
