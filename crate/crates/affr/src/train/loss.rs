//! The three task losses and their analytic gradients.
//!
//! Cross-entropy gradients are returned with respect to the logits (the
//! softmax/sigmoid is folded in analytically); the valence/arousal loss
//! gradient is returned with respect to the pre-tanh outputs. All
//! accumulation is 64-bit.

use crate::data::{NUM_ACTION_UNITS, NUM_EXPRESSIONS};
use crate::error::{Error, Result};

/// Floor applied inside logarithms; keeps a confident mistake finite.
pub const LOG_CLAMP: f64 = 1e-12;

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

/// Weighted categorical cross-entropy over a batch.
///
/// `probs[i]` is the softmax output for sample `i`, `labels[i]` its class.
/// Returns the mean of `-w_y * ln(p_y)` and per-sample gradients with
/// respect to the logits: `w_y * (p_j - [j == y]) / B`.
pub fn weighted_ce(
    probs: &[Vec<f64>],
    labels: &[usize],
    weights: &[f64; NUM_EXPRESSIONS],
) -> (f64, Vec<Vec<f64>>) {
    assert_eq!(probs.len(), labels.len());
    let batch = probs.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(probs.len());
    for (p, &y) in probs.iter().zip(labels.iter()) {
        let w = weights[y];
        loss -= w * clamped_ln(p[y]);
        let mut g: Vec<f64> = p.iter().map(|&pj| w * pj / batch).collect();
        g[y] -= w / batch;
        grads.push(g);
    }
    (loss / batch, grads)
}

/// Weighted binary cross-entropy over a batch of 12-unit probability rows.
///
/// The mean runs over both batch and units; `pos_weights[i]` scales the
/// positive term of unit `i`. Gradients are with respect to the logits.
pub fn weighted_bce(
    probs: &[Vec<f64>],
    labels: &[[u8; NUM_ACTION_UNITS]],
    pos_weights: &[f64; NUM_ACTION_UNITS],
) -> (f64, Vec<Vec<f64>>) {
    assert_eq!(probs.len(), labels.len());
    let norm = (probs.len() * NUM_ACTION_UNITS) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(probs.len());
    for (p, y) in probs.iter().zip(labels.iter()) {
        let mut g = vec![0.0; NUM_ACTION_UNITS];
        for i in 0..NUM_ACTION_UNITS {
            let (pi, w) = (p[i], pos_weights[i]);
            if y[i] == 1 {
                loss -= w * clamped_ln(pi);
                g[i] = w * (pi - 1.0) / norm;
            } else {
                loss -= clamped_ln(1.0 - pi);
                g[i] = pi / norm;
            }
        }
        grads.push(g);
    }
    (loss / norm, grads)
}

/// Concordance correlation coefficient with population (1/n) moments.
///
/// `2 cov(x,y) / (var x + var y + (mean x - mean y)^2)`; a degenerate
/// denominator (both sequences constant with equal means) yields 0.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(ccc_with_grad(x, y)?.0)
}

/// CCC plus its gradient with respect to `x`.
fn ccc_with_grad(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "ccc: sequence lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Shape("ccc needs at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&xi, &yi) in x.iter().zip(y.iter()) {
        cov += (xi - mx) * (yi - my);
        vx += (xi - mx) * (xi - mx);
        vy += (yi - my) * (yi - my);
    }
    cov /= n;
    vx /= n;
    vy /= n;
    let den = vx + vy + (mx - my) * (mx - my);
    if den == 0.0 {
        return Ok((0.0, vec![0.0; x.len()]));
    }
    let value = 2.0 * cov / den;
    let grad = x
        .iter()
        .zip(y.iter())
        .map(|(&xi, &yi)| {
            let dcov = (yi - my) / n;
            let dden = 2.0 * (xi - mx) / n + 2.0 * (mx - my) / n;
            (2.0 * dcov - value * dden) / den
        })
        .collect();
    Ok((value, grad))
}

/// Valence/arousal loss `1 - 0.5 (CCC_V + CCC_A)` over one batch.
///
/// `predictions` are tanh outputs; the returned per-sample gradients are
/// with respect to the pre-tanh outputs.
pub fn loss_va(
    predictions: &[(f64, f64)],
    labels: &[(f64, f64)],
) -> Result<(f64, Vec<(f64, f64)>)> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape("loss_va: batch lengths differ".into()));
    }
    let v_pred: Vec<f64> = predictions.iter().map(|p| p.0).collect();
    let a_pred: Vec<f64> = predictions.iter().map(|p| p.1).collect();
    let v_true: Vec<f64> = labels.iter().map(|l| l.0).collect();
    let a_true: Vec<f64> = labels.iter().map(|l| l.1).collect();
    let (ccc_v, grad_v) = ccc_with_grad(&v_pred, &v_true)?;
    let (ccc_a, grad_a) = ccc_with_grad(&a_pred, &a_true)?;
    let loss = 1.0 - 0.5 * (ccc_v + ccc_a);
    let grads = predictions
        .iter()
        .zip(grad_v.iter().zip(grad_a.iter()))
        .map(|(&(v, a), (&gv, &ga))| {
            // d loss / d ccc = -0.5, then chain through tanh.
            (-0.5 * gv * (1.0 - v * v), -0.5 * ga * (1.0 - a * a))
        })
        .collect();
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use crate::model::{sigmoid, softmax};

    #[test]
    fn perfect_one_hot_ce_is_near_zero() {
        let mut p = vec![0.0; 8];
        p[2] = 1.0;
        let (loss, _) = weighted_ce(&[p], &[2], &[1.0; 8]);
        assert!(loss.abs() <= 1e-11);
    }

    #[test]
    fn uniform_probs_ce_is_ln8() {
        let (loss, _) = weighted_ce(&[vec![0.125; 8]], &[5], &[1.0; 8]);
        assert_abs_diff_eq!(loss, (8.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn weighted_ce_with_uniform_weights_equals_unweighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p = softmax(&logits);
            let y = rng.gen_range(0..8);
            let (weighted, _) = weighted_ce(std::slice::from_ref(&p), &[y], &[1.0; 8]);
            let unweighted = -p[y].ln();
            assert_abs_diff_eq!(weighted, unweighted, epsilon = 1e-12);
        }
    }

    #[test]
    fn perfect_bce_is_near_zero() {
        let probs = vec![vec![
            1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        ]];
        let mut y = [0u8; 12];
        y[0] = 1;
        y[2] = 1;
        y[11] = 1;
        let (loss, _) = weighted_bce(&probs, &[y], &[1.0; 12]);
        assert!(loss.abs() <= 1e-11);
    }

    #[test]
    fn half_probs_bce_is_ln2() {
        let (loss, _) = weighted_bce(&[vec![0.5; 12]], &[[0u8; 12]], &[1.0; 12]);
        assert_abs_diff_eq!(loss, (2.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn ccc_identity_and_sign_symmetry() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(ccc(&x, &x).unwrap(), 1.0);
        let zm = vec![-1.5, -0.5, 0.5, 1.5];
        let neg: Vec<f64> = zm.iter().map(|v| -v).collect();
        assert_eq!(ccc(&zm, &neg).unwrap(), -1.0);
    }

    #[test]
    fn ccc_matches_hand_value() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = vec![1.0, 2.0, 3.0, 5.0];
        assert_abs_diff_eq!(ccc(&x, &y).unwrap(), 0.928571428571, epsilon = 1e-6);
    }

    #[test]
    fn ccc_is_symmetric_and_scale_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_abs_diff_eq!(ccc(&x, &y).unwrap(), ccc(&y, &x).unwrap(), epsilon = 1e-15);
        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!(ccc(&x, &doubled).unwrap() < 1.0);
    }

    #[test]
    fn degenerate_ccc_is_zero_and_short_input_errors() {
        assert_eq!(ccc(&[0.5, 0.5, 0.5], &[0.5, 0.5, 0.5]).unwrap(), 0.0);
        assert!(ccc(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn loss_va_perfect_and_anticorrelated() {
        let labels = vec![(0.1, -0.2), (0.4, 0.3), (-0.5, 0.0), (0.2, -0.6)];
        let (loss, _) = loss_va(&labels, &labels).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-12);

        // Zero-mean labels, predictions are their negation.
        let zm = vec![(-0.3, 0.2), (0.3, -0.2), (-0.1, 0.4), (0.1, -0.4)];
        let neg: Vec<(f64, f64)> = zm.iter().map(|&(v, a)| (-v, -a)).collect();
        let (loss, _) = loss_va(&neg, &zm).unwrap();
        assert_abs_diff_eq!(loss, 2.0, epsilon = 1e-12);
    }

    // Central finite differences on the loss composed with its activation.
    fn fd_check_ce(rng: &mut ChaCha8Rng) -> f64 {
        let batch = rng.gen_range(2..6);
        let logits: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..8)).collect();
        let mut weights = [0.0; 8];
        for w in weights.iter_mut() {
            *w = rng.gen_range(0.2..3.0);
        }
        let eval = |logits: &[Vec<f64>]| {
            let probs: Vec<Vec<f64>> = logits.iter().map(|z| softmax(z)).collect();
            weighted_ce(&probs, &labels, &weights).0
        };
        let probs: Vec<Vec<f64>> = logits.iter().map(|z| softmax(z)).collect();
        let (_, grads) = weighted_ce(&probs, &labels, &weights);
        max_rel_err(&logits, grads, eval)
    }

    fn fd_check_bce(rng: &mut ChaCha8Rng) -> f64 {
        let batch = rng.gen_range(2..6);
        let logits: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let labels: Vec<[u8; 12]> = (0..batch)
            .map(|_| {
                let mut y = [0u8; 12];
                for b in y.iter_mut() {
                    *b = rng.gen_range(0..2);
                }
                y
            })
            .collect();
        let mut weights = [0.0; 12];
        for w in weights.iter_mut() {
            *w = rng.gen_range(0.2..5.0);
        }
        let eval = |logits: &[Vec<f64>]| {
            let probs: Vec<Vec<f64>> = logits
                .iter()
                .map(|z| z.iter().map(|&v| sigmoid(v)).collect())
                .collect();
            weighted_bce(&probs, &labels, &weights).0
        };
        let probs: Vec<Vec<f64>> = logits
            .iter()
            .map(|z| z.iter().map(|&v| sigmoid(v)).collect())
            .collect();
        let (_, grads) = weighted_bce(&probs, &labels, &weights);
        max_rel_err(&logits, grads, eval)
    }

    fn fd_check_va(rng: &mut ChaCha8Rng) -> f64 {
        let batch = rng.gen_range(4..64);
        let pre: Vec<Vec<f64>> = (0..batch)
            .map(|_| vec![rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)])
            .collect();
        let labels: Vec<(f64, f64)> = (0..batch)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let eval = |pre: &[Vec<f64>]| {
            let preds: Vec<(f64, f64)> = pre.iter().map(|z| (z[0].tanh(), z[1].tanh())).collect();
            loss_va(&preds, &labels).unwrap().0
        };
        let preds: Vec<(f64, f64)> = pre.iter().map(|z| (z[0].tanh(), z[1].tanh())).collect();
        let (_, grads) = loss_va(&preds, &labels).unwrap();
        let grads: Vec<Vec<f64>> = grads.iter().map(|&(v, a)| vec![v, a]).collect();
        max_rel_err(&pre, grads, eval)
    }

    /// Largest relative error between analytic and central finite-difference
    /// gradients, over all coordinates with non-negligible magnitude.
    pub(crate) fn max_rel_err<F: Fn(&[Vec<f64>]) -> f64>(
        point: &[Vec<f64>],
        analytic: Vec<Vec<f64>>,
        eval: F,
    ) -> f64 {
        const STEP: f64 = 1e-5;
        let mut worst: f64 = 0.0;
        let mut work = point.to_vec();
        for i in 0..point.len() {
            for j in 0..point[i].len() {
                work[i][j] = point[i][j] + STEP;
                let plus = eval(&work);
                work[i][j] = point[i][j] - STEP;
                let minus = eval(&work);
                work[i][j] = point[i][j];
                let fd = (plus - minus) / (2.0 * STEP);
                let a = analytic[i][j];
                let scale = fd.abs().max(a.abs());
                if scale > 1e-7 {
                    worst = worst.max((fd - a).abs() / scale);
                }
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..20 {
            assert!(fd_check_ce(&mut rng) < 1e-4);
            assert!(fd_check_bce(&mut rng) < 1e-4);
            assert!(fd_check_va(&mut rng) < 1e-4);
        }
    }
}
