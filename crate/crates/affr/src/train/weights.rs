//! Inverse-frequency class weighting for the imbalanced-label losses.

use crate::data::{Dataset, NUM_ACTION_UNITS, NUM_EXPRESSIONS};
use crate::error::{Error, Result};

/// Whether to compute inverse-frequency weights from the training labels
/// or use uniform weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassWeighting {
    #[default]
    Computed,
    Uniform,
}

impl std::str::FromStr for ClassWeighting {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "computed" => Ok(ClassWeighting::Computed),
            "uniform" => Ok(ClassWeighting::Uniform),
            other => Err(format!(
                "unknown weighting '{other}' (expected computed|uniform)"
            )),
        }
    }
}

/// Expression weights `w_c = N / (8 * N_c)` from per-class counts.
pub fn expr_weights_from_counts(
    counts: &[usize; NUM_EXPRESSIONS],
) -> Result<[f64; NUM_EXPRESSIONS]> {
    let total: usize = counts.iter().sum();
    let mut weights = [0.0; NUM_EXPRESSIONS];
    for (c, (&count, w)) in counts.iter().zip(weights.iter_mut()).enumerate() {
        if count == 0 {
            return Err(Error::Train(format!(
                "expression class {c} has no training frames; rerun with uniform class weights"
            )));
        }
        *w = total as f64 / (NUM_EXPRESSIONS as f64 * count as f64);
    }
    Ok(weights)
}

/// Per-AU positive-class weight `N_neg_i / N_pos_i` from (pos, neg) counts.
pub fn au_weights_from_counts(
    counts: &[(usize, usize); NUM_ACTION_UNITS],
) -> Result<[f64; NUM_ACTION_UNITS]> {
    let mut weights = [0.0; NUM_ACTION_UNITS];
    for (i, (&(pos, neg), w)) in counts.iter().zip(weights.iter_mut()).enumerate() {
        if pos == 0 || neg == 0 {
            return Err(Error::Train(format!(
                "action unit {i} has {pos} positive / {neg} negative training frames; \
                 rerun with uniform class weights"
            )));
        }
        *w = neg as f64 / pos as f64;
    }
    Ok(weights)
}

pub fn compute_expr_weights(dataset: &Dataset) -> Result<[f64; NUM_EXPRESSIONS]> {
    let mut counts = [0usize; NUM_EXPRESSIONS];
    for track in &dataset.tracks {
        for (features, labels) in &track.frames {
            if !features.detected {
                continue;
            }
            if let Some(e) = labels.expression {
                counts[e as usize] += 1;
            }
        }
    }
    expr_weights_from_counts(&counts)
}

pub fn compute_au_weights(dataset: &Dataset) -> Result<[f64; NUM_ACTION_UNITS]> {
    let mut counts = [(0usize, 0usize); NUM_ACTION_UNITS];
    for track in &dataset.tracks {
        for (features, labels) in &track.frames {
            if !features.detected {
                continue;
            }
            if let Some(bits) = &labels.action_units {
                for (i, &b) in bits.iter().enumerate() {
                    if b == 1 {
                        counts[i].0 += 1;
                    } else {
                        counts[i].1 += 1;
                    }
                }
            }
        }
    }
    au_weights_from_counts(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn balanced_classes_get_unit_weights() {
        let weights = expr_weights_from_counts(&[25; 8]).unwrap();
        for w in weights {
            assert_abs_diff_eq!(w, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn empty_class_is_an_error_suggesting_uniform() {
        let err = expr_weights_from_counts(&[70, 10, 10, 10, 0, 0, 0, 0]).unwrap_err();
        assert!(err.to_string().contains("uniform"));
    }

    #[test]
    fn au_positive_weight_is_neg_over_pos() {
        let mut counts = [(50usize, 50usize); 12];
        counts[0] = (20, 80);
        let weights = au_weights_from_counts(&counts).unwrap();
        assert_abs_diff_eq!(weights[0], 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(weights[1], 1.0, epsilon = 1e-15);
    }
}
