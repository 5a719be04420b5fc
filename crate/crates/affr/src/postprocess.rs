//! Frame-level post-processing: filling undetected frames, temporal
//! smoothing with mean or median filters, and per-AU decision-threshold
//! tuning on validation data.

use std::path::Path;

use crate::data::{TaskPrediction, NUM_ACTION_UNITS};
use crate::error::{Error, Result};
use crate::metrics::au_f1;

/// Filter kind for temporal smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Mean,
    Median,
}

impl std::str::FromStr for FilterKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" | "box" => Ok(FilterKind::Mean),
            "median" => Ok(FilterKind::Median),
            other => Err(format!("unknown filter '{other}' (expected mean|median)")),
        }
    }
}

/// Window placement. `CenteredInclusive` takes k consecutive frames centered
/// at t including t itself; `CenterExclusive` takes the k/2 frames on either
/// side of t, excluding t (only meaningful for even k, kept for comparison
/// experiments).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowStyle {
    #[default]
    CenteredInclusive,
    CenterExclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoothingConfig {
    pub kind: FilterKind,
    pub kernel: usize,
    pub window_style: WindowStyle,
}

impl SmoothingConfig {
    pub fn new(kind: FilterKind, kernel: usize) -> Result<Self> {
        if kernel < 1 {
            return Err(Error::Config("smoothing kernel must be at least 1".into()));
        }
        Ok(SmoothingConfig {
            kind,
            kernel,
            window_style: WindowStyle::default(),
        })
    }

    pub fn identity() -> Self {
        SmoothingConfig {
            kind: FilterKind::Mean,
            kernel: 1,
            window_style: WindowStyle::default(),
        }
    }

    pub fn describe(&self) -> String {
        if self.kernel == 1 {
            return "frame-level".to_string();
        }
        let kind = match self.kind {
            FilterKind::Mean => "mean",
            FilterKind::Median => "median",
        };
        format!("{kind},k={}", self.kernel)
    }
}

/// Per-AU decision thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AUThresholds(pub [f64; NUM_ACTION_UNITS]);

impl Default for AUThresholds {
    fn default() -> Self {
        AUThresholds([0.5; NUM_ACTION_UNITS])
    }
}

impl AUThresholds {
    pub fn new(values: [f64; NUM_ACTION_UNITS]) -> Result<Self> {
        if values.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Config("AU thresholds must lie in (0, 1)".into()));
        }
        Ok(AUThresholds(values))
    }

    /// Single line of 12 comma-separated reals.
    pub fn save(&self, path: &Path) -> Result<()> {
        let line: Vec<String> = self.0.iter().map(|t| format!("{t:?}")).collect();
        std::fs::write(path, format!("{}\n", line.join(","))).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let values: Vec<f64> = text
            .trim()
            .split(',')
            .map(|t| {
                t.trim().parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    reason: format!("bad threshold '{t}'"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != NUM_ACTION_UNITS {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("expected 12 thresholds, got {}", values.len()),
            });
        }
        let mut arr = [0.0; NUM_ACTION_UNITS];
        arr.copy_from_slice(&values);
        AUThresholds::new(arr)
    }
}

fn renormalize_expr(pred: &mut TaskPrediction) {
    if let Some(probs) = &mut pred.expr_probs {
        let sum: f64 = probs.iter().sum();
        if sum > 0.0 {
            probs.iter_mut().for_each(|p| *p /= sum);
        }
    }
}

/// Fill undetected frames. Interior gaps are linearly interpolated per
/// output coordinate between the nearest detected neighbors; leading and
/// trailing gaps copy the closest detected frame's prediction. Expression
/// probability vectors are renormalized after interpolation.
///
/// ```
/// use affr::data::TaskPrediction;
/// use affr::postprocess::interpolate_missing;
///
/// let at = |v: f64| TaskPrediction { valence_arousal: Some((v, 0.0)), ..Default::default() };
/// let track = vec![Some(at(0.2)), None, None, None, Some(at(1.0))];
/// let filled = interpolate_missing(&track).unwrap();
/// let valence: Vec<f64> = filled.iter().map(|p| p.valence_arousal.unwrap().0).collect();
/// assert!((valence[2] - 0.6).abs() < 1e-12);
/// ```
pub fn interpolate_missing(predictions: &[Option<TaskPrediction>]) -> Result<Vec<TaskPrediction>> {
    let detected: Vec<usize> = predictions
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.is_some().then_some(i))
        .collect();
    if detected.is_empty() {
        return Err(Error::Other(
            "cannot interpolate a track with zero detected frames".into(),
        ));
    }

    let mut out: Vec<TaskPrediction> = Vec::with_capacity(predictions.len());
    for t in 0..predictions.len() {
        if let Some(p) = &predictions[t] {
            out.push(p.clone());
            continue;
        }
        let next = detected.iter().find(|&&i| i > t);
        let prev = detected.iter().rev().find(|&&i| i < t);
        let mut filled = match (prev, next) {
            (Some(&lo), Some(&hi)) => {
                let left = predictions[lo].as_ref().unwrap();
                let right = predictions[hi].as_ref().unwrap();
                let alpha = (t - lo) as f64 / (hi - lo) as f64;
                let coords: Vec<f64> = left
                    .coordinates()
                    .iter()
                    .zip(right.coordinates().iter())
                    .map(|(&a, &b)| a + alpha * (b - a))
                    .collect();
                left.from_coordinates(&coords)
            }
            (None, Some(&hi)) => predictions[hi].as_ref().unwrap().clone(),
            (Some(&lo), None) => predictions[lo].as_ref().unwrap().clone(),
            (None, None) => unreachable!(),
        };
        renormalize_expr(&mut filled);
        out.push(filled);
    }
    Ok(out)
}

fn window_values(series: &[f64], t: usize, config: &SmoothingConfig) -> Vec<f64> {
    let n = series.len();
    let k = config.kernel;
    match config.window_style {
        WindowStyle::CenteredInclusive => {
            let lo = t.saturating_sub((k - 1) / 2);
            let hi = (t + k / 2).min(n - 1);
            series[lo..=hi].to_vec()
        }
        WindowStyle::CenterExclusive => {
            let half = k / 2;
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(n - 1);
            let mut vals: Vec<f64> = (lo..=hi).filter(|&i| i != t).map(|i| series[i]).collect();
            if vals.is_empty() {
                vals.push(series[t]);
            }
            vals
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Temporal smoothing over complete (post-interpolation) predictions.
/// `k = 1` is the identity. Windows are truncated at track boundaries;
/// expression vectors are renormalized after filtering.
///
/// ```
/// use affr::data::TaskPrediction;
/// use affr::postprocess::{smooth, FilterKind, SmoothingConfig};
///
/// let at = |v: f64| TaskPrediction { valence_arousal: Some((v, 0.0)), ..Default::default() };
/// let track: Vec<_> = [0.0, 0.0, 1.0, 0.0, 0.0].iter().map(|&v| at(v)).collect();
/// let config = SmoothingConfig::new(FilterKind::Median, 5).unwrap();
/// let out = smooth(&track, &config).unwrap();
/// // A lone spike does not survive a median of five.
/// assert_eq!(out[2].valence_arousal.unwrap().0, 0.0);
/// ```
pub fn smooth(
    predictions: &[TaskPrediction],
    config: &SmoothingConfig,
) -> Result<Vec<TaskPrediction>> {
    if config.kernel < 1 {
        return Err(Error::Config("smoothing kernel must be at least 1".into()));
    }
    if predictions.is_empty() || config.kernel == 1 {
        return Ok(predictions.to_vec());
    }
    let coords: Vec<Vec<f64>> = predictions.iter().map(|p| p.coordinates()).collect();
    let width = coords[0].len();
    if coords.iter().any(|c| c.len() != width) {
        return Err(Error::Shape(
            "predictions in one track must share their output groups".into(),
        ));
    }

    // Transpose to per-coordinate series so the window logic stays simple.
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(predictions.len()); width];
    for row in &coords {
        for (j, &v) in row.iter().enumerate() {
            series[j].push(v);
        }
    }

    let mut out = Vec::with_capacity(predictions.len());
    for (t, prediction) in predictions.iter().enumerate() {
        let smoothed: Vec<f64> = series
            .iter()
            .map(|s| {
                let mut vals = window_values(s, t, config);
                match config.kind {
                    FilterKind::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
                    FilterKind::Median => median(&mut vals),
                }
            })
            .collect();
        let mut pred = prediction.from_coordinates(&smoothed);
        renormalize_expr(&mut pred);
        out.push(pred);
    }
    Ok(out)
}

/// The tuning grid for per-AU thresholds.
pub const THRESHOLD_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Pick, for each AU independently, the grid threshold maximizing that AU's
/// F1 on validation data. Ties break toward the value closest to 0.5, then
/// toward the smaller value. An AU without both positive and negative
/// validation frames keeps 0.5 with a warning.
pub fn tune_au_thresholds(
    au_probs: &[Vec<f64>],
    labels: &[[u8; NUM_ACTION_UNITS]],
) -> AUThresholds {
    let mut chosen = [0.5; NUM_ACTION_UNITS];
    for unit in 0..NUM_ACTION_UNITS {
        let positives = labels.iter().filter(|y| y[unit] == 1).count();
        if positives == 0 || positives == labels.len() {
            eprintln!(
                "warning: AU {unit} has no {} validation frames; keeping threshold 0.5",
                if positives == 0 {
                    "positive"
                } else {
                    "negative"
                }
            );
            continue;
        }
        let mut best: (f64, f64) = (f64::NEG_INFINITY, 0.5);
        for &g in &THRESHOLD_GRID {
            let mut thresholds = [0.5; NUM_ACTION_UNITS];
            thresholds[unit] = g;
            let f1 = au_f1(au_probs, labels, &thresholds).0[unit];
            let better = f1 > best.0
                || (f1 == best.0
                    && ((g - 0.5).abs() < (best.1 - 0.5).abs()
                        || ((g - 0.5).abs() == (best.1 - 0.5).abs() && g < best.1)));
            if better {
                best = (f1, g);
            }
        }
        chosen[unit] = best.1;
    }
    AUThresholds(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn va(v: f64, a: f64) -> TaskPrediction {
        TaskPrediction {
            valence_arousal: Some((v, a)),
            ..Default::default()
        }
    }

    #[test]
    fn interior_gap_is_linear() {
        let preds = vec![Some(va(0.2, 0.0)), None, None, None, Some(va(1.0, 0.0))];
        let filled = interpolate_missing(&preds).unwrap();
        let values: Vec<f64> = filled
            .iter()
            .map(|p| p.valence_arousal.unwrap().0)
            .collect();
        for (got, want) in values.iter().zip([0.2, 0.4, 0.6, 0.8, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn leading_gap_copies_closest_detected_frame() {
        let preds = vec![None, None, None, Some(va(0.7, -0.1)), Some(va(0.9, 0.3))];
        let filled = interpolate_missing(&preds).unwrap();
        for p in &filled[..3] {
            assert_eq!(p.valence_arousal.unwrap(), (0.7, -0.1));
        }
    }

    #[test]
    fn no_gaps_is_identity_and_idempotent() {
        let preds = vec![Some(va(0.1, 0.2)), Some(va(0.3, 0.4))];
        let filled = interpolate_missing(&preds).unwrap();
        assert_eq!(filled, vec![va(0.1, 0.2), va(0.3, 0.4)]);
        let again =
            interpolate_missing(&filled.iter().cloned().map(Some).collect::<Vec<_>>()).unwrap();
        assert_eq!(again, filled);
    }

    #[test]
    fn all_undetected_is_an_error() {
        assert!(interpolate_missing(&[None, None]).is_err());
    }

    #[test]
    fn interpolated_expression_vectors_stay_on_the_simplex() {
        let e = |probs: Vec<f64>| TaskPrediction {
            expr_probs: Some(probs),
            ..Default::default()
        };
        let mut left = vec![0.0; 8];
        left[0] = 1.0;
        let mut right = vec![0.0; 8];
        right[1] = 1.0;
        let filled = interpolate_missing(&[Some(e(left)), None, Some(e(right))]).unwrap();
        let mid: f64 = filled[1].expr_probs.as_ref().unwrap().iter().sum();
        assert_abs_diff_eq!(mid, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn k1_is_identity_for_both_kinds() {
        let preds: Vec<TaskPrediction> = (0..5).map(|i| va(i as f64 * 0.1, 0.0)).collect();
        for kind in [FilterKind::Mean, FilterKind::Median] {
            let cfg = SmoothingConfig::new(kind, 1).unwrap();
            assert_eq!(smooth(&preds, &cfg).unwrap(), preds);
        }
    }

    #[test]
    fn constant_sequence_is_unchanged() {
        let preds = vec![va(0.3, -0.2); 9];
        for kind in [FilterKind::Mean, FilterKind::Median] {
            for k in [3, 5, 15] {
                let cfg = SmoothingConfig::new(kind, k).unwrap();
                let out = smooth(&preds, &cfg).unwrap();
                for p in out {
                    let (v, a) = p.valence_arousal.unwrap();
                    assert_abs_diff_eq!(v, 0.3, epsilon = 1e-12);
                    assert_abs_diff_eq!(a, -0.2, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn centered_mean_of_impulse() {
        let preds: Vec<TaskPrediction> = [0.0, 0.0, 1.0, 0.0, 0.0]
            .iter()
            .map(|&v| va(v, 0.0))
            .collect();
        let cfg = SmoothingConfig::new(FilterKind::Mean, 5).unwrap();
        let out = smooth(&preds, &cfg).unwrap();
        assert_abs_diff_eq!(out[2].valence_arousal.unwrap().0, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn smoothing_stays_inside_window_bounds() {
        let preds: Vec<TaskPrediction> = [0.9, -0.4, 0.2, 0.7, -0.8, 0.1, 0.5]
            .iter()
            .map(|&v| va(v, -v))
            .collect();
        for kind in [FilterKind::Mean, FilterKind::Median] {
            let cfg = SmoothingConfig::new(kind, 5).unwrap();
            let out = smooth(&preds, &cfg).unwrap();
            for (t, p) in out.iter().enumerate() {
                let lo = t.saturating_sub(2);
                let hi = (t + 2).min(preds.len() - 1);
                let window: Vec<f64> = (lo..=hi)
                    .map(|i| preds[i].valence_arousal.unwrap().0)
                    .collect();
                let min = window.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = p.valence_arousal.unwrap().0;
                assert!(v >= min - 1e-12 && v <= max + 1e-12);
            }
        }
    }

    #[test]
    fn tuned_threshold_recovers_decision_boundary() {
        // Labels on unit 0 are exactly (prob >= 0.3).
        let probs: Vec<Vec<f64>> = (0..100)
            .map(|i| {
                let mut row = vec![0.5; 12];
                row[0] = i as f64 / 100.0;
                row
            })
            .collect();
        let labels: Vec<[u8; 12]> = probs
            .iter()
            .map(|row| {
                let mut y = [0u8; 12];
                y[0] = (row[0] >= 0.3) as u8;
                y[5] = (row[0] >= 0.5) as u8; // keep other units non-degenerate
                y
            })
            .collect();
        let tuned = tune_au_thresholds(&probs, &labels);
        assert_eq!(tuned.0[0], 0.3);
        let f1 = au_f1(&probs, &labels, &tuned.0).0[0];
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn published_thresholds_round_trip() {
        let values = [0.8, 0.8, 0.7, 0.5, 0.5, 0.5, 0.6, 0.8, 0.8, 0.8, 0.3, 0.7];
        let t = AUThresholds::new(values).unwrap();
        assert_eq!(t.0, values);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("thr.txt");
        t.save(&path).unwrap();
        assert_eq!(AUThresholds::load(&path).unwrap(), t);
    }

    #[test]
    fn degenerate_unit_defaults_to_half() {
        let probs = vec![vec![0.9; 12]; 10];
        let labels = vec![[1u8; 12]; 10]; // every unit all-positive
        let tuned = tune_au_thresholds(&probs, &labels);
        assert_eq!(tuned.0, [0.5; 12]);
    }
}
