//! Challenge metric suite: macro-averaged F1 and top-1 accuracy for
//! expressions, per-AU F1 at thresholds, concordance correlation for
//! valence/arousal, and the aggregates P_EXPR, P_AU, P_VA and
//! P_MTL = P_EXPR + P_VA + P_AU.
//!
//! F1 uses the 0/0 = 0 convention for classes that are never predicted and
//! never present. CCC is computed dataset-level over all evaluated frames
//! pooled, not averaged per video.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::NUM_ACTION_UNITS;
use crate::error::{Error, Result};
use crate::train::ccc;

/// Per-class F1 (`2TP / (2TP + FP + FN)`, 0 when the denominator is 0) and
/// their unweighted mean over all `num_classes` classes.
///
/// ```
/// use affr::metrics::macro_f1;
///
/// let truth = [0, 0, 1, 1];
/// let predicted = [0, 1, 0, 1];
/// let (per_class, mean) = macro_f1(&predicted, &truth, 8);
/// assert_eq!(per_class[0], 0.5);
/// assert_eq!(mean, 0.125); // six of eight classes never occur
/// ```
pub fn macro_f1(predicted: &[usize], truth: &[usize], num_classes: usize) -> (Vec<f64>, f64) {
    assert_eq!(predicted.len(), truth.len());
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fng = vec![0usize; num_classes];
    for (&p, &t) in predicted.iter().zip(truth.iter()) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fng[t] += 1;
        }
    }
    let per_class: Vec<f64> = (0..num_classes)
        .map(|c| {
            let den = 2 * tp[c] + fp[c] + fng[c];
            if den == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / den as f64
            }
        })
        .collect();
    let mean = per_class.iter().sum::<f64>() / num_classes as f64;
    (per_class, mean)
}

/// Fraction of exact matches (top-1 unbalanced accuracy).
pub fn unbalanced_accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(predicted.len(), truth.len());
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted
        .iter()
        .zip(truth.iter())
        .filter(|(p, t)| p == t)
        .count();
    hits as f64 / predicted.len() as f64
}

/// Binarize each AU probability at its threshold (`p >= t` -> 1), then
/// compute per-AU binary F1 on the positive class and their unweighted
/// mean P_AU.
pub fn au_f1(
    au_probs: &[Vec<f64>],
    labels: &[[u8; NUM_ACTION_UNITS]],
    thresholds: &[f64; NUM_ACTION_UNITS],
) -> (Vec<f64>, f64) {
    assert_eq!(au_probs.len(), labels.len());
    let mut tp = [0usize; NUM_ACTION_UNITS];
    let mut fp = [0usize; NUM_ACTION_UNITS];
    let mut fng = [0usize; NUM_ACTION_UNITS];
    for (probs, truth) in au_probs.iter().zip(labels.iter()) {
        for i in 0..NUM_ACTION_UNITS {
            let pred = probs[i] >= thresholds[i];
            match (pred, truth[i] == 1) {
                (true, true) => tp[i] += 1,
                (true, false) => fp[i] += 1,
                (false, true) => fng[i] += 1,
                (false, false) => {}
            }
        }
    }
    let per_au: Vec<f64> = (0..NUM_ACTION_UNITS)
        .map(|i| {
            let den = 2 * tp[i] + fp[i] + fng[i];
            if den == 0 {
                0.0
            } else {
                2.0 * tp[i] as f64 / den as f64
            }
        })
        .collect();
    let mean = per_au.iter().sum::<f64>() / NUM_ACTION_UNITS as f64;
    (per_au, mean)
}

/// P_VA = (CCC_V + CCC_A) / 2.
pub fn p_va(ccc_v: f64, ccc_a: f64) -> f64 {
    0.5 * (ccc_v + ccc_a)
}

/// (CCC_V, CCC_A, P_VA) over all evaluated frames pooled.
pub fn va_metrics(predicted: &[(f64, f64)], truth: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape("va_metrics: lengths differ".into()));
    }
    if predicted.len() < 2 {
        return Err(Error::Shape(
            "va_metrics needs at least 2 labeled frames".into(),
        ));
    }
    let v_pred: Vec<f64> = predicted.iter().map(|p| p.0).collect();
    let a_pred: Vec<f64> = predicted.iter().map(|p| p.1).collect();
    let v_true: Vec<f64> = truth.iter().map(|t| t.0).collect();
    let a_true: Vec<f64> = truth.iter().map(|t| t.1).collect();
    let ccc_v = ccc(&v_pred, &v_true)?;
    let ccc_a = ccc(&a_pred, &a_true)?;
    Ok((ccc_v, ccc_a, p_va(ccc_v, ccc_a)))
}

/// P_MTL = P_EXPR + P_VA + P_AU; every component must be present.
///
/// ```
/// use affr::metrics::{p_mtl, p_va};
///
/// assert_eq!(p_va(0.429, 0.496), 0.4625);
/// let total = p_mtl(Some(0.358), Some(0.282), Some(0.471)).unwrap();
/// assert!((total - 1.111).abs() < 1e-12);
/// ```
pub fn p_mtl(p_expr: Option<f64>, p_va: Option<f64>, p_au: Option<f64>) -> Result<f64> {
    match (p_expr, p_va, p_au) {
        (Some(e), Some(v), Some(a)) => Ok(e + v + a),
        _ => Err(Error::Other(
            "p_mtl requires all of P_EXPR, P_VA and P_AU".into(),
        )),
    }
}

/// Everything one evaluation run produces, with configuration provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub p_expr: Option<f64>,
    pub per_class_f1: Option<Vec<f64>>,
    pub accuracy: Option<f64>,
    pub per_au_f1: Option<Vec<f64>>,
    pub p_au: Option<f64>,
    pub ccc_v: Option<f64>,
    pub ccc_a: Option<f64>,
    pub p_va: Option<f64>,
    pub p_mtl: Option<f64>,
    pub thresholds_used: Option<Vec<f64>>,
    pub smoothing_used: String,
}

impl MetricsReport {
    /// Fill `p_mtl` when all three components are present.
    pub fn finish(mut self) -> Self {
        if let (Some(e), Some(v), Some(a)) = (self.p_expr, self.p_va, self.p_au) {
            self.p_mtl = Some(e + v + a);
        }
        self
    }

    /// Machine-readable flat key-value document.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &str| writeln!(out, "{k} = {v}").unwrap();
        kv("format", "affr-report");
        kv("smoothing_used", &self.smoothing_used);
        let mut scalar = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                writeln!(out, "{k} = {v:?}").unwrap();
            }
        };
        scalar("p_expr", self.p_expr);
        scalar("accuracy", self.accuracy);
        scalar("p_au", self.p_au);
        scalar("ccc_v", self.ccc_v);
        scalar("ccc_a", self.ccc_a);
        scalar("p_va", self.p_va);
        scalar("p_mtl", self.p_mtl);
        let mut vector = |k: &str, v: &Option<Vec<f64>>| {
            if let Some(v) = v {
                let joined: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                writeln!(out, "{k} = {}", joined.join(",")).unwrap();
            }
        };
        vector("per_class_f1", &self.per_class_f1);
        vector("per_au_f1", &self.per_au_f1);
        vector("thresholds_used", &self.thresholds_used);
        out
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        if map.get("format").map(String::as_str) != Some("affr-report") {
            return Err(Error::Config("not an affr report".into()));
        }
        let scalar = |k: &str| -> Result<Option<f64>> {
            map.get(k)
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::Config(format!("bad value for '{k}'")))
                })
                .transpose()
        };
        let vector = |k: &str| -> Result<Option<Vec<f64>>> {
            map.get(k)
                .map(|v| {
                    v.split(',')
                        .map(|t| {
                            t.trim()
                                .parse()
                                .map_err(|_| Error::Config(format!("bad value in '{k}'")))
                        })
                        .collect()
                })
                .transpose()
        };
        Ok(MetricsReport {
            p_expr: scalar("p_expr")?,
            per_class_f1: vector("per_class_f1")?,
            accuracy: scalar("accuracy")?,
            per_au_f1: vector("per_au_f1")?,
            p_au: scalar("p_au")?,
            ccc_v: scalar("ccc_v")?,
            ccc_a: scalar("ccc_a")?,
            p_va: scalar("p_va")?,
            p_mtl: scalar("p_mtl")?,
            thresholds_used: vector("thresholds_used")?,
            smoothing_used: map.get("smoothing_used").cloned().unwrap_or_default(),
        })
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        use crate::data::{ACTION_UNIT_NAMES, EXPRESSION_NAMES};
        let mut out = String::new();
        writeln!(out, "smoothing: {}", self.smoothing_used).unwrap();
        if let Some(v) = self.p_expr {
            writeln!(out, "P_EXPR (macro F1): {v:.4}").unwrap();
        }
        if let Some(v) = self.accuracy {
            writeln!(out, "accuracy:          {v:.4}").unwrap();
        }
        if let Some(f1s) = &self.per_class_f1 {
            for (name, f1) in EXPRESSION_NAMES.iter().zip(f1s.iter()) {
                writeln!(out, "  F1 {name:<10} {f1:.4}").unwrap();
            }
        }
        if let Some(v) = self.p_au {
            writeln!(out, "P_AU (mean F1):    {v:.4}").unwrap();
        }
        if let Some(f1s) = &self.per_au_f1 {
            for (name, f1) in ACTION_UNIT_NAMES.iter().zip(f1s.iter()) {
                writeln!(out, "  F1 {name:<5} {f1:.4}").unwrap();
            }
        }
        if let Some(t) = &self.thresholds_used {
            let joined: Vec<String> = t.iter().map(|x| format!("{x:.1}")).collect();
            writeln!(out, "AU thresholds:     {}", joined.join(",")).unwrap();
        }
        if let (Some(v), Some(a), Some(m)) = (self.ccc_v, self.ccc_a, self.p_va) {
            writeln!(out, "CCC_V: {v:.4}  CCC_A: {a:.4}  P_VA: {m:.4}").unwrap();
        }
        if let Some(v) = self.p_mtl {
            writeln!(out, "P_MTL:             {v:.4}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_predictions_give_macro_one() {
        let labels: Vec<usize> = (0..32).map(|i| i % 8).collect();
        let (_, macro_mean) = macro_f1(&labels, &labels, 8);
        assert_eq!(macro_mean, 1.0);
    }

    #[test]
    fn two_class_toy_matches_hand_confusion_matrix() {
        let truth = vec![0, 0, 1, 1];
        let pred = vec![0, 1, 0, 1];
        let (per_class, macro_mean) = macro_f1(&pred, &truth, 8);
        assert_abs_diff_eq!(per_class[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(per_class[1], 0.5, epsilon = 1e-15);
        assert!(per_class[2..].iter().all(|&v| v == 0.0));
        assert_abs_diff_eq!(macro_mean, 0.125, epsilon = 1e-15);
    }

    #[test]
    fn absent_class_contributes_zero() {
        // Class 7 never predicted, never present: F1 = 0 by convention.
        let (per_class, _) = macro_f1(&[0, 1], &[0, 1], 8);
        assert_eq!(per_class[7], 0.0);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(unbalanced_accuracy(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(unbalanced_accuracy(&[1, 2], &[1, 0]), 0.5);
        assert_eq!(unbalanced_accuracy(&[0, 1, 2, 0], &[0, 1, 2, 3]), 0.75);
    }

    #[test]
    fn au_f1_perfect_and_all_negative_predictions() {
        // Every AU appears as a positive at least once, so a perfect
        // predictor scores exactly 1 in every column.
        let labels: Vec<[u8; 12]> = (0..12)
            .map(|i| {
                let mut y = [0u8; 12];
                y[i % 12] = 1;
                y
            })
            .collect();
        let probs: Vec<Vec<f64>> = labels
            .iter()
            .map(|y| y.iter().map(|&b| b as f64).collect())
            .collect();
        let (_, p_au) = au_f1(&probs, &labels, &[0.5; 12]);
        assert_eq!(p_au, 1.0);

        let low = vec![vec![0.4; 12]; 12];
        let (per_au, p_au) = au_f1(&low, &labels, &[0.5; 12]);
        assert!(per_au.iter().all(|&v| v == 0.0));
        assert_eq!(p_au, 0.0);
    }

    #[test]
    fn au_f1_two_frame_toy() {
        let mut probs0 = vec![0.4; 12];
        probs0[0] = 0.6;
        let probs = vec![probs0, vec![0.4; 12]];
        let mut y0 = [0u8; 12];
        y0[0] = 1;
        let labels = vec![y0, [0u8; 12]];
        let (per_au, p_au) = au_f1(&probs, &labels, &[0.5; 12]);
        assert_eq!(per_au[0], 1.0);
        assert!(per_au[1..].iter().all(|&v| v == 0.0));
        assert_abs_diff_eq!(p_au, 1.0 / 12.0, epsilon = 1e-15);
    }

    #[test]
    fn va_metrics_mean_and_extremes() {
        let truth = vec![(0.1, -0.2), (0.5, 0.3), (-0.4, 0.0), (0.0, -0.6)];
        let (v, a, mean) = va_metrics(&truth, &truth).unwrap();
        assert_eq!((v, a, mean), (1.0, 1.0, 1.0));

        let zm = vec![(-0.3, 0.2), (0.3, -0.2), (-0.1, 0.4), (0.1, -0.4)];
        let neg: Vec<(f64, f64)> = zm.iter().map(|&(v, a)| (-v, -a)).collect();
        let (v, a, mean) = va_metrics(&neg, &zm).unwrap();
        assert_eq!((v, a, mean), (-1.0, -1.0, -1.0));

        assert!(va_metrics(&[(0.0, 0.0)], &[(0.0, 0.0)]).is_err());
    }

    #[test]
    fn p_mtl_is_the_plain_sum() {
        assert_abs_diff_eq!(
            p_mtl(Some(0.358), Some(0.282), Some(0.471)).unwrap(),
            1.111,
            epsilon = 1e-12
        );
        assert_eq!(p_mtl(Some(0.0), Some(0.0), Some(0.0)).unwrap(), 0.0);
        assert!(p_mtl(Some(0.1), None, Some(0.2)).is_err());
    }

    #[test]
    fn report_kv_round_trip() {
        let report = MetricsReport {
            p_expr: Some(0.381),
            per_class_f1: Some(vec![0.609, 0.151, 0.516, 0.016, 0.477, 0.461, 0.303, 0.512]),
            accuracy: Some(0.5),
            p_va: Some(0.463),
            ccc_v: Some(0.429),
            ccc_a: Some(0.496),
            smoothing_used: "mean,k=15".into(),
            ..Default::default()
        };
        let back = MetricsReport::from_kv(&report.to_kv()).unwrap();
        assert_eq!(back, report);
    }
}
